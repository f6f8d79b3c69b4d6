"""Overlap and surface-distance metrics on a few hand-made masks."""
import numpy as np

from mastoidseg.metrics import (SurfaceDistanceSet, asd, evaluate_case, hd95, summarize,
                                surface_distances)

a = np.zeros((8, 8, 8), bool)
b = np.zeros((8, 8, 8), bool)
a[2:4, 2:4, 2:4] = True
b[3:5, 2:4, 2:4] = True  # shares a 1x2x2 slab with a
print("two 2x2x2 blocks, one voxel apart:")
print({k: round(v, 4) for k, v in evaluate_case(a, b).items()})

inner = np.zeros((9, 9, 9), bool)
inner[2:7, 2:7, 2:7] = True
outer = np.ones((9, 9, 9), bool)
sd = surface_distances(inner, outer)
print(f"\n5^3 cube inside 9^3: {sd.pred_to_gt.size} + {sd.gt_to_pred.size} surface distances,"
      f" hd95 {hd95(sd):.3f}, asd {asd(sd):.3f}")
print(f"same pair with 0.5 mm voxels: hd95 {hd95(surface_distances(inner, outer, (.5,) * 3)):.3f}")

twenty = SurfaceDistanceSet(np.arange(10.0), np.arange(10.0, 20.0))
print(f"\ndistances 0..19: hd95 {hd95(twenty):.2f}, asd {asd(twenty):.2f}")

# an empty prediction has no surface: distance metrics come back as nan
print("empty prediction:", evaluate_case(np.zeros_like(a), b))

rows = [evaluate_case(a, b), evaluate_case(a, a), evaluate_case(b, a)]
s = summarize(rows)
print("\ndice summary:", {k: round(v, 4) for k, v in s["dice"].items()})
