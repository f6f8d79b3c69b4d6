"""Triangulate a ball and a phantom's removal region, then save STL/OBJ."""
import math
from pathlib import Path

import numpy as np

from mastoidseg import PhantomSpec, Volume3, generate
from mastoidseg.mesh import (enclosed_volume, euler_characteristic, is_watertight,
                             marching_cubes, surface_area, write_obj, write_stl)

n, r = 25, 10.0
c = (n - 1) / 2
d = np.sqrt(((np.indices((n, n, n)) - c) ** 2).sum(axis=0))

# partial-volume edges put the 0.5 level right at radius r
soft = marching_cubes(Volume3(np.clip(r + 0.5 - d, 0, 1)), 0.5)
hard = marching_cubes(Volume3((d <= r).astype(float)), 0.5)
print(f"sphere r={r}: area {4 * math.pi * r * r:.1f}, volume {4 / 3 * math.pi * r ** 3:.1f}")
for name, m in (("soft ball", soft), ("0/1 ball", hard)):
    print(f"{name:10s} {len(m):5d} triangles  area {surface_area(m):7.1f}"
          f"  volume {enclosed_volume(m):7.1f}  watertight {is_watertight(m)}"
          f"  euler {euler_characteristic(m)}")

_, _, gt = generate(PhantomSpec(seed=4))
mesh = marching_cubes(Volume3(gt.astype(float)), 0.5)
out = Path("demo_out/mesh")
out.mkdir(parents=True, exist_ok=True)
write_stl(mesh, out / "removal.stl")
write_obj(mesh, out / "removal.obj")
print(f"\nremoval region: {len(mesh)} triangles, {enclosed_volume(mesh):.0f} mm^3 "
      f"(voxel count {int(gt.sum())}) -> {out}")
