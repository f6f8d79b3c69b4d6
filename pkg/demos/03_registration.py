"""Undo a small rigid misalignment between the pre- and post-op scans.

The post-op phantom is turned 3 degrees about z and shifted 2 mm along x;
registration should find the inverse of that motion.
"""
import math

from mastoidseg import PhantomSpec, generate, normalize_intensity
from mastoidseg.registration import RigidTransform, ncc, register_rigid, resample

shift = RigidTransform((0.0, 0.0, math.radians(3.0)), (2.0, 0.0, 0.0))
pre, post, _ = generate(PhantomSpec(seed=1, misalignment=shift))
fixed, moving = normalize_intensity(pre), normalize_intensity(post)

print(f"ncc before registration: {ncc(fixed, moving):.4f}")
found, score = register_rigid(fixed, moving, levels=3)
print(f"ncc after registration:  {score:.4f}")

want = shift.inverse()
print("           rot (deg, xyz)              trans (mm)")
for name, t in (("expected", want), ("found", found)):
    rot = ", ".join(f"{math.degrees(a):+.3f}" for a in t.rotation)
    tr = ", ".join(f"{v:+.3f}" for v in t.translation)
    print(f"{name:10s} {rot:26s}  {tr}")

aligned = resample(moving, found, fixed)
print(f"ncc of the resampled volume: {ncc(fixed, aligned):.4f}")
