"""Build a synthetic pre/post-operative pair and look at what changed.

Writes the three volumes to ./demo_out/phantom so they can be opened in any
raw-volume viewer (float32, C order, dims in the .json header).
"""
from pathlib import Path

import numpy as np

from mastoidseg import PhantomSpec, generate, write_volume

spec = PhantomSpec(seed=7)
pre, post, gt = generate(spec)

print(f"dims {pre.dims}, spacing {pre.spacing} mm")
print(f"removed region: {int(gt.sum())} voxels ({100 * gt.mean():.2f}% of the volume)")

inside, outside = gt > 0, gt == 0
print(f"mean intensity inside the removed region:  pre {pre.data[inside].mean():.3f}"
      f"  post {post.data[inside].mean():.3f}")
print(f"mean intensity elsewhere:                  pre {pre.data[outside].mean():.3f}"
      f"  post {post.data[outside].mean():.3f}")

# a quick look at the middle slice: '#' bone, '.' air, 'o' removed
z = pre.dims[2] // 2
rows = []
for x in range(0, pre.dims[0], 2):
    line = ""
    for y in range(0, pre.dims[1], 2):
        if gt[x, y, z]:
            line += "o"
        else:
            line += "#" if pre.data[x, y, z] > 0.5 else "."
    rows.append(line)
print("\n".join(rows))

out = Path("demo_out/phantom")
out.mkdir(parents=True, exist_ok=True)
write_volume(pre, out / "pre")
write_volume(post, out / "post")
write_volume(pre.__class__(gt.astype(np.float32), pre.spacing), out / "gt")
print(f"wrote {sorted(p.name for p in out.iterdir())}")
