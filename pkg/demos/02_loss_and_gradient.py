"""The masked similarity objective, its three variants, and a gradient check.

The objective compares the pre-op volume with a soft removal mask applied,
rho * (1 - delta), against the post-op volume. The true removal mask should
score better than no mask at all.
"""
import numpy as np

from mastoidseg import PhantomSpec, generate, normalize_intensity
from mastoidseg.similarity import VARIANTS, MaskField, MaskObjective

pre, post, gt = generate(PhantomSpec(dims=(32, 32, 16), seed=3, noise_sigma=0.0,
                                     artifact_count=0))
rho, omega = normalize_intensity(pre), normalize_intensity(post)

none = MaskField.constant(rho.dims, 0.01)
truth = MaskField.from_probability(np.clip(gt, 0.01, 0.99))

for variant in VARIANTS:
    obj = MaskObjective(rho, omega, variant=variant)
    a, _ = obj(none, need_grad=False)
    b, _ = obj(truth, need_grad=False)
    print(f"{variant:12s} no mask {a.total:+.4f}   true mask {b.total:+.4f}")

obj = MaskObjective(rho, omega)
report, grad = obj(truth)
print("\nper-scale terms for the true mask (l, c, s, scc):")
for j, s in enumerate(report.per_scale):
    print(f"  scale {j}: {s.l_mean:.4f} {s.c_mean:.4f} {s.s_mean:.4f} {s.scc:.4f}")

# central differences at a handful of latent coordinates
rng = np.random.default_rng(0)
z = rng.normal(0, 1.5, rho.dims)
_, g = obj(MaskField(z))
h = 1e-3
print("\ncoord            analytic      numeric")
for k in rng.choice(z.size, 5, replace=False):
    c = np.unravel_index(k, z.shape)
    zp, zm = z.copy(), z.copy()
    zp[c] += h
    zm[c] -= h
    num = (obj(MaskField(zp), False)[0].total - obj(MaskField(zm), False)[0].total) / (2 * h)
    print(f"{str(tuple(int(i) for i in c)):15s} {g[c]:+.6e} {num:+.6e}")
