"""Fit the removal mask by gradient descent and compare it with the truth.

Uses a reduced 32x32x16 phantom so the run takes a few seconds; the
acceptance suite does the same at 64x64x32.
"""
from mastoidseg import PhantomSpec, generate, normalize_intensity
from mastoidseg.metrics import evaluate_case
from mastoidseg.optimize import OptimConfig, optimize_mask, threshold_mask

pre, post, gt = generate(PhantomSpec(dims=(32, 32, 16), seed=2))
rho, omega = normalize_intensity(pre), normalize_intensity(post)


def show(it, rep):
    if it % 25 == 0:
        print(f"iter {it:4d}  total {rep.total:+.5f}  similarity {rep.msssim_cscc:+.5f}"
              f"  smooth {rep.smooth:.5f}")


field, trace = optimize_mask(rho, omega, OptimConfig(max_iters=150), callback=show)
mask = threshold_mask(field, 0.5, rho.spacing)
row = evaluate_case(mask, gt, rho.spacing)
print(f"\n{len(trace) - 1} iterations, loss {trace[0].total:+.5f} -> {trace[-1].total:+.5f}")
print("  ".join(f"{k} {v:.3f}" for k, v in row.items()))

# nothing removed: the same volume on both sides should leave the mask empty
ctrl, _ = optimize_mask(rho, rho, OptimConfig(max_iters=150))
print(f"no-surgery control marks {100 * threshold_mask(ctrl).data.mean():.2f}% of voxels")
