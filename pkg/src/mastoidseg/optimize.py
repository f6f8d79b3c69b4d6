"""Per-volume estimation of the removal field by Adam on the latent logits."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import List, Tuple

import numpy as np

from .similarity import LossReport, MaskField, MaskObjective, MsssimParams
from .volume import Volume3


class OptimizationError(ArithmeticError):
    def __init__(self, iteration: int, what: str):
        super().__init__(f"non-finite {what} at iteration {iteration}")
        self.iteration = iteration


@dataclass(frozen=True)
class OptimConfig:
    max_iters: int = 300
    step_size: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    lambda_smooth: float = 0.01
    smooth_normalize: bool = True
    init_delta: float = 0.1
    tol: float = 1e-6
    patience: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if not 0 < self.init_delta < 1:
            raise ValueError("init_delta must lie in (0, 1)")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("moment decays must lie in [0, 1)")
        if self.epsilon <= 0 or self.lambda_smooth < 0 or self.patience < 1:
            raise ValueError("need epsilon > 0, lambda_smooth >= 0, patience >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "OptimConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown optimizer keys: {sorted(unknown)}")
        return cls(**d)


def optimize_mask(rho: Volume3, omega: Volume3, cfg: OptimConfig = OptimConfig(),
                  params: MsssimParams = MsssimParams(), variant: str = "msssim_cscc",
                  callback=None) -> Tuple[MaskField, List[LossReport]]:
    """Minimize the total objective over the latent field, starting from a
    uniform ``init_delta``.

    Stops after ``max_iters`` updates, or earlier once the total loss has
    changed by less than ``tol`` for ``patience`` consecutive iterations.
    ``trace[k]`` is the loss before update ``k``; the last entry is the loss
    of the returned field.
    """
    if rho.dims != omega.dims:
        raise ValueError(f"dims differ: {rho.dims} vs {omega.dims}")
    objective = MaskObjective(rho, omega, cfg.lambda_smooth, params, variant,
                              cfg.smooth_normalize)
    mask = MaskField.constant(rho.dims, cfg.init_delta)
    m = np.zeros(rho.dims)
    v = np.zeros(rho.dims)
    trace: List[LossReport] = []
    quiet = 0
    for it in range(cfg.max_iters + 1):
        report, grad = objective(mask, need_grad=it < cfg.max_iters)
        if not np.isfinite(report.total):
            raise OptimizationError(it, "loss")
        trace.append(report)
        if callback is not None:
            callback(it, report)
        if it == cfg.max_iters:
            break
        if len(trace) > 1 and abs(trace[-1].total - trace[-2].total) < cfg.tol:
            quiet += 1
            if quiet >= cfg.patience:
                break
        else:
            quiet = 0
        if not np.all(np.isfinite(grad)):
            raise OptimizationError(it, "gradient")
        t = it + 1
        m = cfg.beta1 * m + (1 - cfg.beta1) * grad
        v = cfg.beta2 * v + (1 - cfg.beta2) * grad * grad
        m_hat = m / (1 - cfg.beta1 ** t)
        v_hat = v / (1 - cfg.beta2 ** t)
        mask = MaskField(mask.latent - cfg.step_size * m_hat / (np.sqrt(v_hat) + cfg.epsilon))
    return mask, trace


def threshold_mask(delta, t: float = 0.5, spacing=(1.0, 1.0, 1.0)) -> Volume3:
    if not 0 < t < 1:
        raise ValueError("threshold must lie in (0, 1)")
    d = delta.value if isinstance(delta, MaskField) else np.asarray(
        delta.data if isinstance(delta, Volume3) else delta)
    return Volume3((d >= t).astype(np.float32), spacing)
