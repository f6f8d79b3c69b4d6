"""Multi-scale structural similarity with squared cross-correlation, the
smoothness prior on the removal field, and the analytic gradient of their
weighted sum with respect to the latent (logit) parameterization.

The predicted preoperative volume is ``rho * (1 - delta)``: with air
normalized to zero, removing a voxel sends it toward the dark intensity the
postoperative scan shows where bone was drilled away.

Three similarity variants are supported:

``msssim``
    ``1 - l_M^a * prod_j c_j^b_j * s_j^b_j``
``msssim_cscc``
    SCC of scale ``j`` added to the contrast term: ``(c_j + scc_j)^b_j``
``msssim_scc``
    SCC of scale ``j`` added to the structure term: ``(s_j + scc_j)^b_j``

All statistics are accumulated in float64. Local statistics use a
separable Gaussian window evaluated only where it fits entirely inside the
volume ("valid" region); component scores are the means of the component
maps over that region.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit, logit

from .volume import Volume3

DEFAULT_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
VARIANTS = ("msssim", "msssim_scc", "msssim_cscc")

# Bases of fractional powers are floored here (structure means can go
# negative for anticorrelated inputs); floored bases carry zero gradient.
BASE_FLOOR = 1e-8
# Sum of squared deviations per voxel below which SCC counts as undefined.
ZERO_VARIANCE = 1e-20
# Bound keeping delta strictly inside (0, 1) when the latent saturates.
DELTA_EPS = 1e-12


@dataclass(frozen=True)
class MsssimParams:
    scales: int = 5
    weights: Tuple[float, ...] = DEFAULT_WEIGHTS
    k1: float = 0.01
    k2: float = 0.03
    data_range: float = 1.0
    radius: int = 5
    sigma: float = 1.5

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if self.scales < 1 or len(self.weights) != self.scales:
            raise ValueError(f"need one weight per scale: scales={self.scales}, "
                             f"{len(self.weights)} weights")
        if abs(sum(self.weights) - 1.0) > 1e-3:
            raise ValueError(f"weights must sum to 1 within 1e-3, got {sum(self.weights)}")
        if min(self.weights) < 0:
            raise ValueError("weights must be nonnegative")
        if self.radius < 1 or self.sigma <= 0:
            raise ValueError("window radius must be >= 1 and sigma > 0")
        if self.k1 <= 0 or self.k2 <= 0 or self.data_range <= 0:
            raise ValueError("k1, k2 and data_range must be positive")

    @property
    def c1(self) -> float:
        return (self.k1 * self.data_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.data_range) ** 2

    @property
    def c3(self) -> float:
        return self.c2 / 2

    @property
    def luminance_weight(self) -> float:
        return self.weights[-1]


class MaskField:
    """Removal probability ``delta = logistic(latent)`` on the voxel grid."""

    def __init__(self, latent):
        self.latent = np.array(latent, dtype=np.float64)
        if self.latent.ndim != 3:
            raise ValueError("latent must be 3D")
        if not np.all(np.isfinite(self.latent)):
            raise ValueError("latent contains non-finite values")

    @classmethod
    def constant(cls, dims, delta: float) -> "MaskField":
        if not 0.0 < delta < 1.0:
            raise ValueError("delta must lie strictly inside (0, 1)")
        return cls(np.full(tuple(dims), logit(delta)))

    @classmethod
    def from_probability(cls, delta) -> "MaskField":
        d = np.clip(np.asarray(delta, dtype=np.float64), DELTA_EPS, 1.0 - DELTA_EPS)
        return cls(logit(d))

    @property
    def dims(self):
        return self.latent.shape

    @property
    def value(self) -> np.ndarray:
        return np.clip(expit(self.latent), DELTA_EPS, 1.0 - DELTA_EPS)

    def to_volume(self, spacing=(1.0, 1.0, 1.0)) -> Volume3:
        return Volume3(self.value, spacing)


@dataclass
class ScaleReport:
    l_mean: float
    c_mean: float
    s_mean: float
    scc: float


@dataclass
class LossReport:
    total: float
    msssim_cscc: float
    smooth: float
    lambda_smooth: float
    variant: str = "msssim_cscc"
    per_scale: List[ScaleReport] = field(default_factory=list)
    flags: Tuple[str, ...] = ()

    def as_dict(self) -> dict:
        return {
            "total": self.total,
            "msssim_cscc": self.msssim_cscc,
            "smooth": self.smooth,
            "lambda_smooth": self.lambda_smooth,
            "variant": self.variant,
            "per_scale": [vars(s) for s in self.per_scale],
            "flags": list(self.flags),
        }


def _as_array(v) -> np.ndarray:
    if isinstance(v, Volume3):
        return v.data.astype(np.float64)
    if isinstance(v, MaskField):
        return v.value
    return np.asarray(v, dtype=np.float64)


def apply_mask(rho: Volume3, delta: Union[MaskField, np.ndarray]) -> Volume3:
    d = _as_array(delta)
    if d.shape != rho.dims:
        raise ValueError(f"mask dims {d.shape} do not match volume dims {rho.dims}")
    return rho.with_data(rho.data.astype(np.float64) * (1.0 - d))


def scc(a, b) -> float:
    """Squared Pearson correlation of two volumes over all voxels."""
    x, y = _as_array(a), _as_array(b)
    if x.shape != y.shape:
        raise ValueError(f"dims differ: {x.shape} vs {y.shape}")
    xc, yc = x - x.mean(), y - y.mean()
    sxx, syy = np.sum(xc * xc), np.sum(yc * yc)
    if sxx <= ZERO_VARIANCE * x.size or syy <= ZERO_VARIANCE * y.size:
        raise ValueError("SCC undefined: zero variance input")
    return float(np.sum(xc * yc) ** 2 / (sxx * syy))


def loss_smooth(delta) -> float:
    """Sum over voxels of squared forward differences along x, y and z."""
    d = _as_array(delta)
    return float(sum(np.sum(np.diff(d, axis=ax) ** 2) for ax in range(3)))


def _smooth_grad(d: np.ndarray) -> np.ndarray:
    g = np.zeros_like(d)
    for ax in range(3):
        diff = np.diff(d, axis=ax)
        hi = [slice(None)] * 3
        lo = [slice(None)] * 3
        hi[ax] = slice(1, None)
        lo[ax] = slice(None, -1)
        g[tuple(hi)] += 2 * diff
        g[tuple(lo)] -= 2 * diff
    return g


# --------------------------------------------------------------------------
# pyramid and windows

def _pool_axes(shape) -> Tuple[int, ...]:
    # singleton axes are carried through unpooled so small volumes still
    # support the full number of scales
    return tuple(ax for ax, n in enumerate(shape) if n >= 2)


def _pool(x: np.ndarray) -> np.ndarray:
    for ax in _pool_axes(x.shape):
        n = x.shape[ax] // 2
        x = np.moveaxis(x, ax, 0)
        x = 0.5 * (x[0:2 * n:2] + x[1:2 * n:2])
        x = np.moveaxis(x, 0, ax)
    return x


def _pool_T(g: np.ndarray, fine_shape) -> np.ndarray:
    """Adjoint of :func:`_pool`."""
    for ax in reversed(_pool_axes(fine_shape)):
        g = np.moveaxis(g, ax, 0)
        out = np.zeros((fine_shape[ax],) + g.shape[1:])
        out[0:2 * g.shape[0]:2] = 0.5 * g
        out[1:2 * g.shape[0]:2] = 0.5 * g
        g = np.moveaxis(out, 0, ax)
    return g


def pyramid_shapes(shape, scales: int) -> List[Tuple[int, ...]]:
    shapes = [tuple(shape)]
    for _ in range(scales - 1):
        prev = shapes[-1]
        shapes.append(tuple(n // 2 if ax in _pool_axes(prev) else n
                            for ax, n in enumerate(prev)))
    return shapes


def window_taps(n: int, params: MsssimParams) -> int:
    """Window length along an axis of size ``n``: the configured length,
    shrunk to the largest odd length that fits."""
    fit = n if n % 2 else n - 1
    return max(1, min(2 * params.radius + 1, fit))


def _kernels(shape, params: MsssimParams) -> List[np.ndarray]:
    out = []
    for n in shape:
        taps = window_taps(n, params)
        t = np.arange(taps) - (taps - 1) / 2
        w = np.exp(-0.5 * (t / params.sigma) ** 2)
        out.append(w / w.sum())
    return out


def _filt(x: np.ndarray, kernels) -> np.ndarray:
    """Separable correlation, valid region only."""
    for ax, w in enumerate(kernels):
        x = np.moveaxis(x, ax, 0)
        n = x.shape[0] - len(w) + 1
        out = w[0] * x[0:n]
        for k in range(1, len(w)):
            out = out + w[k] * x[k:k + n]
        x = np.moveaxis(out, 0, ax)
    return x


def _filt_T(g: np.ndarray, kernels) -> np.ndarray:
    """Adjoint of :func:`_filt` (zero-extended full convolution)."""
    for ax, w in enumerate(kernels):
        g = np.moveaxis(g, ax, 0)
        n = g.shape[0]
        out = np.zeros((n + len(w) - 1,) + g.shape[1:])
        for k in range(len(w)):
            out[k:k + n] += w[k] * g
        g = np.moveaxis(out, 0, ax)
    return g


# --------------------------------------------------------------------------
# per-scale statistics

class _Reference:
    """Statistics of the fixed (postoperative) volume at one scale."""

    def __init__(self, y: np.ndarray, params: MsssimParams):
        self.y = y
        self.kernels = _kernels(y.shape, params)
        self.mu = _filt(y, self.kernels)
        self.var = np.maximum(_filt(y * y, self.kernels) - self.mu ** 2, 0.0)
        self.sd = np.sqrt(self.var)
        self.yc = y - y.mean()
        self.syy = float(np.sum(self.yc ** 2))
        self.zero_var = self.syy <= ZERO_VARIANCE * y.size


def _scale_forward(x: np.ndarray, ref: _Reference, params: MsssimParams):
    k = ref.kernels
    mx = _filt(x, k)
    vx_raw = _filt(x * x, k) - mx ** 2
    vx = np.maximum(vx_raw, 0.0)
    sx = np.sqrt(vx)
    cxy = _filt(x * ref.y, k) - mx * ref.mu
    my, vy, sy = ref.mu, ref.var, ref.sd
    c1, c2, c3 = params.c1, params.c2, params.c3

    l_num = 2 * mx * my + c1
    l_den = mx ** 2 + my ** 2 + c1
    c_num = 2 * sx * sy + c2
    c_den = vx + vy + c2
    s_num = cxy + c3
    s_den = sx * sy + c3
    nvalid = mx.size

    xc = x - x.mean()
    sxx = float(np.sum(xc * xc))
    if ref.zero_var or sxx <= ZERO_VARIANCE * x.size:
        scc_val, cov = None, 0.0
    else:
        cov = float(np.sum(xc * ref.yc))
        scc_val = cov ** 2 / (sxx * ref.syy)

    cache = dict(x=x, xc=xc, sxx=sxx, cov=cov, mx=mx, vx_pos=vx_raw > 0, sx=sx,
                 l_num=l_num, l_den=l_den, c_num=c_num, c_den=c_den,
                 s_num=s_num, s_den=s_den, nvalid=nvalid)
    means = (float(np.mean(l_num / l_den)), float(np.mean(c_num / c_den)),
             float(np.mean(s_num / s_den)))
    return means, scc_val, cache


def _scale_backward(cache, ref: _Reference, gl: float, gc: float, gs: float,
                    gscc: float) -> np.ndarray:
    n = cache["nvalid"]
    mx, sx = cache["mx"], cache["sx"]
    my, sy = ref.mu, ref.sd
    gl, gc, gs = gl / n, gc / n, gs / n

    with np.errstate(divide="ignore", invalid="ignore"):
        inv_sx = np.where(sx > 0, 1.0 / (2 * sx), 0.0)
    # d sx / d vx folded into inv_sx
    dc_dvx = 2 * sy * inv_sx / cache["c_den"] - cache["c_num"] / cache["c_den"] ** 2
    ds_dvx = -cache["s_num"] / cache["s_den"] ** 2 * sy * inv_sx
    g_vx = (gc * dc_dvx + gs * ds_dvx) * cache["vx_pos"]
    g_cxy = gs / cache["s_den"]
    g_mx = (gl * (2 * my * cache["l_den"] - cache["l_num"] * 2 * mx) / cache["l_den"] ** 2
            - 2 * mx * g_vx - my * g_cxy)

    k = ref.kernels
    x = cache["x"]
    grad = _filt_T(g_mx, k) + 2 * x * _filt_T(g_vx, k) + ref.y * _filt_T(g_cxy, k)
    if gscc and cache["cov"]:
        sxx, syy, cov = cache["sxx"], ref.syy, cache["cov"]
        grad += gscc * (2 * cov * ref.yc / (sxx * syy) - 2 * cov ** 2 * cache["xc"] / (sxx ** 2 * syy))
    return grad


class SimilarityObjective:
    """Multi-scale similarity of a moving volume against a fixed one.

    The fixed volume's pyramid and window statistics are computed once, so
    repeated evaluations (as in an optimization loop) only pay for the
    moving side.
    """

    def __init__(self, omega, params: MsssimParams = MsssimParams(),
                 variant: str = "msssim_cscc"):
        if variant not in VARIANTS:
            raise ValueError(f"unknown loss variant {variant!r}; expected one of {VARIANTS}")
        self.params = params
        self.variant = variant
        y = _as_array(omega)
        self.shapes = pyramid_shapes(y.shape, params.scales)
        if min(min(s) for s in self.shapes) < 1:
            raise ValueError(f"volume {y.shape} too small for {params.scales} scales")
        self.refs = []
        for j in range(params.scales):
            if j:
                y = _pool(y)
            self.refs.append(_Reference(y, params))

    def __call__(self, x, need_grad: bool = True):
        """Return ``(loss, per_scale, flags, grad)`` for moving volume ``x``."""
        p = self.params
        x = _as_array(x)
        if x.shape != self.shapes[0]:
            raise ValueError(f"dims differ: {x.shape} vs {self.shapes[0]}")
        flags = set()
        caches, reports = [], []
        for j, ref in enumerate(self.refs):
            if j:
                x = _pool(x)
            (lm, cm, sm), scc_val, cache = _scale_forward(x, ref, p)
            if scc_val is None:
                flags.add("scc_zero_variance")
            caches.append(cache)
            reports.append(ScaleReport(lm, cm, sm, 0.0 if scc_val is None else scc_val))

        # bases and exponents of the product, with the parameter each base
        # depends on: (base, exponent, scale, component)
        terms = []
        M = p.scales
        for j, r in enumerate(reports):
            b = p.weights[j]
            if self.variant == "msssim_cscc":
                terms.append((r.c_mean + r.scc, b, j, "cscc"))
                terms.append((r.s_mean, b, j, "s"))
            elif self.variant == "msssim_scc":
                terms.append((r.c_mean, b, j, "c"))
                terms.append((r.s_mean + r.scc, b, j, "sscc"))
            else:
                terms.append((r.c_mean, b, j, "c"))
                terms.append((r.s_mean, b, j, "s"))
        terms.append((reports[-1].l_mean, p.luminance_weight, M - 1, "l"))

        log_prod = 0.0
        floored = []
        for base, e, _, _ in terms:
            if base < BASE_FLOOR:
                flags.add("base_floored")
                floored.append(True)
                base = BASE_FLOOR
            else:
                floored.append(False)
            log_prod += e * np.log(base)
        prod = float(np.exp(log_prod))
        loss = 1.0 - prod
        if not need_grad:
            return loss, reports, tuple(sorted(flags)), None

        gl = np.zeros(M)
        gc = np.zeros(M)
        gs = np.zeros(M)
        gscc = np.zeros(M)
        for (base, e, j, comp), fl in zip(terms, floored):
            if fl or e == 0:
                continue
            g = -prod * e / base
            if comp == "l":
                gl[j] += g
            if comp in ("c", "cscc"):
                gc[j] += g
            if comp in ("s", "sscc"):
                gs[j] += g
            if comp in ("cscc", "sscc") and caches[j]["cov"]:
                gscc[j] += g

        grad = None
        for j in reversed(range(M)):
            gj = _scale_backward(caches[j], self.refs[j], gl[j], gc[j], gs[j], gscc[j])
            grad = gj if grad is None else gj + _pool_T(grad, self.shapes[j])
        return loss, reports, tuple(sorted(flags)), grad


def ssim_components(a, b, params: MsssimParams = MsssimParams(),
                    scale_index: int = 0) -> Tuple[float, float, float]:
    """Mean luminance, contrast and structure scores at pyramid level
    ``scale_index`` (0 is full resolution)."""
    x, y = _as_array(a), _as_array(b)
    if x.shape != y.shape:
        raise ValueError(f"dims differ: {x.shape} vs {y.shape}")
    if not 0 <= scale_index < params.scales:
        raise ValueError(f"scale_index must be in [0, {params.scales})")
    for _ in range(scale_index):
        x, y = _pool(x), _pool(y)
    if min(x.shape) < 1:
        raise ValueError("volume too small for the requested scale")
    if max(window_taps(n, params) for n in x.shape) < 3:
        raise ValueError(f"window shrinks below 3 taps on every axis at dims {x.shape}")
    means, _, _ = _scale_forward(x, _Reference(y, params), params)
    return means


def msssim_loss(masked, omega, params: MsssimParams = MsssimParams(),
                variant: str = "msssim_cscc") -> float:
    a, b = _as_array(masked), _as_array(omega)
    if a.shape != b.shape:
        raise ValueError(f"dims differ: {a.shape} vs {b.shape}")
    loss, _, _, _ = SimilarityObjective(b, params, variant)(a, need_grad=False)
    return loss


def loss_msssim_cscc(masked, omega, params: MsssimParams = MsssimParams()) -> float:
    return msssim_loss(masked, omega, params, "msssim_cscc")


class MaskObjective:
    """Total objective as a function of the latent mask field.

    ``total = similarity(rho * (1 - delta), omega) + lambda * smooth(delta)``
    where ``smooth`` is divided by the voxel count when ``smooth_normalize``.
    """

    def __init__(self, rho, omega, lambda_smooth: float = 0.01,
                 params: MsssimParams = MsssimParams(), variant: str = "msssim_cscc",
                 smooth_normalize: bool = True):
        if lambda_smooth < 0:
            raise ValueError("lambda_smooth must be >= 0")
        self.rho = _as_array(rho)
        om = _as_array(omega)
        if om.shape != self.rho.shape:
            raise ValueError(f"dims differ: {self.rho.shape} vs {om.shape}")
        self.similarity = SimilarityObjective(om, params, variant)
        self.lambda_smooth = float(lambda_smooth)
        self.smooth_normalize = smooth_normalize
        self.variant = variant

    def __call__(self, delta: MaskField, need_grad: bool = True):
        if delta.dims != self.rho.shape:
            raise ValueError(f"mask dims {delta.dims} do not match volume dims {self.rho.shape}")
        d = delta.value
        loss, reports, flags, gx = self.similarity(self.rho * (1.0 - d), need_grad)
        scale = 1.0 / d.size if self.smooth_normalize else 1.0
        smooth = loss_smooth(d) * scale
        report = LossReport(total=loss + self.lambda_smooth * smooth, msssim_cscc=loss,
                            smooth=smooth, lambda_smooth=self.lambda_smooth,
                            variant=self.variant, per_scale=reports, flags=flags)
        if not need_grad:
            return report, None
        s = expit(delta.latent)
        g_delta = -self.rho * gx + self.lambda_smooth * scale * _smooth_grad(d)
        return report, g_delta * s * (1.0 - s)


def total_loss_and_gradient(rho, omega, delta: MaskField, lambda_smooth: float = 0.01,
                            params: MsssimParams = MsssimParams(),
                            variant: str = "msssim_cscc", smooth_normalize: bool = True):
    """Objective value decomposition and its gradient with respect to
    ``delta.latent``."""
    return MaskObjective(rho, omega, lambda_smooth, params, variant, smooth_normalize)(delta)
