"""Rigid (6-DOF) alignment by normalized cross-correlation.

A :class:`RigidTransform` acts on physical points (mm) as
``p -> R (p - c) + c + t`` where ``c`` is the physical center of the
reference grid. :func:`resample` moves image content by the transform, i.e.
``out(p) = v(T^-1 p)``, so a +1 voxel x-translation shifts values to higher
x indices.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy import ndimage
from scipy.spatial.transform import Rotation

from .volume import Volume3, pool2

EULER = "XYZ"  # intrinsic x, then y, then z
GOLDEN = (math.sqrt(5) - 1) / 2


def _wrap(a: float) -> float:
    a = math.remainder(a, 2 * math.pi)
    return math.pi if a <= -math.pi else a


@dataclass(frozen=True)
class RigidTransform:
    rotation: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    translation: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        rot = tuple(_wrap(float(a)) for a in self.rotation)
        trans = tuple(float(t) for t in self.translation)
        if len(rot) != 3 or len(trans) != 3:
            raise ValueError("rotation and translation need three components each")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @classmethod
    def from_matrix(cls, R: np.ndarray, t) -> "RigidTransform":
        return cls(tuple(Rotation.from_matrix(R).as_euler(EULER)), tuple(t))

    @classmethod
    def from_params(cls, params) -> "RigidTransform":
        return cls(tuple(params[:3]), tuple(params[3:]))

    @property
    def params(self) -> np.ndarray:
        return np.array(self.rotation + self.translation)

    def matrix(self) -> np.ndarray:
        return Rotation.from_euler(EULER, self.rotation).as_matrix()

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self after other``: apply ``other`` first."""
        R1, R2 = other.matrix(), self.matrix()
        return RigidTransform.from_matrix(R2 @ R1, R2 @ np.array(other.translation)
                                          + np.array(self.translation))

    def inverse(self) -> "RigidTransform":
        R = self.matrix()
        return RigidTransform.from_matrix(R.T, -R.T @ np.array(self.translation))

    def apply(self, points: np.ndarray, center) -> np.ndarray:
        c = np.asarray(center, dtype=np.float64)
        # explicit sums rather than BLAS: results must not depend on thread count
        d = np.asarray(points, dtype=np.float64) - c
        R = self.matrix()
        out = d[:, 0:1] * R[:, 0] + d[:, 1:2] * R[:, 1] + d[:, 2:3] * R[:, 2]
        return out + c + np.array(self.translation)

    def to_dict(self) -> dict:
        return {"rot_rad": list(self.rotation), "trans_mm": list(self.translation)}

    @classmethod
    def from_dict(cls, d: dict) -> "RigidTransform":
        if set(d) - {"rot_rad", "trans_mm"}:
            raise ValueError(f"unknown transform keys {sorted(set(d) - {'rot_rad', 'trans_mm'})}")
        return cls(tuple(d.get("rot_rad", (0, 0, 0))), tuple(d.get("trans_mm", (0, 0, 0))))


def physical_center(v: Volume3) -> np.ndarray:
    return (np.array(v.dims) - 1) / 2 * np.array(v.spacing)


def _resample_array(moving, m_spacing, m_origin, out_shape, o_spacing, o_origin,
                    t: RigidTransform, center) -> np.ndarray:
    idx = np.indices(out_shape, dtype=np.float64).reshape(3, -1).T
    pts = idx * np.asarray(o_spacing) + np.asarray(o_origin)
    src = t.inverse().apply(pts, center)
    coords = ((src - np.asarray(m_origin)) / np.asarray(m_spacing)).T
    out = ndimage.map_coordinates(moving, coords, order=1, mode="constant", cval=0.0)
    return out.reshape(out_shape)


def resample(v: Volume3, t: RigidTransform, ref: Volume3 = None) -> Volume3:
    """Trilinear resampling of ``v`` moved by ``t`` onto the grid of ``ref``
    (default: ``v``'s own grid). Samples outside ``v`` are 0."""
    ref = v if ref is None else ref
    out = _resample_array(v.data.astype(np.float64), v.spacing, (0, 0, 0), ref.dims,
                          ref.spacing, (0, 0, 0), t, physical_center(ref))
    return Volume3(out, ref.spacing)


def ncc(a, b) -> float:
    """Normalized cross-correlation (Pearson) over all voxels."""
    x = (a.data if isinstance(a, Volume3) else np.asarray(a)).astype(np.float64).ravel()
    y = (b.data if isinstance(b, Volume3) else np.asarray(b)).astype(np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError("dims differ")
    x = x - x.mean()
    y = y - y.mean()
    den = math.sqrt(float(np.sum(x * x)) * float(np.sum(y * y)))
    if den == 0.0:
        raise ValueError("NCC undefined: zero variance input")
    return float(np.sum(x * y)) / den


def _golden_min(f, lo: float, hi: float, tol: float):
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    return (c, fc) if fc < fd else (d, fd)


def register_rigid(fixed: Volume3, moving: Volume3, levels: int = 3, sweeps: int = 3,
                   max_shift_vox: float = 8.0, max_angle_deg: float = 15.0):
    """Find the rigid transform that maps ``moving`` onto ``fixed``.

    Coarse-to-fine over a 2x mean-pooling pyramid. At each level every
    parameter is refined in turn by golden-section search over a bracket
    centered on the current estimate; the bracket starts at
    ``max_shift_vox`` voxels / ``max_angle_deg`` degrees on the coarsest
    level and halves per level.

    Returns ``(transform, ncc)`` where ``resample(moving, transform, fixed)``
    is the aligned volume.
    """
    if levels < 1:
        raise ValueError("levels must be >= 1")
    if np.ptp(fixed.data) == 0 or np.ptp(moving.data) == 0:
        raise ValueError("NCC undefined: zero variance input")
    center = physical_center(fixed)
    fsp, msp = np.array(fixed.spacing), np.array(moving.spacing)

    # pyramid levels as (array, spacing, origin); a pooled voxel sits at the
    # centroid of the block it averages
    pyr_f, pyr_m = [], []
    f, m = fixed.data.astype(np.float64), moving.data.astype(np.float64)
    fo, mo = np.zeros(3), np.zeros(3)
    fs, ms = fsp.copy(), msp.copy()
    for lvl in range(levels):
        pyr_f.append((f, fs.copy(), fo.copy()))
        pyr_m.append((m, ms.copy(), mo.copy()))
        if lvl + 1 < levels:
            if min(f.shape) < 4 or min(m.shape) < 4:
                break
            f, m = pool2(f), pool2(m)
            fo, mo = fo + fs / 2, mo + ms / 2
            fs, ms = fs * 2, ms * 2

    params = np.zeros(6)
    nlev = len(pyr_f)
    for depth, lvl in enumerate(reversed(range(nlev))):
        f, fs, fo = pyr_f[lvl]
        m, ms, mo = pyr_m[lvl]
        scale = 0.5 ** depth
        brackets = np.r_[np.full(3, math.radians(max_angle_deg)),
                         max_shift_vox * fsp] * scale
        tols = np.r_[np.full(3, math.radians(0.05)), 0.02 * fsp]

        def cost(p):
            out = _resample_array(m, ms, mo, f.shape, fs, fo,
                                  RigidTransform.from_params(p), center)
            try:
                return -ncc(f, out)
            except ValueError:
                return 1.0

        best = cost(params)
        for _ in range(sweeps):
            for i in range(6):
                def along(val, i=i):
                    p = params.copy()
                    p[i] = val
                    return cost(p)
                x, fx = _golden_min(along, params[i] - brackets[i], params[i] + brackets[i],
                                    tols[i])
                if fx < best:
                    params[i], best = x, fx

    t = RigidTransform.from_params(params)
    return t, ncc(fixed, resample(moving, t, fixed))
