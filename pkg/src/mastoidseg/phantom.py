"""Synthetic pre/postoperative volume pairs with a known removal region.

The preoperative phantom is an ellipsoidal bone shell pocked with air
cells. The postoperative phantom darkens a union of overlapping spherical
blobs inside the bone (the drilled region) and then adds the corruptions
seen in low-dose cone-beam scans: Gaussian noise, bright streaks near the
cavity standing in for electrode wires, a smooth additive "fluid" field in
the lower part of the cavity, and optionally a rigid misalignment.

Per-voxel randomness is counter-based (Philox keyed on ``(seed, stream)``,
one counter per voxel), so every value depends only on the seed, the
stream and the voxel index.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Optional, Tuple

import numpy as np
from scipy import ndimage

from .registration import RigidTransform, resample
from .volume import Volume3

# Philox stream ids
_CELLS, _BLOBS, _NOISE, _ARTIFACTS, _FLUID = 1, 2, 3, 4, 5

REMOVAL_BLEND = 0.9
MAX_PLACEMENT_ATTEMPTS = 100
# smaller blobs do not survive the majority filter on small phantoms
MIN_BLOB_RADIUS = 3.5


class PlacementError(RuntimeError):
    pass


@dataclass(frozen=True)
class PhantomSpec:
    dims: Tuple[int, int, int] = (64, 64, 32)
    seed: int = 0
    bone_level: float = 0.85
    air_level: float = 0.05
    removal_blob_count: int = 3
    noise_sigma: float = 0.05
    artifact_count: int = 3
    artifact_level: float = 1.0
    fluid_amplitude: float = 0.15
    misalignment: Optional[RigidTransform] = None
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(n) for n in self.dims))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        if isinstance(self.misalignment, dict):
            object.__setattr__(self, "misalignment", RigidTransform.from_dict(self.misalignment))
        if len(self.dims) != 3 or min(self.dims) < 16:
            raise ValueError(f"phantom dims must be three values >= 16, got {self.dims}")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        for name in ("bone_level", "air_level", "noise_sigma", "fluid_amplitude"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not 0.0 <= self.artifact_level <= 1.5:
            raise ValueError("artifact_level must lie in [0, 1.5]")
        if self.air_level >= self.bone_level:
            raise ValueError("air_level must be below bone_level")
        if self.removal_blob_count < 1 or self.artifact_count < 0:
            raise ValueError("need removal_blob_count >= 1 and artifact_count >= 0")
        if min(self.spacing) <= 0:
            raise ValueError("spacing must be positive")

    def replace(self, **kw) -> "PhantomSpec":
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(kw)
        return PhantomSpec(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dims"] = list(self.dims)
        d["spacing"] = list(self.spacing)
        d["misalignment"] = None if self.misalignment is None else self.misalignment.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown phantom keys: {sorted(unknown)}")
        return cls(**d)


def _bitgen(seed: int, stream: int) -> np.random.Philox:
    return np.random.Philox(key=[seed, stream])


def voxel_uniform(seed: int, stream: int, shape, draws: int = 1) -> np.ndarray:
    """Uniform (0, 1] variates, ``draws`` per voxel; voxel ``i`` (x-fastest)
    reads counters ``draws*i .. draws*i + draws - 1``."""
    n = int(np.prod(shape))
    raw = _bitgen(seed, stream).random_raw(n * draws)
    u = ((raw >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0 ** -53
    return u.reshape((draws, n), order="F").reshape((draws,) + tuple(shape), order="F")


def voxel_normal(seed: int, stream: int, shape) -> np.ndarray:
    u1, u2 = voxel_uniform(seed, stream, shape, draws=2)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def _grid(dims):
    return np.indices(dims, dtype=np.float64)


def _ellipsoid_radius(dims) -> np.ndarray:
    """Normalized ellipsoidal radius of each voxel about the volume center
    (1.0 on the outer bone surface)."""
    g = _grid(dims)
    c = (np.array(dims) - 1) / 2
    semi = 0.42 * np.array(dims)
    return np.sqrt(sum(((g[i] - c[i]) / semi[i]) ** 2 for i in range(3)))


def bone_region(preop: Volume3, spec: PhantomSpec) -> np.ndarray:
    return preop.data >= 0.5 * spec.bone_level


def generate_preop(spec: PhantomSpec) -> Volume3:
    dims = spec.dims
    r = _ellipsoid_radius(dims)
    bone = (r <= 1.0) & (r >= 0.35)

    rng = np.random.Generator(_bitgen(spec.seed, _CELLS))
    g = _grid(dims)
    c = (np.array(dims) - 1) / 2
    semi = 0.42 * np.array(dims)
    n_cells = max(4, int(bone.sum() / 1500))
    for _ in range(n_cells):
        # uniform point in the shell, by rejection
        while True:
            p = rng.uniform(-1, 1, 3)
            if 0.4 <= np.linalg.norm(p) <= 0.95:
                break
        center = c + p * semi
        rad = rng.uniform(1.5, 3.0)
        bone &= sum((g[i] - center[i]) ** 2 for i in range(3)) > rad ** 2

    data = np.where(bone, spec.bone_level, spec.air_level)
    return Volume3(data, spec.spacing)


def generate_removal_mask(spec: PhantomSpec, preop: Volume3,
                          radius: Optional[float] = None) -> np.ndarray:
    """Binary (uint8) removal region: overlapping spheres inside the bone.

    ``radius`` forces every blob radius (voxels); otherwise radii are drawn
    in proportion to the in-plane size (at least ``MIN_BLOB_RADIUS``) and the
    draw is repeated until the foreground fraction lies in [0.02, 0.35].
    """
    dims = spec.dims
    bone = bone_region(preop, spec)
    if not bone.any():
        raise PlacementError("preoperative volume contains no bone")
    rng = np.random.Generator(_bitgen(spec.seed, _BLOBS))
    g = _grid(dims)
    bone_idx = np.argwhere(bone & (_ellipsoid_radius(dims) >= 0.5))
    if len(bone_idx) == 0:
        bone_idx = np.argwhere(bone)
    base_r = min(dims[0], dims[1])

    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        union = np.zeros(dims, bool)
        centers = []
        placed = True
        for b in range(spec.removal_blob_count):
            rad = radius if radius is not None else max(MIN_BLOB_RADIUS,
                                                              rng.uniform(0.09, 0.14) * base_r)
            if b == 0:
                center = bone_idx[rng.integers(len(bone_idx))].astype(float)
            else:
                for _ in range(MAX_PLACEMENT_ATTEMPTS):
                    anchor = centers[rng.integers(len(centers))]
                    off = rng.normal(size=3)
                    off *= rng.uniform(0.3, 0.8) * rad / np.linalg.norm(off)
                    center = anchor + off
                    ic = np.round(center).astype(int)
                    if np.all(ic >= 0) and np.all(ic < dims) and bone[tuple(ic)]:
                        break
                else:
                    placed = False
                    break
            centers.append(center)
            union |= sum((g[i] - center[i]) ** 2 for i in range(3)) <= rad ** 2
        if not placed:
            continue
        smoothed = ndimage.convolve(union.astype(np.int32), np.ones((3, 3, 3), np.int32),
                                    mode="constant") >= 14
        if not smoothed.any():
            smoothed = union
        mask = smoothed & bone
        if not mask.any():
            continue
        frac = mask.mean()
        if radius is not None or 0.02 <= frac <= 0.35:
            return mask.astype(np.uint8)
    raise PlacementError(f"could not place {spec.removal_blob_count} removal blobs inside "
                         f"bone after {MAX_PLACEMENT_ATTEMPTS} attempts")


def _line_voxels(start, direction, length, dims):
    steps = np.arange(0.0, length, 0.5)
    pts = np.round(start[None, :] + steps[:, None] * direction[None, :]).astype(int)
    keep = np.all((pts >= 0) & (pts < np.array(dims)), axis=1)
    return np.unique(pts[keep], axis=0)


def generate_postop(preop: Volume3, gt: np.ndarray, spec: PhantomSpec) -> Volume3:
    dims = spec.dims
    gt = np.asarray(gt).astype(bool)
    x = preop.data.astype(np.float64)
    x = x * (1 - REMOVAL_BLEND * gt) + REMOVAL_BLEND * gt * spec.air_level
    if spec.noise_sigma > 0:
        x = x + spec.noise_sigma * voxel_normal(spec.seed, _NOISE, dims)

    cavity = np.argwhere(gt)
    if spec.artifact_count and len(cavity):
        rng = np.random.Generator(_bitgen(spec.seed, _ARTIFACTS))
        for _ in range(spec.artifact_count):
            start = cavity[rng.integers(len(cavity))].astype(float)
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
            vox = _line_voxels(start, d, rng.uniform(8.0, 16.0), dims)
            x[tuple(vox.T)] = spec.artifact_level

    if spec.fluid_amplitude > 0 and len(cavity):
        rng = np.random.Generator(_bitgen(spec.seed, _FLUID))
        gr = _grid(dims)
        field = np.zeros(dims)
        for _ in range(3):
            k = rng.uniform(0.5, 1.5, 3) * 2 * np.pi / np.array(dims)
            phase = rng.uniform(0, 2 * np.pi)
            field += np.cos(sum(k[i] * gr[i] for i in range(3)) + phase)
        field = (field - field.min()) / max(np.ptp(field), 1e-12)
        z_mid = cavity[:, 2].mean()
        lower = gt & (gr[2] <= z_mid)
        x = x + spec.fluid_amplitude * field * lower

    x = np.clip(x, 0.0, 1.0)
    post = Volume3(x, spec.spacing)
    if spec.misalignment is not None:
        post = resample(post, spec.misalignment, post)
    return post


def generate(spec: PhantomSpec):
    """Convenience: ``(preop, postop, gt)`` for one spec."""
    pre = generate_preop(spec)
    gt = generate_removal_mask(spec, pre)
    return pre, generate_postop(pre, gt, spec), gt
