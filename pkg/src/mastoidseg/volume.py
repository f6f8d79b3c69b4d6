"""Dense 3D scalar volumes: container, intensity windowing, cropping,
Gaussian smoothing, dyadic pooling and a raw+json file format.

Arrays are indexed ``data[x, y, z]``. On disk the payload is written
x-fastest (Fortran order), little-endian float32.
"""
from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple, Union

import numpy as np
from scipy import ndimage

PathLike = Union[str, os.PathLike]

HEADER_KEYS = {"dims", "spacing_mm", "dtype", "order"}


class VolumeFormatError(ValueError):
    """Malformed header (missing/unknown keys, wrong dtype or order)."""


class VolumeSizeError(VolumeFormatError):
    """Raw payload length does not match the header dims."""


class NonFiniteVolumeError(ValueError):
    """Volume contains NaN or Inf."""


class DegenerateVolumeWarning(UserWarning):
    """Intensity normalization of a volume without contrast."""


@dataclass(frozen=True)
class Volume3:
    """Immutable 3D float32 volume with physical voxel spacing in mm."""

    data: np.ndarray
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float32, copy=True)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"volume must be a nonempty 3D array, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise NonFiniteVolumeError("volume contains non-finite values")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or min(spacing) <= 0:
            raise ValueError(f"spacing must be three positive values, got {self.spacing}")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape)

    @property
    def size(self) -> int:
        return int(self.data.size)

    def with_data(self, data) -> "Volume3":
        return Volume3(data, self.spacing)

    def __eq__(self, other):
        if not isinstance(other, Volume3):
            return NotImplemented
        return (self.spacing == other.spacing and self.dims == other.dims
                and np.array_equal(self.data, other.data))

    __hash__ = None


@dataclass(frozen=True)
class CropRegion:
    origin: Tuple[int, int, int]
    extent: Tuple[int, int, int]

    def slices(self):
        return tuple(slice(o, o + e) for o, e in zip(self.origin, self.extent))


def normalize_intensity(v: Volume3, lo_pct: float = 0.005, hi_pct: float = 0.995) -> Volume3:
    """Percentile window-clamp to [0, 1].

    The ``lo_pct`` quantile maps to 0 and the ``hi_pct`` quantile to 1;
    everything outside is clamped. Bright outliers (metal) therefore do not
    compress the useful range. A volume without contrast yields zeros and a
    :class:`DegenerateVolumeWarning`.
    """
    if not 0.0 <= lo_pct < hi_pct <= 1.0:
        raise ValueError(f"need 0 <= lo_pct < hi_pct <= 1, got {lo_pct}, {hi_pct}")
    x = v.data.astype(np.float64)
    lo, hi = np.quantile(x, [lo_pct, hi_pct])
    if hi <= lo:
        lo, hi = x.min(), x.max()
    if hi <= lo:
        warnings.warn("volume has no intensity contrast; normalized to zeros",
                      DegenerateVolumeWarning, stacklevel=2)
        return v.with_data(np.zeros(v.dims, np.float32))
    return v.with_data(np.clip((x - lo) / (hi - lo), 0.0, 1.0))


def crop(v: Volume3, r: CropRegion) -> Volume3:
    for axis, (o, e, n) in enumerate(zip(r.origin, r.extent, v.dims)):
        if o < 0 or e < 1 or o + e > n:
            raise IndexError(f"crop region out of bounds on axis {'xyz'[axis]}: "
                             f"origin {o}, extent {e}, size {n}")
    return v.with_data(v.data[r.slices()])


def gaussian_kernel1d(sigma: float, radius: int) -> np.ndarray:
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-0.5 * (t / sigma) ** 2)
    return w / w.sum()


def gaussian_filter(v: Volume3, sigma: float = 1.5, radius: int = 5) -> Volume3:
    """Separable Gaussian correlation, same-size output.

    Near the border only in-bounds taps are used and the weights are
    renormalized to sum to one, so constants are preserved everywhere.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if 2 * radius + 1 > min(v.dims):
        raise ValueError(f"window of {2 * radius + 1} taps exceeds volume dims {v.dims}")
    w = gaussian_kernel1d(sigma, radius)
    x = v.data.astype(np.float64)
    for axis in range(3):
        num = ndimage.correlate1d(x, w, axis=axis, mode="constant", cval=0.0)
        ones = np.ones(x.shape[axis])
        den = ndimage.correlate1d(ones, w, mode="constant", cval=0.0)
        shape = [1, 1, 1]
        shape[axis] = -1
        x = num / den.reshape(shape)
    return v.with_data(x)


def pool2(x: np.ndarray, axes=(0, 1, 2)) -> np.ndarray:
    """2x mean pooling along ``axes``; trailing odd slices are dropped."""
    for axis in axes:
        n = x.shape[axis] // 2
        x = np.take(x, np.arange(2 * n), axis=axis)
        shape = x.shape[:axis] + (n, 2) + x.shape[axis + 1:]
        x = x.reshape(shape).mean(axis=axis + 1)
    return x


def downsample2(v: Volume3) -> Volume3:
    if min(v.dims) < 2:
        bad = "xyz"[int(np.argmin(v.dims))]
        raise ValueError(f"cannot downsample axis {bad} of size < 2 (dims {v.dims})")
    out = pool2(v.data.astype(np.float64))
    return Volume3(out, tuple(2 * s for s in v.spacing))


def _split(path: PathLike) -> Tuple[Path, Path]:
    p = Path(path)
    if p.suffix in (".json", ".raw"):
        p = p.with_suffix("")
    return p.with_name(p.name + ".json"), p.with_name(p.name + ".raw")


def write_volume(v: Volume3, path: PathLike) -> Tuple[Path, Path]:
    """Write ``<path>.json`` and ``<path>.raw``; returns both paths."""
    hdr_path, raw_path = _split(path)
    header = {
        "dims": list(v.dims),
        "spacing_mm": list(v.spacing),
        "dtype": "f32",
        "order": "x-fastest",
    }
    hdr_path.write_text(json.dumps(header) + "\n")
    raw_path.write_bytes(v.data.astype("<f4").tobytes(order="F"))
    return hdr_path, raw_path


def read_volume(path: PathLike) -> Volume3:
    hdr_path, raw_path = _split(path)
    try:
        header = json.loads(hdr_path.read_text())
    except json.JSONDecodeError as err:
        raise VolumeFormatError(f"{hdr_path}: not valid JSON ({err})") from None
    if not isinstance(header, dict) or set(header) != HEADER_KEYS:
        raise VolumeFormatError(f"{hdr_path}: header keys must be exactly {sorted(HEADER_KEYS)}")
    if header["dtype"] != "f32" or header["order"] != "x-fastest":
        raise VolumeFormatError(f"{hdr_path}: unsupported dtype/order "
                                f"{header['dtype']!r}/{header['order']!r}")
    dims = header["dims"]
    if (len(dims) != 3 or not all(isinstance(n, int) and n > 0 for n in dims)):
        raise VolumeFormatError(f"{hdr_path}: bad dims {dims}")
    payload = raw_path.read_bytes()
    expected = 4 * int(np.prod(dims))
    if len(payload) != expected:
        raise VolumeSizeError(f"{raw_path}: payload is {len(payload)} bytes, "
                              f"header dims {dims} require {expected}")
    data = np.frombuffer(payload, dtype="<f4").reshape(dims, order="F")
    if not np.all(np.isfinite(data)):
        raise NonFiniteVolumeError(f"{raw_path}: payload contains non-finite values")
    return Volume3(data, tuple(header["spacing_mm"]))
