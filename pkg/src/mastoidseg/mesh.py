"""Marching-cubes isosurfaces and STL/OBJ export.

Vertices are welded by cell-edge identity: every vertex is keyed by the
grid edge it lies on, so neighbouring cells share vertices exactly and a
closed level set gives a closed mesh (ambiguous saddle faces are resolved by
the fixed table and may not be). Cells are visited z-slab by z-slab, then
y, then x, which fixes triangle order.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._mc_tables import CORNERS, EDGES, TRIANGLES
from .volume import Volume3

_NTRI = np.array([len(r) // 3 for r in TRIANGLES])
_TRI = np.full((256, 15), -1, dtype=np.int64)
for _c, _row in enumerate(TRIANGLES):
    _TRI[_c, :len(_row)] = _row

# each cell edge as (lower corner offset, axis)
_EDGE_ORIGIN = np.array([np.minimum(CORNERS[a], CORNERS[b]) for a, b in EDGES])
_EDGE_AXIS = np.array([int(np.argmax(np.abs(np.subtract(CORNERS[b], CORNERS[a]))))
                       for a, b in EDGES])

DEGENERATE_AREA = 1e-12


@dataclass(frozen=True)
class TriMesh:
    vertices: np.ndarray   # (V, 3) float64, mm
    triangles: np.ndarray  # (F, 3) int64

    @property
    def normals(self) -> np.ndarray:
        n = self._cross()
        length = np.linalg.norm(n, axis=1, keepdims=True)
        return np.divide(n, length, out=np.zeros_like(n), where=length > 0)

    def _cross(self) -> np.ndarray:
        t = self.vertices[self.triangles]
        return np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])

    def __len__(self):
        return len(self.triangles)


def empty_mesh() -> TriMesh:
    return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))


def marching_cubes(v: Volume3, iso: float = 0.5) -> TriMesh:
    """Triangulate the ``iso`` level set of ``v``.

    Triangles are oriented with normals pointing toward lower values
    (outward from the region above ``iso``). An ``iso`` outside the data
    range yields an empty mesh.
    """
    a = v.data.astype(np.float64)
    if min(a.shape) < 2:
        raise ValueError(f"volume dims {a.shape} too small for marching cubes")
    if not np.isfinite(iso):
        raise ValueError("iso level must be finite")
    if not (a.min() < iso < a.max()):
        return empty_mesh()

    nx, ny, nz = a.shape
    below = a < iso
    case = np.zeros((nx - 1, ny - 1, nz - 1), dtype=np.int64)
    for k, (dx, dy, dz) in enumerate(CORNERS):
        case |= below[dx:dx + nx - 1, dy:dy + ny - 1, dz:dz + nz - 1].astype(np.int64) << k

    # active cells in z-major order
    kk, jj, ii = np.nonzero(_NTRI[case.transpose(2, 1, 0)])
    cells = np.stack([ii, jj, kk], axis=1)
    cc = case[ii, jj, kk]
    ntri = _NTRI[cc]
    cell_of_tri = np.repeat(np.arange(len(cells)), ntri)
    starts = np.cumsum(ntri) - ntri
    slot = np.arange(len(cell_of_tri)) - np.repeat(starts, ntri)
    local = _TRI[cc[cell_of_tri][:, None], 3 * slot[:, None] + np.arange(3)]  # (F, 3)

    origin = cells[cell_of_tri][:, None, :] + _EDGE_ORIGIN[local]  # (F, 3, 3)
    axis = _EDGE_AXIS[local]
    # keys: 4 * grid point + axis for edge vertices, 4 * grid point + 3 for
    # vertices that land exactly on a grid point (value == iso)
    lin = (origin[..., 0] * ny + origin[..., 1]) * nz + origin[..., 2]
    ukey, inv = np.unique((lin * 4 + axis).ravel(), return_inverse=True)

    ax = ukey % 4
    lin = ukey // 4
    p0 = np.stack([lin // (ny * nz), (lin // nz) % ny, lin % nz], axis=1)
    step = np.eye(3, dtype=np.int64)[ax]
    p1 = p0 + step
    v0 = a[p0[:, 0], p0[:, 1], p0[:, 2]]
    v1 = a[p1[:, 0], p1[:, 1], p1[:, 2]]
    t = (iso - v0) / (v1 - v0)
    verts = (p0 + t[:, None] * step) * np.array(v.spacing)
    welded = np.where(t == 0.0, lin * 4 + 3,
                      np.where(t == 1.0, (lin + step @ np.array([ny * nz, nz, 1])) * 4 + 3,
                               ukey))
    wkey, first, winv = np.unique(welded, return_index=True, return_inverse=True)
    verts = verts[first]
    tris = winv[inv].reshape(-1, 3).astype(np.int64)
    collapsed = (tris[:, 0] == tris[:, 1]) | (tris[:, 1] == tris[:, 2]) | (tris[:, 0] == tris[:, 2])
    mesh = TriMesh(verts, np.ascontiguousarray(tris[~collapsed]))
    area2 = np.linalg.norm(mesh._cross(), axis=1)
    if np.any(area2 <= 2 * DEGENERATE_AREA):
        mesh = TriMesh(verts, mesh.triangles[area2 > 2 * DEGENERATE_AREA])
    return mesh


def surface_area(m: TriMesh) -> float:
    return float(0.5 * np.linalg.norm(m._cross(), axis=1).sum())


def enclosed_volume(m: TriMesh) -> float:
    """Signed volume by the divergence theorem (positive for outward
    normals on a closed mesh)."""
    t = m.vertices[m.triangles]
    return float(np.einsum("ij,ij->i", t[:, 0], np.cross(t[:, 1], t[:, 2])).sum() / 6.0)


def edge_use_counts(m: TriMesh) -> np.ndarray:
    e = np.sort(m.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    _, counts = np.unique(e, axis=0, return_counts=True)
    return counts


def is_watertight(m: TriMesh) -> bool:
    return len(m) > 0 and bool(np.all(edge_use_counts(m) == 2))


def euler_characteristic(m: TriMesh) -> int:
    used = np.unique(m.triangles)
    return int(len(used) - len(edge_use_counts(m)) + len(m.triangles))


_STL_RECORD = np.dtype([("normal", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")])


def write_stl(m: TriMesh, path) -> None:
    """Binary STL: 80-byte zero header, uint32 count, 50-byte records."""
    rec = np.zeros(len(m), dtype=_STL_RECORD)
    if len(m):
        rec["normal"] = m.normals
        rec["v"] = m.vertices[m.triangles]
    with open(path, "wb") as fh:
        fh.write(bytes(80))
        fh.write(np.uint32(len(m)).astype("<u4").tobytes())
        fh.write(rec.tobytes())


def write_obj(m: TriMesh, path) -> None:
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in m.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in m.triangles.tolist()]
    Path(path).write_text("".join(line + "\n" for line in lines))
