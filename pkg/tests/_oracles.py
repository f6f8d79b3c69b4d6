"""Slow, obviously-correct reference computations used only by the tests.

Nothing here imports the package under test except for types, so a bug in
the library cannot hide behind a matching bug in its oracle.
"""
import itertools
import math

import numpy as np


def percentile_linear(values, q):
    """q-th percentile with linear interpolation between closest ranks."""
    s = sorted(float(v) for v in values)
    pos = q / 100 * (len(s) - 1)
    lo = math.floor(pos)
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (pos - lo) * (s[hi] - s[lo])


def overlap_counts(pred, gt):
    tp = fp = fn = tn = 0
    for p, g in zip(np.asarray(pred).ravel().tolist(), np.asarray(gt).ravel().tolist()):
        if p and g:
            tp += 1
        elif p:
            fp += 1
        elif g:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn


def surface_points(mask):
    """Foreground voxels with a background (or out-of-volume) face neighbour."""
    m = np.asarray(mask).astype(bool)
    pts = []
    for idx in itertools.product(*(range(n) for n in m.shape)):
        if not m[idx]:
            continue
        neighbours = []
        for ax in range(3):
            for step in (-1, 1):
                nb = list(idx)
                nb[ax] += step
                neighbours.append(tuple(nb))
        if any(not all(0 <= nb[i] < m.shape[i] for i in range(3)) or not m[nb]
               for nb in neighbours):
            pts.append(idx)
    return pts


def directed_distances(src, dst, spacing):
    out = []
    for a in src:
        best = math.inf
        for b in dst:
            d = math.sqrt(sum((a[i] * spacing[i] - b[i] * spacing[i]) ** 2 for i in range(3)))
            best = min(best, d)
        out.append(best)
    return sorted(out)


def smooth_sum(d):
    """Sum of squared forward differences by explicit enumeration."""
    d = np.asarray(d, dtype=np.float64)
    nx, ny, nz = d.shape
    total = 0.0
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                if i + 1 < nx:
                    total += (d[i + 1, j, k] - d[i, j, k]) ** 2
                if j + 1 < ny:
                    total += (d[i, j + 1, k] - d[i, j, k]) ** 2
                if k + 1 < nz:
                    total += (d[i, j, k + 1] - d[i, j, k]) ** 2
    return total


def scc_sums(a, b):
    """Squared correlation from plain running sums."""
    x = np.asarray(a, dtype=np.float64).ravel().tolist()
    y = np.asarray(b, dtype=np.float64).ravel().tolist()
    n = len(x)
    mx, my = math.fsum(x) / n, math.fsum(y) / n
    sxy = math.fsum((p - mx) * (q - my) for p, q in zip(x, y))
    sxx = math.fsum((p - mx) ** 2 for p in x)
    syy = math.fsum((q - my) ** 2 for q in y)
    return sxy * sxy / (sxx * syy)


def central_difference_check(f, z, coords, h=1e-3):
    """Worst relative error between ``f(z)[1]`` (analytic gradient) and
    central differences of ``f(z)[0]`` at ``coords``."""
    _, grad = f(z)
    worst = 0.0
    for c in coords:
        zp, zm = z.copy(), z.copy()
        zp[c] += h
        zm[c] -= h
        num = (f(zp)[0] - f(zm)[0]) / (2 * h)
        ana = grad[c]
        worst = max(worst, abs(ana - num) / max(abs(ana), abs(num), 1e-12))
    return worst


def dice(pred, gt):
    tp, fp, fn, _ = overlap_counts(pred, gt)
    return 2 * tp / (2 * tp + fp + fn)


def parse_obj(path):
    verts, faces = [], []
    for line in open(path):
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append(tuple(float(p) for p in parts[1:4]))
        elif parts[0] == "f":
            faces.append(tuple(int(p.split("/")[0]) - 1 for p in parts[1:4]))
    return np.array(verts), np.array(faces, dtype=np.int64)
