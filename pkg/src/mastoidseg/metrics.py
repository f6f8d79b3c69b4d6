"""Segmentation evaluation: overlap ratios, surface distances (HD95, ASD)
and min/median/mean/std/max summaries over cases.

Ratios with a zero denominator are reported as ``nan`` ("undefined"), never
as 0. HD95 and ASD are taken over the union of both directed surface
distance sets, in millimeters.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, NamedTuple, Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .volume import Volume3

METRIC_COLUMNS = ("dice", "iou", "acc", "pre", "sen", "spe", "hd95", "asd")
SUMMARY_ROWS = ("min", "median", "mean", "std", "max")
UNDEFINED = math.nan


class OverlapCounts(NamedTuple):
    tp: int
    fp: int
    fn: int
    tn: int


class OverlapMetrics(NamedTuple):
    dice: float
    iou: float
    acc: float
    pre: float
    sen: float
    spe: float


@dataclass(frozen=True)
class SurfaceDistanceSet:
    pred_to_gt: np.ndarray
    gt_to_pred: np.ndarray

    @property
    def union(self) -> np.ndarray:
        return np.concatenate([self.pred_to_gt, self.gt_to_pred])


def _binary(m) -> np.ndarray:
    a = m.data if isinstance(m, Volume3) else np.asarray(m)
    return a.astype(bool)


def _ratio(num: int, den: int) -> float:
    return num / den if den else UNDEFINED


def overlap_counts(pred, gt) -> OverlapCounts:
    p, g = _binary(pred), _binary(gt)
    if p.shape != g.shape:
        raise ValueError(f"dims differ: {p.shape} vs {g.shape}")
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return OverlapCounts(tp, fp, fn, p.size - tp - fp - fn)


def overlap_metrics(pred, gt) -> OverlapMetrics:
    tp, fp, fn, tn = overlap_counts(pred, gt)
    return OverlapMetrics(
        dice=_ratio(2 * tp, 2 * tp + fp + fn),
        iou=_ratio(tp, tp + fp + fn),
        acc=_ratio(tp + tn, tp + fp + fn + tn),
        pre=_ratio(tp, tp + fp),
        sen=_ratio(tp, tp + fn),
        spe=_ratio(tn, tn + fp),
    )


def surface_voxels(mask) -> np.ndarray:
    """Foreground voxels with a background face-neighbor; foreground on the
    volume border counts as surface."""
    m = _binary(mask)
    inner = ndimage.binary_erosion(m, structure=ndimage.generate_binary_structure(3, 1),
                                   border_value=0)
    return m & ~inner


def _directed(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    _, idx = cKDTree(dst).query(src)
    return np.sqrt(np.sum((src - dst[idx]) ** 2, axis=1))


def surface_distances(pred, gt, spacing=None) -> SurfaceDistanceSet:
    p, g = _binary(pred), _binary(gt)
    if p.shape != g.shape:
        raise ValueError(f"dims differ: {p.shape} vs {g.shape}")
    if spacing is None:
        spacing = pred.spacing if isinstance(pred, Volume3) else (1.0, 1.0, 1.0)
    for name, m in (("pred", p), ("gt", g)):
        if not m.any():
            raise ValueError(f"{name} mask is empty; surface distance undefined")
    sp = np.asarray(spacing, dtype=np.float64)
    pa = np.argwhere(surface_voxels(p)) * sp
    ga = np.argwhere(surface_voxels(g)) * sp
    return SurfaceDistanceSet(_directed(pa, ga), _directed(ga, pa))


def hd95(sd: SurfaceDistanceSet) -> float:
    u = sd.union
    if u.size == 0:
        raise ValueError("empty distance set")
    return float(np.percentile(u, 95))


def asd(sd: SurfaceDistanceSet) -> float:
    u = sd.union
    if u.size == 0:
        raise ValueError("empty distance set")
    return float(np.mean(u))


def evaluate_case(pred, gt, spacing=None) -> Dict[str, float]:
    """All eight table metrics for one case; surface metrics are ``nan``
    when either mask is empty."""
    row = overlap_metrics(pred, gt)._asdict()
    if _binary(pred).any() and _binary(gt).any():
        sd = surface_distances(pred, gt, spacing)
        row.update(hd95=hd95(sd), asd=asd(sd))
    else:
        row.update(hd95=UNDEFINED, asd=UNDEFINED)
    return row


def summarize(runs: Sequence[Dict[str, float]],
              columns: Sequence[str] = METRIC_COLUMNS) -> Dict[str, Dict[str, float]]:
    """Min, median, mean, sample standard deviation (n - 1) and max per
    metric. Undefined (nan) entries are skipped; ``std`` of a single value
    is ``nan``."""
    if not runs:
        raise ValueError("no runs to summarize")
    out = {}
    for col in columns:
        vals = np.array([r[col] for r in runs], dtype=np.float64)
        vals = vals[np.isfinite(vals)]
        if vals.size == 0:
            out[col] = {k: UNDEFINED for k in SUMMARY_ROWS}
            continue
        out[col] = {
            "min": float(vals.min()),
            "median": float(np.median(vals)),
            "mean": float(vals.mean()),
            "std": float(vals.std(ddof=1)) if vals.size > 1 else UNDEFINED,
            "max": float(vals.max()),
        }
    return out


def fmt(x) -> str:
    if isinstance(x, float):
        return "nan" if math.isnan(x) else repr(x)
    return str(x)


def write_cases_csv(path, rows: Iterable[Dict], lead: Sequence[str] = ("case",),
                    columns: Sequence[str] = METRIC_COLUMNS):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(lead) + list(columns))
        for r in rows:
            w.writerow([fmt(r[k]) for k in lead] + [fmt(r[k]) for k in columns])


def summary_rows(summary: Dict[str, Dict[str, float]], columns=METRIC_COLUMNS) -> List[List[str]]:
    return [[stat] + [fmt(summary[c][stat]) for c in columns] for stat in SUMMARY_ROWS]


def write_summary_csv(path, summary: Dict[str, Dict[str, float]],
                      columns: Sequence[str] = METRIC_COLUMNS):
    """Rows ``min, median, mean, std, max``; ``std`` uses the n-1 convention."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stat"] + list(columns))
        w.writerows(summary_rows(summary, columns))
