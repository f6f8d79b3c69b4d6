"""End-to-end runs: phantom -> (registration) -> mask optimization ->
evaluation -> meshes, plus the loss-variant ablation.

Every run writes a ``manifest.json`` listing each artifact with its SHA-256
so reruns can be compared byte for byte.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from .metrics import (METRIC_COLUMNS, SUMMARY_ROWS, evaluate_case, fmt, summarize,
                      write_cases_csv, write_summary_csv)
from .mesh import marching_cubes, write_obj, write_stl
from .optimize import OptimConfig, optimize_mask, threshold_mask
from .phantom import PhantomSpec, generate_postop, generate_preop, generate_removal_mask
from .registration import RigidTransform, register_rigid, resample
from .similarity import VARIANTS, LossReport, MsssimParams, apply_mask
from .volume import Volume3, normalize_intensity, write_volume

log = logging.getLogger(__name__)

CONFIG_VERSION = 1
DEFAULT_MISALIGNMENT = RigidTransform((0.0, 0.0, math.radians(3.0)), (2.0, 0.0, 0.0))


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    phantom: PhantomSpec = field(
        default_factory=lambda: PhantomSpec(misalignment=DEFAULT_MISALIGNMENT))
    registration: bool = True
    registration_levels: int = 3
    normalize_lo_pct: float = 0.005
    normalize_hi_pct: float = 0.995
    optimizer: OptimConfig = field(default_factory=OptimConfig)
    msssim: MsssimParams = field(default_factory=MsssimParams)
    loss_variant: str = "msssim_cscc"
    threshold: float = 0.5
    mesh_iso: float = 0.5

    def __post_init__(self):
        if self.loss_variant not in VARIANTS:
            raise ConfigError(f"loss_variant must be one of {VARIANTS}, got {self.loss_variant!r}")
        if not 0 < self.threshold < 1:
            raise ConfigError("threshold must lie in (0, 1)")
        if self.registration_levels < 1:
            raise ConfigError("registration_levels must be >= 1")
        if not 0 <= self.normalize_lo_pct < self.normalize_hi_pct <= 1:
            raise ConfigError("need 0 <= normalize_lo_pct < normalize_hi_pct <= 1")

    def to_dict(self) -> dict:
        d = {"version": CONFIG_VERSION}
        for f in fields(self):
            val = getattr(self, f.name)
            if f.name == "phantom":
                val = val.to_dict()
            elif f.name == "optimizer":
                val = val.to_dict()
            elif f.name == "msssim":
                val = asdict(val)
                val["weights"] = list(val["weights"])
            d[f.name] = val
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        if d.get("version") != CONFIG_VERSION:
            raise ConfigError(f"config 'version' must be {CONFIG_VERSION}")
        known = {f.name for f in fields(cls)} | {"version"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = {k: v for k, v in d.items() if k != "version"}
        try:
            if "phantom" in kw:
                # omitted keys keep the pipeline defaults (misalignment included);
                # "misalignment": null switches it off
                base = cls().phantom.to_dict()
                kw["phantom"] = PhantomSpec.from_dict({**base, **kw["phantom"]})
            if "optimizer" in kw:
                kw["optimizer"] = OptimConfig.from_dict(kw["optimizer"])
            if "msssim" in kw:
                unknown = set(kw["msssim"]) - {f.name for f in fields(MsssimParams)}
                if unknown:
                    raise ConfigError(f"unknown msssim keys: {sorted(unknown)}")
                kw["msssim"] = MsssimParams(**kw["msssim"])
            return cls(**kw)
        except ConfigError:
            raise
        except (TypeError, ValueError) as err:
            raise ConfigError(str(err)) from None

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as err:
            raise ConfigError(f"{path}: invalid JSON ({err})") from None
        return cls.from_dict(d)

    def with_seed(self, seed: int) -> "PipelineConfig":
        return replace(self, phantom=self.phantom.replace(seed=seed))


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_trace_csv(path, trace: Sequence[LossReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "total", "msssim_cscc", "smooth"])
        for i, r in enumerate(trace):
            w.writerow([i, fmt(r.total), fmt(r.msssim_cscc), fmt(r.smooth)])


def write_per_scale_csv(path, report: LossReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scale", "l_mean", "c_mean", "s_mean", "scc"])
        for j, s in enumerate(report.per_scale):
            w.writerow([j, fmt(s.l_mean), fmt(s.c_mean), fmt(s.s_mean), fmt(s.scc)])


class _Run:
    """Tracks written artifacts and the stage in progress."""

    def __init__(self, out: Path):
        self.out = out
        self.artifacts: List[Path] = []
        self.stage = "setup"

    def volume(self, v: Volume3, name: str) -> None:
        self.artifacts.extend(write_volume(v, self.out / name))

    def file(self, name: str) -> Path:
        p = self.out / name
        self.artifacts.append(p)
        return p

    def manifest(self, status: str, failure: Optional[dict] = None) -> Path:
        entries = [{"path": p.relative_to(self.out).as_posix(), "sha256": sha256(p)}
                   for p in sorted(set(self.artifacts)) if p.exists()]
        doc = {"version": CONFIG_VERSION, "status": status, "artifacts": entries}
        if failure:
            doc["failure"] = failure
        path = self.out / "manifest.json"
        write_json(path, doc)
        return path


def run_pipeline(cfg: PipelineConfig, out_dir) -> Dict[str, float]:
    """Run every stage into ``out_dir`` and return the metric row.

    On failure the manifest records the failing stage and a
    :class:`StageError` is raised.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    run = _Run(out)
    try:
        write_json(run.file("config.json"), cfg.to_dict())

        run.stage = "phantom"
        spec = cfg.phantom
        pre = generate_preop(spec)
        gt_arr = generate_removal_mask(spec, pre)
        post = generate_postop(pre, gt_arr, spec)
        gt = Volume3(gt_arr, spec.spacing)
        run.volume(pre, "pre")
        run.volume(post, "post")
        run.volume(gt, "gt")
        write_json(run.file("spec.json"), spec.to_dict())

        run.stage = "normalize"
        rho = normalize_intensity(pre, cfg.normalize_lo_pct, cfg.normalize_hi_pct)
        omega = normalize_intensity(post, cfg.normalize_lo_pct, cfg.normalize_hi_pct)

        if cfg.registration:
            run.stage = "register"
            t, score = register_rigid(rho, omega, cfg.registration_levels)
            omega = resample(omega, t, rho)
            write_json(run.file("transform.json"), {**t.to_dict(), "ncc": score})
            log.info("registered: %s ncc=%.4f", t, score)
        run.volume(rho, "rho")
        run.volume(omega, "omega")

        run.stage = "optimize"
        mask_field, trace = optimize_mask(rho, omega, cfg.optimizer, cfg.msssim,
                                          cfg.loss_variant)
        delta = mask_field.to_volume(rho.spacing)
        pred = threshold_mask(mask_field, cfg.threshold, rho.spacing)
        run.volume(delta, "delta")
        run.volume(pred, "mask")
        write_trace_csv(run.file("trace.csv"), trace)

        run.stage = "evaluate"
        row = evaluate_case(pred, gt, rho.spacing)
        row = {"case": f"seed{spec.seed}", **row}
        write_cases_csv(run.file("metrics.csv"), [row])
        write_summary_csv(run.file("summary.csv"), summarize([row]))

        run.stage = "mesh"
        mask_mesh = marching_cubes(pred, 0.5)
        write_stl(mask_mesh, run.file("mask.stl"))
        write_obj(mask_mesh, run.file("mask.obj"))
        ct_mesh = marching_cubes(apply_mask(rho, mask_field), cfg.mesh_iso)
        write_stl(ct_mesh, run.file("masked_ct.stl"))
    except Exception as err:
        failure = {"stage": run.stage, "error": f"{type(err).__name__}: {err}"}
        run.manifest("failed", failure)
        raise StageError(run.stage, err) from err
    run.manifest("ok")
    return row


ABLATION_COLUMNS = ("variant", "seed") + METRIC_COLUMNS + ("status",)


def _ablation_job(args):
    cfg, out, variant, seed = args
    try:
        row = run_pipeline(replace(cfg.with_seed(seed), loss_variant=variant), out)
        status = "ok"
    except StageError as err:
        log.error("ablation run %s seed %d failed: %s", variant, seed, err)
        row = {c: math.nan for c in METRIC_COLUMNS}
        status = f"failed:{err.stage}"
    return {"variant": variant, "seed": seed, **{c: row[c] for c in METRIC_COLUMNS},
            "status": status}


def run_ablation(cfg: PipelineConfig, seeds: Sequence[int], out_dir,
                 variants: Sequence[str] = VARIANTS, workers: int = 1) -> List[dict]:
    """Pipeline per (seed, variant). Writes ``ablation.csv`` (one row per
    run, sorted by variant then seed) and ``ablation_summary.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg, out / "runs" / f"{v}_seed{s}", v, s) for v in variants for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_ablation_job, jobs))
    else:
        rows = [_ablation_job(j) for j in jobs]
    rows.sort(key=lambda r: (r["variant"], r["seed"]))

    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ABLATION_COLUMNS)
        for r in rows:
            w.writerow([fmt(r[c]) for c in ABLATION_COLUMNS])

    with open(out / "ablation_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", "stat", "n"] + list(METRIC_COLUMNS))
        for v in sorted(set(r["variant"] for r in rows)):
            ok = [r for r in rows if r["variant"] == v and r["status"] == "ok"]
            if not ok:
                continue
            summary = summarize(ok)
            for stat in SUMMARY_ROWS:
                w.writerow([v, stat, len(ok)] + [fmt(summary[c][stat]) for c in METRIC_COLUMNS])
    return rows
