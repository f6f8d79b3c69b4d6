"""Command line entry point: ``mastoidseg <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 I/O failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import metrics
from .mesh import marching_cubes, write_obj, write_stl
from .optimize import optimize_mask, threshold_mask
from .phantom import generate_postop, generate_preop, generate_removal_mask
from .pipeline import (ConfigError, PipelineConfig, StageError, run_ablation, run_pipeline,
                       write_json, write_per_scale_csv, write_trace_csv)
from .registration import register_rigid, resample
from .similarity import MaskField, total_loss_and_gradient
from .volume import Volume3, VolumeFormatError, read_volume, write_volume

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("mastoidseg")


def _load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        if not 0 <= args.seed < 2 ** 64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        cfg = cfg.with_seed(args.seed)
    return cfg


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_phantom(args, cfg):
    spec = cfg.phantom
    out = _out(args)
    pre = generate_preop(spec)
    gt = generate_removal_mask(spec, pre)
    post = generate_postop(pre, gt, spec)
    write_volume(pre, out / "pre")
    write_volume(post, out / "post")
    write_volume(Volume3(gt, spec.spacing), out / "gt")
    write_json(out / "spec.json", spec.to_dict())


def cmd_register(args, cfg):
    fixed, moving = read_volume(args.fixed), read_volume(args.moving)
    out = _out(args)
    t, score = register_rigid(fixed, moving, cfg.registration_levels)
    write_json(out / "transform.json", {**t.to_dict(), "ncc": score})
    write_volume(resample(moving, t, fixed), out / "registered")
    print(json.dumps({**t.to_dict(), "ncc": score}))


def cmd_optimize(args, cfg):
    rho, omega = read_volume(args.rho), read_volume(args.omega)
    out = _out(args)
    field, trace = optimize_mask(rho, omega, cfg.optimizer, cfg.msssim, cfg.loss_variant)
    write_volume(field.to_volume(rho.spacing), out / "delta")
    write_volume(threshold_mask(field, cfg.threshold, rho.spacing), out / "mask")
    write_trace_csv(out / "trace.csv", trace)


def cmd_evaluate(args, cfg):
    if args.manifest:
        base = Path(args.manifest).parent
        doc = json.loads(Path(args.manifest).read_text())
        if not isinstance(doc, dict) or set(doc) != {"cases"}:
            raise ConfigError("evaluation manifest must be {\"cases\": [...]}")
        cases = []
        for i, c in enumerate(doc["cases"]):
            if set(c) - {"name", "pred", "gt"} or not {"pred", "gt"} <= set(c):
                raise ConfigError(f"case {i}: keys must be pred, gt and optional name")
            cases.append((c.get("name", f"case{i}"), base / c["pred"], base / c["gt"]))
    elif args.pred and args.gt:
        cases = [("case0", Path(args.pred), Path(args.gt))]
    else:
        raise ConfigError("evaluate needs a manifest or --pred and --gt")
    rows = []
    for name, pred_path, gt_path in cases:
        pred, gt = read_volume(pred_path), read_volume(gt_path)
        rows.append({"case": name, **metrics.evaluate_case(pred, gt, gt.spacing)})
    out = _out(args)
    metrics.write_cases_csv(out / "metrics.csv", rows)
    metrics.write_summary_csv(out / "summary.csv", metrics.summarize(rows))


def cmd_mesh(args, cfg):
    v = read_volume(args.volume)
    out = _out(args)
    m = marching_cubes(v, args.iso)
    stem = Path(args.volume)
    stem = (stem.stem if stem.suffix in (".json", ".raw") else stem.name)
    if args.format in ("stl", "both"):
        write_stl(m, out / f"{stem}.stl")
    if args.format in ("obj", "both"):
        write_obj(m, out / f"{stem}.obj")
    print(f"{len(m)} triangles")


def cmd_loss_eval(args, cfg):
    rho, omega = read_volume(args.rho), read_volume(args.omega)
    delta = MaskField.from_probability(read_volume(args.delta).data)
    report, _ = total_loss_and_gradient(rho, omega, delta, cfg.optimizer.lambda_smooth,
                                        cfg.msssim, cfg.loss_variant,
                                        cfg.optimizer.smooth_normalize)
    print(json.dumps(report.as_dict(), indent=2, sort_keys=True))
    if args.csv:
        write_per_scale_csv(args.csv, report)


def cmd_pipeline(args, cfg):
    row = run_pipeline(cfg, args.out)
    print(json.dumps(row))


def cmd_ablation(args, cfg):
    rows = run_ablation(cfg, args.seeds, args.out, workers=args.threads)
    failed = sum(r["status"] != "ok" for r in rows)
    print(f"{len(rows)} runs, {failed} failed; see {Path(args.out) / 'ablation.csv'}")


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # Accepted both before and after the subcommand. The subcommand copies
    # suppress their defaults so they never clobber a value given up front.
    def d(value):
        return argparse.SUPPRESS if suppress else value

    g = argparse.ArgumentParser(add_help=False)
    g.add_argument("--config", default=d(None), help="pipeline config JSON (version 1)")
    g.add_argument("--out", default=d("out"), help="output directory")
    g.add_argument("--seed", type=int, default=d(None), help="phantom seed override")
    g.add_argument("--threads", type=int, default=d(1), help="worker/BLAS thread count")
    g.add_argument("-v", "--verbose", action="store_true", default=d(False))
    return g


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(suppress=True)
    p = argparse.ArgumentParser(prog="mastoidseg", parents=[_global_flags(suppress=False)],
                                description="Unsupervised removal-region estimation on "
                                            "synthetic CT phantoms.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("phantom", parents=[common], help="write a synthetic pre/post/gt triple")
    s.set_defaults(func=cmd_phantom)

    s = sub.add_parser("register", parents=[common], help="rigidly align MOVING onto FIXED")
    s.add_argument("fixed")
    s.add_argument("moving")
    s.set_defaults(func=cmd_register)

    s = sub.add_parser("optimize", parents=[common], help="estimate the removal field")
    s.add_argument("rho")
    s.add_argument("omega")
    s.set_defaults(func=cmd_optimize)

    s = sub.add_parser("evaluate", parents=[common], help="overlap and surface metrics")
    s.add_argument("manifest", nargs="?", help='JSON {"cases": [{"name", "pred", "gt"}]}')
    s.add_argument("--pred")
    s.add_argument("--gt")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("mesh", parents=[common], help="marching-cubes surface of a volume")
    s.add_argument("volume")
    s.add_argument("--iso", type=float, default=0.5)
    s.add_argument("--format", choices=("stl", "obj", "both"), default="both")
    s.set_defaults(func=cmd_mesh)

    s = sub.add_parser("loss", parents=[common], help="loss utilities")
    loss_sub = s.add_subparsers(dest="loss_command", required=True)
    e = loss_sub.add_parser("eval", parents=[common], help="LossReport for rho, omega, delta")
    e.add_argument("rho")
    e.add_argument("omega")
    e.add_argument("delta")
    e.add_argument("--csv", help="write per-scale components to this CSV")
    e.set_defaults(func=cmd_loss_eval)

    s = sub.add_parser("pipeline", parents=[common], help="phantom -> register -> optimize -> "
                                                          "evaluate -> mesh")
    s.set_defaults(func=cmd_pipeline)

    s = sub.add_parser("ablation", parents=[common], help="pipeline per seed and loss variant")
    s.add_argument("--seeds", type=int, nargs="+", default=list(range(8)))
    s.set_defaults(func=cmd_ablation)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg = _load_config(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as err:
        print(f"I/O error: {err}", file=sys.stderr)
        return EXIT_IO
    try:
        with threadpool_limits(limits=args.threads):
            args.func(args, cfg)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as err:
        print(f"error: {err}", file=sys.stderr)
        io = isinstance(err.cause, (OSError, VolumeFormatError))
        return EXIT_IO if io else EXIT_NUMERIC
    except (OSError, VolumeFormatError) as err:
        print(f"I/O error: {err}", file=sys.stderr)
        return EXIT_IO
    except (ArithmeticError, ValueError, RuntimeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
