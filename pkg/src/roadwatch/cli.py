"""Command-line entry point: ``roadwatch {simulate,classify,evaluate,feedback}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import load_config
from .harness import (
    MICRO_BEHAVIORS,
    ExperimentConfig,
    feedback_experiment,
    feedback_table,
    observation_seed,
    realized_scenario,
    recognized_instances,
    render_feedback,
    run_experiment,
)
from .observe import estimate_kinematics, observe
from .pipeline import classify_trace
from .sim import GroundTruthTrace, run_scenario
from .traceio import read_series, write_series

log = logging.getLogger("roadwatch")


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    kw = {}
    if args.seed is not None:
        kw["seed"] = args.seed
    if getattr(args, "runs", None) is not None:
        kw["runs"] = args.runs
    if args.out is not None:
        kw["out_dir"] = args.out
    if getattr(args, "scenarios", None) is not None:
        kw["scenarios"] = cfg.scenarios[: args.scenarios]
    return replace(cfg, **kw) if kw else cfg


def _out_dir(cfg: ExperimentConfig) -> Path | None:
    if cfg.out_dir is None:
        return None
    p = Path(cfg.out_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


def cmd_simulate(args) -> int:
    cfg = _config(args)
    out = _out_dir(cfg) or Path(".")
    for i in range(len(cfg.scenarios)):
        scen = realized_scenario(cfg, 0, i)
        trace = run_scenario(scen)
        path = out / f"scenario_{i:03d}.csv"
        with open(path, "w", encoding="utf-8") as fh:
            n = write_series(trace.series, fh)
        log.info("wrote %s (%d records)", path, n)
        if args.roadside:
            obs = observe(trace, cfg.camera, cfg.noise, observation_seed(cfg, 0, i))
            est = estimate_kinematics(obs, cfg.noise, scen.cell_length_m)
            epath = out / f"scenario_{i:03d}_roadside.csv"
            with open(epath, "w", encoding="utf-8") as fh:
                write_series(est.series, fh, estimated=True)
            log.info("wrote %s", epath)
    return 0


def cmd_classify(args) -> int:
    cfg = _config(args)
    records = []
    for path in args.traces:
        series = read_series(path)
        is_estimate = any(s.confident is not None for s in series.values())
        if args.pipeline == "roadside" and not is_estimate:
            scen = replace(cfg.scenarios[0], profiles=cfg.scenarios[0].profiles[: len(series)])
            trace = GroundTruthTrace(scen, series)
            obs = observe(trace, cfg.camera, cfg.noise, cfg.seed)
            series = estimate_kinematics(obs, cfg.noise, scen.cell_length_m).series
        params = cfg.params_for(cfg.scenarios[0].speed_limit_mps)
        results = classify_trace(series, params, cfg.specs, cfg.window)
        for vid, r in results.items():
            records.append({
                "trace": str(path), "pipeline": args.pipeline, "vehicle_id": vid,
                "true_label": series[vid].label or None, "label": r.label,
                "durations": r.durations(),
            })
    lines = [f"{'trace':<32}{'id':>4}  {'true':<12}{'predicted':<12}"]
    for rec in records:
        lines.append(f"{Path(rec['trace']).name:<32}{rec['vehicle_id']:>4}  "
                     f"{rec['true_label'] or '-':<12}{rec['label']:<12}")
    print("\n".join(lines))
    out = _out_dir(cfg)
    if out is not None:
        with open(out / "labels.jsonl", "w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    report, _ = run_experiment(cfg)
    text = report.render()
    print(text, end="")
    out = _out_dir(cfg)
    if out is not None:
        (out / "report.txt").write_text(text, encoding="utf-8")
        (out / "report.jsonl").write_text(report.jsonl(), encoding="utf-8")
    return 0


def cmd_feedback(args) -> int:
    cfg = _config(args)
    if args.behavior:
        base = recognized_instances(cfg, args.pipeline)
        rows = [feedback_experiment(cfg, b, args.reduction, args.pipeline, base) for b in args.behavior]
    else:
        rows = feedback_table(cfg, args.reduction, args.pipeline)
    text = render_feedback(rows)
    print(text, end="")
    out = _out_dir(cfg)
    if out is not None:
        (out / "feedback.txt").write_text(text, encoding="utf-8")
        with open(out / "feedback.jsonl", "w", encoding="utf-8") as fh:
            for r in rows:
                fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment configuration")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="roadwatch", description="Driving-behavior recognition experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="emit ground-truth traces")
    s.add_argument("--scenarios", type=int, help="only the first N scenarios")
    s.add_argument("--roadside", action="store_true", help="also emit roadside estimates")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("classify", parents=[common], help="label the vehicles of trace files")
    c.add_argument("traces", nargs="+")
    c.add_argument("--pipeline", choices=("in-vehicle", "roadside"), default="in-vehicle")
    c.set_defaults(func=cmd_classify)

    e = sub.add_parser("evaluate", parents=[common], help="run both pipelines and report metrics")
    e.add_argument("--runs", type=int)
    e.add_argument("--scenarios", type=int, help="only the first N scenarios")
    e.set_defaults(func=cmd_evaluate)

    f = sub.add_parser("feedback", parents=[common], help="micro-behavior reduction study")
    f.add_argument("--runs", type=int)
    f.add_argument("--scenarios", type=int, help="only the first N scenarios")
    f.add_argument("--behavior", action="append", choices=sorted(MICRO_BEHAVIORS),
                   help="micro-behavior to reduce (repeatable; default: all)")
    f.add_argument("--reduction", type=float, default=0.5)
    f.add_argument("--pipeline", choices=("in-vehicle", "roadside"), default="in-vehicle")
    f.set_defaults(func=cmd_feedback)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # report and fail with a nonzero status
        if args.verbose:
            log.exception("failed")
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
