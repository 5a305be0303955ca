"""Command line: ``rieszlab {build,validate,run,report}``.

Exit codes: 0 success, 2 validation failure, 3 pipeline error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, load_config, resolve_out, validate
from .runner import run, write_report

EXIT_OK, EXIT_INVALID, EXIT_PIPELINE = 0, 2, 3


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _check(cfg: ExperimentConfig) -> bool:
    diags = validate(cfg)
    for d in diags:
        print(d, file=sys.stderr)
    return not any(d.severity == "error" for d in diags)


def cmd_validate(args) -> int:
    cfg = _load(args)
    ok = _check(cfg)
    if ok:
        print("config ok")
    return EXIT_OK if ok else EXIT_INVALID


def cmd_build(args) -> int:
    cfg = _load(args)
    if not _check(cfg):
        return EXIT_INVALID
    out = resolve_out(cfg, args.out) / "models"
    out.mkdir(parents=True, exist_ok=True)
    summary = []
    for level in cfg.model.levels:
        try:
            g = cfg.model.build(level)
        except Exception as exc:  # noqa: BLE001 - reported as a pipeline error
            print(f"build failed at level {level}: {exc}", file=sys.stderr)
            return EXIT_PIPELINE
        np.savez_compressed(out / f"level_{level}.npz", mu=g.mu, edges=g.edges, weights=g.weights,
                            lengths=g.lengths, basepoint=g.basepoint)
        summary.append({"level": level, "n_vertices": g.n, "n_edges": g.m,
                        "basepoint": g.basepoint, "max_r": float(g.r.max()),
                        "metadata": {"builder": g.metadata.get("builder"),
                                     "params": g.metadata.get("params")}})
        print(f"level {level}: {g.n} vertices, {g.m} edges")
    with open(out / "models.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load(args)
    if not _check(cfg):
        return EXIT_INVALID
    report = run(cfg, parallel=args.parallel)
    path = write_report(report, resolve_out(cfg, args.out))
    for err in report.errors:
        print(f"pipeline {err['pipeline']} failed at level {err['level']}: {err['error']}",
              file=sys.stderr)
    print(f"wrote {path} ({len(report.rows)} rows, hash {report.run_hash[:12]})")
    return EXIT_PIPELINE if report.errors else EXIT_OK


def cmd_report(args) -> int:
    path = Path(args.out if args.out is not None else load_config(args.config).out) / "report.json"
    try:
        with open(path) as fh:
            rep = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"cannot read {path}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(f"run hash {rep['run_hash']}")
    print(f"{'pipeline':<14}{'level':>6}{'tag':>14}{'p':>6}{'constant':>14}  method")
    for r in rep["rows"]:
        p = r.get("p")
        c = r.get("constant")
        c = f"{c:.6g}" if isinstance(c, float) else str(c)
        print(f"{r['pipeline']:<14}{r['level']:>6}{r['tag']:>14}"
              f"{'' if p is None else f'{p:g}':>6}{c:>14}  {r.get('method', '')}")
    for err in rep["errors"]:
        print(f"error: {err['pipeline']} level {err['level']}: {err['error']}")
    return EXIT_PIPELINE if rep["errors"] else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rieszlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func, help_ in [
        ("build", cmd_build, "build the model graphs of every refinement level"),
        ("validate", cmd_validate, "check a config without running it"),
        ("run", cmd_run, "run the configured pipelines"),
        ("report", cmd_report, "print a summary of a finished run"),
    ]:
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=name != "report", help="TOML experiment config")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--seed", type=int, help="seed (overrides the config)")
        p.add_argument("--parallel", action="store_true", help="run refinement levels in parallel")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "report" and args.config is None and args.out is None:
        print("report needs --out or --config", file=sys.stderr)
        return EXIT_INVALID
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
