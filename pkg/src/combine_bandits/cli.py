"""Command-line entry point: ``combine-bandits {simulate,replay,sweep,dynamics}``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from .dynamics import DynamicsParams, theory_vs_simulation
from .experiments import (
    ConfigError,
    ExperimentSpec,
    emit_outputs,
    parse_seeds,
    run_experiment,
    summarize,
    sweep,
    write_sweep,
)

log = logging.getLogger("combine_bandits")


def _load_spec(args, environment: str) -> ExperimentSpec:
    spec = ExperimentSpec.from_yaml(args.spec) if args.spec else ExperimentSpec(environment=environment)
    if spec.environment != environment:
        spec = replace(spec, environment=environment)
    if args.seeds:
        spec = replace(spec, seeds=parse_seeds(args.seeds))
    spec.validate()
    return spec


def _print_summary(traces) -> None:
    for r in sorted(summarize(traces), key=lambda r: (r.group, r.mean)):
        print(f"{r.group:>10s}  {r.algorithm:<24s} {r.mean:10.1f} +- {r.std:8.1f}")


def cmd_run(args, environment: str) -> None:
    spec = _load_spec(args, environment)
    log.info("running %d algorithm(s) x %d seed(s)", len(spec.algorithms), len(spec.seeds))
    traces = run_experiment(spec, args.workers)
    paths = emit_outputs(traces, args.out)
    _print_summary(traces)
    print(f"wrote {', '.join(str(p) for p in paths.values())}")


def cmd_sweep(args) -> None:
    if not args.spec:
        raise ConfigError("sweep needs --spec with a sweep section")
    spec = ExperimentSpec.from_yaml(args.spec)
    if args.seeds:
        spec = replace(spec, seeds=parse_seeds(args.seeds))
    rows = sweep(spec, args.workers)
    path = write_sweep(rows, Path(args.out) / "sweep.csv")
    for r in rows:
        print(f"{r.parameter}={r.value:<8g} {r.group:>10s}  {r.algorithm:<24s} {r.mean:10.1f} +- {r.std:8.1f}")
    print(f"wrote {path}")


DYNAMICS_DEFAULTS = {"delta_r": 0.05, "r_star": 1.0, "gap": 0.5, "p0": 0.5,
                     "horizon": 2000, "replications": 2000, "dt": 0.1, "seed": 0}


def cmd_dynamics(args) -> None:
    cfg = dict(DYNAMICS_DEFAULTS)
    if args.spec:
        with open(args.spec) as fh:
            raw = yaml.safe_load(fh) or {}
        section = raw.get("dynamics", raw)
        extra = set(section) - set(cfg)
        if extra:
            raise ConfigError(f"unknown dynamics key(s) {sorted(extra)}")
        cfg.update(section)
    if args.seeds:
        cfg["seed"] = parse_seeds(args.seeds)[0]
    try:
        params = DynamicsParams(float(cfg["delta_r"]), float(cfg["r_star"]), float(cfg["gap"]), float(cfg["p0"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    res = theory_vs_simulation(params, int(cfg["horizon"]), int(cfg["replications"]),
                               np.random.default_rng(int(cfg["seed"])), float(cfg["dt"]))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "dynamics.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "p_theory", "p_empirical", "C_infinity"])
        for t, pt, pe in zip(res["t"], res["p_theory"], res["p_empirical"]):
            w.writerow([int(t), repr(float(pt)), repr(float(pe)), repr(res["c_infinity"])])
    gap = np.max(np.abs(res["p_theory"] - res["p_empirical"]))
    print(f"C_infinity={res['c_infinity']:.6g}  max |theory - simulation| = {gap:.4f}")
    print(f"wrote {path}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="combine-bandits", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("simulate", "multi-user hidden-state simulation"),
        ("replay", "labeled stream replay"),
        ("sweep", "parameter grid over simulate or replay"),
        ("dynamics", "referee ODE vs Monte-Carlo"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--spec", help="YAML experiment file")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--seeds", help="e.g. 0,1,2 or 0-4")
        p.add_argument("--workers", type=int, default=1)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "simulate":
            cmd_run(args, "simulation")
        elif args.command == "replay":
            cmd_run(args, "stream")
        elif args.command == "sweep":
            cmd_sweep(args)
        else:
            cmd_dynamics(args)
    except (ConfigError, OSError, ValueError, yaml.YAMLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ArithmeticError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
