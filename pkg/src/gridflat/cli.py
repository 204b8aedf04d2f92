"""Command-line entry point.

Exit codes: 0 optimal / checks passed, 1 input error, 2 infeasible or
unbounded, 3 node limit reached before optimality was proven,
4 numerical failure inside the solver.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .files import (InputError, config_hash, file_digest, load_to_csv, read_problem, read_schedule_csv,
                    schedule_to_csv, summary_dict, write_json)
from .model import InvalidConfigError, ProblemConfig, validate_config
from .scenarios import (DEFAULT_NODE_LIMIT, PROFILES, generate_synthetic_load, sweep_capacity, sweep_location,
                        sweep_theta, solve_config)
from .solver import NumericalError
from .validation import check_schedule

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_INFEASIBLE = 2
EXIT_NODE_LIMIT = 3
EXIT_NUMERICAL = 4

_STATUS_EXIT = {"optimal": EXIT_OK, "infeasible": EXIT_INFEASIBLE, "unbounded": EXIT_INFEASIBLE,
                "node_limit": EXIT_NODE_LIMIT}


def _add_overrides(p):
    g = p.add_argument_group("overrides")
    g.add_argument("--formulation", type=str.lower, choices=["op1", "op2", "op3"])
    g.add_argument("--theta", type=float, help="fixed target power (kW), OP1")
    g.add_argument("--alpha", type=float)
    g.add_argument("--beta", type=float)
    g.add_argument("--capacity-kwh", type=float, help="capacity applied to every battery")
    g.add_argument("--bes-bus", type=int, help="bus applied to every battery")
    g.add_argument("--epsilon", type=float, help="voltage band half-width (p.u.)")
    g.add_argument("--node-limit", type=int, default=DEFAULT_NODE_LIMIT)
    g.add_argument("--relax", action="store_true", help="solve the LP relaxation")
    g.add_argument("--out", type=Path, default=Path("gridflat-out"), help="output directory")


def _overrides(args) -> dict:
    keys = ("formulation", "theta", "alpha", "beta", "capacity_kwh", "bes_bus", "epsilon")
    out = {k: getattr(args, k) for k in keys if getattr(args, k) is not None}
    if args.relax:
        out["relax"] = True
    out["node_limit"] = args.node_limit
    return out


def apply_overrides(config: ProblemConfig, ov: dict) -> ProblemConfig:
    if "formulation" in ov:
        config = replace(config, formulation=ov["formulation"])
    if "theta" in ov:
        config = replace(config, theta_kw=ov["theta"])
    if "alpha" in ov:
        config = replace(config, alpha=ov["alpha"])
    if "beta" in ov:
        config = replace(config, beta=ov["beta"])
    if "capacity_kwh" in ov:
        config = config.with_capacity(ov["capacity_kwh"])
    if "bes_bus" in ov:
        config = replace(config, bess_units=tuple(replace(u, bus=ov["bes_bus"]) for u in config.bess_units))
    if "epsilon" in ov:
        if config.feeder is None:
            raise InputError("--epsilon needs a problem with a feeder")
        config = replace(config, feeder=replace(config.feeder, epsilon=ov["epsilon"]))
    if ov.get("relax"):
        config = replace(config, relaxation_mode="lp-relax")
    return config


def _load_config(path, ov):
    """Returns the checked config, or prints the problems and returns None."""
    try:
        config = apply_overrides(read_problem(path), ov)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return None
    violations = validate_config(config)
    if violations:
        for v in violations:
            print(f"{v.code}: {v.message}", file=sys.stderr)
        return None
    return config


def write_manifest(out: Path, command: str, inputs, ov: dict, config: ProblemConfig):
    write_json(out / "manifest.json", {
        "command": command,
        "inputs": [{"path": str(p), "sha256": file_digest(p)} for p in inputs],
        "overrides": ov,
        "output_dir": str(out),
        "version": __version__,
        "config_hash": config_hash(config),
    })


def cmd_solve(args) -> int:
    ov = _overrides(args)
    config = _load_config(args.problem, ov)
    if config is None:
        return EXIT_INPUT
    trace = (lambda line: print(line, file=sys.stderr)) if args.trace else None
    try:
        report = solve_config(config, ov["node_limit"], trace=trace)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    if report.schedule is not None:
        (out / "schedule.csv").write_text(schedule_to_csv(report.schedule, report.pcc_power_kw.values))
    write_json(out / "summary.json", summary_dict(report))
    write_manifest(out, "solve", [args.problem], ov, config)
    print(f"{report.status}: K={report.k_kw:.6g} kW theta={report.theta_kw:.6g} kW")
    return _STATUS_EXIT.get(report.status, EXIT_NUMERICAL)


def parse_axis(spec: str) -> list:
    """``start:stop:count`` (inclusive, evenly spaced) or ``a,b,c``."""
    try:
        if ":" in spec:
            start, stop, count = spec.split(":")
            n = int(count)
            if n < 1:
                raise ValueError
            return [float(v) for v in np.linspace(float(start), float(stop), n)]
        return [float(v) for v in spec.split(",") if v.strip()]
    except ValueError:
        raise InputError(f"bad axis {spec!r}; use start:stop:count or a comma list") from None


_SWEEPS = {"capacity": sweep_capacity, "theta": sweep_theta, "location": sweep_location}


def cmd_sweep(args) -> int:
    ov = _overrides(args)
    config = _load_config(args.problem, ov)
    if config is None:
        return EXIT_INPUT
    try:
        axis = parse_axis(args.axis)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if args.kind == "location":
        axis = [int(round(a)) for a in axis]
    try:
        result = _SWEEPS[args.kind](config, axis, ov["node_limit"])
    except InvalidConfigError:
        need = "an OP3 problem with one battery" if args.kind == "location" else "an OP1 or OP2 problem"
        print(f"error: {args.kind} sweep needs {need}", file=sys.stderr)
        return EXIT_INPUT
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    (out / f"sweep_{args.kind}.csv").write_text(result.to_csv())
    (out / f"sweep_{args.kind}.json").write_text(result.summary_json() + "\n")
    write_manifest(out, f"sweep {args.kind}", [args.problem], dict(ov, axis=args.axis), config)
    for a, e in result.failures:
        print(f"point {a}: {e}", file=sys.stderr)
    solved = sum(1 for r in result.reports if r is not None and r.ok)
    print(f"{solved}/{len(result.axis)} points solved")
    return EXIT_OK if solved else EXIT_INFEASIBLE


def _read_summary(path):
    try:
        doc = json.loads(Path(path).read_text())
        return float(doc["K_kw"]), float(doc["theta_kw"])
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise InputError(f"cannot read summary {path}: {exc}") from None


def _validate_overrides(args) -> dict:
    """Overrides given on the command line, else those recorded by the solve
    run that wrote the schedule (its ``manifest.json``)."""
    ov = _overrides(args)
    ov.pop("node_limit")
    if ov:
        return ov
    manifest = Path(args.schedule).with_name("manifest.json")
    if manifest.exists():
        try:
            doc = json.loads(manifest.read_text())
        except ValueError:
            return {}
        if doc.get("command") == "solve":
            return {k: v for k, v in doc.get("overrides", {}).items() if k != "node_limit"}
    return {}


def cmd_validate(args) -> int:
    ov = _validate_overrides(args)
    config = _load_config(args.problem, ov)
    if config is None:
        return EXIT_INPUT
    try:
        schedule, pg = read_schedule_csv(args.schedule, config.load.step_hours)
        summary = args.summary or Path(args.schedule).with_name("summary.json")
        if Path(summary).exists():
            k, theta = _read_summary(summary)
        else:
            # no reported K: take the tightest bound the emitted P_g admits
            g = np.asarray(pg)
            theta = config.theta_kw if config.formulation == "OP1" else 0.5 * (g.max() + g.min())
            k = float(np.max(np.abs(g - theta)))
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if schedule.steps != config.steps or len(pg) != config.steps:
        print(f"error: schedule has {len(pg)} steps, problem horizon is {config.steps}", file=sys.stderr)
        return EXIT_INPUT
    relaxed = config.relaxation_mode == "lp-relax"
    results = check_schedule(config, schedule, k, theta, pcc_kw=pg, relaxed=relaxed)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}" + (f": {r.detail}" if r.detail else ""))
    return EXIT_OK if all(r.passed for r in results) else EXIT_INFEASIBLE


def cmd_gen_load(args) -> int:
    try:
        load = generate_synthetic_load(args.profile, args.min_kw, args.max_kw, args.steps, args.step_hours)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    text = load_to_csv(load)
    if args.out is None:
        sys.stdout.write(text)
    else:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gridflat", description="Battery scheduling for load flattening.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve one problem file")
    p.add_argument("problem", type=Path)
    p.add_argument("--trace", action="store_true", help="print branch-and-bound progress to stderr")
    _add_overrides(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="parameter sweep over one problem file")
    p.add_argument("kind", choices=sorted(_SWEEPS))
    p.add_argument("problem", type=Path)
    p.add_argument("--axis", required=True, help="start:stop:count or a comma-separated list")
    _add_overrides(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("validate", help="re-check a schedule against a problem")
    p.add_argument("problem", type=Path)
    p.add_argument("schedule", type=Path)
    p.add_argument("--summary", type=Path, help="summary.json with K and theta (default: next to the schedule)")
    _add_overrides(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("gen-load", help="write a synthetic load profile as CSV")
    p.add_argument("profile", choices=PROFILES)
    p.add_argument("min_kw", type=float)
    p.add_argument("max_kw", type=float)
    p.add_argument("--steps", type=int, default=24)
    p.add_argument("--step-hours", type=float, default=1.0)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_gen_load)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
