"""Single solves and the parameter studies built on them."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .formulation import build, decode
from .model import InvalidConfigError, ProblemConfig, SolveReport, TimeSeries, pcc_power
from .solver import NumericalError, solve_lp, solve_milp
from .validation import check_schedule

K_TOL = 1e-3
# "alpha >> beta" and "alpha << beta"
K_FIRST = (1000.0, 1.0)
THETA_FIRST = (1.0, 1000.0)

DEFAULT_NODE_LIMIT = 10_000


def solve_config(config: ProblemConfig, node_limit: int = DEFAULT_NODE_LIMIT, trace=None) -> SolveReport:
    """Build, solve, decode and validate one problem."""
    problem = build(config)
    relaxed = config.relaxation_mode == "lp-relax"
    if relaxed:
        sol = solve_lp(problem)
        status, x, obj = sol.status, sol.primal, sol.objective
        nodes, iters, gap, integral = 0, sol.iterations, 0.0, None
    else:
        ms = solve_milp(problem, node_limit=node_limit, trace=trace)
        status, x, obj = ms.status, ms.primal, ms.objective
        nodes, iters, gap, integral = ms.stats.nodes_explored, ms.lp_iterations, ms.stats.gap, ms.root_integral
    if x is None or not np.all(np.isfinite(x)):
        return SolveReport(status, math.nan, math.nan, obj, None, None, nodes, iters, (), gap, integral)
    schedule, k, theta, volts = decode(problem, config, x)
    cfg = config.resolve()
    pg = pcc_power(cfg.load, schedule)
    checks = tuple(check_schedule(config, schedule, k, theta, relaxed=relaxed))
    return SolveReport(status, k, theta, obj, schedule, pg, nodes, iters, checks, gap, integral, volts)


@dataclass(frozen=True)
class SweepResult:
    kind: str
    axis: tuple
    reports: tuple
    derived: dict = field(default_factory=dict)
    failures: tuple = ()

    def __post_init__(self):
        if len(self.axis) != len(self.reports):
            raise ValueError("axis and reports differ in length")
        if any(b <= a for a, b in zip(self.axis, self.axis[1:])):
            raise ValueError("sweep axis must be strictly increasing")

    @property
    def k_values(self) -> np.ndarray:
        return np.array([r.k_kw if r is not None and r.schedule is not None else math.nan for r in self.reports])

    @property
    def k_lower_bounds(self) -> np.ndarray:
        """Proven lower bound on K per point: K itself when optimal, K - gap at a node limit.

        Only meaningful when the objective is K alone (OP1)."""
        return np.array([r.k_kw - r.gap if r is not None and r.schedule is not None else math.nan
                         for r in self.reports])

    @property
    def theta_values(self) -> np.ndarray:
        return np.array([r.theta_kw if r is not None and r.schedule is not None else math.nan for r in self.reports])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["axis", "K", "theta", "objective", "gap", "status"])
        for a, r in zip(self.axis, self.reports):
            if r is None:
                w.writerow([repr(float(a)), "", "", "", "", "error"])
            else:
                w.writerow([repr(float(a)), repr(float(r.k_kw)), repr(float(r.theta_kw)),
                            repr(float(r.objective)), repr(float(r.gap)), r.status])
        return buf.getvalue()

    def summary_json(self) -> str:
        doc = {"kind": self.kind, "points": len(self.axis), "derived": self.derived,
               "failures": [{"axis": a, "error": e} for a, e in self.failures]}
        return json.dumps(doc, indent=2, sort_keys=True, default=_jsonable)


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, tuple):
        return list(v)
    raise TypeError(type(v))


def _run_sweep(kind, axis, make_config, node_limit):
    axis = sorted(set(float(a) for a in axis))
    reports, failures = [], []
    for a in axis:
        try:
            reports.append(solve_config(make_config(a), node_limit))
        except (InvalidConfigError, NumericalError) as exc:
            reports.append(None)
            failures.append((a, str(exc)))
    return axis, reports, failures


def _zero(report) -> bool:
    return report is not None and report.ok and report.k_kw <= K_TOL


def sweep_capacity(config: ProblemConfig, capacities, node_limit: int = DEFAULT_NODE_LIMIT) -> SweepResult:
    """One solve per battery capacity (applied to every unit)."""
    if config.formulation not in ("OP1", "OP2"):
        raise InvalidConfigError([])
    axis, reports, failures = _run_sweep("capacity", capacities, config.with_capacity, node_limit)
    crit = next((a for a, r in zip(axis, reports) if _zero(r)), None)
    return SweepResult("capacity", tuple(axis), tuple(reports), {"critical_capacity_kwh": crit}, tuple(failures))


def sweep_theta(config: ProblemConfig, thetas, node_limit: int = DEFAULT_NODE_LIMIT) -> SweepResult:
    """K*(theta) for OP1 at each target, with argmin and flat-bottom summary.

    Points stopped by the node limit keep their incumbent K and contribute
    the proven bound K - gap. ``argmin`` lists every point that may still be
    a minimiser, so a single entry is a proof of uniqueness on the grid;
    ``undecided`` lists points whose bracket straddles the zero tolerance.
    """
    axis, reports, failures = _run_sweep(
        "theta", thetas, lambda th: replace(config, formulation="OP1", theta_kw=th), node_limit)
    res = SweepResult("theta", tuple(axis), tuple(reports), {}, tuple(failures))
    ks = np.nan_to_num(res.k_values, nan=math.inf)
    lows = np.nan_to_num(res.k_lower_bounds, nan=math.inf)
    derived = {"k_min": None, "argmin": [], "flat_bottom": None, "theta_left_turning_point": None,
               "undecided": [a for a, lo, k in zip(axis, lows, ks) if lo <= K_TOL < k]}
    if np.isfinite(ks).any():
        kmin = float(ks.min())
        derived["k_min"] = kmin
        derived["argmin"] = [a for a, lo in zip(axis, lows) if lo <= kmin + K_TOL]
        zeros = [a for a, k in zip(axis, ks) if k <= K_TOL]
        if zeros:
            derived["flat_bottom"] = (zeros[0], zeros[-1])
            derived["theta_left_turning_point"] = zeros[0]
    return replace(res, derived=derived)


@dataclass(frozen=True)
class WeightingRow:
    alpha: float
    beta: float
    k_kw: float
    theta_kw: float
    theta_at_lower_bound: bool
    report: SolveReport


def compare_weightings(config: ProblemConfig, pairs=(K_FIRST, THETA_FIRST),
                       node_limit: int = DEFAULT_NODE_LIMIT) -> list:
    """OP2 optimum (K, theta) for each (alpha, beta) pair."""
    lo = float(config.load_kw.min())
    rows = []
    for alpha, beta in pairs:
        rep = solve_config(replace(config, formulation="OP2", alpha=alpha, beta=beta), node_limit)
        at_lo = rep.ok and abs(rep.theta_kw - lo) <= K_TOL
        rows.append(WeightingRow(alpha, beta, rep.k_kw, rep.theta_kw, at_lo, rep))
    return rows


def sweep_location(config: ProblemConfig, buses, node_limit: int = DEFAULT_NODE_LIMIT) -> SweepResult:
    """Move the single battery along the feeder; compare with the lumped optimum."""
    if config.formulation != "OP3" or len(config.bess_units) != 1:
        raise InvalidConfigError([])
    unit = config.bess_units[0]
    axis, reports, failures = _run_sweep(
        "location", buses, lambda b: replace(config, bess_units=(replace(unit, bus=int(b)),)), node_limit)
    axis = [int(a) for a in axis]
    lumped = solve_config(replace(config, formulation="OP2", feeder=None), node_limit)
    derived = {"lumped_k_kw": lumped.k_kw, "lumped_theta_kw": lumped.theta_kw,
               "lumped_objective": lumped.objective, "first_optimal_bus": None}
    slack = K_TOL * max(config.alpha, config.beta)
    for a, r in sorted(zip(axis, reports), key=lambda p: -p[0]):
        if r is not None and r.ok and r.objective <= lumped.objective + slack:
            derived["first_optimal_bus"] = a
            break
    return SweepResult("location", tuple(axis), tuple(reports), derived, tuple(failures))


class NoCriticalCapacity(ValueError):
    pass


def _k_at(config, capacity, node_limit):
    rep = solve_config(config.with_capacity(capacity), node_limit)
    return rep.k_kw if rep.ok else math.inf


def find_critical_capacity(config: ProblemConfig, lo: float, hi: float, tol_kwh: float,
                           k_tol: float = K_TOL, node_limit: int = DEFAULT_NODE_LIMIT,
                           history: Optional[list] = None) -> float:
    """Smallest capacity with K <= k_tol, by bisection to ``tol_kwh``.

    ``history`` (if given) receives each ``(lo, hi)`` bracket.
    """
    if not lo < hi:
        raise ValueError("need lo < hi")
    if _k_at(config, hi, node_limit) > k_tol:
        raise NoCriticalCapacity(f"K > {k_tol} even at {hi} kWh")
    if _k_at(config, lo, node_limit) <= k_tol:
        return float(lo)
    while hi - lo > tol_kwh:
        if history is not None:
            history.append((lo, hi))
        mid = 0.5 * (lo + hi)
        if _k_at(config, mid, node_limit) <= k_tol:
            hi = mid
        else:
            lo = mid
    if history is not None:
        history.append((lo, hi))
    return float(hi)


# Normalised duck shape at each hour 0..23: low night, solar valley at
# 13:00, steep ramp into an evening peak at 19:00.
_DUCK = (0.40, 0.37, 0.35, 0.34, 0.33, 0.33, 0.34, 0.36, 0.34, 0.28, 0.18, 0.08,
         0.02, 0.00, 0.03, 0.12, 0.30, 0.72, 0.90, 1.00, 0.97, 0.90, 0.82, 0.74)

PROFILES = ("duck", "triangle", "flat", "sine")


def generate_synthetic_load(profile: str, min_kw: float, max_kw: float, steps: int = 24,
                            step_hours: float = 1.0) -> TimeSeries:
    """Deterministic daily profile scaled to hit ``min_kw`` and ``max_kw`` exactly."""
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}; choose from {PROFILES}")
    if not min_kw <= max_kw:
        raise ValueError("min_kw must not exceed max_kw")
    if steps < 2:
        raise ValueError("need at least 2 steps")
    if profile == "flat":
        if min_kw != max_kw:
            raise ValueError("a flat profile needs min_kw == max_kw")
        return TimeSeries((float(min_kw),) * steps, step_hours, "flat")
    k = np.arange(steps)
    if profile == "duck":
        hours = np.append(np.arange(24.0), 24.0)
        shape = np.interp(24.0 * k / steps, hours, np.append(_DUCK, _DUCK[0]))
    elif profile == "triangle":
        top = steps // 2
        shape = np.where(k <= top, k / top, (steps - 1 - k) / max(steps - 1 - top, 1))
    else:
        shape = np.sin(2 * np.pi * k / steps)
    lo, hi = shape.min(), shape.max()
    unit = (shape - lo) / (hi - lo)
    vals = min_kw + (max_kw - min_kw) * unit
    vals[np.argmin(unit)] = min_kw
    vals[np.argmax(unit)] = max_kw
    return TimeSeries(tuple(float(v) for v in vals), step_hours, profile)
