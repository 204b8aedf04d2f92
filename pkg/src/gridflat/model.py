"""Domain types shared across the package.

Power is carried in kW and energy in kW·h everywhere except inside the
feeder equations, which work in per-unit on ``FeederModel.p_base_kw``.
All types are frozen; "modifications" go through :func:`dataclasses.replace`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

FORMULATIONS = ("OP1", "OP2", "OP3")
RELAXATION_MODES = ("milp", "lp-relax")
STATUSES = ("optimal", "infeasible", "unbounded", "node_limit")

REL_TOL = 1e-6
ABS_TOL = 1e-9

# Multiple of peak load used when a power limit is left unspecified.
DEFAULT_POWER_LIMIT_FACTOR = 10.0


def close(a, b, scale=None) -> bool:
    """Equality test shared by every checker: 1e-6 relative, 1e-9 absolute."""
    if scale is None:
        scale = max(abs(a), abs(b))
    return abs(a - b) <= max(REL_TOL * scale, ABS_TOL)


@dataclass(frozen=True)
class TimeSeries:
    """Fixed-step signal over the scheduling horizon (kW or kW·h)."""

    values: tuple
    step_hours: float = 1.0
    label: str = ""

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if len(vals) < 1:
            raise ValueError("time series needs at least one sample")
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"time series {self.label!r} has non-finite samples")
        if not (self.step_hours > 0):
            raise ValueError("step_hours must be positive")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "step_hours", float(self.step_hours))

    def __len__(self):
        return len(self.values)

    def __getitem__(self, i):
        return self.values[i]

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    def with_values(self, values, label=None) -> "TimeSeries":
        return TimeSeries(tuple(values), self.step_hours, self.label if label is None else label)

    def head(self, n: int) -> "TimeSeries":
        return TimeSeries(self.values[:n], self.step_hours, self.label)


@dataclass(frozen=True)
class BessSpec:
    """One battery unit. ``None`` power limits and initial energy are
    filled in by :meth:`ProblemConfig.resolve`."""

    bus: int = 0
    capacity_kwh: float = 0.0
    soc_min: float = 0.05
    soc_max: float = 0.95
    eta: float = 0.9
    p_charge_max_kw: Optional[float] = None
    p_discharge_max_kw: Optional[float] = None
    e_initial_kwh: Optional[float] = None

    @property
    def e_min(self) -> float:
        return self.soc_min * self.capacity_kwh

    @property
    def e_max(self) -> float:
        return self.soc_max * self.capacity_kwh

    def with_capacity(self, capacity_kwh: float) -> "BessSpec":
        """Resize, keeping the initial state of charge as a fraction."""
        if self.e_initial_kwh is None:
            e0 = None
        elif self.capacity_kwh > 0:
            e0 = self.e_initial_kwh / self.capacity_kwh * capacity_kwh
        else:
            e0 = self.soc_min * capacity_kwh
        return replace(self, capacity_kwh=float(capacity_kwh), e_initial_kwh=e0)


@dataclass(frozen=True)
class UnitSchedule:
    charge_kw: TimeSeries
    discharge_kw: TimeSeries
    mode_charge: tuple
    mode_discharge: tuple
    energy_kwh: TimeSeries
    # Net BES reactive injection into the load (Q_bc - Q_bd), when dispatched.
    reactive_kvar: Optional[TimeSeries] = None


@dataclass(frozen=True)
class BessSchedule:
    """Charge/discharge/mode/energy trajectories, one entry per unit.

    ``energy_kwh[t]`` is the energy at the *end* of step ``t``; the
    initial energy lives on the :class:`BessSpec`.
    """

    units: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "units", tuple(self.units))

    @property
    def steps(self) -> int:
        return len(self.units[0].charge_kw) if self.units else 0

    def total_charge(self, steps: int) -> np.ndarray:
        out = np.zeros(steps)
        for u in self.units:
            out += u.charge_kw.array
        return out

    def total_discharge(self, steps: int) -> np.ndarray:
        out = np.zeros(steps)
        for u in self.units:
            out += u.discharge_kw.array
        return out

    @classmethod
    def idle(cls, n_units: int, steps: int, energies=None, step_hours: float = 1.0) -> "BessSchedule":
        units = []
        for i in range(n_units):
            e = 0.0 if energies is None else energies[i]
            zero = TimeSeries((0.0,) * steps, step_hours)
            units.append(UnitSchedule(zero, zero, (0,) * steps, (0,) * steps,
                                      TimeSeries((e,) * steps, step_hours)))
        return cls(tuple(units))


@dataclass(frozen=True)
class Line:
    from_node: int
    to_node: int
    r_pu: float
    x_pu: float
    p_share_pct: float
    q_pu: float


@dataclass(frozen=True)
class FeederModel:
    """Radial main feeder 0→1→…→n; loads sit on each line's to-node."""

    lines: tuple
    v0_pu: float = 1.02
    epsilon: float = 0.05
    p_base_kw: float = 1000.0

    def __post_init__(self):
        object.__setattr__(self, "lines", tuple(self.lines))

    @property
    def n_nodes(self) -> int:
        return len(self.lines) + 1

    @property
    def r(self) -> np.ndarray:
        return np.array([ln.r_pu for ln in self.lines])

    @property
    def x(self) -> np.ndarray:
        return np.array([ln.x_pu for ln in self.lines])

    def load_fractions(self) -> np.ndarray:
        """Per-node share of the total active load, normalised to sum to 1."""
        frac = np.zeros(self.n_nodes)
        for ln in self.lines:
            frac[ln.to_node] += ln.p_share_pct
        total = frac.sum()
        return frac / total if total > 0 else frac

    def reactive_loads_pu(self) -> np.ndarray:
        q = np.zeros(self.n_nodes)
        for ln in self.lines:
            q[ln.to_node] += ln.q_pu
        return q

    def lossless(self) -> "FeederModel":
        return replace(self, lines=tuple(replace(ln, r_pu=0.0, x_pu=0.0) for ln in self.lines))


@dataclass(frozen=True)
class ProblemConfig:
    formulation: str
    load: TimeSeries
    bess_units: tuple = ()
    theta_kw: Optional[float] = None
    alpha: Optional[float] = None
    beta: Optional[float] = None
    feeder: Optional[FeederModel] = None
    horizon: Optional[int] = None
    relaxation_mode: str = "milp"
    # Require each unit to end at or above its initial energy.
    terminal_soc: bool = False
    # None pins BES reactive power to zero; a value exposes Q_bc/Q_bd in [0, limit].
    bes_reactive_limit_kvar: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "bess_units", tuple(self.bess_units))
        object.__setattr__(self, "formulation", str(self.formulation).upper())

    @property
    def steps(self) -> int:
        return len(self.load) if self.horizon is None else int(self.horizon)

    @property
    def load_kw(self) -> np.ndarray:
        return self.load.array[: self.steps]

    def resolve(self) -> "ProblemConfig":
        """Fill defaulted battery fields and truncate the load to the horizon."""
        load = self.load.head(self.steps)
        pmax = DEFAULT_POWER_LIMIT_FACTOR * max(abs(v) for v in load.values)
        units = []
        for u in self.bess_units:
            units.append(replace(
                u,
                p_charge_max_kw=pmax if u.p_charge_max_kw is None else float(u.p_charge_max_kw),
                p_discharge_max_kw=pmax if u.p_discharge_max_kw is None else float(u.p_discharge_max_kw),
                e_initial_kwh=u.e_min if u.e_initial_kwh is None else float(u.e_initial_kwh),
            ))
        return replace(self, load=load, bess_units=tuple(units), horizon=len(load))

    def with_capacity(self, capacity_kwh: float) -> "ProblemConfig":
        return replace(self, bess_units=tuple(u.with_capacity(capacity_kwh) for u in self.bess_units))


class InvalidConfigError(ValueError):
    """Raised by builders handed a config that fails :func:`validate_config`."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(f"{v.code}: {v.message}" for v in self.violations))


@dataclass(frozen=True)
class Violation:
    code: str
    message: str


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


@dataclass(frozen=True)
class SolveReport:
    status: str
    k_kw: float
    theta_kw: float
    objective: float
    schedule: Optional[BessSchedule]
    pcc_power_kw: Optional[TimeSeries]
    branch_nodes: int = 0
    lp_iterations: int = 0
    validation: tuple = ()
    gap: float = 0.0
    # False when the LP relaxation at the root used fractional modes.
    relaxation_integral: Optional[bool] = None
    voltages_pu: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    @property
    def ok(self) -> bool:
        return self.status == "optimal"

    @property
    def valid(self) -> bool:
        return all(c.passed for c in self.validation)


def validate_config(config: ProblemConfig) -> list:
    """Every violated invariant of ``config`` as a list of :class:`Violation`."""
    out = []

    def bad(code, msg):
        out.append(Violation(code, msg))

    form = config.formulation
    if form not in FORMULATIONS:
        bad("formulation-unknown", f"formulation {form!r} not in {FORMULATIONS}")
    if config.relaxation_mode not in RELAXATION_MODES:
        bad("relaxation-mode", f"relaxation_mode {config.relaxation_mode!r} not in {RELAXATION_MODES}")
    if config.horizon is not None and not (1 <= config.horizon <= len(config.load)):
        bad("horizon-mismatch", f"horizon {config.horizon} outside 1..{len(config.load)} load samples")

    if form == "OP1":
        if config.theta_kw is None or not math.isfinite(config.theta_kw):
            bad("theta-missing", "OP1 needs a finite theta_kw")
    if form in ("OP2", "OP3"):
        if config.alpha is None or not config.alpha > 0:
            bad("alpha-positive", f"alpha must be > 0, got {config.alpha}")
        if config.beta is None or not config.beta > 0:
            bad("beta-positive", f"beta must be > 0, got {config.beta}")
    if form == "OP3":
        if config.alpha is not None and config.beta is not None and not config.alpha > config.beta:
            bad("alpha-gt-beta", f"OP3 weights K above theta: alpha={config.alpha} must exceed beta={config.beta}")
        if config.feeder is None:
            bad("feeder-missing", "OP3 needs a feeder")

    if config.feeder is not None:
        out.extend(validate_feeder(config.feeder))

    for k, u in enumerate(config.bess_units):
        tag = f"unit {k}"
        if u.capacity_kwh < 0:
            bad("capacity-negative", f"{tag}: capacity_kwh={u.capacity_kwh} < 0")
        if not (0 <= u.soc_min <= 1 and 0 <= u.soc_max <= 1):
            bad("soc-range", f"{tag}: SOC limits must lie in [0, 1]")
        if not u.soc_min < u.soc_max:
            bad("soc-order", f"{tag}: soc_min={u.soc_min} must be below soc_max={u.soc_max}")
        if not (0 < u.eta <= 1):
            bad("eta-range", f"{tag}: eta={u.eta} outside (0, 1]")
        for name in ("p_charge_max_kw", "p_discharge_max_kw"):
            v = getattr(u, name)
            if v is not None and v < 0:
                bad("power-negative", f"{tag}: {name}={v} < 0")
        if u.e_initial_kwh is not None and u.soc_min < u.soc_max:
            lo, hi = u.e_min, u.e_max
            if not (lo - ABS_TOL <= u.e_initial_kwh <= hi + ABS_TOL):
                bad("initial-energy-range", f"{tag}: e_initial_kwh={u.e_initial_kwh} outside [{lo}, {hi}]")
        if form == "OP3" and config.feeder is not None:
            if not (0 <= u.bus < config.feeder.n_nodes):
                bad("bes-bus-missing", f"{tag}: bus {u.bus} not on the {len(config.feeder.lines)}-line feeder")
    return out


def validate_feeder(feeder: FeederModel) -> list:
    out = []
    for k, ln in enumerate(feeder.lines):
        if ln.from_node != k or ln.to_node != k + 1:
            out.append(Violation("feeder-radial",
                                 f"line {k} is {ln.from_node}->{ln.to_node}; expected {k}->{k + 1}"))
            break
    if any(ln.r_pu < 0 or ln.x_pu < 0 for ln in feeder.lines):
        out.append(Violation("feeder-impedance", "r_pu and x_pu must be nonnegative"))
    total = sum(ln.p_share_pct for ln in feeder.lines)
    if abs(total - 100.0) > 0.1:
        out.append(Violation("feeder-shares", f"load shares sum to {total:.4f}%, expected 100 ± 0.1"))
    if not feeder.epsilon > 0:
        out.append(Violation("epsilon-positive", f"epsilon={feeder.epsilon} must be > 0"))
    if not feeder.p_base_kw > 0:
        out.append(Violation("p-base-positive", f"p_base_kw={feeder.p_base_kw} must be > 0"))
    return out


def pcc_power(load: TimeSeries, schedule: BessSchedule) -> TimeSeries:
    """Power drawn at the point of common coupling: load plus net charging."""
    n = len(load)
    for u in schedule.units:
        for s in (u.charge_kw, u.discharge_kw):
            if len(s) != n:
                raise ValueError(f"schedule has {len(s)} steps, load has {n}")
            if s.step_hours != load.step_hours:
                raise ValueError("schedule and load use different step lengths")
    pg = load.array + schedule.total_charge(n) - schedule.total_discharge(n)
    return TimeSeries(tuple(pg), load.step_hours, "P_g")


def series(values: Sequence[float], step_hours: float = 1.0, label: str = "") -> TimeSeries:
    return TimeSeries(tuple(values), step_hours, label)
