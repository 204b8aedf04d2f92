"""Build the load-flattening MILPs from a :class:`ProblemConfig`.

OP1 minimises the bound K on |P_g(t) - theta| for a fixed target theta.
OP2 frees theta inside [min P_L, max P_L] and minimises alpha*K + beta*theta.
OP3 is OP2 plus the linearised radial-feeder flow and voltage band.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace
from functools import cached_property
from types import MappingProxyType

import numpy as np
import scipy.sparse as sp

from .model import (
    BessSchedule,
    InvalidConfigError,
    ProblemConfig,
    TimeSeries,
    UnitSchedule,
    Violation,
    validate_config,
)

INF = math.inf
SENSES = ("<=", "=", ">=")


@dataclass(frozen=True)
class Variable:
    name: str
    lb: float = 0.0
    ub: float = INF
    is_binary: bool = False


@dataclass(frozen=True)
class Constraint:
    name: str
    cols: tuple
    coefs: tuple
    sense: str
    rhs: float


@dataclass(frozen=True, eq=False)
class MilpProblem:
    """Minimisation MILP in sparse row form.

    ``variable_map`` resolves semantic names such as ``P_bc[0][3]``,
    ``K``, ``theta`` or ``V[5][3]`` to column indices.
    """

    variables: tuple
    objective: tuple  # (column, coefficient) pairs
    constraints: tuple
    variable_map: MappingProxyType
    name: str = "gridflat"

    @property
    def n_vars(self) -> int:
        return len(self.variables)

    @property
    def n_constraints(self) -> int:
        return len(self.constraints)

    @cached_property
    def binary_indices(self) -> np.ndarray:
        return np.array([j for j, v in enumerate(self.variables) if v.is_binary], dtype=int)

    @cached_property
    def arrays(self):
        """``(c, A, sense, rhs, lb, ub)`` with ``A`` as CSR and ``sense`` in {-1, 0, 1}."""
        n = self.n_vars
        c = np.zeros(n)
        for j, v in self.objective:
            c[j] += v
        rows, cols, vals = [], [], []
        for i, con in enumerate(self.constraints):
            rows.extend([i] * len(con.cols))
            cols.extend(con.cols)
            vals.extend(con.coefs)
        A = sp.csr_matrix((vals, (rows, cols)), shape=(self.n_constraints, n))
        A.sum_duplicates()
        sense = np.array([SENSES.index(con.sense) - 1 for con in self.constraints], dtype=int)
        rhs = np.array([con.rhs for con in self.constraints], dtype=float)
        lb = np.array([v.lb for v in self.variables], dtype=float)
        ub = np.array([v.ub for v in self.variables], dtype=float)
        for arr in (c, rhs, lb, ub):
            arr.setflags(write=False)
        return c, A, sense, rhs, lb, ub

    def col(self, name: str) -> int:
        return self.variable_map[name]

    def objective_value(self, x) -> float:
        return float(self.arrays[0] @ np.asarray(x, dtype=float))

    def max_violation(self, x) -> float:
        """Largest absolute bound or row violation of ``x``."""
        c, A, sense, rhs, lb, ub = self.arrays
        x = np.asarray(x, dtype=float)
        worst = 0.0
        if len(x):
            worst = max(float(np.max(lb - x, initial=0.0)), float(np.max(x - ub, initial=0.0)))
        if self.n_constraints:
            ax = A @ x
            r = ax - rhs
            viol = np.where(sense < 0, np.maximum(r, 0), np.where(sense > 0, np.maximum(-r, 0), np.abs(r)))
            worst = max(worst, float(viol.max()))
        return worst


class _Builder:
    def __init__(self, name):
        self.name = name
        self.variables = []
        self.constraints = []
        self.index = {}
        self.objective = {}

    def var(self, name, lb=0.0, ub=INF, binary=False):
        if name in self.index:
            raise KeyError(f"duplicate variable {name}")
        self.index[name] = len(self.variables)
        self.variables.append(Variable(name, float(lb), float(ub), binary))
        return self.index[name]

    def row(self, name, terms, sense, rhs):
        cols, coefs = [], []
        for j, a in terms.items():
            if a != 0.0:
                cols.append(j)
                coefs.append(float(a))
        self.constraints.append(Constraint(name, tuple(cols), tuple(coefs), sense, float(rhs)))

    def build(self):
        obj = tuple(sorted((j, float(v)) for j, v in self.objective.items() if v != 0.0))
        return MilpProblem(tuple(self.variables), obj, tuple(self.constraints),
                           MappingProxyType(dict(self.index)), self.name)


def _checked(config: ProblemConfig, formulation: str) -> ProblemConfig:
    violations = validate_config(config)
    if config.formulation != formulation:
        violations.insert(0, Violation("formulation-mismatch",
                                       f"expected {formulation}, config says {config.formulation}"))
    if violations:
        raise InvalidConfigError(violations)
    return config.resolve()


def _battery_block(b: _Builder, cfg: ProblemConfig):
    """Variables and rows for every unit; returns per-step lists of
    (charge col, discharge col) pairs."""
    T = cfg.steps
    dt = cfg.load.step_hours
    per_step = [[] for _ in range(T)]
    for i, u in enumerate(cfg.bess_units):
        for t in range(T):
            pc = b.var(f"P_bc[{i}][{t}]")
            pd = b.var(f"P_bd[{i}][{t}]")
            e = b.var(f"E[{i}][{t}]")
            mc = b.var(f"m_bc[{i}][{t}]", 0.0, 1.0, binary=True)
            md = b.var(f"m_bd[{i}][{t}]", 0.0, 1.0, binary=True)
            per_step[t].append((pc, pd))

            terms = {e: 1.0, pc: -u.eta * dt, pd: dt / u.eta}
            if t == 0:
                b.row(f"soc[{i}][{t}]", terms, "=", u.e_initial_kwh)
            else:
                terms[b.index[f"E[{i}][{t - 1}]"]] = -1.0
                b.row(f"soc[{i}][{t}]", terms, "=", 0.0)
            b.row(f"soc_lo[{i}][{t}]", {e: 1.0}, ">=", u.e_min)
            b.row(f"soc_hi[{i}][{t}]", {e: 1.0}, "<=", u.e_max)
            b.row(f"cmode[{i}][{t}]", {pc: 1.0, mc: -u.p_charge_max_kw}, "<=", 0.0)
            b.row(f"dmode[{i}][{t}]", {pd: 1.0, md: -u.p_discharge_max_kw}, "<=", 0.0)
            b.row(f"excl[{i}][{t}]", {mc: 1.0, md: 1.0}, "<=", 1.0)
        if cfg.terminal_soc:
            b.row(f"soc_end[{i}]", {b.index[f"E[{i}][{T - 1}]"]: 1.0}, ">=", u.e_initial_kwh)
    return per_step


def _epigraph(b: _Builder, cfg: ProblemConfig, per_step, k, theta_col=None, theta_fixed=0.0):
    load = cfg.load_kw
    for t in range(cfg.steps):
        terms = {}
        for pc, pd in per_step[t]:
            terms[pc] = terms.get(pc, 0.0) + 1.0
            terms[pd] = terms.get(pd, 0.0) - 1.0
        upper = dict(terms)
        lower = dict(terms)
        upper[k] = -1.0
        lower[k] = 1.0
        if theta_col is not None:
            upper[theta_col] = -1.0
            lower[theta_col] = -1.0
        b.row(f"epi_up[{t}]", upper, "<=", theta_fixed - load[t])
        b.row(f"epi_lo[{t}]", lower, ">=", theta_fixed - load[t])


def build_op1(config: ProblemConfig) -> MilpProblem:
    """min K  s.t.  |P_g(t) - theta| <= K, battery dynamics, limits and modes."""
    cfg = _checked(config, "OP1")
    b = _Builder("OP1")
    per_step = _battery_block(b, cfg)
    k = b.var("K", 0.0, INF)
    b.objective[k] = 1.0
    _epigraph(b, cfg, per_step, k, theta_fixed=float(cfg.theta_kw))
    return b.build()


def _op2_core(cfg: ProblemConfig, name: str):
    b = _Builder(name)
    per_step = _battery_block(b, cfg)
    k = b.var("K", 0.0, INF)
    load = cfg.load_kw
    th = b.var("theta", float(load.min()), float(load.max()))
    b.objective[k] = float(cfg.alpha)
    b.objective[th] = float(cfg.beta)
    _epigraph(b, cfg, per_step, k, theta_col=th)
    return b


def build_op2(config: ProblemConfig) -> MilpProblem:
    """OP1 with a free target theta and objective alpha*K + beta*theta."""
    cfg = _checked(config, "OP2")
    return _op2_core(cfg, "OP2").build()


def build_op3(config: ProblemConfig) -> MilpProblem:
    """OP2 on the radial feeder with the linear flow and voltage band.

    Branch quantities are per-unit on ``feeder.p_base_kw``. ``P[i]`` is the
    flow on line i→i+1, ``V[i]`` the node voltage; the last node carries
    no outgoing flow.
    """
    cfg = _checked(config, "OP3")
    fd = cfg.feeder
    b = _op2_core(cfg, "OP3")
    T, n = cfg.steps, fd.n_nodes - 1
    base = fd.p_base_kw
    frac = fd.load_fractions()
    qload = fd.reactive_loads_pu()
    r, x = fd.r, fd.x
    load = cfg.load_kw
    eps = fd.epsilon
    vlo, vhi = (1.0 - eps, 1.0 + eps) if math.isfinite(eps) else (-INF, INF)

    q_cols = {}
    if cfg.bes_reactive_limit_kvar is not None:
        lim = float(cfg.bes_reactive_limit_kvar)
        for i in range(len(cfg.bess_units)):
            for t in range(T):
                q_cols[i, t] = (b.var(f"Q_bc[{i}][{t}]", 0.0, lim), b.var(f"Q_bd[{i}][{t}]", 0.0, lim))

    for t in range(T):
        P = [b.var(f"P[{j}][{t}]", -INF, INF) for j in range(n)] + [b.var(f"P[{n}][{t}]", 0.0, 0.0)]
        Q = [b.var(f"Q[{j}][{t}]", -INF, INF) for j in range(n)] + [b.var(f"Q[{n}][{t}]", 0.0, 0.0)]
        V = [b.var(f"V[0][{t}]", fd.v0_pu, fd.v0_pu)] + [b.var(f"V[{j}][{t}]", vlo, vhi) for j in range(1, n + 1)]
        for j in range(1, n + 1):
            pt = {P[j]: 1.0, P[j - 1]: -1.0}
            qt = {Q[j]: 1.0, Q[j - 1]: -1.0}
            for i, u in enumerate(cfg.bess_units):
                if u.bus != j:
                    continue
                pc, pd = b.index[f"P_bc[{i}][{t}]"], b.index[f"P_bd[{i}][{t}]"]
                pt[pc] = pt.get(pc, 0.0) + 1.0 / base
                pt[pd] = pt.get(pd, 0.0) - 1.0 / base
                if (i, t) in q_cols:
                    qc, qd = q_cols[i, t]
                    qt[qc] = 1.0 / base
                    qt[qd] = -1.0 / base
            b.row(f"pflow[{j}][{t}]", pt, "=", -frac[j] * load[t] / base)
            b.row(f"qflow[{j}][{t}]", qt, "=", -qload[j])
            b.row(f"volt[{j}][{t}]", {V[j]: 1.0, V[j - 1]: -1.0,
                                       P[j - 1]: r[j - 1] / fd.v0_pu,
                                       Q[j - 1]: x[j - 1] / fd.v0_pu}, "=", 0.0)
    return b.build()


BUILDERS = {"OP1": build_op1, "OP2": build_op2, "OP3": build_op3}


def build(config: ProblemConfig) -> MilpProblem:
    """Dispatch on ``config.formulation``; applies the LP relaxation when asked."""
    if config.formulation not in BUILDERS:
        raise InvalidConfigError(validate_config(config))
    problem = BUILDERS[config.formulation](config)
    if config.relaxation_mode == "lp-relax":
        problem = lp_relaxation(problem)
    return problem


def lp_relaxation(problem: MilpProblem) -> MilpProblem:
    variables = tuple(replace(v, is_binary=False) if v.is_binary else v for v in problem.variables)
    return MilpProblem(variables, problem.objective, problem.constraints, problem.variable_map,
                       problem.name + "-relaxed")


def decode(problem: MilpProblem, config: ProblemConfig, x):
    """Split a primal vector into ``(schedule, K, theta, voltages)``.

    ``voltages`` is ``None`` unless the problem carries feeder variables,
    in which case it has shape (nodes, steps).
    """
    cfg = config.resolve()
    x = np.asarray(x, dtype=float)
    vm = problem.variable_map
    T = cfg.steps
    dt = cfg.load.step_hours

    def grab(fmt, i):
        return np.array([x[vm[fmt.format(i, t)]] for t in range(T)])

    units = []
    for i in range(len(cfg.bess_units)):
        reactive = None
        if f"Q_bc[{i}][0]" in vm:
            q = grab("Q_bc[{}][{}]", i) - grab("Q_bd[{}][{}]", i)
            reactive = TimeSeries(tuple(q), dt, f"Q_b[{i}]")
        units.append(UnitSchedule(
            TimeSeries(tuple(grab("P_bc[{}][{}]", i)), dt, f"P_bc[{i}]"),
            TimeSeries(tuple(grab("P_bd[{}][{}]", i)), dt, f"P_bd[{i}]"),
            tuple(int(round(v)) for v in grab("m_bc[{}][{}]", i)),
            tuple(int(round(v)) for v in grab("m_bd[{}][{}]", i)),
            TimeSeries(tuple(grab("E[{}][{}]", i)), dt, f"E[{i}]"),
            reactive,
        ))
    k = float(x[vm["K"]])
    theta = float(x[vm["theta"]]) if "theta" in vm else float(cfg.theta_kw)
    volts = None
    if "V[0][0]" in vm:
        nodes = cfg.feeder.n_nodes
        volts = np.array([[x[vm[f"V[{j}][{t}]"]] for t in range(T)] for j in range(nodes)])
    return BessSchedule(tuple(units)), k, theta, volts


# --- plain-text export -----------------------------------------------------

_NAME_RE = re.compile(r"\[(\d+)\]")


def _lp_name(name: str) -> str:
    idx = _NAME_RE.findall(name)
    if not idx:
        return name
    return name[: name.index("[")] + "(" + ",".join(idx) + ")"


def _internal_name(name: str) -> str:
    if "(" not in name:
        return name
    head, tail = name.split("(", 1)
    return head + "".join(f"[{k}]" for k in tail.rstrip(")").split(","))


def _fmt(v: float) -> str:
    if v == INF:
        return "+inf"
    if v == -INF:
        return "-inf"
    return repr(float(v))


def _terms(cols, coefs, names) -> str:
    parts = []
    for j, a in zip(cols, coefs):
        parts.append(("+ " if a >= 0 else "- ") + f"{_fmt(abs(a))} {names[j]}")
    return " ".join(parts) if parts else "0"


def to_lp_text(problem: MilpProblem) -> str:
    """Serialise in the LP-style grammar documented in the README."""
    names = [_lp_name(v.name) for v in problem.variables]
    cols = [j for j, _ in problem.objective]
    coefs = [a for _, a in problem.objective]
    out = [f"\\ {problem.name}", "Minimize", f" obj: {_terms(cols, coefs, names)}", "Subject To"]
    for con in problem.constraints:
        out.append(f" {_lp_name(con.name)}: {_terms(con.cols, con.coefs, names)} {con.sense} {_fmt(con.rhs)}")
    out.append("Bounds")
    for v, nm in zip(problem.variables, names):
        out.append(f" {_fmt(v.lb)} <= {nm} <= {_fmt(v.ub)}")
    bins = [nm for v, nm in zip(problem.variables, names) if v.is_binary]
    if bins:
        out.append("Binaries")
        out.extend(f" {nm}" for nm in bins)
    out.append("End")
    return "\n".join(out) + "\n"


def _parse_terms(text, index):
    toks = text.split()
    terms = {}
    if toks == ["0"]:
        return terms
    for sign, val, name in zip(toks[0::3], toks[1::3], toks[2::3]):
        a = float(val) * (1.0 if sign == "+" else -1.0)
        terms[index[name]] = terms.get(index[name], 0.0) + a
    return terms


def parse_lp_text(text: str) -> MilpProblem:
    """Inverse of :func:`to_lp_text` (accepts only that grammar)."""
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    name = lines[0][1:].strip() if lines[0].startswith("\\") else "gridflat"
    sec = {s: lines.index(s) for s in ("Minimize", "Subject To", "Bounds", "End")}
    bin_at = lines.index("Binaries") if "Binaries" in lines else sec["End"]
    bounds = []
    for ln in lines[sec["Bounds"] + 1: bin_at]:
        lo, nm, hi = ln.split(" <= ")
        bounds.append((nm, float(lo), float(hi)))
    binaries = set(lines[bin_at + 1: sec["End"]])
    b = _Builder(name)
    for nm, lo, hi in bounds:
        b.var(_internal_name(nm), lo, hi, nm in binaries)
    lp_index = {nm: j for j, (nm, _, _) in enumerate(bounds)}
    obj = lines[sec["Minimize"] + 1].split(":", 1)[1]
    b.objective = _parse_terms(obj, lp_index)
    for ln in lines[sec["Subject To"] + 1: sec["Bounds"]]:
        cname, body = ln.split(":", 1)
        lhs, sense, rhs = body.rsplit(" ", 2)
        b.constraints.append(Constraint(
            _internal_name(cname), *_split(_parse_terms(lhs, lp_index)), sense, float(rhs)))
    return b.build()


def _split(terms):
    return tuple(terms.keys()), tuple(terms.values())
