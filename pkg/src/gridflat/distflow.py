"""Radial-feeder power flow: the linear model the optimiser constrains,
the full quadratic branch-flow equations, and the voltage band check.

Arrays are indexed ``[node, step]``. ``p_branch[i]`` is the flow on line
i→i+1 (zero at the last node). Net loads are per-unit; node 0 is the
substation and its own net load never enters a branch flow.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import BessSchedule, FeederModel, TimeSeries

MAX_SWEEPS = 100
SWEEP_TOL = 1e-10


class FlowConvergenceError(RuntimeError):
    def __init__(self, iterations, residual):
        self.iterations = iterations
        self.residual = residual
        super().__init__(f"full DistFlow did not converge in {iterations} sweeps (residual {residual:.3g})")


@dataclass(frozen=True, eq=False)
class FlowState:
    p_branch_pu: np.ndarray
    q_branch_pu: np.ndarray
    v_pu: np.ndarray
    p_netload_pu: np.ndarray
    q_netload_pu: np.ndarray
    iterations: int = 0
    residual: float = 0.0

    @property
    def n_nodes(self) -> int:
        return self.v_pu.shape[0]

    @property
    def steps(self) -> int:
        return self.v_pu.shape[1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["node", "step", "p_pu", "q_pu", "v_pu"])
        for j in range(self.n_nodes):
            for t in range(self.steps):
                w.writerow([j, t, repr(float(self.p_branch_pu[j, t])),
                            repr(float(self.q_branch_pu[j, t])), repr(float(self.v_pu[j, t]))])
        return buf.getvalue()


@dataclass(frozen=True)
class VoltageViolation:
    node: int
    step: int
    v_pu: float
    magnitude: float


def _as_netloads(feeder: FeederModel, p_netload, q_netload):
    p = np.atleast_2d(np.asarray(p_netload, dtype=float))
    q = np.atleast_2d(np.asarray(q_netload, dtype=float))
    if p.shape[0] != feeder.n_nodes or q.shape != p.shape:
        raise ValueError(f"net loads must have shape ({feeder.n_nodes}, steps); got {p.shape} and {q.shape}")
    return p, q


def netloads(feeder: FeederModel, load: TimeSeries, schedule: Optional[BessSchedule] = None,
             buses=()):
    """Per-node net loads in per-unit from a total load profile (kW) and a
    battery schedule. Active load is split by the feeder's load shares;
    reactive load is the fixed per-node value."""
    T = len(load)
    base = feeder.p_base_kw
    p = np.outer(feeder.load_fractions(), load.array) / base
    q = np.repeat(feeder.reactive_loads_pu()[:, None], T, axis=1)
    if schedule is not None:
        for u, bus in zip(schedule.units, buses):
            p[bus] += (u.charge_kw.array - u.discharge_kw.array) / base
            if u.reactive_kvar is not None:
                q[bus] += u.reactive_kvar.array / base
    return p, q


def simplified_flow(feeder: FeederModel, p_netload, q_netload) -> FlowState:
    """Lossless flow with voltage linearised about the substation voltage."""
    p, q = _as_netloads(feeder, p_netload, q_netload)
    n_nodes, T = p.shape
    pb = np.zeros((n_nodes, T))
    qb = np.zeros((n_nodes, T))
    # flow on line i→i+1 carries every net load beyond node i
    pb[:-1] = np.cumsum(p[:0:-1], axis=0)[::-1]
    qb[:-1] = np.cumsum(q[:0:-1], axis=0)[::-1]
    v0 = feeder.v0_pu
    drop = (feeder.r[:, None] * pb[:-1] + feeder.x[:, None] * qb[:-1]) / v0
    v = np.empty((n_nodes, T))
    v[0] = v0
    v[1:] = v0 - np.cumsum(drop, axis=0)
    return FlowState(pb, qb, v, p, q)


def full_flow(feeder: FeederModel, p_netload, q_netload, substation_v: Optional[float] = None) -> FlowState:
    """Branch flow with the quadratic loss terms, by fixed-point sweeps.

    Each sweep recomputes losses from the current flows and voltages,
    accumulates flows backward from the feeder end (terminal flow zero),
    and updates squared voltages forward from the substation. Starts from
    the simplified solution; stops when flows move less than 1e-10 p.u.
    """
    p, q = _as_netloads(feeder, p_netload, q_netload)
    v0 = feeder.v0_pu if substation_v is None else float(substation_v)
    r = feeder.r[:, None]
    x = feeder.x[:, None]
    st = simplified_flow(feeder, p, q)
    pb, qb, v = st.p_branch_pu.copy(), st.q_branch_pu.copy(), st.v_pu.copy()
    v[0] = v0
    n_nodes = p.shape[0]
    residual = np.inf
    for it in range(1, MAX_SWEEPS + 1):
        # a diverging sweep overflows; report that as non-convergence
        try:
            with np.errstate(over="raise", invalid="raise"):
                loss = (pb[:-1] ** 2 + qb[:-1] ** 2) / v[:-1] ** 2
                new_p = np.zeros_like(pb)
                new_q = np.zeros_like(qb)
                for i in range(n_nodes - 2, -1, -1):
                    new_p[i] = new_p[i + 1] + r[i] * loss[i] + p[i + 1]
                    new_q[i] = new_q[i + 1] + x[i] * loss[i] + q[i + 1]
                loss = (new_p[:-1] ** 2 + new_q[:-1] ** 2) / v[:-1] ** 2
                v2 = np.empty_like(v)
                v2[0] = v0 ** 2
                for i in range(n_nodes - 1):
                    v2[i + 1] = v2[i] - 2 * (r[i] * new_p[i] + x[i] * new_q[i]) + (r[i] ** 2 + x[i] ** 2) * loss[i]
                if np.any(v2 <= 0):
                    raise FlowConvergenceError(it, np.inf)
                residual = float(max(np.max(np.abs(new_p - pb)), np.max(np.abs(new_q - qb))))
                pb, qb, v = new_p, new_q, np.sqrt(v2)
                if residual < SWEEP_TOL:
                    return FlowState(pb, qb, v, p, q, it, residual)
        except FloatingPointError:
            raise FlowConvergenceError(it, np.inf) from None
    raise FlowConvergenceError(MAX_SWEEPS, residual)


def full_flow_residual(feeder: FeederModel, state: FlowState) -> float:
    """Largest mismatch of the quadratic branch-flow equations at ``state``."""
    r = feeder.r[:, None]
    x = feeder.x[:, None]
    pb, qb, v = state.p_branch_pu, state.q_branch_pu, state.v_pu
    loss = (pb[:-1] ** 2 + qb[:-1] ** 2) / v[:-1] ** 2
    ep = pb[1:] - (pb[:-1] - r * loss - state.p_netload_pu[1:])
    eq = qb[1:] - (qb[:-1] - x * loss - state.q_netload_pu[1:])
    ev = v[1:] ** 2 - (v[:-1] ** 2 - 2 * (r * pb[:-1] + x * qb[:-1]) + (r ** 2 + x ** 2) * loss)
    return float(max(np.abs(ep).max(), np.abs(eq).max(), np.abs(ev).max()))


def check_voltage_band(state: FlowState, epsilon: float, tol: float = 0.0,
                       include_substation: bool = False) -> list:
    """Every (node, step) with voltage outside ``[1 - epsilon, 1 + epsilon]``."""
    lo, hi = 1.0 - epsilon, 1.0 + epsilon
    out = []
    first = 0 if include_substation else 1
    v = state.v_pu
    for j in range(first, v.shape[0]):
        for t in range(v.shape[1]):
            val = float(v[j, t])
            if val < lo - tol:
                out.append(VoltageViolation(j, t, val, lo - val))
            elif val > hi + tol:
                out.append(VoltageViolation(j, t, val, val - hi))
    return out
