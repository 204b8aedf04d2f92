"""Independent re-check of a schedule against the physical constraints."""

from __future__ import annotations

import numpy as np

from .distflow import check_voltage_band, netloads, simplified_flow
from .model import ABS_TOL, REL_TOL, BessSchedule, CheckResult, ProblemConfig, pcc_power

SOC_ABS_TOL = 1e-9
VOLTAGE_TOL = 1e-7


def _tol(scale):
    return max(REL_TOL * scale, ABS_TOL)


def check_schedule(config: ProblemConfig, schedule: BessSchedule, k_kw: float, theta_kw: float,
                   pcc_kw=None, relaxed: bool = False) -> list:
    """Run every named check and return one :class:`CheckResult` per check.

    ``relaxed`` skips the mode checks, which do not apply to LP-relaxation
    output.
    """
    cfg = config.resolve()
    T = cfg.steps
    dt = cfg.load.step_hours
    results = []
    if len(schedule.units) != len(cfg.bess_units):
        return [CheckResult("unit-count", False,
                            f"schedule has {len(schedule.units)} units, problem has {len(cfg.bess_units)}")]
    for u in schedule.units:
        if len(u.charge_kw) != T or len(u.energy_kwh) != T or len(u.mode_charge) != T:
            return [CheckResult("horizon", False, f"schedule length differs from horizon {T}")]

    def first_fail(name, items):
        for unit, step, msg in items:
            return CheckResult(name, False, f"unit {unit} step {step}: {msg}")
        return CheckResult(name, True)

    soc, socb, powb, modes = [], [], [], []
    for i, (spec, u) in enumerate(zip(cfg.bess_units, schedule.units)):
        pc, pd, e = u.charge_kw.array, u.discharge_kw.array, u.energy_kwh.array
        prev = np.concatenate([[spec.e_initial_kwh], e[:-1]])
        resid = e - (prev + spec.eta * dt * pc - dt / spec.eta * pd)
        for t in np.flatnonzero(np.abs(resid) > SOC_ABS_TOL):
            soc.append((i, int(t), f"residual {resid[t]:.3g} kWh"))
        scale = max(spec.capacity_kwh, 1.0)
        for t in range(T):
            if e[t] < spec.e_min - _tol(scale) or e[t] > spec.e_max + _tol(scale):
                socb.append((i, t, f"E={e[t]:.6g} outside [{spec.e_min:.6g}, {spec.e_max:.6g}]"))
            mc, md = u.mode_charge[t], u.mode_discharge[t]
            cmax = spec.p_charge_max_kw * (1 if relaxed else mc)
            dmax = spec.p_discharge_max_kw * (1 if relaxed else md)
            if pc[t] < -_tol(cmax) or pc[t] > cmax + _tol(spec.p_charge_max_kw):
                powb.append((i, t, f"charge {pc[t]:.6g} outside [0, {cmax:.6g}]"))
            if pd[t] < -_tol(dmax) or pd[t] > dmax + _tol(spec.p_discharge_max_kw):
                powb.append((i, t, f"discharge {pd[t]:.6g} outside [0, {dmax:.6g}]"))
            if not relaxed and (mc not in (0, 1) or md not in (0, 1) or mc + md > 1):
                modes.append((i, t, f"m_bc={mc}, m_bd={md}"))
    results.append(first_fail("soc-recursion", soc))
    results.append(first_fail("soc-bounds", socb))
    results.append(first_fail("power-bounds", powb))
    if not relaxed:
        results.append(first_fail("simultaneous-mode", modes))

    pg = pcc_power(cfg.load, schedule).array
    if pcc_kw is not None:
        given = np.asarray(pcc_kw, dtype=float)
        bad = np.flatnonzero(np.abs(given - pg) > _tol(np.abs(pg).max()))
        results.append(CheckResult("pcc-balance", bool(bad.size == 0),
                                   "" if bad.size == 0 else f"step {bad[0]}: P_g={given[bad[0]]:.6g}, expected {pg[bad[0]]:.6g}"))
    dev = np.abs(pg - theta_kw)
    bad = np.flatnonzero(dev > k_kw + _tol(max(np.abs(pg).max(), 1.0)))
    results.append(CheckResult("epigraph", bool(bad.size == 0),
                               "" if bad.size == 0 else f"step {bad[0]}: |P_g - theta|={dev[bad[0]]:.6g} > K={k_kw:.6g}"))
    if cfg.formulation in ("OP2", "OP3"):
        lo, hi = cfg.load_kw.min(), cfg.load_kw.max()
        ok = lo - _tol(hi) <= theta_kw <= hi + _tol(hi)
        results.append(CheckResult("theta-range", bool(ok), "" if ok else f"theta={theta_kw:.6g} outside [{lo}, {hi}]"))
    if cfg.terminal_soc:
        bad = [i for i, (s, u) in enumerate(zip(cfg.bess_units, schedule.units))
               if u.energy_kwh.array[-1] < s.e_initial_kwh - _tol(max(s.capacity_kwh, 1.0))]
        results.append(CheckResult("terminal-soc", not bad, "" if not bad else f"unit {bad[0]} ends below its initial energy"))
    if cfg.formulation == "OP3" and cfg.feeder is not None:
        p, q = netloads(cfg.feeder, cfg.load, schedule, [u.bus for u in cfg.bess_units])
        viol = check_voltage_band(simplified_flow(cfg.feeder, p, q), cfg.feeder.epsilon, tol=VOLTAGE_TOL)
        results.append(CheckResult("voltage-band", not viol, "" if not viol else
                                   f"node {viol[0].node} step {viol[0].step}: V={viol[0].v_pu:.6f}"))
    return results


def failures(results) -> list:
    return [r for r in results if not r.passed]
