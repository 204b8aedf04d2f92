import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridflat.files import bundled_feeder, read_problem
from gridflat.model import (BessSchedule, BessSpec, ProblemConfig, TimeSeries, UnitSchedule, close, pcc_power,
                            series, validate_config)
from importlib import resources


def data_path(name):
    return resources.files("gridflat").joinpath("data", name)


def unit_schedule(charge, discharge, energy=None):
    n = len(charge)
    mc = tuple(int(c > 0) for c in charge)
    md = tuple(int(d > 0) for d in discharge)
    return UnitSchedule(series(charge), series(discharge), mc, md, series(energy or [0.0] * n))


def codes(cfg):
    return {v.code for v in validate_config(cfg)}


def op2(**kw):
    base = dict(formulation="OP2", load=series([100.0, 200.0]), bess_units=(BessSpec(capacity_kwh=10),),
                alpha=1.0, beta=1.0)
    base.update(kw)
    return ProblemConfig(**base)


class TestTimeSeries:
    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            TimeSeries(())

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            TimeSeries((1.0, math.nan))
        with pytest.raises(ValueError):
            TimeSeries((math.inf,))

    def test_rejects_nonpositive_step(self):
        with pytest.raises(ValueError):
            TimeSeries((1.0,), step_hours=0.0)

    def test_values_become_float_tuple(self):
        ts = TimeSeries([1, 2, 3], step_hours=0.5)
        assert ts.values == (1.0, 2.0, 3.0)
        assert len(ts) == 3 and ts[1] == 2.0
        assert ts.head(2).values == (1.0, 2.0)
        assert ts.head(2).step_hours == 0.5


class TestBessSpec:
    def test_energy_limits(self):
        u = BessSpec(capacity_kwh=200, soc_min=0.1, soc_max=0.9)
        assert u.e_min == pytest.approx(20.0) and u.e_max == pytest.approx(180.0)

    def test_with_capacity_keeps_initial_fraction(self):
        u = BessSpec(capacity_kwh=100, e_initial_kwh=30)
        assert u.with_capacity(200).e_initial_kwh == pytest.approx(60.0)

    def test_with_capacity_from_empty_starts_at_soc_min(self):
        u = BessSpec(capacity_kwh=0, e_initial_kwh=0.0, soc_min=0.1)
        assert u.with_capacity(50).e_initial_kwh == pytest.approx(5.0)

    def test_resolve_fills_defaults(self):
        cfg = op2(bess_units=(BessSpec(capacity_kwh=100),)).resolve()
        u = cfg.bess_units[0]
        assert u.e_initial_kwh == pytest.approx(5.0)
        assert u.p_charge_max_kw == pytest.approx(2000.0)
        assert u.p_discharge_max_kw == pytest.approx(2000.0)


class TestValidateConfig:
    def test_soc_order(self):
        assert "soc-order" in codes(op2(bess_units=(BessSpec(capacity_kwh=10, soc_min=0.95, soc_max=0.05),)))

    def test_alpha_positive(self):
        assert "alpha-positive" in codes(op2(alpha=0.0))

    def test_beta_positive(self):
        assert "beta-positive" in codes(op2(beta=-1.0))

    def test_bundled_op1_is_valid(self):
        assert validate_config(read_problem(data_path("op1_duck.json"))) == []

    def test_bundled_examples_are_valid(self):
        for name in ("op2_duck.json", "op3_feeder.json"):
            assert validate_config(read_problem(data_path(name))) == []

    def test_theta_missing(self):
        assert "theta-missing" in codes(op2(formulation="OP1"))

    def test_unknown_formulation(self):
        assert "formulation-unknown" in codes(op2(formulation="OP9"))

    def test_relaxation_mode(self):
        assert "relaxation-mode" in codes(op2(relaxation_mode="fuzzy"))

    def test_horizon(self):
        assert "horizon-mismatch" in codes(op2(horizon=5))
        assert validate_config(op2(horizon=1)) == []

    def test_battery_fields(self):
        bad = BessSpec(capacity_kwh=-1, soc_min=-0.1, eta=1.5, p_charge_max_kw=-2)
        got = codes(op2(bess_units=(bad,)))
        assert {"capacity-negative", "soc-range", "eta-range", "power-negative"} <= got

    def test_initial_energy_range(self):
        assert "initial-energy-range" in codes(op2(bess_units=(BessSpec(capacity_kwh=10, e_initial_kwh=20),)))

    def test_op3_requirements(self):
        got = codes(op2(formulation="OP3", alpha=1.0, beta=2.0))
        assert {"feeder-missing", "alpha-gt-beta"} <= got

    def test_bes_bus_missing(self):
        cfg = op2(formulation="OP3", alpha=2.0, beta=1.0, feeder=bundled_feeder(),
                  bess_units=(BessSpec(bus=99, capacity_kwh=10),))
        assert codes(cfg) == {"bes-bus-missing"}

    def test_feeder_checks(self):
        f = bundled_feeder()
        lines = list(f.lines)
        lines[3] = replace(lines[3], r_pu=-1.0, p_share_pct=50.0)
        lines[5] = replace(lines[5], from_node=7)
        broken = replace(f, lines=tuple(lines), epsilon=0.0, p_base_kw=0.0)
        got = codes(op2(formulation="OP3", alpha=2.0, beta=1.0, feeder=broken))
        assert {"feeder-radial", "feeder-impedance", "feeder-shares", "epsilon-positive", "p-base-positive"} <= got

    def test_pure(self):
        cfg = op2(alpha=0.0)
        assert validate_config(cfg) == validate_config(cfg)
        assert cfg.alpha == 0.0


class TestFeeder:
    def test_table_shares(self):
        f = bundled_feeder()
        assert f.n_nodes == 18
        assert sum(ln.p_share_pct for ln in f.lines) == pytest.approx(100.02)
        frac = f.load_fractions()
        assert frac[0] == 0.0
        assert frac.sum() == pytest.approx(1.0, abs=1e-15)


class TestPccPower:
    def test_zero_schedule(self):
        load = series([100.0, 200.0])
        assert pcc_power(load, BessSchedule.idle(1, 2)).values == (100.0, 200.0)

    def test_charge_discharge(self):
        load = series([100.0, 200.0])
        s = BessSchedule((unit_schedule([50.0, 0.0], [0.0, 50.0]),))
        assert pcc_power(load, s).values == (150.0, 150.0)

    def test_units_cancel(self):
        load = series([100.0])
        s = BessSchedule((unit_schedule([10.0], [0.0]), unit_schedule([0.0], [10.0])))
        assert pcc_power(load, s).values == (100.0,)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            pcc_power(series([1.0, 2.0, 3.0]), BessSchedule.idle(1, 2))

    def test_step_mismatch(self):
        with pytest.raises(ValueError):
            pcc_power(series([1.0, 2.0], step_hours=0.5), BessSchedule.idle(1, 2))

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.floats(0, 100), st.floats(0, 100), st.floats(0, 100)), min_size=1, max_size=8),
           st.floats(0, 3), st.floats(0, 3))
    def test_linear_in_schedule(self, rows, a, b):
        load = series([r[0] for r in rows])
        c = [r[1] for r in rows]
        d = [r[2] for r in rows]
        s1 = BessSchedule((unit_schedule([a * v for v in c], [0.0] * len(c)),))
        s2 = BessSchedule((unit_schedule([0.0] * len(d), [b * v for v in d]),))
        both = BessSchedule((unit_schedule([a * v for v in c], [b * v for v in d]),))
        zero = series([0.0] * len(rows))
        lhs = pcc_power(load, both).array
        rhs = pcc_power(load, s1).array + pcc_power(zero, s2).array
        assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-9)


def test_close():
    assert close(1.0, 1.0 + 1e-7)
    assert not close(1.0, 1.0 + 1e-5)
    assert close(0.0, 1e-10)
