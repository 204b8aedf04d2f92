import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridflat.files import bundled_feeder
from gridflat.model import BessSpec, InvalidConfigError, ProblemConfig, TimeSeries, series
from gridflat.scenarios import (K_FIRST, K_TOL, THETA_FIRST, NoCriticalCapacity, SweepResult, compare_weightings,
                                find_critical_capacity, generate_synthetic_load, solve_config, sweep_capacity,
                                sweep_location, sweep_theta)


def triangle(cap=200.0):
    unit = BessSpec(capacity_kwh=cap, soc_min=0.0, soc_max=1.0, eta=1.0, e_initial_kwh=0.0)
    return ProblemConfig("OP2", series([100.0, 200.0, 100.0]), (unit,), alpha=K_FIRST[0], beta=K_FIRST[1])


def small_duck(cap=300.0):
    load = generate_synthetic_load("duck", 1000.0, 1600.0, 6)
    return ProblemConfig("OP2", load, (BessSpec(capacity_kwh=cap),), alpha=K_FIRST[0], beta=K_FIRST[1])


class TestSolveConfig:
    def test_triangle(self):
        rep = solve_config(triangle())
        assert rep.ok and rep.valid
        assert rep.k_kw == pytest.approx(0.0, abs=1e-9)
        assert rep.theta_kw == pytest.approx(150.0)
        assert rep.pcc_power_kw.values == pytest.approx((150.0, 150.0, 150.0))

    def test_relaxed_mode(self):
        rep = solve_config(replace(small_duck(), relaxation_mode="lp-relax"))
        assert rep.ok and rep.branch_nodes == 0
        milp = solve_config(small_duck())
        assert rep.objective <= milp.objective + 1e-9


class TestSweepCapacity:
    def test_zero_capacity(self):
        load = series([100.0, 250.0, 180.0])
        cfg = ProblemConfig("OP1", load, (BessSpec(capacity_kwh=5.0),), theta_kw=150.0)
        res = sweep_capacity(cfg, [0.0])
        assert res.k_values[0] == pytest.approx(100.0)

    def test_triangle_critical(self):
        res = sweep_capacity(triangle(), [40.0, 50.0, 60.0])
        ks = res.k_values
        assert ks[0] > K_TOL and ks[1] <= K_TOL and ks[2] <= K_TOL
        assert res.derived["critical_capacity_kwh"] == 50.0

    def test_non_increasing(self):
        res = sweep_capacity(small_duck(), np.linspace(0.0, 800.0, 9))
        ks = res.k_values
        assert np.all(np.diff(ks) <= 1e-6)

    def test_rejects_op3(self):
        cfg = replace(small_duck(), formulation="OP3", feeder=bundled_feeder())
        with pytest.raises(InvalidConfigError):
            sweep_capacity(cfg, [1.0])


class TestSweepTheta:
    def test_no_battery_v_shape(self):
        load = series([100.0, 300.0, 200.0])
        cfg = ProblemConfig("OP1", load, (BessSpec(capacity_kwh=0.0),), theta_kw=0.0)
        thetas = np.linspace(50.0, 350.0, 13)
        res = sweep_theta(cfg, thetas)
        expect = [max(abs(v - t) for v in load.values) for t in thetas]
        assert res.k_values == pytest.approx(expect)
        assert res.derived["argmin"] == [200.0]
        assert res.derived["flat_bottom"] is None
        assert res.derived["undecided"] == []

    def test_above_critical_flat_bottom(self):
        res = sweep_theta(replace(triangle(), formulation="OP1"), np.linspace(100.0, 200.0, 11))
        bottom = res.derived["flat_bottom"]
        assert bottom is not None and bottom[0] < bottom[1]
        assert res.derived["theta_left_turning_point"] == bottom[0]

    def test_relaxed_is_convex(self):
        cfg = replace(small_duck(150.0), formulation="OP1", theta_kw=0.0, relaxation_mode="lp-relax")
        ks = sweep_theta(cfg, np.linspace(900.0, 1700.0, 25)).k_values
        for a, b, c in zip(ks, ks[1:], ks[2:]):
            assert b <= 0.5 * (a + c) + 1e-6

    def test_grid_minimum_bounds_op2(self):
        cfg = small_duck(150.0)
        op2 = solve_config(cfg)
        grid = np.linspace(1000.0, 1600.0, 13)
        res = sweep_theta(replace(cfg, formulation="OP1"), grid)
        slack = grid[1] - grid[0]
        assert res.derived["k_min"] >= op2.k_kw - 1e-6
        assert res.derived["k_min"] <= op2.k_kw + slack

    def test_node_limited_points_are_bracketed(self):
        cfg = replace(small_duck(150.0), formulation="OP1")
        res = sweep_theta(cfg, [1300.0, 1500.0], node_limit=1)
        lows, ks = res.k_lower_bounds, res.k_values
        assert np.all(lows <= ks + 1e-9)


class TestWeightings:
    def test_theta_first_hits_min_load(self):
        for cap in (0.0, 150.0, 600.0):
            rows = compare_weightings(small_duck(cap))
            row = [r for r in rows if (r.alpha, r.beta) == THETA_FIRST][0]
            assert row.theta_at_lower_bound
            assert row.theta_kw == pytest.approx(1000.0, abs=K_TOL)

    def test_triangle_by_hand(self):
        k_first, theta_first = compare_weightings(triangle())
        assert (k_first.k_kw, k_first.theta_kw) == pytest.approx((0.0, 150.0), abs=1e-6)
        # theta pinned to 100: charging c then discharging c leaves max(c, 100 - c) >= 50
        assert (theta_first.k_kw, theta_first.theta_kw) == pytest.approx((50.0, 100.0), abs=1e-6)


class TestLocation:
    def _cfg(self, feeder):
        load = generate_synthetic_load("duck", 1000.0, 1500.0, 4)
        return ProblemConfig("OP3", load, (BessSpec(bus=17, capacity_kwh=2000.0),), alpha=1000.0, beta=1.0,
                             feeder=feeder)

    def test_zero_impedance_is_location_independent(self):
        res = sweep_location(self._cfg(bundled_feeder().lossless()), range(1, 18))
        objs = [r.objective for r in res.reports]
        assert max(objs) - min(objs) <= 1e-6
        assert res.derived["first_optimal_bus"] == 17
        assert len(res.axis) == 17

    def test_requires_single_unit(self):
        cfg = self._cfg(bundled_feeder())
        two = replace(cfg, bess_units=cfg.bess_units * 2)
        with pytest.raises(InvalidConfigError):
            sweep_location(two, [1])


class TestCriticalCapacity:
    def test_triangle(self):
        hist = []
        c = find_critical_capacity(triangle(), 0.0, 200.0, 0.1, history=hist)
        assert abs(c - 50.0) <= 0.1
        # brackets nest and shrink
        for (lo1, hi1), (lo2, hi2) in zip(hist, hist[1:]):
            assert lo1 <= lo2 <= hi2 <= hi1
        assert hist[-1][1] - hist[-1][0] <= 0.1

    def test_definition(self):
        cfg = small_duck()
        tol = 2.0
        c = find_critical_capacity(cfg, 0.0, 3000.0, tol)
        assert solve_config(cfg.with_capacity(c)).k_kw <= K_TOL
        assert solve_config(cfg.with_capacity(c - 2 * tol)).k_kw > K_TOL

    def test_consistent_with_capacity_sweep(self):
        cfg = small_duck()
        c = find_critical_capacity(cfg, 0.0, 3000.0, 1.0)
        grid = np.linspace(0.0, 3000.0, 31)
        swept = sweep_capacity(cfg, grid).derived["critical_capacity_kwh"]
        assert abs(swept - c) <= grid[1] - grid[0]

    def test_no_critical(self):
        with pytest.raises(NoCriticalCapacity):
            find_critical_capacity(triangle(), 0.0, 10.0, 0.1)

    def test_bad_bracket(self):
        with pytest.raises(ValueError):
            find_critical_capacity(triangle(), 5.0, 5.0, 0.1)


class TestSyntheticLoad:
    def test_flat(self):
        assert generate_synthetic_load("flat", 100, 100, 24).values == (100.0,) * 24

    def test_duck(self):
        v = np.array(generate_synthetic_load("duck", 1442, 2290, 24).values)
        assert v.min() == 1442.0 and v.max() == 2290.0
        assert 10 <= int(np.argmin(v)) <= 15 and 17 <= int(np.argmax(v)) <= 21
        # a single evening peak: rises to the maximum, then falls
        peak = int(np.argmax(v))
        assert np.all(np.diff(v[int(np.argmin(v)):peak + 1]) > 0)
        assert np.all(np.diff(v[peak:]) < 0)

    def test_triangle(self):
        assert generate_synthetic_load("triangle", 100, 200, 3).values == (100.0, 200.0, 100.0)

    def test_sine_bounds(self):
        v = generate_synthetic_load("sine", 10, 20, 12).values
        assert min(v) == 10.0 and max(v) == 20.0

    @pytest.mark.parametrize("args", [("duck", 10, 5), ("flat", 1, 2), ("wave", 1, 2), ("duck", 1, 2, 1)])
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            generate_synthetic_load(*args)

    @settings(max_examples=30, deadline=None)
    @given(st.sampled_from(["duck", "triangle", "sine"]), st.floats(0, 5000), st.floats(1, 5000),
           st.integers(2, 96))
    def test_hits_bounds(self, profile, lo, span, steps):
        v = generate_synthetic_load(profile, lo, lo + span, steps).values
        assert min(v) == lo and max(v) == lo + span
        assert generate_synthetic_load(profile, lo, lo + span, steps).values == v


class TestSweepResult:
    def test_reproducible(self):
        cfg = replace(small_duck(150.0), formulation="OP1")
        a = sweep_theta(cfg, [1100.0, 1300.0, 1500.0])
        b = sweep_theta(cfg, [1500.0, 1100.0, 1300.0, 1300.0])
        assert a.to_csv() == b.to_csv()
        assert a.summary_json() == b.summary_json()

    def test_axis_checks(self):
        with pytest.raises(ValueError):
            SweepResult("theta", (1.0, 2.0), (None,))
        with pytest.raises(ValueError):
            SweepResult("theta", (2.0, 1.0), (None, None))

    def test_error_row(self):
        text = SweepResult("capacity", (1.0,), (None,)).to_csv().splitlines()
        assert text[0] == "axis,K,theta,objective,gap,status"
        assert text[1].endswith(",error")
        assert math.isnan(SweepResult("capacity", (1.0,), (None,)).k_values[0])

    def test_failed_points_continue(self):
        load = TimeSeries((100.0, 200.0))
        cfg = ProblemConfig("OP1", load, (BessSpec(capacity_kwh=10.0),), theta_kw=150.0)
        res = sweep_capacity(cfg, [-5.0, 10.0])
        assert res.reports[0] is None and res.reports[1].ok
        assert len(res.failures) == 1
