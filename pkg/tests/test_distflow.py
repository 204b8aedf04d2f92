import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridflat.distflow import (FlowConvergenceError, check_voltage_band, full_flow, full_flow_residual, netloads,
                               simplified_flow)
from gridflat.files import bundled_feeder
from gridflat.model import BessSchedule, FeederModel, Line, TimeSeries, UnitSchedule, series


def one_line(r, x=0.0, v0=1.02):
    return FeederModel((Line(0, 1, r, x, 100.0, 0.0),), v0_pu=v0)


def col(*vals):
    return np.array(vals, dtype=float).reshape(-1, 1)


class TestSimplified:
    def test_single_line_drop(self):
        st_ = simplified_flow(one_line(0.0051), col(0.0, 1.0), col(0.0, 0.0))
        assert st_.p_branch_pu[0, 0] == pytest.approx(1.0)
        assert st_.v_pu[1, 0] == pytest.approx(1.02 - 0.0051 / 1.02)
        assert st_.v_pu[1, 0] == pytest.approx(1.015)

    def test_zero_loads(self):
        f = bundled_feeder()
        z = np.zeros((18, 3))
        s = simplified_flow(f, z, z)
        assert np.all(s.p_branch_pu == 0.0) and np.all(s.q_branch_pu == 0.0)
        assert np.all(s.v_pu == 1.02)

    def test_flat_load_strictly_decreasing(self):
        f = bundled_feeder()
        p, q = netloads(f, series([1000.0]))
        v = simplified_flow(f, p, q).v_pu[:, 0]
        assert np.all(np.diff(v) < 0)

    def test_terminal_and_aggregation(self):
        f = bundled_feeder()
        rng = np.random.default_rng(3)
        p = rng.uniform(-0.1, 0.3, (18, 5))
        q = rng.uniform(-0.05, 0.1, (18, 5))
        s = simplified_flow(f, p, q)
        assert np.all(s.p_branch_pu[-1] == 0.0) and np.all(s.q_branch_pu[-1] == 0.0)
        assert np.allclose(s.p_branch_pu[0], p[1:].sum(axis=0), atol=1e-15)
        for i in range(16):
            assert np.allclose(s.p_branch_pu[i + 1], s.p_branch_pu[i] - p[i + 1], atol=1e-14)

    def test_node_mismatch(self):
        with pytest.raises(ValueError):
            simplified_flow(bundled_feeder(), np.zeros((5, 1)), np.zeros((5, 1)))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(-2, 2), st.floats(-2, 2))
    def test_linearity(self, seed, a, b):
        f = bundled_feeder()
        rng = np.random.default_rng(seed)
        p1, q1, p2, q2 = (rng.uniform(-0.2, 0.2, (18, 2)) for _ in range(4))
        s1 = simplified_flow(f, p1, q1)
        s2 = simplified_flow(f, p2, q2)
        s = simplified_flow(f, a * p1 + b * p2, a * q1 + b * q2)
        assert np.allclose(s.p_branch_pu, a * s1.p_branch_pu + b * s2.p_branch_pu, atol=1e-12)
        assert np.allclose(s.q_branch_pu, a * s1.q_branch_pu + b * s2.q_branch_pu, atol=1e-12)
        v0 = f.v0_pu
        assert np.allclose(s.v_pu - v0, a * (s1.v_pu - v0) + b * (s2.v_pu - v0), atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 16), st.integers(1, 16), st.floats(0.0, 0.5))
    def test_moving_load_downstream_lowers_voltage(self, i, j, amount):
        i, j = min(i, j), max(i, j) + 1
        f = bundled_feeder()
        base = np.zeros((18, 1))
        base[1:, 0] = 0.05
        a = base.copy()
        a[i, 0] += amount
        b = base.copy()
        b[j, 0] += amount
        q = np.zeros((18, 1))
        va = simplified_flow(f, a, q).v_pu[:, 0]
        vb = simplified_flow(f, b, q).v_pu[:, 0]
        assert np.all(vb[i:j + 1] <= va[i:j + 1] + 1e-15)


class TestFull:
    def test_single_line_closed_form(self):
        r, v0 = 0.01, 1.02
        a = r / v0 ** 2
        expect = (1 - math.sqrt(1 - 4 * a)) / (2 * a)  # P = 1 + a P^2
        s = full_flow(one_line(r), col(0.0, 1.0), col(0.0, 0.0))
        assert s.p_branch_pu[0, 0] == pytest.approx(expect, abs=1e-10)
        assert s.p_branch_pu[0, 0] - 1.0 == pytest.approx(0.0098, abs=1e-4)
        assert s.residual < 1e-10

    def test_lossless_matches_simplified_flows(self):
        f = bundled_feeder().lossless()
        p, q = netloads(f, series([1500.0, 2000.0]))
        a = simplified_flow(f, p, q)
        b = full_flow(f, p, q)
        assert np.allclose(a.p_branch_pu, b.p_branch_pu, atol=1e-14)
        assert np.allclose(a.v_pu, b.v_pu, atol=1e-14)

    def test_losses_only_add(self):
        f = bundled_feeder()
        p, q = netloads(f, series([800.0, 1500.0, 2290.0]))
        a = simplified_flow(f, p, q)
        b = full_flow(f, p, q)
        assert np.all(b.p_branch_pu[0] >= a.p_branch_pu[0])
        assert full_flow_residual(f, b) < 1e-10
        assert b.iterations <= 100

    def test_substation_voltage_override(self):
        f = bundled_feeder()
        p, q = netloads(f, series([1000.0]))
        s = full_flow(f, p, q, substation_v=1.0)
        assert s.v_pu[0, 0] == 1.0

    def test_divergence_reported(self):
        f = one_line(0.5)
        with pytest.raises(FlowConvergenceError) as exc:
            full_flow(f, col(0.0, 5.0), col(0.0, 0.0))
        assert exc.value.iterations >= 1

    def test_csv(self):
        f = one_line(0.01)
        text = full_flow(f, col(0.0, 1.0), col(0.0, 0.0)).to_csv().splitlines()
        assert text[0] == "node,step,p_pu,q_pu,v_pu"
        assert len(text) == 3


class TestBand:
    def _state(self, v):
        v = np.atleast_2d(np.asarray(v, dtype=float))
        z = np.zeros_like(v)
        from gridflat.distflow import FlowState
        return FlowState(z, z, v, z, z)

    def test_centre(self):
        assert check_voltage_band(self._state([[1.0], [1.0], [1.0]]), 0.05) == []

    def test_one_violation(self):
        out = check_voltage_band(self._state([[1.0], [0.949]]), 0.05)
        assert len(out) == 1
        assert (out[0].node, out[0].step) == (1, 0)
        assert out[0].magnitude == pytest.approx(0.001)

    def test_substation_optional(self):
        s = self._state([[1.06], [1.0]])
        assert check_voltage_band(s, 0.05) == []
        assert len(check_voltage_band(s, 0.05, include_substation=True)) == 1


def test_netloads_battery_injection():
    f = bundled_feeder()
    zero = TimeSeries((0.0,))
    u = UnitSchedule(TimeSeries((100.0,)), zero, (1,), (0,), TimeSeries((10.0,)), TimeSeries((-50.0,)))
    p, q = netloads(f, TimeSeries((1000.0,)), BessSchedule((u,)), [4])
    base_p, base_q = netloads(f, TimeSeries((1000.0,)))
    assert p[4, 0] - base_p[4, 0] == pytest.approx(0.1)
    assert q[4, 0] - base_q[4, 0] == pytest.approx(-0.05)
    assert p.sum() == pytest.approx(1.1)
