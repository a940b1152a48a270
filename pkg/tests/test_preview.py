import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from legplan.geometry import SupportGeometryError
from legplan.preview import (
    CartTableParams,
    ControlSequence,
    PreviewPhase,
    PreviewState,
    com_acceleration,
    com_trajectory,
    cop_at,
    export_plan_csv,
    nominal_offsets,
    rollout,
    sample_rollout,
    support_region,
    trunk_height_reference,
)


def rk4_cart_table(x0, v0, p0, dp, T, h, g=9.81, dt=1e-4, t_end=None):
    """Integrate xdd = (g/h)(x - p(t)) with a linear COP; the analytic model is not used."""
    w2 = g / h
    t_end = T if t_end is None else t_end

    def f(t, s):
        p = p0 + dp * t / T
        return np.array([s[1], w2 * (s[0] - p)])

    s = np.array([x0, v0], dtype=float)
    n = max(1, math.ceil(t_end / dt - 1e-9))
    dt = t_end / n  # land exactly on t_end
    t = 0.0
    for _ in range(n):
        k1 = f(t, s)
        k2 = f(t + dt / 2, s + dt / 2 * k1)
        k3 = f(t + dt / 2, s + dt / 2 * k2)
        k4 = f(t + dt, s + dt * k3)
        s = s + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += dt
    return s


def stance_phase(T, dp=(0.0, 0.0)):
    return PreviewPhase("stance", T, dp)


class TestCartTable:
    def test_omega(self):
        assert CartTableParams(0.58).omega == pytest.approx(math.sqrt(9.81 / 0.58))

    def test_rejects_bad_height(self):
        with pytest.raises(ValueError):
            CartTableParams(0.0)

    def test_matches_rk4(self):
        rng = np.random.default_rng(11)
        for _ in range(5):
            x0, v0 = rng.uniform(-0.05, 0.05), rng.uniform(-0.2, 0.2)
            dp, T, h = rng.uniform(-0.2, 0.2), rng.uniform(0.1, 1.4), rng.uniform(0.4, 0.7)
            s0 = PreviewState((x0, 0.0), (v0, 0.0), (0.0, 0.0), {})
            x, v = com_trajectory(s0, stance_phase(T, (dp, 0.0)), CartTableParams(h), T)
            ref = rk4_cart_table(x0, v0, 0.0, dp, T, h)
            assert abs(x[0] - ref[0]) <= 1e-6
            assert abs(v[0] - ref[1]) <= 1e-5

    def test_balanced_state_stays_put(self):
        s0 = PreviewState((0.1, -0.2), (0.0, 0.0), (0.1, -0.2), {})
        x, v = com_trajectory(s0, stance_phase(1.0), CartTableParams(), 1.0)
        assert np.allclose(x, [0.1, -0.2], atol=1e-15)
        assert np.allclose(v, 0, atol=1e-15)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-0.1, 0.1), st.floats(-0.3, 0.3), st.floats(-0.2, 0.2), st.floats(0.05, 1.4))
    def test_initial_conditions_and_dynamics(self, x0, v0, dp, T):
        params = CartTableParams()
        s0 = PreviewState((x0, 0.0), (v0, 0.0), (0.02, 0.0), {})
        ph = stance_phase(T, (dp, 0.0))
        x, v = com_trajectory(s0, ph, params, 0.0)
        assert x[0] == pytest.approx(x0, abs=1e-12)
        assert v[0] == pytest.approx(v0, abs=1e-12)
        # finite-difference acceleration agrees with the model
        t, e = 0.5 * T, 1e-4
        xm, _ = com_trajectory(s0, ph, params, t - e)
        xc, _ = com_trajectory(s0, ph, params, t)
        xp, _ = com_trajectory(s0, ph, params, t + e)
        acc = (xp[0] - 2 * xc[0] + xm[0]) / e ** 2
        p = cop_at(ph, s0.cop, t)
        assert acc == pytest.approx(com_acceleration(xc, p, params)[0], abs=1e-4)

    def test_time_outside_phase(self):
        s0 = PreviewState((0, 0), (0, 0), (0, 0), {})
        with pytest.raises(ValueError):
            com_trajectory(s0, stance_phase(0.5), CartTableParams(), 0.6)
        with pytest.raises(ValueError):
            cop_at(stance_phase(0.5), (0, 0), -0.1)


class TestRollout:
    def sequence(self):
        return ControlSequence((
            PreviewPhase("stance", 0.4, (0.03, -0.02)),
            PreviewPhase("swing", 0.5, (0.04, 0.05), (0.05, 0.0), "LH"),
            PreviewPhase("stance", 0.0, (1.0, 1.0)),
            PreviewPhase("swing", 0.5, (0.02, -0.01), (0.05, 0.0), "LF"),
        ))

    def test_continuity_and_skipping(self):
        s0 = PreviewState.at_rest()
        U = self.sequence()
        params = CartTableParams()
        states = rollout(s0, U, 0.05, params)
        assert [s.phase for s in states] == [0, 1, 3, -1]
        for a, b in zip(states[:-1], states[1:]):
            ph = U.phases[a.phase]
            x, v = com_trajectory(a, ph, params, ph.duration)
            assert np.allclose(x, b.com, atol=1e-12)
            assert np.allclose(v, b.com_vel, atol=1e-12)
            assert np.allclose(np.add(a.cop, ph.cop_shift), b.cop, atol=1e-15)
            assert b.time == pytest.approx(a.time + ph.duration)

    def test_swing_foot_placement(self):
        s0 = PreviewState.at_rest()
        U = self.sequence()
        states = rollout(s0, U, 0.05, CartTableParams())
        swing = states[1]
        off = nominal_offsets()["LH"]
        assert swing.feet["LH"] == pytest.approx((swing.com[0] + off[0] + 0.05, swing.com[1] + off[1]))
        assert set(swing.support.feet) == {"LF", "RF", "RH"}

    def test_margin_too_large(self):
        s0 = PreviewState.at_rest()
        U = ControlSequence((PreviewPhase("swing", 0.5, (0, 0), (0, 0), "LF"),))
        with pytest.raises(SupportGeometryError):
            rollout(s0, U, 0.3, CartTableParams())
        states = rollout(s0, U, 0.3, CartTableParams(), strict=False)
        assert len(states) == 2

    def test_support_region_lines_are_signed_distances(self):
        reg = support_region({"a": (0, 0), "b": (1, 0), "c": (0, 1)}, 0.1)
        slack = reg.lines[:, :2] @ np.array([0.3, 0.3]) + reg.lines[:, 2]
        assert np.allclose(np.linalg.norm(reg.lines[:, :2], axis=1), 1.0)
        assert slack.min() == pytest.approx(0.4 / math.sqrt(2) - 0.1, abs=1e-15)

    def test_sampling_and_export(self, tmp_path):
        s0 = PreviewState.at_rest()
        U = self.sequence()
        params = CartTableParams()
        states = rollout(s0, U, 0.05, params)
        rows = sample_rollout(states, U, params, dt=0.1)
        assert rows[0][0] == 0.0
        assert rows[-1][0] == pytest.approx(1.4)
        export_plan_csv(states, U, params, tmp_path / "p.csv", dt=0.1)
        lines = (tmp_path / "p.csv").read_text().splitlines()
        assert lines[0].startswith("t,x,y")
        assert len(lines) == len(rows) + 1

    def test_invalid_phase(self):
        with pytest.raises(ValueError):
            PreviewPhase("swing", 0.5, (0, 0), (0, 0), None)
        with pytest.raises(ValueError):
            PreviewPhase("stance", -1.0, (0, 0))


def test_trunk_height_reference():
    assert trunk_height_reference([0.0, 0.1, 0.2], 0.5) == pytest.approx(0.6)
    with pytest.raises(ValueError):
        trunk_height_reference([], 0.5)
