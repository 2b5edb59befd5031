import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from capstep.balance import (
    ControllerKind,
    Nominal,
    OpenLoopGait,
    StateEstimator,
    StepCommand,
    full_controller,
    kalman_gain,
    learning_controller,
    make_controller,
    open_loop,
    pattern_apex,
    timing_controller,
)
from capstep.learning import GridApproximator
from capstep.lipm import ComState, GaitParams, apex_distance, propagate
from capstep.plant import Observation

C = 3.5
NOMINAL = Nominal(0.45, 0.22)
ALPHA = pattern_apex(NOMINAL, C)
GAIT = GaitParams(ALPHA, 0.11, C)
T_MIN = 0.1


def cycle_state(t):
    """Limit-cycle state ``t`` seconds into a nominal step."""
    tau = C * (t - 0.5 * NOMINAL.period)
    return ComState(ALPHA * math.cosh(tau), ALPHA * C * math.sinh(tau))


def test_open_loop_examples():
    assert open_loop(0.0, NOMINAL) == StepCommand(0.45, 0.22)
    assert open_loop(0.45, NOMINAL).t_remaining == 0.0
    assert open_loop(0.6, NOMINAL).t_remaining == 0.0


def test_controller_kind_parse():
    assert [k.value for k in ControllerKind] == ["none", "timing", "timing+step", "timing+step+learning"]
    assert ControllerKind.parse("timing") is ControllerKind.TIMING
    with pytest.raises(ValueError, match="unknown controller"):
        ControllerKind.parse("fast")


@pytest.mark.parametrize("t", [0.0, 0.1, 0.2, 0.3, 0.44])
def test_nominal_cycle_gives_nominal_command(t):
    s = cycle_state(t)
    for cmd in (timing_controller(s, GAIT, NOMINAL.width, T_MIN, t), full_controller(s, GAIT, T_MIN, t)):
        assert cmd.t_remaining == pytest.approx(NOMINAL.period - t, abs=1e-9)
    assert full_controller(s, GAIT, T_MIN, t).f == pytest.approx(NOMINAL.width, abs=1e-9)


def test_timing_examples():
    assert timing_controller(ComState(GAIT.delta, 0.3), GAIT, 0.22, T_MIN).t_remaining == 0.0
    cmd = timing_controller(ComState(0.02, -0.5), GAIT, 0.22, T_MIN)  # crossing the pivot
    assert cmd.t_remaining == T_MIN and cmd.fallback and cmd.f == 0.22
    # part of the minimum step time has already passed
    assert timing_controller(ComState(0.02, -0.5), GAIT, 0.22, T_MIN, 0.04).t_remaining == pytest.approx(0.06)


def test_full_controller_examples():
    cmd = full_controller(ComState(GAIT.delta, 0.0), GAIT, T_MIN)
    assert cmd.t_remaining == 0.0
    assert cmd.f == pytest.approx(GAIT.delta + GAIT.alpha)
    s = cycle_state(0.1)
    pushed = ComState(s.y, s.vy + 0.3)
    assert full_controller(pushed, GAIT, T_MIN, 0.1).f > NOMINAL.width


@settings(max_examples=300, deadline=None)
@given(st.floats(0.0, 0.3), st.floats(-1.0, 1.0))
def test_full_controller_next_apex_is_alpha(y, vy):
    cmd = full_controller(ComState(y, vy), GAIT, T_MIN)
    x = propagate(ComState(y, vy), C, cmd.t_remaining)
    assert apex_distance(ComState(cmd.f - x.y, -x.vy), C) == pytest.approx(GAIT.alpha, abs=1e-9)


@settings(max_examples=300, deadline=None)
@given(st.floats(-0.4, 0.4), st.floats(-2.0, 2.0), st.floats(0.0, 0.6))
def test_outputs_finite(y, vy, phase):
    grid = GridApproximator()
    grid.values[:] = 0.01
    for kind in list(ControllerKind)[1:]:
        cmd = make_controller(kind, GAIT, NOMINAL, T_MIN, grid)(ComState(y, vy), phase)
        assert cmd.t_remaining >= 0 and math.isfinite(cmd.t_remaining) and math.isfinite(cmd.f)


def test_learning_controller_subtracts_correction():
    s = cycle_state(0.2)
    grid = GridApproximator()
    base = full_controller(s, GAIT, T_MIN, 0.2)
    assert learning_controller(s, GAIT, grid, T_MIN, 0.2) == base
    grid.values[:] = 0.01
    cmd = learning_controller(s, GAIT, grid, T_MIN, 0.2)
    assert cmd.t_remaining == base.t_remaining
    assert cmd.f == pytest.approx(base.f - 0.01, abs=1e-15)


def test_make_controller_rejects_open_loop():
    with pytest.raises(ValueError):
        make_controller(ControllerKind.NO_FEEDBACK, GAIT, NOMINAL, T_MIN)
    with pytest.raises(ValueError):
        make_controller(ControllerKind.TIMING_STEP_LEARNING, GAIT, NOMINAL, T_MIN)


def test_step_command_validation():
    with pytest.raises(ValueError):
        StepCommand(-0.1, 0.2)
    with pytest.raises(ValueError):
        StepCommand(0.1, math.inf)


def test_open_loop_gait_start_and_pattern():
    gait = OpenLoopGait(NOMINAL, C)
    assert gait.command(0.0, 0) == StepCommand(0.0, 0.5 * NOMINAL.width + gait.apex)
    gait.on_exchange(1)
    # first periodic step starts at mid-step, on the apex
    assert gait.reference(0.0, 1) == pytest.approx((gait.apex, 0.0))
    assert gait.command(0.0, 1).t_remaining == pytest.approx(0.5 * NOMINAL.period)
    assert gait.command(0.1, 2).t_remaining == pytest.approx(NOMINAL.period - 0.1)
    gait.restart()
    assert gait.starting


def test_estimator_is_identity_without_noise_or_delay():
    est = StateEstimator(C, 0.01, 0.0, (0.0, 0.0))
    assert est.passthrough
    rng = np.random.default_rng(0)
    for k in range(50):
        obs = Observation(float(rng.uniform(0, 0.2)), float(rng.uniform(-1, 1)), k // 10)
        assert est.filter(obs) == ComState(obs.y, obs.vy)
        assert est.predict(k // 10, 0.1, 0.22) == ComState(obs.y, obs.vy)


def test_estimator_predicts_over_latency():
    est = StateEstimator(C, 0.01, 0.02, (0.0, 0.0))
    s = cycle_state(0.1)
    est.filter(Observation(s.y, s.vy, 3))
    assert est.predict(3, 0.12, 0.22) == propagate(s, C, 0.02)


def test_estimator_crosses_exchange_inside_latency():
    est = StateEstimator(C, 0.01, 0.03, (0.0, 0.0))
    s = cycle_state(0.43)
    est.filter(Observation(s.y, s.vy, 3))
    # the plant stepped 0.01 s ago with the foot at 0.22
    got = est.predict(4, 0.01, 0.22)
    x = propagate(s, C, 0.02)
    want = propagate(ComState(0.22 - x.y, -x.vy), C, 0.01)
    assert (got.y, got.vy) == pytest.approx((want.y, want.vy), abs=1e-12)


def test_estimator_reduces_noise():
    noise = (0.002, 0.01)
    rng = np.random.default_rng(3)
    est = StateEstimator(C, 0.01, 0.0, noise)
    raw, filt = [], []
    for k in range(45):
        s = cycle_state(0.01 * k)
        obs = Observation(s.y + rng.normal(0, noise[0]), s.vy + rng.normal(0, noise[1]), 0)
        f = est.filter(obs)
        if k > 10:
            raw.append(obs.y - s.y)
            filt.append(f.y - s.y)
    assert np.std(filt) < 0.6 * np.std(raw)


def test_estimator_detects_apex():
    est = StateEstimator(C, 0.01, 0.0, (0.0, 0.0))
    seen = []
    for k in range(45):
        s = cycle_state(0.01 * k + 0.005)
        est.filter(Observation(s.y, s.vy, 0))
        if est.apex is not None:
            seen.append(est.apex)
    assert seen == [pytest.approx(ALPHA, abs=1e-12)]


def test_estimator_gate_reinitialises_after_push():
    noise = (0.002, 0.01)
    est = StateEstimator(C, 0.01, 0.0, noise)
    for k in range(10):
        s = cycle_state(0.01 * k)
        est.filter(Observation(s.y, s.vy, 0))
    s = cycle_state(0.1)
    pushed = Observation(s.y, s.vy + 0.5, 0)
    assert est.filter(pushed) == ComState(pushed.y, pushed.vy)


def test_kalman_gain_limits():
    assert np.array_equal(kalman_gain(C, 0.01, (0, 0), (1e-4, 1e-3)), np.eye(2))
    k = kalman_gain(C, 0.01, (0.002, 0.01), (2e-4, 4e-3))
    assert np.all(np.linalg.eigvals(k).real > 0) and np.all(np.diag(k) < 1)
