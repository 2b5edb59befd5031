import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from capstep.balance import StepCommand, full_controller
from capstep.lipm import ComState, GaitParams, orbital_energy, propagate
from capstep.plant import (
    LEFT,
    RIGHT,
    ApexReached,
    Fell,
    Plant,
    PlantConfig,
    PlantState,
    PushEvent,
    SupportExchange,
    apply_push,
    is_fallen,
)

GAIT = GaitParams(0.0829288778315042, 0.11)
FAR = StepCommand(1e9, 0.22)


def walk(plant, gait, seconds, pushes=()):
    """Closed-loop stepping on the true state; returns all events."""
    pushes = dict(pushes)
    events = []
    n = int(round(seconds / plant.dt))
    for k in range(n):
        if k in pushes:
            plant.apply_push(PushEvent(pushes[k], plant.state.sim_time))
        s = plant.state
        cmd = full_controller(s.com(), gait, plant.config.t_min, s.phase_time)
        events += plant.tick(cmd)
        fell = plant.detect_fall_and_reset(0.22)
        if fell is not None:
            events.append(fell)
    return events


def started(cfg, y=GAIT.delta, vy=-0.3, side=RIGHT):
    p = Plant(cfg, initial_side=side)
    p.reset(0.22)
    p.state.y, p.state.vy, p.state.standing = y, vy, False
    return p


def test_push_examples():
    s = PlantState(RIGHT, 0.1, 0.0, 0.0)
    assert apply_push(s, PushEvent(9.0, 0.0), 13.5).vy_world == pytest.approx(0.6667, abs=1e-4)
    assert apply_push(s, PushEvent(-9.0, 0.0), 13.5).vy_world == pytest.approx(-0.6667, abs=1e-4)
    assert apply_push(s, PushEvent(0.0, 0.0), 13.5) == s
    left = PlantState(LEFT, 0.1, 0.0, 0.0)
    assert apply_push(left, PushEvent(9.0, 0.0), 13.5).vy == pytest.approx(-9.0 / 13.5)


def test_observe_canonical_frame():
    cfg = PlantConfig.ideal()
    right = Plant(cfg, initial_side=RIGHT)
    right.reset(0.22)
    right.state.y, right.state.vy = 0.05, 0.1
    left = Plant(cfg, initial_side=LEFT)
    left.reset(0.22)
    left.state.y, left.state.vy = 0.05, 0.1
    assert right.state.y_world == -left.state.y_world
    a, b = right.observe(), left.observe()
    assert (a.y, a.vy) == (b.y, b.vy) == (0.05, 0.1)


def test_latency_two_ticks():
    cfg = PlantConfig.ideal(latency=0.02, cop_limit=0.0)
    assert cfg.latency_ticks == 2
    p = started(cfg)
    truth, seen = [], []
    for _ in range(60):
        truth.append((p.state.y, p.state.vy))
        o = p.observe()
        seen.append((o.y, o.vy))
        p.tick(StepCommand(max(0.3 - p.state.phase_time, 0.0), 0.22))
    for k in range(2, 60):
        assert seen[k] == truth[k - 2]


def test_sensor_noise_statistics():
    cfg = PlantConfig.ideal(sensor_noise_std=(0.002, 0.01))
    p = Plant(cfg, rng=np.random.default_rng(1))
    p.reset(0.22)
    obs = np.array([[o.y - 0.11, o.vy] for o in (p.observe() for _ in range(20000))])
    assert obs.std(axis=0) == pytest.approx([0.002, 0.01], rel=0.05)
    assert np.abs(obs.mean(axis=0)).max() < 3e-4


def test_ticks_match_single_propagate():
    cfg = PlantConfig.ideal(control_rate=1e5, cop_limit=0.0, t_min=1e-6)
    p = started(cfg, 0.1, -0.2)
    for _ in range(10000):
        p.tick(FAR)
    ref = propagate(ComState(0.1, -0.2), 3.5, 10000 * cfg.dt)
    assert p.state.y == pytest.approx(ref.y, abs=1e-6)
    assert p.state.vy == pytest.approx(ref.vy, abs=1e-6)


def test_exchange_is_exact_within_tick():
    cfg = PlantConfig.ideal(cop_limit=0.0)
    p = started(cfg, 0.1, -0.3)
    p.state.phase_time = 0.2
    events = p.tick(StepCommand(0.004, 0.2))
    ex = [e for e in events if isinstance(e, SupportExchange)][0]
    pre = propagate(ComState(0.1, -0.3), 3.5, 0.004)
    assert (ex.y, ex.vy) == pytest.approx((pre.y, pre.vy), abs=1e-12)
    post = propagate(ComState(0.2 - pre.y, -pre.vy), 3.5, 0.006)
    assert (p.state.y, p.state.vy) == pytest.approx((post.y, post.vy), abs=1e-12)
    assert ex.time == pytest.approx(0.004)


def test_placement_clamp():
    cfg = PlantConfig.ideal()
    p = started(cfg)
    p.state.phase_time = 0.3
    ex = [e for e in p.tick(StepCommand(0.0, 0.9)) if isinstance(e, SupportExchange)][0]
    assert ex.commanded_f == 0.9 and ex.executed_f == cfg.f_max and ex.clamped
    p.state.phase_time = 0.3
    ex = [e for e in p.tick(StepCommand(0.0, 0.0)) if isinstance(e, SupportExchange)][0]
    assert ex.executed_f == cfg.f_min and ex.clamped


def test_actuation_mismatch():
    cfg = PlantConfig.ideal(actuation_bias=0.01, actuation_scale=0.95)
    p = started(cfg)
    p.state.phase_time = 0.3
    ex = [e for e in p.tick(StepCommand(0.0, 0.2)) if isinstance(e, SupportExchange)][0]
    assert ex.executed_f == pytest.approx(0.95 * 0.2 + 0.01)


def test_timing_clamp():
    cfg = PlantConfig.ideal()
    p = started(cfg)
    p.state.phase_time = 0.02
    events = p.tick(StepCommand(0.0, 0.2))
    assert not any(isinstance(e, SupportExchange) for e in events)
    ex = []
    while not ex:
        ex = [e for e in p.tick(StepCommand(0.0, 0.2)) if isinstance(e, SupportExchange)]
    assert ex[0].timing_clamped and ex[0].duration == pytest.approx(cfg.t_min)


def test_ideal_gait_apex_is_alpha():
    p = Plant(PlantConfig.ideal())
    p.reset(0.22)
    p.state.y, p.state.vy, p.state.standing = GAIT.delta, -0.2, False
    events = walk(p, GAIT, 10.0)
    apexes = [e.apex_y for e in events if isinstance(e, ApexReached)]
    assert len(apexes) > 15
    assert np.max(np.abs(np.array(apexes[2:]) - GAIT.alpha)) < 1e-6


def test_soak_no_falls():
    p = Plant(PlantConfig.ideal())
    p.reset(0.22)
    p.state.y, p.state.vy, p.state.standing = GAIT.delta, -0.2, False
    events = walk(p, GAIT, 60.0)
    assert not any(isinstance(e, Fell) for e in events)


def test_threshold_is_strict():
    cfg = PlantConfig.ideal()
    s = PlantState(RIGHT, cfg.y_fall, 10.0, 0.0)
    assert not is_fallen(s, cfg.y_fall, cfg.c_plant)
    s.y = -math.nextafter(cfg.y_fall, 1.0)
    s.vy = -10.0
    assert is_fallen(s, cfg.y_fall, cfg.c_plant)


def test_diverging_orbit_falls_in_bounded_time():
    cfg = PlantConfig.ideal()
    p = started(cfg, 0.1, 0.5)  # E > 0, heading out of the gait
    excess = orbital_energy(ComState(0.1, 0.5), cfg.c_plant)
    bound = math.log(2 * cfg.y_fall * cfg.c_plant / math.sqrt(2 * excess)) / cfg.c_plant
    for k in range(int(2 * bound / cfg.dt) + 50):
        events = p.tick(StepCommand(0.0, cfg.f_max))
        if any(isinstance(e, Fell) for e in events):
            break
    else:
        pytest.fail("no fall declared")


def test_swing_side_runaway_is_not_a_fall_yet():
    cfg = PlantConfig.ideal()
    s = PlantState(RIGHT, 0.36, 0.5, 0.0)  # outward, but E < 0
    assert not is_fallen(s, cfg.y_fall, cfg.c_plant)


@settings(max_examples=25, deadline=None)
@given(st.floats(-9.0, 9.0), st.integers(0, 44))
def test_every_fall_has_positive_energy(impulse, tick):
    cfg = PlantConfig(actuation_bias=0.0, actuation_scale=1.0, sensor_noise_std=(0, 0), latency=0.0)
    p = Plant(cfg)
    p.reset(0.22)
    p.state.y, p.state.vy, p.state.standing = GAIT.delta, -0.2, False
    for k in range(300):
        if k == 100 + tick:
            p.apply_push(PushEvent(impulse, p.state.sim_time))
        s = p.state
        cmd = StepCommand(max(0.45 - s.phase_time, 0.0), 0.22)
        p.tick(cmd)
        if is_fallen(p.state, cfg.y_fall, cfg.c_plant):
            assert orbital_energy(p.state.com(), cfg.c_plant) > 0
            break


def test_mirror_symmetry():
    cfg = PlantConfig(actuation_noise_std=0.001)

    def trace(side, sign):
        p = Plant(cfg, rng=np.random.default_rng(7), initial_side=side)
        p.reset(0.22)
        out = []
        for k in range(400):
            if k in (120, 250):
                p.apply_push(PushEvent(sign * 4.0, p.state.sim_time))
            s = p.state
            o = p.observe()
            cmd = full_controller(o, GAIT, cfg.t_min, s.phase_time) if k else StepCommand(0.0, 0.25)
            p.tick(cmd)
            p.detect_fall_and_reset(0.22)
            out.append((p.state.y_world, p.state.vy_world))
        return np.array(out)

    a, b = trace(RIGHT, 1.0), trace(LEFT, -1.0)
    assert np.array_equal(a, -b)


def test_config_validation_names_field():
    with pytest.raises(ValueError, match="plant.c_plant"):
        PlantConfig(c_plant=-1.0).validate()
    with pytest.raises(ValueError, match="plant.f_min"):
        PlantConfig(f_min=0.5).validate()
    with pytest.raises(ValueError, match="plant.y_fall"):
        PlantConfig().validate(alpha=0.2)
    with pytest.raises(ValueError, match="plant.sensor_noise_std"):
        PlantConfig(sensor_noise_std=(0.1, -1.0)).validate()
    assert PlantConfig.ideal().c_plant == 3.5
