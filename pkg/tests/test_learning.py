import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from capstep.learning import (
    GridApproximator,
    GridFormatError,
    GridSpec,
    OnlineLearner,
    StepTrace,
    end_of_step_update,
    load,
    query,
    save,
)
from capstep.lipm import ComState, apex_distance, foot_placement_for_apex
from oracles import scalar_learning_loop

ALPHA = 0.083


def small_grid(**kw):
    return GridApproximator((0.0, 0.2), (-0.5, 0.5), 5, 5, **kw)


def test_fresh_grid_is_zero():
    g = GridApproximator()
    assert query(g, ComState(0.1, 0.3)) == 0.0
    assert not g.values.any() and not g.visits.any()


def test_query_at_node_and_midpoint():
    g = small_grid()
    g.values[:] = np.arange(25.0).reshape(5, 5)
    assert query(g, g.node(2, 3)) == g.values[2, 3]
    mid = ComState(0.075, -0.125)  # between nodes (1, 1) and (2, 2)
    assert query(g, mid) == pytest.approx(g.values[1:3, 1:3].mean())


def test_query_clamps_outside():
    g = small_grid()
    g.values[:] = np.arange(25.0).reshape(5, 5)
    assert query(g, ComState(5.0, -5.0)) == g.values[4, 0]


@settings(max_examples=200, deadline=None)
@given(st.floats(-0.05, 0.25), st.floats(-0.6, 0.6), st.floats(-0.05, 0.05))
def test_scatter_conserves_amount(y, vy, amount):
    g = small_grid()
    g.scatter(ComState(y, vy), amount)
    assert g.values.sum() == pytest.approx(amount, abs=1e-15)
    assert g.visits.sum() == 1


def test_update_examples():
    g = small_grid()
    node = g.node(2, 2)
    assert end_of_step_update(g, StepTrace([node], ALPHA), ALPHA)
    assert not g.values.any()
    end_of_step_update(g, StepTrace([node], ALPHA + 0.05), ALPHA)
    assert g.values[2, 2] == pytest.approx(0.01)
    assert g.values.sum() == pytest.approx(0.01)
    before = g.values.copy()
    assert not end_of_step_update(g, StepTrace([node], None), ALPHA)
    assert np.array_equal(g.values, before)


def test_each_state_contributes_once():
    g = small_grid()
    node = g.node(1, 1)
    end_of_step_update(g, StepTrace([node, node, node], ALPHA + 0.01), ALPHA)
    assert g.values[1, 1] == pytest.approx(3 * 0.2 * 0.01)
    assert g.visits[1, 1] == 3


def run_learner(bias, steps, eta=0.2, geometry=False):
    """One state on a grid node decides every step; the plant shifts the foot by ``bias``."""
    g = small_grid(eta=eta)
    learner = OnlineLearner(g, ALPHA)
    s = g.node(3, 3)  # y = 0.15, vy = 0.25
    errors = []
    for _ in range(steps):
        learner.record(s)
        learner.on_exchange(True)
        if geometry:
            f = foot_placement_for_apex(s, 3.5, ALPHA) - query(g, s) + bias
            apex = apex_distance(ComState(f - s.y, -s.vy), 3.5)
        else:
            apex = ALPHA + bias - query(g, s)
        errors.append(apex - ALPHA)
        learner.on_apex(apex)
    return np.array(errors), g


def test_scalar_surrogate_matches_oracle():
    errors, g = run_learner(0.01, 60)
    oracle = scalar_learning_loop(0.01, 0.2, ALPHA, 60)
    assert np.allclose(errors, oracle, atol=1e-15)
    assert abs(errors[49]) < 0.05 * abs(errors[0])


def test_pendulum_loop_converges_to_bias():
    errors, g = run_learner(0.01, 50, geometry=True)
    assert abs(errors[-1]) < 0.05 * abs(errors[0])
    assert g.values[3, 3] == pytest.approx(0.01, abs=1e-5)


def test_learner_pairing_rules():
    g = small_grid()
    learner = OnlineLearner(g, ALPHA)
    s = g.node(2, 2)
    learner.on_apex(ALPHA + 0.1)  # no pending step
    assert learner.updates == 0
    learner.record(s)
    learner.on_exchange(False)  # saturated step
    learner.on_apex(ALPHA + 0.1)
    assert learner.skipped_saturated == 1 and not g.values.any()
    learner.record(s)
    learner.on_exchange(True)
    learner.on_push()
    learner.on_apex(ALPHA + 0.1)
    assert learner.skipped_disturbed == 1 and not g.values.any()
    learner.record(s)
    learner.on_exchange(True)
    learner.on_exchange(True)  # no apex in between
    assert learner.skipped_no_apex == 1


def test_frozen_learner_counts_but_keeps_values():
    g = small_grid()
    learner = OnlineLearner(g, ALPHA, frozen=True)
    learner.record(g.node(1, 1))
    learner.on_exchange(True)
    learner.on_apex(ALPHA + 0.05)
    assert learner.updates == 1 and not g.values.any()


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(-0.05, 0.25), st.floats(-0.8, 0.8)), min_size=1, max_size=20),
       st.floats(-0.05, 0.05), st.floats(-0.05, 0.05))
def test_update_is_linear_in_error(states, e1, e2):
    trace = [ComState(y, v) for y, v in states]
    a, b = GridApproximator(), GridApproximator()
    end_of_step_update(a, StepTrace(trace, ALPHA + e1), ALPHA)
    end_of_step_update(a, StepTrace(trace, ALPHA + e2), ALPHA)
    end_of_step_update(b, StepTrace(trace, ALPHA + e1 + e2), ALPHA)
    assert np.allclose(a.values, b.values, atol=1e-15)


@settings(max_examples=200, deadline=None)
@given(st.floats(-0.05, 0.25), st.floats(-0.8, 0.8))
def test_query_is_continuous(y, vy):
    g = GridApproximator()
    g.values[:] = np.random.default_rng(0).normal(0, 0.01, g.values.shape)
    near = query(g, ComState(y + 1e-9, vy - 1e-9))
    assert abs(query(g, ComState(y, vy)) - near) < 1e-6


def test_fresh_grid_roundtrip(tmp_path):
    save(GridApproximator(), tmp_path / "g.csv")
    g = load(tmp_path / "g.csv")
    assert g == GridApproximator() and not g.values.any()


def test_roundtrip(tmp_path):
    g = GridApproximator(eta=0.15)
    rng = np.random.default_rng(0)
    for _ in range(50):
        g.scatter(ComState(rng.uniform(-0.1, 0.3), rng.uniform(-1, 1)), rng.normal(0, 0.01))
    save(g, tmp_path / "g.csv")
    assert load(tmp_path / "g.csv") == g


def test_truncated_file_is_rejected(tmp_path):
    save(small_grid(), tmp_path / "g.csv")
    text = (tmp_path / "g.csv").read_text().splitlines()
    (tmp_path / "t.csv").write_text("\n".join(text[:-3]) + "\n")
    with pytest.raises(GridFormatError, match="truncated"):
        load(tmp_path / "t.csv")


@pytest.mark.parametrize("line,repl,msg", [
    (0, "# something else", "header"),
    (2, "0,1,0,1,5,5,zero", "field eta"),
    (4, "0,0,nan,0", "not finite"),
    (4, "9,0,0.0,0", "out of range"),
    (5, "0,0,0.0,0", "duplicate"),
])
def test_malformed_file_names_the_line(tmp_path, line, repl, msg):
    save(small_grid(), tmp_path / "g.csv")
    text = (tmp_path / "g.csv").read_text().splitlines()
    text[line] = repl
    (tmp_path / "b.csv").write_text("\n".join(text) + "\n")
    with pytest.raises(GridFormatError, match=msg) as info:
        load(tmp_path / "b.csv")
    assert f":{line + 1}:" in str(info.value)


def test_constructor_validation():
    with pytest.raises(ValueError):
        GridApproximator((0.2, 0.1))
    with pytest.raises(ValueError):
        GridApproximator(ny=1)
    with pytest.raises(ValueError):
        GridApproximator(eta=0.0)
    assert GridSpec().build() == GridApproximator()
