import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tendonleg.controller import (CLOSED, OPEN, ControllerState, FeedbackGains, control_tick,
                                  delay_ticks_for, delayed_observe, experience_samples,
                                  feedback_adjustment, run_episode)
from tendonleg.inverse_map import N_WEIGHTS, InverseMap
from tendonleg.trajectories import KinematicTrajectory, generate_point_to_point, random_cyclical

DT = 0.01


def _velocity_blind_map(seed=0):
    """Random map whose velocity inputs carry zero weight."""
    w = np.random.default_rng(seed).normal(0, 0.5, N_WEIGHTS)
    W1 = w[:90].reshape(15, 6)
    W1[:, 2:4] = 0.0
    w[:90] = W1.ravel()
    return InverseMap.zeros(np.full(6, -2.0), np.full(6, 2.0)).with_weights(w)


# ---------------------------------------------------------------------------
# feedback law


def test_feedback_first_tick_by_hand():
    dq_a, st_ = feedback_adjustment([0.1, -0.2], ControllerState(), FeedbackGains(), DT)
    np.testing.assert_allclose(st_.integral, [0.001, -0.002], rtol=1e-15)
    np.testing.assert_allclose(dq_a, [4 * 0.1 + 0.001, -4 * 0.2 - 0.002], rtol=1e-15)


def test_feedback_integral_of_constant_error():
    state = ControllerState()
    for _ in range(100):
        _, state = feedback_adjustment([0.1, 0.1], state, FeedbackGains(), DT)
    np.testing.assert_allclose(state.integral, 0.1, atol=1e-9)


@given(st.lists(st.tuples(st.floats(-10, 10), st.floats(-10, 10)), min_size=1, max_size=300),
       st.floats(0.01, 2.0))
def test_integral_never_leaves_clamp(errors, clamp):
    gains = FeedbackGains(clamp=clamp)
    state = ControllerState()
    for e in errors:
        dq_a, state = feedback_adjustment(e, state, gains, DT)
        assert np.all(np.abs(state.integral) <= clamp)
        np.testing.assert_allclose(dq_a, 4 * np.array(e) + 1 * state.integral)


def test_gains_validation_and_scaling():
    with pytest.raises(ValueError):
        FeedbackGains(kp=-1)
    with pytest.raises(ValueError):
        FeedbackGains(clamp=0)
    g = FeedbackGains().scaled(0.5)
    assert g.kp == (2.0, 2.0) and g.ki == (0.5, 0.5) and g.clamp == (0.5, 0.5)
    np.testing.assert_array_equal(FeedbackGains().K_P, np.diag([4.0, 4.0]))


def test_control_tick_step_oracle():
    net = _velocity_blind_map()
    w = net.weights.copy()
    W1 = w[:90].reshape(15, 6)
    W1[:, 2:4] = 0.3
    w[:90] = W1.ravel()
    net = net.with_weights(w)
    q_d, dq_d, ddq_d = np.array([0.2, -0.4]), np.array([0.5, 0.0]), np.array([1.0, -1.0])
    obs = q_d - 0.1
    a, state, ck = control_tick(q_d, dq_d, ddq_d, obs, ControllerState(), FeedbackGains(), net, DT)
    expected_dq = dq_d + 4 * 0.1 + 0.1 * DT
    np.testing.assert_allclose(ck.dq, expected_dq, rtol=1e-14)
    np.testing.assert_array_equal(ck.q, q_d)
    np.testing.assert_array_equal(ck.ddq, ddq_d)
    np.testing.assert_allclose(a, net.predict(np.r_[q_d, expected_dq, ddq_d]), rtol=1e-15)
    assert state.tick == 1


def test_control_tick_open_ignores_observation():
    net = _velocity_blind_map()
    args = (np.zeros(2), np.ones(2), np.zeros(2))
    a1, _, _ = control_tick(*args, np.array([5.0, 5.0]), ControllerState(mode=OPEN),
                            FeedbackGains(), net, DT)
    a2, _, _ = control_tick(*args, np.array([-5.0, 0.0]), ControllerState(mode=OPEN),
                            FeedbackGains(), net, DT)
    np.testing.assert_array_equal(a1, a2)


# ---------------------------------------------------------------------------
# delay line


def test_delay_line_returns_oldest_until_full_then_lags():
    state = ControllerState()
    out = []
    for k in range(30):
        o, state = delayed_observe([k, -k], state, 10)
        out.append(o[0])
    assert out[:11] == [0.0] * 11
    assert out[11:] == [float(k - 10) for k in range(11, 30)]


def test_delay_line_cross_correlation_lag():
    sig = np.random.default_rng(0).normal(size=500)
    state = ControllerState()
    seen = np.array([delayed_observe([s, 0], state, 10)[0][0] for s in sig])
    lags = np.arange(0, 30)
    corr = [np.corrcoef(sig[:len(sig) - L], seen[L:])[0, 1] for L in lags]
    assert lags[int(np.argmax(corr))] == 10


def test_delay_ticks_for():
    assert delay_ticks_for(0.0) == 0
    assert delay_ticks_for(0.030) == 3
    assert delay_ticks_for(0.1) == 10
    assert delay_ticks_for(0.015) == 2      # rounds half up
    assert delay_ticks_for(0.004) == 0
    with pytest.raises(ValueError):
        delay_ticks_for(-0.01)


# ---------------------------------------------------------------------------
# episodes


def test_empty_trajectory_rejected(params):
    traj = KinematicTrajectory(DT, np.zeros((0, 2)), np.zeros((0, 2)), np.zeros((0, 2)))
    with pytest.raises(ValueError):
        run_episode(traj, params, InverseMap.zeros())


def test_velocity_blind_map_makes_loops_identical(params):
    traj = random_cyclical(3, n_cycles=2)
    net = _velocity_blind_map()
    a = run_episode(traj, params, net, mode=OPEN)
    b = run_episode(traj, params, net, mode=CLOSED)
    np.testing.assert_array_equal(a.q_p, b.q_p)
    np.testing.assert_array_equal(a.activations, b.activations)


def test_zero_gains_reduce_to_open_loop(params, quick_map):
    traj = random_cyclical(4, n_cycles=2)
    a = run_episode(traj, params, quick_map, mode=OPEN)
    b = run_episode(traj, params, quick_map, FeedbackGains(kp=0, ki=0), mode=CLOSED,
                    delay_ticks=5)
    np.testing.assert_array_equal(a.q_p, b.q_p)
    assert a.rmse == b.rmse


def test_zero_delay_equals_no_delay_line(params, quick_map):
    traj = random_cyclical(5, n_cycles=2)
    a = run_episode(traj, params, quick_map, delay_ticks=0, use_delay_line=True)
    b = run_episode(traj, params, quick_map, delay_ticks=0, use_delay_line=False)
    np.testing.assert_array_equal(a.q_p, b.q_p)
    np.testing.assert_array_equal(a.dq_c, b.dq_c)


@pytest.mark.parametrize("delay", [0, 3])
def test_recorded_control_velocity_follows_feedback_law(params, quick_map, delay):
    traj = random_cyclical(6, n_cycles=2)
    rec = run_episode(traj, params, quick_map, delay_ticks=delay)
    k = np.arange(len(rec))
    observed = rec.q_p[np.maximum(k - delay, 0)]
    q_e = rec.q_d - observed
    integral = np.zeros(2)
    for i in range(len(rec)):
        integral = np.clip(integral + q_e[i] * DT, -0.5, 0.5)
        np.testing.assert_allclose(rec.dq_c[i], rec.dq_d[i] + 4 * q_e[i] + integral,
                                   rtol=1e-12, atol=1e-12)
    np.testing.assert_array_equal(rec.q_c, rec.q_d)
    np.testing.assert_array_equal(rec.ddq_c, rec.ddq_d)


def test_activations_in_unit_interval(params, quick_map):
    rec = run_episode(random_cyclical(7, n_cycles=2), params, quick_map, mode=OPEN)
    assert rec.activations.min() >= 0 and rec.activations.max() <= 1


def test_episode_deterministic(params, quick_map):
    traj = generate_point_to_point(n_points=3, hold_duration=0.5, seed=2)
    a = run_episode(traj, params, quick_map)
    b = run_episode(traj, params, quick_map)
    np.testing.assert_array_equal(a.q_p, b.q_p)


def test_closed_beats_open_with_default_map(params, default_map):
    traj = random_cyclical(0)
    open_ = run_episode(traj, params, default_map, mode=OPEN)
    closed = run_episode(traj, params, default_map, mode=CLOSED)
    assert closed.rmse < open_.rmse


def test_experience_samples_source_and_length(params, quick_map):
    rec = run_episode(random_cyclical(1, n_cycles=1), params, quick_map)
    s = experience_samples(rec, 4)
    assert len(s) == len(rec) and set(s.sources) == {"experience:4"}
    np.testing.assert_array_equal(s.inputs[:, :2], rec.q_p)


def test_run_record_write(tmp_path, params, quick_map):
    rec = run_episode(random_cyclical(2, n_cycles=1), params, quick_map, delay_ticks=3)
    rec.write(tmp_path, "r", {"note": "x"})
    manifest = json.loads((tmp_path / "r.json").read_text())
    assert manifest["delay_ms"] == pytest.approx(30.0)
    assert manifest["rmse"] == pytest.approx(rec.rmse)
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert len(lines) == len(rec) + 1
    assert lines[0].startswith("time,q_d1,q_d2,q_p1,q_p2")
