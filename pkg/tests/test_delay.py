import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from safeguard.cbf import BarrierFunction, cbf_filter
from safeguard.core import ClassKappa, ControlAffineSystem, InsufficientHistory, NonMonotoneTimestamp
from safeguard.delay import (
    EnvironmentPredictor,
    InputHistoryBuffer,
    StateLipschitz,
    check_initial_history,
    delayed_cbf_filter,
    predict_environment,
    predict_state,
    predict_state_linear,
    record_input,
)


def linear(A, B):
    A, B = np.atleast_2d(np.asarray(A, float)), np.asarray(B, float).reshape(len(A), -1)
    return ControlAffineSystem(A.shape[0], B.shape[1], lambda x: A @ x, lambda x: B)


def filled(tau, dt, values, t_end=0.0, m=1):
    buf = InputHistoryBuffer(tau, m)
    n = int(round(tau / dt))
    for j in range(n):
        t = t_end - (n - j) * dt
        buf.record(t, values(t) if callable(values) else values)
    return buf


def test_buffer_single_record():
    buf = record_input(InputHistoryBuffer(0.1), 0.0, [1.0])
    assert len(buf) == 1 and buf.value_at(5.0)[0] == 1.0


def test_buffer_rejects_non_monotone():
    buf = InputHistoryBuffer(0.1).record(0.0, [0.0])
    with pytest.raises(NonMonotoneTimestamp):
        buf.record(0.0, [1.0])
    with pytest.raises(NonMonotoneTimestamp):
        buf.record(-1.0, [1.0])


def test_buffer_pruning_bound():
    tau, dt = 0.1, 1e-3
    buf = InputHistoryBuffer(tau)
    for k in range(1000):
        buf.record(k * dt, [k])
        assert len(buf) <= math.ceil(tau / dt) + 2
    # the window [t - tau, t) stays covered
    t = 1000 * dt
    assert buf.covers(t - tau)


def test_buffer_zoh_lookup():
    dt = 1e-3
    buf = InputHistoryBuffer(1.0)
    for k in range(500):
        buf.record(k * dt, [float(k)])
    for q in np.random.default_rng(0).uniform(0, 0.5, 200):
        assert buf.value_at(q)[0] == float(np.floor(q / dt + 1e-12))
    with pytest.raises(InsufficientHistory):
        buf.value_at(-1e-3)
    with pytest.raises(InsufficientHistory):
        buf.window(-0.5, 0.5, 10)


def test_buffer_shape_check():
    with pytest.raises(ValueError):
        InputHistoryBuffer(0.1, 2).record(0.0, [1.0])


def test_predict_stationary():
    sys = linear([[0.0]], [[1.0]])
    buf = filled(0.5, 1e-2, [0.0])
    assert predict_state(sys, [3.0], buf, 0.5, 50, t=0.0)[0] == 3.0


def test_predict_scalar_closed_form():
    a, b, c, tau, x = -0.7, 1.3, 0.4, 0.5, 2.0
    buf = filled(tau, 1e-3, [c])
    exact = math.exp(a * tau) * x + c * b / a * (math.exp(a * tau) - 1)
    assert predict_state(linear([[a]], [[b]]), [x], buf, tau, 100, t=0.0)[0] == pytest.approx(exact, abs=1e-9)
    assert predict_state_linear([[a]], [[b]], [x], buf, tau, 10, t=0.0)[0] == pytest.approx(exact, abs=1e-12)


def test_linear_predictor_zero_dynamics():
    buf = filled(0.3, 1e-2, [2.0, -1.0], m=2)
    B = np.array([[1.0, 0.0], [0.5, 1.0]])
    xp = predict_state_linear(np.zeros((2, 2)), B, [1.0, 1.0], buf, 0.3, 30, t=0.0)
    assert np.allclose(xp, [1.0, 1.0] + B @ [2.0, -1.0] * 0.3, atol=1e-12)
    assert np.array_equal(predict_state_linear(np.eye(2), B, [1.0, 1.0], buf, 0.0, 1, t=0.0), [1.0, 1.0])


def random_stable(rng, n=3, m=1):
    A = rng.normal(size=(n, n))
    A -= (np.max(np.linalg.eigvals(A).real) + 0.5) * np.eye(n)
    return A, rng.normal(size=(n, m))


def test_linear_and_rk4_predictors_agree():
    rng = np.random.default_rng(1)
    tau, dt = 0.5, 1e-3
    for _ in range(10):
        A, B = random_stable(rng)
        buf = filled(tau, dt, lambda t: [math.sin(7 * t) + 0.3])
        x = rng.normal(size=3)
        steps = int(round(tau / dt))
        a = predict_state(linear(A, B), x, buf, tau, steps, t=0.0)
        b = predict_state_linear(A, B, x, buf, tau, steps, t=0.0)
        assert np.max(np.abs(a - b)) <= 1e-8


def test_rk4_predictor_order():
    A = np.array([[0.0, 1.0], [-9.0, -0.4]])
    B = np.array([[0.0], [1.0]])
    buf = filled(1.0, 1.0, [1.0])  # one constant sample covering the whole window
    x0 = np.array([1.0, 0.0])
    exact = predict_state_linear(A, B, x0, buf, 1.0, 1, t=0.0)
    err = [np.linalg.norm(predict_state(linear(A, B), x0, buf, 1.0, n, t=0.0) - exact) for n in (20, 40)]
    assert 12 <= err[0] / err[1] <= 20


def test_semiflow_composition():
    rng = np.random.default_rng(2)
    A, B = random_stable(rng, 2)
    sys = linear(A, B)
    tau, dt = 0.4, 1e-3
    buf = filled(tau, dt, lambda t: [math.cos(5 * t)])
    x = np.array([0.3, -1.0])
    whole = predict_state(sys, x, buf, tau, 400, t=0.0)
    half = predict_state(sys, x, buf, tau / 2, 200, t=-tau / 2)
    two = predict_state(sys, half, buf, tau / 2, 200, t=0.0)
    assert np.max(np.abs(whole - two)) <= 1e-9


def test_environment_prediction():
    cv = EnvironmentPredictor("constant_velocity")
    e, ed = predict_environment(cv, [60.0], [15.0], 1.0)
    assert (e[0], ed[0]) == (75.0, 15.0)
    e, ed = predict_environment(cv, [1.0], [-0.5], 0.1)
    assert (e[0], ed[0]) == pytest.approx((0.95, -0.5))
    e, ed = predict_environment(EnvironmentPredictor("constant_state"), [1.0], [3.0], 2.0)
    assert (e[0], ed[0]) == (1.0, 0.0)
    custom = EnvironmentPredictor("custom", gamma=lambda th, e: e * 2, gamma_dot=lambda th, e, ed: ed + th)
    e, ed, edd = predict_environment(custom, [1.0], [1.0], 0.5, with_accel=True)
    assert (e[0], ed[0], edd[0]) == (2.0, 1.5, 0.0)
    with pytest.raises(ValueError):
        EnvironmentPredictor("bogus")
    with pytest.raises(ValueError):
        EnvironmentPredictor("custom")


@given(st.floats(-100, 100), st.floats(-100, 100))
def test_environment_identity_at_zero_horizon(e, ed):
    for model in ("constant_velocity", "constant_state"):
        ep, edp = predict_environment(EnvironmentPredictor(model), [e], [ed], 0.0)
        assert ep[0] == e
    ep, edp = predict_environment(EnvironmentPredictor("constant_velocity"), [e], [ed], 0.0)
    assert edp[0] == ed


# scalar toy: xdot = u(t - tau), keep x <= 1
TOY = linear([[0.0]], [[1.0]])
TOY_H = BarrierFunction(lambda x: 1.0 - x[0], lambda x: np.array([-1.0]))


def test_delayed_filter_is_prediction_then_filter():
    tau, dt = 0.2, 1e-3
    buf = filled(tau, dt, lambda t: [0.5 + t])
    alpha = ClassKappa.linear(2.0)
    out = delayed_cbf_filter(TOY_H, alpha, TOY, [0.4], buf, tau, 200, [3.0], t=0.0)
    xp = 0.4 + sum(0.5 - tau + j * dt for j in range(200)) * dt
    assert out.x_eval[0] == pytest.approx(xp, abs=1e-12)
    ref = cbf_filter(TOY_H, alpha, TOY, [xp], [3.0])
    assert out.u_applied[0] == pytest.approx(ref.u_applied[0], abs=1e-12)
    # with no delay the prediction is the current state
    out0 = delayed_cbf_filter(TOY_H, alpha, TOY, [0.4], buf, 0.0, 1, [3.0], t=0.0)
    assert out0.u_applied[0] == cbf_filter(TOY_H, alpha, TOY, [0.4], [3.0]).u_applied[0]


def test_delayed_filter_state_margin():
    buf = filled(0.1, 1e-2, [0.0])
    alpha = ClassKappa.linear(1.0)
    lip = StateLipschitz(L_alphah=1.0)
    out = delayed_cbf_filter(TOY_H, alpha, TOY, [0.5], buf, 0.1, 10, [5.0], t=0.0, eps_x=0.1, state_lipschitz=lip)
    assert out.u_applied[0] == pytest.approx(0.5 - 0.1)


def test_initial_history_checks():
    buf = filled(0.5, 1e-2, [0.0])
    ok = check_initial_history(TOY, TOY_H, [0.0], buf, 0.5, 50)
    assert ok.ok and ok.first_violation is None
    bad = check_initial_history(TOY, TOY_H, [1.0], filled(0.5, 1e-2, [1.0]), 0.5, 50)
    assert not bad.ok and bad.first_violation == pytest.approx(0.01)
    assert check_initial_history(TOY, TOY_H, [2.0], buf, 0.5, 50).first_violation == 0.0


def test_acc_initial_history_safe():
    from safeguard import acc
    from conftest import acc_run

    log, _ = acc_run("delay_predictor")
    assert log.meta["initial_history_safe"] is True
