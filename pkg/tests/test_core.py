import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from safeguard.core import ClassKappa, ControlAffineSystem, eval_class_kappa, rk4_sequence


def test_linear_class_kappa():
    a = ClassKappa.linear(3.0)
    assert a(2.0) == 6.0 and a(-1.0) == -3.0 and eval_class_kappa(a, 0.0) == 0.0


@pytest.mark.parametrize("gamma", [0.0, -1.0])
def test_linear_rejects_nonpositive(gamma):
    with pytest.raises(ValueError):
        ClassKappa.linear(gamma)


def test_custom_class_kappa_validated():
    cubic = ClassKappa.custom(lambda h: h**3 + h)
    assert cubic(2.0) == 10.0
    with pytest.raises(ValueError):
        ClassKappa.custom(lambda h: h + 1.0)
    with pytest.raises(ValueError):
        ClassKappa.custom(lambda h: h * h)
    with pytest.raises(ValueError):
        ClassKappa(gamma=1.0, func=math.tanh)


@given(st.floats(-10, 10), st.floats(-10, 10))
def test_class_kappa_strictly_increasing(a, b):
    k = ClassKappa.custom(math.atan)
    if a < b:
        assert k(a) < k(b)


def _linear_sys(A, B):
    A, B = np.asarray(A, float), np.asarray(B, float)
    return ControlAffineSystem(A.shape[0], B.shape[1], lambda x: A @ x, lambda x: B)


def test_shape_checks():
    bad = ControlAffineSystem(2, 1, lambda x: np.zeros(3), lambda x: np.zeros((2, 1)))
    with pytest.raises(ValueError):
        bad.f(np.zeros(2))
    bad_g = ControlAffineSystem(2, 1, lambda x: np.zeros(2), lambda x: np.zeros((2, 2)))
    with pytest.raises(ValueError):
        bad_g.g(np.zeros(2))


def test_rk4_exponential_decay():
    sys = _linear_sys([[-1.0]], [[0.0]])
    x = rk4_sequence(sys, [1.0], np.zeros((1000, 1)), 1e-3)
    assert abs(x[0] - math.exp(-1)) < 1e-12


def test_rk4_fourth_order():
    sys = _linear_sys([[0.0, 1.0], [-4.0, -0.3]], [[0.0], [1.0]])
    exact = rk4_sequence(sys, [1.0, 0.0], np.zeros((4096, 1)), 1.0 / 4096)
    errs = [np.linalg.norm(rk4_sequence(sys, [1.0, 0.0], np.zeros((n, 1)), 1.0 / n) - exact) for n in (16, 32)]
    assert 12 <= errs[0] / errs[1] <= 20
