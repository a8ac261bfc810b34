import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from oracles import grid_nearest_feasible, kkt_half_space
from safeguard.core import DegenerateConstraint, InfeasibleRobustConstraint
from safeguard.qp import (
    HalfSpaceQP,
    RobustScalarQP,
    solve_half_space_qp,
    solve_margin_constraint,
    solve_robust_scalar_qp,
)

finite = st.floats(-50, 50, allow_nan=False)


def test_inactive_constraint_returns_desired():
    u = solve_half_space_qp(HalfSpaceQP([1.0, 2.0], 0.5, [1.0, -1.0]))
    assert np.array_equal(u, [1.0, 2.0])


def test_scalar_projection_hits_boundary():
    # phi0 = -2 at u_d = 0, slope 4: need u >= 0.5
    u = solve_half_space_qp(HalfSpaceQP([0.0], -2.0, [4.0]))
    assert u[0] == pytest.approx(0.5)


def test_degenerate_gradient():
    with pytest.raises(DegenerateConstraint):
        solve_half_space_qp(HalfSpaceQP([0.0, 0.0], -1.0, [0.0, 1e-13]))
    assert np.array_equal(solve_half_space_qp(HalfSpaceQP([3.0], 0.0, [0.0])), [3.0])


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        HalfSpaceQP([0.0, 1.0], 1.0, [1.0])


def test_robust_infeasible():
    with pytest.raises(InfeasibleRobustConstraint):
        solve_robust_scalar_qp(RobustScalarQP(0.0, -1.0, 1.0, 1.0))
    with pytest.raises(ValueError):
        RobustScalarQP(0.0, 1.0, 1.0, -0.1)


def test_robust_known_solution():
    # 1 + 2u - |u| >= 0 -> u >= -1/3 ; u_d = -5
    assert solve_robust_scalar_qp(RobustScalarQP(-5.0, 1.0, 2.0, 1.0)) == pytest.approx(-1 / 3)
    # -1 + 3u - |u| >= 0 -> u >= 0.5
    assert solve_robust_scalar_qp(RobustScalarQP(0.0, -1.0, 3.0, 1.0)) == pytest.approx(0.5)


def test_robust_with_zero_margin_matches_half_space():
    rng = np.random.default_rng(3)
    for _ in range(200):
        u_d, c0, a = rng.normal(size=3) * 3
        ur = solve_robust_scalar_qp(RobustScalarQP(u_d, c0, a, 0.0))
        # half-space form anchors the constant at u_d instead of at zero
        uh = solve_half_space_qp(HalfSpaceQP([u_d], c0 + a * u_d, [a]))
        assert ur == pytest.approx(uh[0], abs=1e-12)


def test_margin_constraint_dispatch():
    u, active = solve_margin_constraint([1.0], -3.0, [1.0], 0.0)
    assert active and u[0] == pytest.approx(3.0)
    u, active = solve_margin_constraint([1.0], -3.0, [2.0], 0.5)
    assert active and u[0] == pytest.approx(2.0)
    with pytest.raises(ValueError):
        solve_margin_constraint([1.0, 1.0], -3.0, [2.0, 0.0], 0.5)


def test_half_space_matches_kkt_oracle_random():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        m = int(rng.integers(1, 4))
        u_d = rng.normal(size=m) * 5
        phi0 = rng.normal() * 5
        phi1 = rng.normal(size=m) * 3
        u = solve_half_space_qp(HalfSpaceQP(u_d, phi0, phi1))
        assert np.max(np.abs(u - kkt_half_space(u_d, phi0, phi1))) <= 1e-8


def test_robust_matches_grid_oracle_random():
    rng = np.random.default_rng(1)
    done = 0
    while done < 300:
        u_d, c0, a = rng.normal(size=3) * np.array([5, 5, 3])
        c_u = abs(rng.normal())
        if abs(a) <= c_u and c0 < 0:
            continue
        ref = grid_nearest_feasible(u_d, c0, a, c_u)
        if math.isnan(ref):
            continue
        assert abs(solve_robust_scalar_qp(RobustScalarQP(u_d, c0, a, c_u)) - ref) <= 2e-4
        done += 1


@given(
    st.lists(finite, min_size=1, max_size=3),
    finite,
    st.lists(st.floats(-10, 10, allow_nan=False), min_size=3, max_size=3),
)
def test_half_space_solution_is_feasible_and_minimal(u_d, phi0, a):
    m = len(u_d)
    a = np.array(a[:m])
    assume(np.linalg.norm(a) > 1e-3)
    prob = HalfSpaceQP(u_d, phi0, a)
    u = solve_half_space_qp(prob)
    assert prob.slack(u) >= -1e-9 * (1 + abs(phi0))
    # any feasible perturbation along the boundary is no closer to u_d
    if phi0 < 0:
        t = np.random.default_rng(0).normal(size=m)
        t -= (t @ a) / (a @ a) * a
        assert np.linalg.norm(u + t - prob.u_desired) >= np.linalg.norm(u - prob.u_desired) - 1e-9
    # projecting twice changes nothing
    again = solve_half_space_qp(HalfSpaceQP(u, prob.slack(u), a))
    assert np.allclose(again, u, atol=1e-9)


@given(finite, finite, st.floats(-10, 10, allow_nan=False), st.floats(0, 5, allow_nan=False))
def test_robust_solution_properties(u_d, c0, a, c_u):
    prob = RobustScalarQP(u_d, c0, a, c_u)
    if abs(a) <= c_u and c0 < 0:
        with pytest.raises(InfeasibleRobustConstraint):
            solve_robust_scalar_qp(prob)
        return
    u = solve_robust_scalar_qp(prob)
    assert prob.slack(u) >= -1e-9 * (1 + abs(c0) + abs(a * u))
    if prob.slack(u_d) >= 0:
        assert u == u_d
    else:
        # boundary point, and the neighbor toward u_d is infeasible
        step = 1e-6 * (1 + abs(u))
        toward = u + math.copysign(step, u_d - u)
        assert prob.slack(toward) < 1e-9 * (1 + abs(c0) + abs(a * u))


@given(finite, finite, st.floats(-10, 10, allow_nan=False), st.floats(0, 2, allow_nan=False), st.floats(0, 2))
def test_robust_margin_is_monotone(u_d, c0, a, c_u, extra):
    assume(abs(a) > c_u + extra + 1e-6 or c0 >= 0)
    lo = solve_robust_scalar_qp(RobustScalarQP(u_d, c0, a, c_u))
    hi = solve_robust_scalar_qp(RobustScalarQP(u_d, c0, a, c_u + extra))
    # a larger margin never brings the solution closer to u_d
    assert abs(hi - u_d) >= abs(lo - u_d) - 1e-9 * (1 + abs(u_d))
