"""Closed-form minimal-deviation programs with a single scalar constraint."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DegenerateConstraint, InfeasibleRobustConstraint

DEGENERACY_TOL = 1e-12


@dataclass(frozen=True)
class HalfSpaceQP:
    """min ||u - u_desired||^2  s.t.  phi0 + phi1 . (u - u_desired) >= 0.

    ``phi0`` is the constraint value at ``u_desired``.
    """

    u_desired: np.ndarray
    phi0: float
    phi1: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "u_desired", np.atleast_1d(np.asarray(self.u_desired, dtype=float)))
        object.__setattr__(self, "phi1", np.atleast_1d(np.asarray(self.phi1, dtype=float)))
        if self.u_desired.shape != self.phi1.shape:
            raise ValueError("u_desired and phi1 must have the same shape")

    def slack(self, u) -> float:
        return float(self.phi0 + self.phi1 @ (np.atleast_1d(u) - self.u_desired))


@dataclass(frozen=True)
class RobustScalarQP:
    """min (u - u_desired)^2  s.t.  phi0 + phi1 * u - c_u * |u| >= 0.

    Unlike :class:`HalfSpaceQP`, ``phi0`` here is the constant term at ``u = 0``.
    """

    u_desired: float
    phi0: float
    phi1: float
    c_u: float

    def __post_init__(self):
        if self.c_u < 0:
            raise ValueError(f"c_u must be nonnegative, got {self.c_u}")

    def slack(self, u: float) -> float:
        return self.phi0 + self.phi1 * u - self.c_u * abs(u)


def solve_half_space_qp(problem: HalfSpaceQP) -> np.ndarray:
    """Project ``u_desired`` onto the constraint half-space.

    u* = u_d + max(-phi0, 0) * phi1^T / (phi1 phi1^T)
    """
    u_d, phi0, phi1 = problem.u_desired, problem.phi0, problem.phi1
    sq = float(phi1 @ phi1)
    if math.sqrt(sq) <= DEGENERACY_TOL:
        if phi0 < 0:
            raise DegenerateConstraint(
                f"constraint gradient vanishes (|phi1|={math.sqrt(sq):.3e}) with phi0={phi0:.6g} < 0"
            )
        return u_d.copy()
    if phi0 >= 0:
        return u_d.copy()
    return u_d + (-phi0 / sq) * phi1


def _piece(slope: float, const: float, lo: float, hi: float):
    """Feasible part of {u in [lo, hi] : const + slope * u >= 0}, or None."""
    if slope > 0:
        lo = max(lo, -const / slope)
    elif slope < 0:
        hi = min(hi, -const / slope)
    elif const < 0:
        return None
    if lo > hi:
        return None
    return lo, hi


def solve_robust_scalar_qp(problem: RobustScalarQP) -> float:
    """Closest point to ``u_desired`` where phi0 + phi1*u - c_u*|u| >= 0.

    The constraint is linear with slope ``phi1 - c_u`` on u >= 0 and ``phi1 + c_u``
    on u <= 0. It is concave in u, so the feasible set is a single (possibly
    unbounded) interval and the projection onto it is unique.
    """
    u_d, phi0, phi1, c_u = float(problem.u_desired), problem.phi0, problem.phi1, problem.c_u
    if abs(phi1) <= c_u and phi0 < 0:
        raise InfeasibleRobustConstraint(
            f"|phi1|={abs(phi1):.6g} <= c_u={c_u:.6g} and phi0={phi0:.6g} < 0"
        )
    if problem.slack(u_d) >= 0:
        return u_d
    pieces = [
        p
        for p in (
            _piece(phi1 - c_u, phi0, 0.0, math.inf),
            _piece(phi1 + c_u, phi0, -math.inf, 0.0),
        )
        if p is not None
    ]
    if not pieces:
        raise InfeasibleRobustConstraint("robust constraint has an empty feasible set")
    lo = min(p[0] for p in pieces)
    hi = max(p[1] for p in pieces)
    return min(max(u_d, lo), hi)


def solve_margin_constraint(u_desired, drift_part: float, phi1, c_u: float) -> tuple[np.ndarray, bool]:
    """Solve min ||u - u_d||^2 s.t. drift_part + phi1 . u - c_u ||u|| >= 0.

    Dispatches to the half-space solver when ``c_u == 0`` and to the scalar
    robust solver otherwise. Returns the input and whether the constraint was
    active at ``u_desired``.
    """
    u_d = np.atleast_1d(np.asarray(u_desired, dtype=float))
    phi1 = np.atleast_1d(np.asarray(phi1, dtype=float))
    if c_u == 0:
        phi0 = drift_part + float(phi1 @ u_d)
        return solve_half_space_qp(HalfSpaceQP(u_d, phi0, phi1)), phi0 < 0
    if u_d.shape != (1,):
        raise ValueError("input-norm margin is only supported for scalar inputs")
    problem = RobustScalarQP(float(u_d[0]), drift_part, float(phi1[0]), c_u)
    u = solve_robust_scalar_qp(problem)
    return np.array([u]), problem.slack(float(u_d[0])) < 0
