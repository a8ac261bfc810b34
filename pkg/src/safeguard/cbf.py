"""Delay-free CBF safety filters for static safe sets {x : h(x) >= 0}."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import ClassKappa, ControlAffineSystem, FilterOutcome
from .qp import HalfSpaceQP, solve_half_space_qp


@dataclass(frozen=True)
class BarrierFunction:
    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]

    def __call__(self, x) -> float:
        return float(self.value(np.asarray(x, dtype=float)))

    def grad(self, x) -> np.ndarray:
        return np.asarray(self.gradient(np.asarray(x, dtype=float)), dtype=float).reshape(-1)


def barrier_rate(h: BarrierFunction, sys: ControlAffineSystem, x, u) -> float:
    """hdot(x, u) = grad h(x) (f(x) + g(x) u)."""
    return float(h.grad(x) @ sys.rhs(x, u))


def cbf_filter(h: BarrierFunction, alpha: ClassKappa, sys: ControlAffineSystem, x, u_desired) -> FilterOutcome:
    """Minimally modify ``u_desired`` so that hdot(x, u) >= -alpha(h(x)).

    Raises DegenerateConstraint when grad h . g vanishes and the desired input
    violates the condition.
    """
    x = np.asarray(x, dtype=float)
    u_d = np.atleast_1d(np.asarray(u_desired, dtype=float))
    grad = h.grad(x)
    hx = h(x)
    a = alpha(hx)
    phi0 = float(grad @ (sys.f(x) + sys.g(x) @ u_d)) + a
    phi1 = grad @ sys.g(x)
    u = solve_half_space_qp(HalfSpaceQP(u_d, phi0, phi1))
    residual = barrier_rate(h, sys, x, u) + a
    return FilterOutcome(u_applied=u, u_desired=u_d, residual=residual, barrier=hx, active=phi0 < 0)
