"""Shared primitives: class-K functions, control-affine systems, error types."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


class SafeguardError(Exception):
    """Base class for all errors raised by this package."""


class FilterError(SafeguardError):
    """A safety filter could not produce an input at the current state."""


class DegenerateConstraint(FilterError):
    """The constraint gradient vanishes while the constraint is violated."""


class InfeasibleRobustConstraint(FilterError):
    """No input satisfies the robustified constraint."""


class NonMonotoneTimestamp(SafeguardError):
    pass


class InsufficientHistory(SafeguardError):
    pass


class NumericalBlowup(SafeguardError):
    """Raised by the simulator; ``log`` holds the rows produced so far."""

    def __init__(self, message: str, log=None):
        super().__init__(message)
        self.log = log


class EmptyLog(SafeguardError):
    pass


class UnknownScenario(SafeguardError):
    pass


class BadOverride(SafeguardError):
    pass


class DomainViolation(SafeguardError):
    pass


class IoFailure(SafeguardError):
    """Reading a config file or writing run outputs failed."""


@dataclass(frozen=True)
class ClassKappa:
    """Extended class-K function, either linear ``gamma * h`` or a custom callable.

    Custom functions are checked on a grid over ``[-10, 10]`` at construction and
    rejected unless they vanish at zero and increase strictly.
    """

    gamma: Optional[float] = None
    func: Optional[Callable[[float], float]] = None

    def __post_init__(self):
        if (self.gamma is None) == (self.func is None):
            raise ValueError("give exactly one of gamma or func")
        if self.gamma is not None:
            if not self.gamma > 0:
                raise ValueError(f"gamma must be positive, got {self.gamma}")
            return
        if abs(self.func(0.0)) >= 1e-12:
            raise ValueError("class-K function must vanish at 0")
        grid = np.linspace(-10.0, 10.0, 2001)
        vals = np.array([self.func(float(h)) for h in grid])
        if not np.all(np.diff(vals) > 0):
            raise ValueError("class-K function is not strictly increasing on [-10, 10]")

    @classmethod
    def linear(cls, gamma: float) -> "ClassKappa":
        return cls(gamma=float(gamma))

    @classmethod
    def custom(cls, func: Callable[[float], float]) -> "ClassKappa":
        return cls(func=func)

    def __call__(self, h: float) -> float:
        if self.gamma is not None:
            return self.gamma * h
        return float(self.func(h))


def eval_class_kappa(alpha: ClassKappa, h: float) -> float:
    return alpha(h)


@dataclass(frozen=True)
class ControlAffineSystem:
    """``xdot = f(x) + g(x) u`` with ``x`` in R^n and ``u`` in R^m.

    ``fast_rk4`` is an optional compiled integrator ``(x0, U, h) -> x`` that runs
    one RK4 step of size ``h`` per row of the input array ``U`` (shape ``(k, m)``).
    When present, the simulator and the state predictor use it instead of the
    pure-Python loop; it must implement the same dynamics.
    """

    state_dim: int
    input_dim: int
    drift: Callable[[np.ndarray], np.ndarray]
    actuation: Callable[[np.ndarray], np.ndarray]
    fast_rk4: Optional[Callable[[np.ndarray, np.ndarray, float], np.ndarray]] = field(
        default=None, compare=False
    )

    def f(self, x) -> np.ndarray:
        out = np.asarray(self.drift(np.asarray(x, dtype=float)), dtype=float)
        if out.shape != (self.state_dim,):
            raise ValueError(f"drift returned shape {out.shape}, expected ({self.state_dim},)")
        return out

    def g(self, x) -> np.ndarray:
        out = np.asarray(self.actuation(np.asarray(x, dtype=float)), dtype=float)
        if out.shape != (self.state_dim, self.input_dim):
            raise ValueError(
                f"actuation returned shape {out.shape}, expected ({self.state_dim}, {self.input_dim})"
            )
        return out

    def rhs(self, x, u) -> np.ndarray:
        return self.f(x) + self.g(x) @ np.atleast_1d(np.asarray(u, dtype=float))


def rk4_sequence(sys: ControlAffineSystem, x0, inputs, h: float) -> np.ndarray:
    """Integrate ``sys`` with classic RK4, holding ``inputs[k]`` over step ``k``."""
    x = np.array(x0, dtype=float)
    inputs = np.asarray(inputs, dtype=float).reshape(-1, sys.input_dim)
    if sys.fast_rk4 is not None:
        return np.asarray(sys.fast_rk4(x, np.ascontiguousarray(inputs), float(h)))
    for u in inputs:
        k1 = sys.rhs(x, u)
        k2 = sys.rhs(x + 0.5 * h * k1, u)
        k3 = sys.rhs(x + 0.5 * h * k2, u)
        k4 = sys.rhs(x + h * k3, u)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return x


def make_fast_rk4(rhs):
    """Compile an RK4 integrator around a numba-jitted ``rhs(x, u, p, out)``.

    ``rhs`` writes the state derivative into ``out``. Returns ``factory(p)``
    producing an ``(x0, U, h) -> x`` callable with parameter vector ``p`` bound.
    """
    import numba

    @numba.njit(cache=False)
    def _run(x0, U, h, p):
        n = x0.shape[0]
        x = x0.copy()
        xt = np.empty(n)
        k1 = np.empty(n)
        k2 = np.empty(n)
        k3 = np.empty(n)
        k4 = np.empty(n)
        for k in range(U.shape[0]):
            u = U[k]
            rhs(x, u, p, k1)
            for i in range(n):
                xt[i] = x[i] + 0.5 * h * k1[i]
            rhs(xt, u, p, k2)
            for i in range(n):
                xt[i] = x[i] + 0.5 * h * k2[i]
            rhs(xt, u, p, k3)
            for i in range(n):
                xt[i] = x[i] + h * k3[i]
            rhs(xt, u, p, k4)
            for i in range(n):
                x[i] = x[i] + (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        return x

    def factory(p):
        p = np.asarray(p, dtype=np.float64)

        def run(x0, U, h):
            return _run(np.asarray(x0, dtype=np.float64), U, h, p)

        return run

    return factory


@dataclass(frozen=True)
class FilterOutcome:
    """Result of one safety-filter evaluation.

    ``residual`` is the slack of the enforced constraint at ``u_applied``;
    ``barrier`` is the barrier value at the point the filter was evaluated, and
    ``x_eval`` that point when it differs from the measured state (predictors).
    """

    u_applied: np.ndarray
    u_desired: np.ndarray
    residual: float
    barrier: float
    active: bool
    x_eval: Optional[np.ndarray] = None
