"""Environmental CBF filters and their worst-case robustification.

The environment state ``e`` (and its rate ``e_dot``) enters the barrier
``H(x, e)`` but is not driven by the control input.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Protocol

import numpy as np

from .core import ClassKappa, ControlAffineSystem, FilterOutcome
from .qp import HalfSpaceQP, solve_half_space_qp, solve_margin_constraint

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EnvironmentalBarrier:
    value: Callable[[np.ndarray, np.ndarray], float]
    grad_x: Callable[[np.ndarray, np.ndarray], np.ndarray]
    grad_e: Callable[[np.ndarray, np.ndarray], np.ndarray]

    def __call__(self, x, e) -> float:
        return float(self.value(np.asarray(x, dtype=float), np.atleast_1d(np.asarray(e, dtype=float))))

    def gx(self, x, e) -> np.ndarray:
        return np.asarray(
            self.grad_x(np.asarray(x, dtype=float), np.atleast_1d(np.asarray(e, dtype=float))), dtype=float
        ).reshape(-1)

    def ge(self, x, e) -> np.ndarray:
        return np.asarray(
            self.grad_e(np.asarray(x, dtype=float), np.atleast_1d(np.asarray(e, dtype=float))), dtype=float
        ).reshape(-1)


@dataclass(frozen=True)
class EnvironmentEstimate:
    e_hat: np.ndarray
    e_dot_hat: np.ndarray
    e_ddot_hat: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("e_hat", "e_dot_hat", "e_ddot_hat"):
            val = getattr(self, name)
            if val is None:
                continue
            arr = np.atleast_1d(np.asarray(val, dtype=float))
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, arr)


@dataclass(frozen=True)
class UncertaintyBounds:
    eps_e: float = 0.0
    eps_edot: float = 0.0
    eps_eddot: float = 0.0

    def __post_init__(self):
        if min(self.eps_e, self.eps_edot, self.eps_eddot) < 0:
            raise ValueError("uncertainty bounds must be nonnegative")


class MarginModel(Protocol):
    def margin_terms(self, bounds: UncertaintyBounds) -> tuple[float, float]:
        """Return (constant part, coefficient of ||u||) of the robust margin."""


@dataclass(frozen=True)
class LipschitzBundle:
    """Lipschitz constants (in e and e_dot) of the terms making up Hdot + alpha(H)."""

    L_gradHf_e: float = 0.0
    L_gradHg_e: float = 0.0
    L_alphaH_e: float = 0.0
    L_gradHedot_e: float = 0.0
    L_gradHedot_edot: float = 0.0

    def __post_init__(self):
        if min(self.L_gradHf_e, self.L_gradHg_e, self.L_alphaH_e, self.L_gradHedot_e, self.L_gradHedot_edot) < 0:
            raise ValueError("Lipschitz coefficients must be nonnegative")

    def margin_terms(self, bounds: UncertaintyBounds) -> tuple[float, float]:
        const = (self.L_gradHf_e + self.L_alphaH_e + self.L_gradHedot_e) * bounds.eps_e + (
            self.L_gradHedot_edot * bounds.eps_edot
        )
        return const, self.L_gradHg_e * bounds.eps_e


def robust_margin(bounds: UncertaintyBounds, lipschitz: MarginModel, u_norm: float) -> float:
    """C(eps_e, eps_edot, u): worst-case drop of Hdot + alpha(H) under estimate error."""
    if u_norm < 0:
        raise ValueError("u_norm must be nonnegative")
    const, coeff = lipschitz.margin_terms(bounds)
    return const + coeff * u_norm


def env_barrier_rate(H: EnvironmentalBarrier, sys: ControlAffineSystem, x, e, e_dot, u) -> float:
    """Hdot = grad_x H (f + g u) + grad_e H e_dot."""
    return float(H.gx(x, e) @ sys.rhs(x, u) + H.ge(x, e) @ np.atleast_1d(e_dot))


def ecbf_filter(H: EnvironmentalBarrier, alpha: ClassKappa, sys: ControlAffineSystem, x, e, e_dot, u_desired) -> FilterOutcome:
    x = np.asarray(x, dtype=float)
    u_d = np.atleast_1d(np.asarray(u_desired, dtype=float))
    gx = H.gx(x, e)
    Hv = H(x, e)
    a = alpha(Hv)
    phi0 = float(gx @ (sys.f(x) + sys.g(x) @ u_d) + H.ge(x, e) @ np.atleast_1d(e_dot)) + a
    phi1 = gx @ sys.g(x)
    problem = HalfSpaceQP(u_d, phi0, phi1)
    u = solve_half_space_qp(problem)
    residual = problem.slack(u)
    return FilterOutcome(u_applied=u, u_desired=u_d, residual=residual, barrier=Hv, active=phi0 < 0)


def robust_ecbf_filter(
    H: EnvironmentalBarrier,
    alpha: ClassKappa,
    sys: ControlAffineSystem,
    x,
    estimate: EnvironmentEstimate,
    bounds: UncertaintyBounds,
    lipschitz: MarginModel,
    u_desired,
) -> FilterOutcome:
    """Enforce Hdot(x, e_hat, e_dot_hat, u) - C(eps, ||u||) >= -alpha(H(x, e_hat)).

    ``lipschitz`` may be any object exposing ``margin_terms(bounds)``, which is
    how scenario-specific (less conservative) margins are plugged in.
    """
    x = np.asarray(x, dtype=float)
    u_d = np.atleast_1d(np.asarray(u_desired, dtype=float))
    e_hat, e_dot_hat = estimate.e_hat, estimate.e_dot_hat
    gx = H.gx(x, e_hat)
    Hv = H(x, e_hat)
    if Hv < 0:
        log.debug("estimated environment places the state outside the safe set (H=%.3g)", Hv)
    a = alpha(Hv)
    c0, c_u = lipschitz.margin_terms(bounds)
    drift_part = float(gx @ sys.f(x) + H.ge(x, e_hat) @ e_dot_hat) + a - c0
    phi1 = gx @ sys.g(x)
    u, active = solve_margin_constraint(u_d, drift_part, phi1, c_u)
    residual = drift_part + float(phi1 @ u) - c_u * float(np.linalg.norm(u))
    return FilterOutcome(u_applied=u, u_desired=u_d, residual=residual, barrier=Hv, active=active)
