"""Input-delay compensation: input history, predictors and delayed filters.

With input delay ``tau`` the plant evolves as ``xdot(t) = f(x) + g(x) u(t - tau)``.
The state ``tau`` seconds ahead is fully determined by ``x(t)`` and the inputs
already issued over ``[t - tau, t)``; the delayed filters apply the delay-free
law at that predicted state.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Union

import numpy as np
import scipy.linalg

from .cbf import BarrierFunction, cbf_filter
from .core import (
    ClassKappa,
    ControlAffineSystem,
    FilterOutcome,
    InsufficientHistory,
    NonMonotoneTimestamp,
    rk4_sequence,
)
from .ecbf import (
    EnvironmentalBarrier,
    EnvironmentEstimate,
    MarginModel,
    UncertaintyBounds,
    robust_ecbf_filter,
)
from .qp import solve_margin_constraint

_TIME_TOL = 1e-9


class InputHistoryBuffer:
    """Time-stamped inputs interpreted as a zero-order hold.

    Sample ``k`` is active on ``[t_k, t_{k+1})``; the last sample stays active
    until a newer one is recorded. Samples that can no longer influence
    ``[t - tau, t)`` are pruned on every :meth:`record`.
    """

    def __init__(self, tau: float, input_dim: int = 1, capacity: int = 64):
        if tau < 0:
            raise ValueError("tau must be nonnegative")
        self.tau = float(tau)
        self.input_dim = int(input_dim)
        self._t = np.empty(capacity)
        self._u = np.empty((capacity, self.input_dim))
        self._start = 0
        self._end = 0

    def __len__(self) -> int:
        return self._end - self._start

    @property
    def times(self) -> np.ndarray:
        return self._t[self._start : self._end]

    @property
    def inputs(self) -> np.ndarray:
        return self._u[self._start : self._end]

    @property
    def last_time(self) -> Optional[float]:
        return float(self._t[self._end - 1]) if len(self) else None

    def record(self, t: float, u) -> "InputHistoryBuffer":
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if u.shape != (self.input_dim,):
            raise ValueError(f"input has shape {u.shape}, expected ({self.input_dim},)")
        last = self.last_time
        if last is not None:
            if not t > last:
                raise NonMonotoneTimestamp(f"t={t!r} is not after the last sample at {last!r}")
            # the sample active at t - tau is the oldest one any later query can reach
            cutoff = t - self.tau + _TIME_TOL * max(1.0, abs(t))
            keep_from = int(np.searchsorted(self.times, cutoff, side="right")) - 1
            if keep_from > 0:
                self._start += keep_from
        if self._end == len(self._t):
            self._compact()
        self._t[self._end] = t
        self._u[self._end] = u
        self._end += 1
        return self

    def _compact(self):
        n = len(self)
        cap = max(2 * n, 64)
        t_new = np.empty(cap)
        u_new = np.empty((cap, self.input_dim))
        t_new[:n] = self.times
        u_new[:n] = self.inputs
        self._t, self._u, self._start, self._end = t_new, u_new, 0, n

    def covers(self, t_from: float) -> bool:
        return len(self) > 0 and self._t[self._start] <= t_from + _TIME_TOL * max(1.0, abs(t_from))

    def value_at(self, t: float) -> np.ndarray:
        return self.values_at(np.array([t]))[0]

    def values_at(self, query) -> np.ndarray:
        """ZOH values at each query time, shape ``(len(query), input_dim)``."""
        query = np.asarray(query, dtype=float)
        idx = np.searchsorted(self.times, query, side="right") - 1
        if len(self) == 0 or np.any(idx < 0):
            raise InsufficientHistory(f"no input recorded before t={float(np.min(query))!r}")
        return self.inputs[idx]

    def window(self, t_from: float, duration: float, steps: int) -> np.ndarray:
        """Inputs sampled at the midpoints of ``steps`` uniform cells of ``[t_from, t_from + duration)``."""
        if not self.covers(t_from):
            first = self._t[self._start] if len(self) else None
            raise InsufficientHistory(f"history starts at {first!r}, need coverage from {t_from!r}")
        h = duration / steps
        return self.values_at(t_from + (np.arange(steps) + 0.5) * h)


def record_input(buffer: InputHistoryBuffer, t: float, u) -> InputHistoryBuffer:
    return buffer.record(t, u)


def predict_state(sys: ControlAffineSystem, x, buffer: InputHistoryBuffer, tau: float, steps: int, *, t: float) -> np.ndarray:
    """Semi-flow prediction x(t + tau) from x(t) and the inputs issued over [t - tau, t).

    RK4 with ``steps`` uniform steps; the input over each step is the ZOH value
    at the step midpoint.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    x = np.array(x, dtype=float)
    if tau == 0:
        return x
    U = buffer.window(t - tau, tau, steps)
    return rk4_sequence(sys, x, U, tau / steps)


def predict_state_linear(A, B, x, buffer: InputHistoryBuffer, tau: float, quad_steps: int, *, t: float) -> np.ndarray:
    """Convolution-integral prediction for ``xdot = A x + B u(t - tau)``.

    The window is split into ``quad_steps`` uniform cells with the input held at
    its midpoint value. Each cell is propagated exactly through the block
    exponential ``expm([[A, B], [0, 0]] * h)``, whose blocks are ``e^{Ah}`` and
    ``int_0^h e^{As} ds B``; this needs no inverse of ``A``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    x = np.array(x, dtype=float)
    if tau == 0:
        return x
    n, m = B.shape
    h = tau / quad_steps
    M = np.zeros((n + m, n + m))
    M[:n, :n] = A
    M[:n, n:] = B
    E = scipy.linalg.expm(M * h)
    Phi, Gam = E[:n, :n], E[:n, n:]
    for u in buffer.window(t - tau, tau, quad_steps):
        x = Phi @ x + Gam @ u
    return x


@dataclass(frozen=True)
class EnvironmentPredictor:
    """Extrapolates the environment over the delay horizon.

    ``model`` is ``"constant_velocity"``, ``"constant_state"`` or ``"custom"``;
    the custom maps are ``gamma(theta, e) -> e``, ``gamma_dot(theta, e, e_dot) -> e_dot``
    and optionally ``gamma_ddot(theta, e, e_dot) -> e_ddot``.
    """

    model: str = "constant_velocity"
    gamma: Optional[Callable] = None
    gamma_dot: Optional[Callable] = None
    gamma_ddot: Optional[Callable] = None

    def __post_init__(self):
        if self.model not in ("constant_velocity", "constant_state", "custom"):
            raise ValueError(f"unknown environment model {self.model!r}")
        if self.model == "custom" and (self.gamma is None or self.gamma_dot is None):
            raise ValueError("custom model needs gamma and gamma_dot")


def predict_environment(pred: EnvironmentPredictor, e, e_dot, tau: float, *, with_accel: bool = False):
    """Return ``(e_p, e_dot_p)``, or ``(e_p, e_dot_p, e_ddot_p)`` with ``with_accel``."""
    e = np.atleast_1d(np.asarray(e, dtype=float))
    e_dot = np.atleast_1d(np.asarray(e_dot, dtype=float))
    if pred.model == "constant_velocity":
        out = (e + e_dot * tau, e_dot.copy(), np.zeros_like(e))
    elif pred.model == "constant_state":
        out = (e.copy(), np.zeros_like(e_dot), np.zeros_like(e))
    else:
        acc = pred.gamma_ddot(tau, e, e_dot) if pred.gamma_ddot is not None else np.zeros_like(e)
        out = (
            np.atleast_1d(np.asarray(pred.gamma(tau, e), dtype=float)),
            np.atleast_1d(np.asarray(pred.gamma_dot(tau, e, e_dot), dtype=float)),
            np.atleast_1d(np.asarray(acc, dtype=float)),
        )
    return out if with_accel else out[:2]


@dataclass(frozen=True)
class StateLipschitz:
    """Lipschitz constants in x of grad h f, alpha(h) and grad h g (prediction-error margin)."""

    L_gradhf: float = 0.0
    L_alphah: float = 0.0
    L_gradhg: float = 0.0

    def margin_terms(self, eps_x: float) -> tuple[float, float]:
        return (self.L_gradhf + self.L_alphah) * eps_x, self.L_gradhg * eps_x


def _resolve(u_desired, x_p):
    return u_desired(x_p) if callable(u_desired) else u_desired


def delayed_cbf_filter(
    h: BarrierFunction,
    alpha: ClassKappa,
    sys: ControlAffineSystem,
    x,
    buffer: InputHistoryBuffer,
    tau: float,
    steps: int,
    u_desired,
    *,
    t: float,
    eps_x: float = 0.0,
    state_lipschitz: Optional[StateLipschitz] = None,
) -> FilterOutcome:
    """Apply the delay-free CBF filter at the predicted state x_p = x(t + tau).

    ``u_desired`` may be an array or a callable of ``x_p``. With ``eps_x > 0`` a
    prediction-error margin built from ``state_lipschitz`` is subtracted.
    Recording the returned input into ``buffer`` is left to the caller.
    """
    x_p = predict_state(sys, x, buffer, tau, steps, t=t)
    u_d = _resolve(u_desired, x_p)
    if eps_x == 0 or state_lipschitz is None:
        out = cbf_filter(h, alpha, sys, x_p, u_d)
        return dataclasses.replace(out, x_eval=x_p)
    u_d = np.atleast_1d(np.asarray(u_d, dtype=float))
    grad = h.grad(x_p)
    hx = h(x_p)
    c0, c_u = state_lipschitz.margin_terms(eps_x)
    drift_part = float(grad @ sys.f(x_p)) + alpha(hx) - c0
    phi1 = grad @ sys.g(x_p)
    u, active = solve_margin_constraint(u_d, drift_part, phi1, c_u)
    residual = drift_part + float(phi1 @ u) - c_u * float(np.linalg.norm(u))
    return FilterOutcome(u_applied=u, u_desired=u_d, residual=residual, barrier=hx, active=active, x_eval=x_p)


def delayed_robust_ecbf_filter(
    H: EnvironmentalBarrier,
    alpha: ClassKappa,
    sys: ControlAffineSystem,
    x,
    buffer: InputHistoryBuffer,
    tau: float,
    steps: int,
    env_pred: EnvironmentPredictor,
    e,
    e_dot,
    bounds: UncertaintyBounds,
    lipschitz: Union[MarginModel, Callable[[np.ndarray, EnvironmentEstimate], MarginModel]],
    u_desired,
    *,
    t: float,
) -> FilterOutcome:
    """Predictor-feedback ECBF filter, robust to environment prediction error.

    ``bounds`` bound the error between the true and predicted environment at
    ``t + tau``. ``lipschitz`` may depend on the predicted point, in which case
    pass a callable ``(x_p, estimate) -> margin model``.
    """
    x_p = predict_state(sys, x, buffer, tau, steps, t=t)
    e_p, e_dot_p = predict_environment(env_pred, e, e_dot, tau)
    estimate = EnvironmentEstimate(e_p, e_dot_p)
    margin = lipschitz if hasattr(lipschitz, "margin_terms") else lipschitz(x_p, estimate)
    out = robust_ecbf_filter(H, alpha, sys, x_p, estimate, bounds, margin, _resolve(u_desired, x_p))
    return dataclasses.replace(out, x_eval=x_p)


class HistoryCheck(NamedTuple):
    ok: bool
    first_violation: Optional[float]


def check_initial_history(
    sys: ControlAffineSystem,
    barrier: Union[BarrierFunction, EnvironmentalBarrier],
    x0,
    buffer0: InputHistoryBuffer,
    tau: float,
    steps: int,
    env_signal: Optional[Callable[[float], tuple]] = None,
) -> HistoryCheck:
    """Check that the open loop under the initial history stays safe on [0, tau].

    For an environmental barrier, ``env_signal(t)`` must return ``(e, e_dot, ...)``.
    """
    x = np.array(x0, dtype=float)
    h = tau / steps

    def value(t, x):
        if isinstance(barrier, EnvironmentalBarrier):
            return barrier(x, env_signal(t)[0])
        return barrier(x)

    if value(0.0, x) < 0:
        return HistoryCheck(False, 0.0)
    if tau == 0:
        return HistoryCheck(True, None)
    U = buffer0.window(-tau, tau, steps)
    for k in range(steps):
        x = rk4_sequence(sys, x, U[k : k + 1], h)
        t = (k + 1) * h
        if value(t, x) < 0:
            return HistoryCheck(False, t)
    return HistoryCheck(True, None)
