"""Fixed-step closed-loop simulator with input delay and exogenous environment."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .core import (
    ControlAffineSystem,
    EmptyLog,
    FilterError,
    FilterOutcome,
    NumericalBlowup,
    rk4_sequence,
)
from .delay import InputHistoryBuffer

FLAG_ACTIVE = 1
FLAG_SATURATED = 2
FLAG_INFEASIBLE = 4

BLOWUP_NORM = 1e9


@dataclass(frozen=True)
class SimulationConfig:
    """Time grid and initial data of one closed-loop run (SI units)."""

    horizon: float
    initial_state: Sequence[float]
    dt_integration: float = 1e-3
    dt_control: float = 1e-3
    tau: float = 0.0
    # constant input or callable t -> u on [-tau, 0)
    initial_input: Optional[object] = None

    def __post_init__(self):
        if not (self.dt_integration > 0 and self.dt_control > 0 and self.horizon > 0 and self.tau >= 0):
            raise ValueError("time steps and horizon must be positive, tau nonnegative")
        if not _is_multiple(self.dt_control, self.dt_integration):
            raise ValueError("dt_control must be an integer multiple of dt_integration")
        if self.tau > 0 and not _is_multiple(self.tau, self.dt_control):
            raise ValueError("tau must be an integer multiple of dt_control")

    @property
    def substeps(self) -> int:
        return int(round(self.dt_control / self.dt_integration))

    @property
    def n_control(self) -> int:
        return int(round(self.horizon / self.dt_control))

    @property
    def delay_steps(self) -> int:
        """Integration steps per delay interval (default predictor resolution)."""
        return max(1, int(round(self.tau / self.dt_integration)))


@dataclass(frozen=True)
class RunOptions:
    """Time-grid overrides for scenario runs; ``horizon=None`` keeps the scenario default."""

    dt_integration: float = 1e-3
    dt_control: float = 1e-3
    horizon: Optional[float] = None


def _is_multiple(a: float, b: float) -> bool:
    r = a / b
    return abs(r - round(r)) <= 1e-12 * max(1.0, r) and round(r) >= 1


@dataclass
class ControlAction:
    """What a controller returns for one control instant."""

    u: np.ndarray
    u_desired: Optional[np.ndarray] = None
    residual: float = math.nan
    active: bool = False
    saturated: bool = False
    infeasible: bool = False
    extras: dict = field(default_factory=dict)

    @classmethod
    def from_outcome(cls, out: FilterOutcome, **extras) -> "ControlAction":
        return cls(
            u=np.asarray(out.u_applied, dtype=float),
            u_desired=np.asarray(out.u_desired, dtype=float),
            residual=float(out.residual),
            active=bool(out.active),
            extras=extras,
        )


@dataclass
class TrajectoryLog:
    """Rows sampled at the control instants of one run."""

    t: np.ndarray
    x: np.ndarray
    u_desired: np.ndarray
    u_applied: np.ndarray
    barrier: np.ndarray
    residual: np.ndarray
    flags: np.ndarray
    env: np.ndarray
    env_dot: np.ndarray
    extended_barrier: Optional[np.ndarray] = None
    extras: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.t)

    def first_violation(self, tol: float = 0.0) -> Optional[float]:
        """Time of the first row with barrier < -tol, or None."""
        bad = np.nonzero(self.barrier < -tol)[0]
        return float(self.t[bad[0]]) if len(bad) else None

    def default_columns(self) -> list:
        """Generic ``(name, column)`` pairs: states, environment, barrier(s), inputs, residual."""
        cols = [(f"x{i}", self.x[:, i]) for i in range(self.x.shape[1])]
        cols += [(f"e{i}", self.env[:, i]) for i in range(self.env.shape[1])]
        cols += [(f"e_dot{i}", self.env_dot[:, i]) for i in range(self.env_dot.shape[1])]
        cols.append(("barrier", self.barrier))
        if self.extended_barrier is not None:
            cols.append(("extended_barrier", self.extended_barrier))
        cols += [(f"u_des{i}", self.u_desired[:, i]) for i in range(self.u_desired.shape[1])]
        cols += [(f"u{i}", self.u_applied[:, i]) for i in range(self.u_applied.shape[1])]
        cols.append(("residual", self.residual))
        return cols

    def to_csv(self, path, columns: Optional[Sequence[tuple]] = None) -> None:
        """Write ``t``, the given ``(name, column)`` pairs and ``flags``.

        Values use 17 significant digits so doubles round-trip exactly.
        """
        columns = self.default_columns() if columns is None else list(columns)
        names = ["t"] + [c[0] for c in columns] + ["flags"]
        data = np.column_stack([self.t] + [np.asarray(c[1], dtype=float) for c in columns])
        with open(path, "w", newline="\n") as fh:
            fh.write(",".join(names) + "\n")
            for row, fl in zip(data, self.flags):
                fh.write(",".join(format(v, ".17g") for v in row) + f",{int(fl)}\n")


def min_barrier(log: TrajectoryLog) -> float:
    if len(log) == 0:
        raise EmptyLog("trajectory log has no rows")
    return float(np.min(log.barrier))


def _as_action(ret, m: int) -> ControlAction:
    if isinstance(ret, ControlAction):
        ret.u = np.atleast_1d(np.asarray(ret.u, dtype=float))
        return ret
    if isinstance(ret, FilterOutcome):
        return ControlAction.from_outcome(ret)
    return ControlAction(u=np.atleast_1d(np.asarray(ret, dtype=float)).reshape(m))


def simulate(
    sys: ControlAffineSystem,
    controller: Callable,
    env_signal: Optional[Callable[[float], tuple]],
    config: SimulationConfig,
    *,
    barrier: Optional[Callable] = None,
    extended_barrier: Optional[Callable] = None,
) -> TrajectoryLog:
    """Run ``xdot = f(x) + g(x) u(t - tau)`` in closed loop.

    ``controller(t, x, buffer, env)`` is called at every control instant with the
    history of inputs already issued (not yet including the one being decided)
    and returns an input array, a :class:`FilterOutcome` or a :class:`ControlAction`.
    ``env_signal(t)`` returns ``(e, e_dot[, e_ddot])``. ``barrier(x, env)`` and
    ``extended_barrier(x, env)`` are logged when given.

    A :class:`FilterError` raised by the controller is logged as infeasible and
    the previous input is held.
    """
    m, n = sys.input_dim, sys.state_dim
    dt_c, dt_i, tau = config.dt_control, config.dt_integration, config.tau
    K = config.n_control
    buffer = InputHistoryBuffer(tau, m)
    if tau > 0:
        n_hist = int(round(tau / dt_c))
        for j in range(n_hist):
            th = (j - n_hist) * dt_c
            u0 = config.initial_input
            u0 = u0(th) if callable(u0) else (np.zeros(m) if u0 is None else u0)
            buffer.record(th, np.atleast_1d(np.asarray(u0, dtype=float)))

    x = np.array(config.initial_state, dtype=float)
    if x.shape != (n,):
        raise ValueError(f"initial state has shape {x.shape}, expected ({n},)")

    rows = K + 1
    t_col = np.empty(rows)
    X = np.empty((rows, n))
    Ud = np.empty((rows, m))
    Ua = np.empty((rows, m))
    B = np.full(rows, math.nan)
    BE = np.full(rows, math.nan) if extended_barrier is not None else None
    R = np.empty(rows)
    F = np.zeros(rows, dtype=np.int64)
    env_rows: list = []
    envdot_rows: list = []
    extras: dict = {}
    last_u = np.zeros(m)
    sub_offsets = (np.arange(config.substeps) + 0.5) * dt_i

    def partial(k):
        return _finish(t_col, X, Ud, Ua, B, BE, R, F, env_rows, envdot_rows, extras, k)

    for k in range(rows):
        t = k * dt_c
        env = env_signal(t) if env_signal is not None else None
        try:
            action = _as_action(controller(t, x, buffer, env), m)
        except FilterError:
            action = ControlAction(u=last_u.copy(), infeasible=True)
        u = action.u
        t_col[k] = t
        X[k] = x
        Ud[k] = action.u_desired if action.u_desired is not None else u
        Ua[k] = u
        R[k] = action.residual
        F[k] = (FLAG_ACTIVE * action.active) | (FLAG_SATURATED * action.saturated) | (
            FLAG_INFEASIBLE * action.infeasible
        )
        if barrier is not None:
            B[k] = barrier(x, env)
        if BE is not None:
            BE[k] = extended_barrier(x, env)
        if env is not None:
            env_rows.append(np.atleast_1d(env[0]).astype(float))
            envdot_rows.append(np.atleast_1d(env[1]).astype(float))
        for name, val in action.extras.items():
            col = extras.get(name)
            if col is None:
                col = extras[name] = np.full(rows, math.nan)
            col[k] = val
        if k == K:
            break
        buffer.record(t, u)
        last_u = u
        U = buffer.values_at(t + sub_offsets - tau) if tau > 0 else np.tile(u, (len(sub_offsets), 1))
        x = rk4_sequence(sys, x, U, dt_i)
        sq = float(x @ x)
        if not math.isfinite(sq) or sq > BLOWUP_NORM**2:
            raise NumericalBlowup(f"state diverged at t={t + dt_c:.6g}", log=partial(k + 1))
    return partial(rows)


def _finish(t_col, X, Ud, Ua, B, BE, R, F, env_rows, envdot_rows, extras, k) -> TrajectoryLog:
    env = np.array(env_rows[:k]) if env_rows else np.zeros((k, 0))
    env_dot = np.array(envdot_rows[:k]) if envdot_rows else np.zeros((k, 0))
    return TrajectoryLog(
        t=t_col[:k].copy(),
        x=X[:k].copy(),
        u_desired=Ud[:k].copy(),
        u_applied=Ua[:k].copy(),
        barrier=B[:k].copy(),
        residual=R[:k].copy(),
        flags=F[:k].copy(),
        env=env,
        env_dot=env_dot,
        extended_barrier=None if BE is None else BE[:k].copy(),
        extras={name: col[:k].copy() for name, col in extras.items()},
    )
