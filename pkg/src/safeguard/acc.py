"""Adaptive cruise control: an automated vehicle (AV) following a human-driven one (HV).

State ``x = (s, v)`` of the AV, environment ``e = s1`` (HV position) with rate
``e_dot = v1``. Units are SI throughout.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional

import numba
import numpy as np

from .core import ClassKappa, ControlAffineSystem, UnknownScenario, make_fast_rk4
from .delay import (
    EnvironmentPredictor,
    InputHistoryBuffer,
    check_initial_history,
    delayed_robust_ecbf_filter,
)
from .ecbf import (
    EnvironmentalBarrier,
    EnvironmentEstimate,
    LipschitzBundle,
    UncertaintyBounds,
    ecbf_filter,
    robust_ecbf_filter,
)
from .sim import ControlAction, RunOptions, SimulationConfig, TrajectoryLog, simulate

SCENARIOS = {
    "nodelay": "delay-free ECBF filter with exact HV measurements",
    "nodelay_noisy": "delay-free ECBF filter fed biased HV position/speed estimates",
    "nodelay_robust": "biased estimates with the worst-case Lipschitz margin",
    "delay_naive": "delay-free law applied to the current state of a delayed plant",
    "delay_predictor": "predictor feedback with constant-speed HV extrapolation",
    "delay_robust": "predictor feedback with an HV-acceleration-bounded margin",
}


@dataclass(frozen=True)
class AccParams:
    """Scenario parameters. ``a_min`` is the HV's largest deceleration, ``a_max`` its largest acceleration."""

    c0: float = 0.1
    c2: float = 0.0003
    gamma: float = 3.0
    kappa_bar: float = 2.0
    length: float = 5.0
    tau: float = 1.0
    a_min: float = 2.5
    a_max: float = 2.5
    # "symmetric" uses max(a_min, a_max) for both error directions; "one_sided" only
    # guards against the HV being behind its prediction, which needs a_min alone
    delay_margin: str = "symmetric"
    eps_s: float = 1.4
    eps_v: float = 1.4
    bias_s: float = 1.0
    bias_v: float = 1.0
    s0: float = 0.0
    v0: float = 20.0
    s1_0: float = 60.0
    v1_cruise: float = 15.0
    v1_low: float = 8.0
    brake_decel: float = 2.0
    brake_onset: float = 13.0
    horizon: float = 30.0

    def __post_init__(self):
        if not (self.kappa_bar > 0 and self.gamma > 0 and self.length > 0):
            raise ValueError("kappa_bar, gamma and length must be positive")
        if min(self.eps_s, self.eps_v, self.a_min, self.a_max, self.tau) < 0:
            raise ValueError("bounds, accelerations and tau must be nonnegative")
        if self.delay_margin not in ("symmetric", "one_sided"):
            raise ValueError(f"unknown delay_margin {self.delay_margin!r}")
        if min(self.v1_cruise, self.v1_low) < 0 or self.brake_decel <= 0:
            raise ValueError("HV speeds must be nonnegative and brake_decel positive")

    def resistance(self, v: float) -> float:
        return self.c0 + self.c2 * v * v

    @property
    def a_bar(self) -> float:
        return max(self.a_min, self.a_max)


@dataclass(frozen=True)
class HvProfile:
    """Cruise at ``v_cruise``, brake at ``decel`` from ``brake_onset`` down to ``v_low``, cruise again."""

    s1_0: float
    v_cruise: float
    brake_onset: float
    decel: float
    v_low: float

    def __post_init__(self):
        if min(self.v_cruise, self.v_low) < 0 or self.decel <= 0 or self.v_low > self.v_cruise:
            raise ValueError("need 0 <= v_low <= v_cruise and decel > 0")

    @property
    def brake_end(self) -> float:
        return self.brake_onset + (self.v_cruise - self.v_low) / self.decel

    def state(self, t: float) -> tuple[float, float, float]:
        """(position, speed, acceleration) at time t."""
        t0, t1 = self.brake_onset, self.brake_end
        if t < t0:
            return self.s1_0 + self.v_cruise * t, self.v_cruise, 0.0
        if t < t1:
            dt = t - t0
            return (
                self.s1_0 + self.v_cruise * t - 0.5 * self.decel * dt * dt,
                self.v_cruise - self.decel * dt,
                -self.decel,
            )
        s_end = self.s1_0 + self.v_cruise * t1 - 0.5 * self.decel * (t1 - t0) ** 2
        return s_end + self.v_low * (t - t1), self.v_low, 0.0

    def signal(self, t: float):
        s1, v1, a1 = self.state(t)
        return np.array([s1]), np.array([v1]), np.array([a1])


def hv_profile(params: AccParams) -> HvProfile:
    return HvProfile(params.s1_0, params.v1_cruise, params.brake_onset, params.brake_decel, params.v1_low)


@numba.njit(cache=True)
def _acc_rhs(x, u, p, out):
    out[0] = x[1]
    out[1] = -(p[0] + p[1] * x[1] * x[1]) + u[0]


_acc_rk4 = make_fast_rk4(_acc_rhs)


def acc_dynamics(params: AccParams) -> ControlAffineSystem:
    """``f(s, v) = (v, -p(v))``, ``g = (0, 1)``."""
    c0, c2 = params.c0, params.c2
    return ControlAffineSystem(
        state_dim=2,
        input_dim=1,
        drift=lambda x: np.array([x[1], -(c0 + c2 * x[1] * x[1])]),
        actuation=lambda x: np.array([[0.0], [1.0]]),
        fast_rk4=_acc_rk4((c0, c2)),
    )


def acc_barrier(params: AccParams) -> EnvironmentalBarrier:
    """H(x, e) = kappa_bar (s1 - s - l) - v."""
    k, l = params.kappa_bar, params.length
    return EnvironmentalBarrier(
        value=lambda x, e: k * (e[0] - x[0] - l) - x[1],
        grad_x=lambda x, e: np.array([-k, -1.0]),
        grad_e=lambda x, e: np.array([k]),
    )


def acc_lipschitz(params: AccParams) -> LipschitzBundle:
    return LipschitzBundle(
        L_gradHf_e=0.0,
        L_gradHg_e=0.0,
        L_alphaH_e=params.gamma * params.kappa_bar,
        L_gradHedot_e=0.0,
        L_gradHedot_edot=params.kappa_bar,
    )


@dataclass(frozen=True)
class OneSidedAccMargin:
    """Margin for constant-speed HV extrapolation when only HV braking can hurt.

    H and its rate increase with e and e_dot, so an HV ahead of its prediction is
    harmless. Over the delay the HV falls behind the prediction by at most
    ``a_min tau^2 / 2`` in position and ``a_min tau`` in speed.
    """

    params: AccParams

    def margin_terms(self, bounds: UncertaintyBounds) -> tuple[float, float]:
        p = self.params
        eps_e = 0.5 * p.a_min * p.tau**2
        eps_edot = p.a_min * p.tau
        return p.gamma * p.kappa_bar * eps_e + p.kappa_bar * eps_edot, 0.0


def delay_bounds(params: AccParams) -> UncertaintyBounds:
    """Prediction-error bounds of constant-speed extrapolation over ``tau``."""
    a, tau = params.a_bar, params.tau
    return UncertaintyBounds(eps_e=0.5 * a * tau * tau, eps_edot=a * tau)


def initial_state(params: AccParams) -> np.ndarray:
    return np.array([params.s0, params.v0])


def run_scenario(name: str, params: Optional[AccParams] = None, options: Optional[RunOptions] = None) -> TrajectoryLog:
    """Simulate one named ACC scenario and return its log.

    ``barrier`` holds the true H(x, s1). Delayed scenarios also log the predicted
    state as extras ``xp_s`` and ``xp_v``.
    """
    if name not in SCENARIOS:
        raise UnknownScenario(f"unknown ACC scenario {name!r}; choose from {sorted(SCENARIOS)}")
    params = params or AccParams()
    options = options or RunOptions()
    sys = acc_dynamics(params)
    H = acc_barrier(params)
    alpha = ClassKappa.linear(params.gamma)
    hv = hv_profile(params)
    delayed = name.startswith("delay")
    tau = params.tau if delayed else 0.0
    config = SimulationConfig(
        horizon=options.horizon if options.horizon is not None else params.horizon,
        initial_state=initial_state(params),
        dt_integration=options.dt_integration,
        dt_control=options.dt_control,
        tau=tau,
    )
    steps = config.delay_steps
    zero = np.zeros(1)
    lip = acc_lipschitz(params)
    bias = (np.array([params.bias_s]), np.array([params.bias_v]))

    if name == "nodelay" or name == "delay_naive":
        def controller(t, x, buf, env):
            return ecbf_filter(H, alpha, sys, x, env[0], env[1], zero)
    elif name == "nodelay_noisy":
        def controller(t, x, buf, env):
            return ecbf_filter(H, alpha, sys, x, env[0] + bias[0], env[1] + bias[1], zero)
    elif name == "nodelay_robust":
        bounds = UncertaintyBounds(eps_e=params.eps_s, eps_edot=params.eps_v)

        def controller(t, x, buf, env):
            est = EnvironmentEstimate(env[0] + bias[0], env[1] + bias[1])
            return robust_ecbf_filter(H, alpha, sys, x, est, bounds, lip, zero)
    else:
        pred = EnvironmentPredictor("constant_velocity")
        if name == "delay_predictor":
            bounds, margin = UncertaintyBounds(), lip
        elif params.delay_margin == "one_sided":
            bounds, margin = UncertaintyBounds(), OneSidedAccMargin(params)
        else:
            bounds, margin = delay_bounds(params), lip

        def controller(t, x, buf, env):
            out = delayed_robust_ecbf_filter(
                H, alpha, sys, x, buf, tau, steps, pred, env[0], env[1], bounds, margin, zero, t=t
            )
            return ControlAction.from_outcome(out, xp_s=out.x_eval[0], xp_v=out.x_eval[1])

    log = simulate(sys, controller, hv.signal, config, barrier=lambda x, env: H(x, env[0]))
    log.meta.update(scenario=f"acc:{name}", tau=tau, brake_onset=hv.brake_onset, brake_end=hv.brake_end)
    if delayed:
        buf0 = InputHistoryBuffer(tau)
        n_hist = int(round(tau / config.dt_control))
        for j in range(n_hist):
            buf0.record((j - n_hist) * config.dt_control, zero)
        verdict = check_initial_history(sys, H, config.initial_state, buf0, tau, steps, hv.signal)
        log.meta["initial_history_safe"] = verdict.ok
    return log


def csv_columns(log: TrajectoryLog) -> list:
    return [
        ("s", log.x[:, 0]),
        ("v", log.x[:, 1]),
        ("s1", log.env[:, 0]),
        ("v1", log.env_dot[:, 0]),
        ("H", log.barrier),
        ("u_des", log.u_desired[:, 0]),
        ("u", log.u_applied[:, 0]),
        ("residual", log.residual),
    ]


def params_with(params: AccParams, **changes) -> AccParams:
    return dataclasses.replace(params, **changes)
