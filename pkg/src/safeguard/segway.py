"""Planar Segway avoiding a horizontally moving circular obstacle.

State ``x = (p, phi, v, omega)``: wheel position, pitch angle and their rates.
Input ``u`` is the motor voltage. The obstacle center is ``(e, y)`` with ``e``
moving at constant speed. Because ``grad_x H . g = 0`` the barrier is extended
with its own rate, ``H_e = Hdot + gamma_e H``, and enforced as an environmental
barrier over the augmented environment ``E = (e, e_dot)`` whose rate is
``(e_dot, e_ddot)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np

from .core import (
    ClassKappa,
    ControlAffineSystem,
    DomainViolation,
    UnknownScenario,
    make_fast_rk4,
)
from .delay import (
    EnvironmentPredictor,
    InputHistoryBuffer,
    check_initial_history,
    delayed_robust_ecbf_filter,
)
from .ecbf import EnvironmentalBarrier, EnvironmentEstimate, UncertaintyBounds, ecbf_filter
from .sim import ControlAction, RunOptions, SimulationConfig, TrajectoryLog, simulate

SCENARIOS = {
    "nodelay": "extended ECBF filter, exact obstacle, no input delay",
    "delay_naive": "same filter on a plant with 0.1 s input delay, uncompensated",
    "delay_robust": "predictor feedback with biased obstacle-speed prediction and robust margin",
}


@dataclass(frozen=True)
class SegwayParams:
    """Physical parameters (SI). Wheel quantities are for both wheels together."""

    g: float = 9.81
    R: float = 0.195
    M: float = 2 * 2.485
    J_C: float = 2 * 0.0559
    L: float = 0.169
    ell: float = 0.75
    m: float = 44.798
    J_G: float = 3.836
    phi0: float = 0.138
    K_m: float = 2 * 1.262
    b_t: float = 2 * 1.225

    def __post_init__(self):
        if min(self.g, self.R, self.L, self.ell, self.m) <= 0 or min(self.M, self.J_C, self.J_G) < 0:
            raise ValueError("lengths and masses must be positive")
        if self.K_m < 0 or self.b_t < 0:
            raise ValueError("motor constants must be nonnegative")
        if self.K_m == 0 and self.b_t != 0:
            raise ValueError("b_t > 0 with K_m = 0 is not representable in the combined form")

    @property
    def m0(self) -> float:
        return self.m + self.M + self.J_C / self.R**2

    @property
    def J0(self) -> float:
        return self.m * self.L**2 + self.J_G

    def energy(self, x) -> float:
        """Mechanical energy T + U of the frame and wheels."""
        _, phi, v, w = x
        T = 0.5 * self.m0 * v * v + self.m * self.L * v * w * math.cos(phi) + 0.5 * self.J0 * w * w
        return T + self.m * self.g * self.L * math.cos(phi)


@dataclass(frozen=True)
class SegwayCoefficients:
    """Combined coefficients entering the equations of motion."""

    a: float
    b: float
    c: float
    kappa: float
    A: float
    B: float
    C: float
    D: float
    g: float
    R: float

    @classmethod
    def from_params(cls, p: SegwayParams) -> "SegwayCoefficients":
        mL = p.m * p.L
        m0, J0 = p.m0, p.J0
        return cls(
            a=J0 / mL,
            b=m0 * J0 / mL**2,
            c=m0 * p.g / mL,
            kappa=p.b_t / p.K_m if p.K_m > 0 else 0.0,
            A=p.K_m * J0 / (mL**2 * p.R),
            B=p.K_m / mL,
            C=p.K_m / (mL * p.R),
            D=p.K_m * m0 / mL**2,
            g=p.g,
            R=p.R,
        )

    @classmethod
    def published(cls, g: float = 9.81, R: float = 0.195) -> "SegwayCoefficients":
        """The rounded combined values tabulated with the identified model."""
        return cls(a=0.6768, b=4.7274, c=68.5205, kappa=0.9713, A=1.1605, B=0.3344, C=1.7147, D=2.3355, g=g, R=R)

    def vector(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c, self.kappa, self.A, self.B, self.C, self.D, self.g, self.R])


PUBLISHED_COMBINED = {
    "m0": 52.710, "J0": 5.108, "a": 0.6768, "b": 4.7274, "c": 68.5205,
    "kappa": 0.9713, "A": 1.1605, "B": 0.3344, "C": 1.7147, "D": 2.3355,
}


def derived_combined(p: SegwayParams) -> dict:
    co = SegwayCoefficients.from_params(p)
    return {"m0": p.m0, "J0": p.J0, "a": co.a, "b": co.b, "c": co.c, "kappa": co.kappa,
            "A": co.A, "B": co.B, "C": co.C, "D": co.D}


@numba.njit(cache=True)
def _segway_rhs(x, u, p, out):
    a, b, c, kap, A, B, C, D, g, R = p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7], p[8], p[9]
    phi, v, w = x[1], x[2], x[3]
    s = math.sin(phi)
    co = math.cos(phi)
    den = b - co * co
    gv = (A + B * co) / den
    gw = -(C * co + D) / den
    slip = v - R * w
    out[0] = v
    out[1] = w
    out[2] = (a * s * w * w - g * s * co) / den - kap * gv * slip + gv * u[0]
    out[3] = (-s * co * w * w + c * s) / den - kap * gw * slip + gw * u[0]


_segway_rk4 = make_fast_rk4(_segway_rhs)


def segway_dynamics(coeffs: SegwayCoefficients) -> ControlAffineSystem:
    co = coeffs

    def terms(x):
        phi, v, w = x[1], x[2], x[3]
        s, c = math.sin(phi), math.cos(phi)
        den = co.b - c * c
        gv = (co.A + co.B * c) / den
        gw = -(co.C * c + co.D) / den
        return s, c, den, gv, gw, v - co.R * w

    def drift(x):
        s, c, den, gv, gw, slip = terms(x)
        w = x[3]
        return np.array([
            x[2],
            w,
            (co.a * s * w * w - co.g * s * c) / den - co.kappa * gv * slip,
            (-s * c * w * w + co.c * s) / den - co.kappa * gw * slip,
        ])

    def actuation(x):
        _, _, _, gv, gw, _ = terms(x)
        return np.array([[0.0], [0.0], [gv], [gw]])

    return ControlAffineSystem(4, 1, drift, actuation, fast_rk4=_segway_rk4(co.vector()))


@dataclass(frozen=True)
class ObstacleMotion:
    """Obstacle of radius ``r`` centered at ``(e0 - v_obs t, y)``."""

    e0: float = 1.0
    v_obs: float = 0.5
    y: float = 1.0418
    r: float = 0.2

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError("obstacle radius must be positive")

    def signal(self, t: float):
        return np.array([self.e0 - self.v_obs * t]), np.array([-self.v_obs]), np.array([0.0])


@dataclass(frozen=True)
class SegwayBarrier:
    """Tip-to-obstacle clearance ``H = |d|^2 - r^2`` and its dynamic extension.

    With ``P = p + ell sin(phi + phi0)`` and ``Q = R + ell cos(phi + phi0) - y``,
    ``H = h0 + h1 e + e^2`` where ``h0 = P^2 + Q^2 - r^2`` and ``h1 = -2P``, and
    ``H_e = H0 + H1 e + h1 e_dot + gamma_e e^2 + 2 e e_dot``.
    """

    ell: float
    R: float
    phi0: float
    y: float
    r: float
    gamma_e: float

    def _geom(self, x):
        th = x[1] + self.phi0
        s, c = math.sin(th), math.cos(th)
        P = x[0] + self.ell * s
        Q = self.R + self.ell * c - self.y
        return s, c, P, Q

    def h0(self, x) -> float:
        _, _, P, Q = self._geom(x)
        return P * P + Q * Q - self.r**2

    def h1(self, x) -> float:
        return -2.0 * self._geom(x)[2]

    def grad_h0(self, x) -> np.ndarray:
        s, c, P, Q = self._geom(x)
        return np.array([2 * P, 2 * self.ell * (P * c - Q * s), 0.0, 0.0])

    def grad_h1(self, x) -> np.ndarray:
        s, c, _, _ = self._geom(x)
        return np.array([-2.0, -2.0 * self.ell * c, 0.0, 0.0])

    def H0(self, x) -> float:
        s, c, P, Q = self._geom(x)
        v, w = x[2], x[3]
        return 2 * P * v + 2 * self.ell * (P * c - Q * s) * w + self.gamma_e * (P * P + Q * Q - self.r**2)

    def H1(self, x) -> float:
        s, c, P, _ = self._geom(x)
        return -2 * x[2] - 2 * self.ell * c * x[3] - 2 * self.gamma_e * P

    def grad_H0(self, x) -> np.ndarray:
        s, c, P, Q = self._geom(x)
        v, w, l, ge = x[2], x[3], self.ell, self.gamma_e
        a_phi = 2 * l * (P * c - Q * s)
        return np.array([
            2 * v + 2 * l * c * w + 2 * ge * P,
            2 * l * c * v + (2 * l * l - 2 * l * (P * s + Q * c)) * w + ge * a_phi,
            2 * P,
            a_phi,
        ])

    def grad_H1(self, x) -> np.ndarray:
        s, c, _, _ = self._geom(x)
        l, ge = self.ell, self.gamma_e
        return np.array([-2 * ge, 2 * l * s * x[3] - 2 * ge * l * c, -2.0, -2 * l * c])

    # clearance barrier, environment e (scalar)
    def H(self, x, e: float) -> float:
        return self.h0(x) + self.h1(x) * e + e * e

    def grad_x_H(self, x, e: float) -> np.ndarray:
        return self.grad_h0(x) + e * self.grad_h1(x)

    def grad_e_H(self, x, e: float) -> float:
        return self.h1(x) + 2 * e

    def H_rate(self, x, e: float, e_dot: float, xdot) -> float:
        return float(self.grad_x_H(x, e) @ xdot) + self.grad_e_H(x, e) * e_dot

    # extended barrier, environment E = (e, e_dot)
    def He(self, x, e: float, e_dot: float) -> float:
        return self.H0(x) + self.H1(x) * e + self.h1(x) * e_dot + self.gamma_e * e * e + 2 * e * e_dot

    def grad_x_He(self, x, e: float, e_dot: float) -> np.ndarray:
        return self.grad_H0(x) + e * self.grad_H1(x) + e_dot * self.grad_h1(x)

    def grad_E_He(self, x, e: float, e_dot: float) -> np.ndarray:
        return np.array([self.H1(x) + 2 * self.gamma_e * e + 2 * e_dot, self.h1(x) + 2 * e])

    def He_rate(self, sys: ControlAffineSystem, x, e, e_dot, e_ddot, u) -> float:
        """Hdot_e including the e_ddot term through grad_{e_dot} H_e."""
        gE = self.grad_E_He(x, e, e_dot)
        return float(self.grad_x_He(x, e, e_dot) @ sys.rhs(x, u)) + gE[0] * e_dot + gE[1] * e_ddot

    def contractions(self, sys: ControlAffineSystem, x) -> np.ndarray:
        """(C0, C1, C2, C3, C4): grad H0, H1, h1 against f and grad H0, H1 against g."""
        f, g = sys.f(x), sys.g(x)[:, 0]
        gH0, gH1, gh1 = self.grad_H0(x), self.grad_H1(x), self.grad_h1(x)
        return np.array([gH0 @ f, gH1 @ f, gh1 @ f, gH0 @ g, gH1 @ g])

    def clearance(self) -> EnvironmentalBarrier:
        return EnvironmentalBarrier(
            value=lambda x, e: self.H(x, e[0]),
            grad_x=lambda x, e: self.grad_x_H(x, e[0]),
            grad_e=lambda x, e: np.array([self.grad_e_H(x, e[0])]),
        )

    def extended(self) -> EnvironmentalBarrier:
        return EnvironmentalBarrier(
            value=lambda x, E: self.He(x, E[0], E[1]),
            grad_x=lambda x, E: self.grad_x_He(x, E[0], E[1]),
            grad_e=lambda x, E: self.grad_E_He(x, E[0], E[1]),
        )


def segway_barrier(params: SegwayParams, obstacle: ObstacleMotion, gamma_e: float) -> SegwayBarrier:
    if not gamma_e > 0:
        raise ValueError("gamma_e must be positive")
    return SegwayBarrier(params.ell, params.R, params.phi0, obstacle.y, obstacle.r, gamma_e)


@dataclass(frozen=True)
class EnvDomains:
    """Intervals known to contain the obstacle position, speed and acceleration."""

    e: tuple = (-3.0, 3.0)
    e_dot: tuple = (-0.55, 0.55)
    e_ddot: tuple = (0.0, 0.0)

    def __post_init__(self):
        for name in ("e", "e_dot", "e_ddot"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"empty domain for {name}")

    @staticmethod
    def _max_abs(iv) -> float:
        return max(abs(iv[0]), abs(iv[1]))

    @property
    def max_e(self) -> float:
        return self._max_abs(self.e)

    @property
    def max_e_dot(self) -> float:
        return self._max_abs(self.e_dot)

    @property
    def max_e_ddot(self) -> float:
        return self._max_abs(self.e_ddot)


@dataclass(frozen=True)
class SegwayLipschitzBundle:
    """Lipschitz coefficients of the pieces of Hdot_e + alpha(H_e) in (e, e_dot, e_ddot).

    Field names read ``<term>_<argument>``: ``f`` is grad_x H_e . f, ``g`` is
    grad_x H_e . g, ``edot`` is grad_e H_e . e_dot, ``eddot`` is
    grad_{e_dot} H_e . e_ddot and ``alpha`` is alpha(H_e).
    """

    f_e: float
    f_edot: float
    g_e: float
    g_edot: float
    edot_e: float
    edot_edot: float
    eddot_e: float
    eddot_edot: float
    eddot_eddot: float
    alpha_e: float
    alpha_edot: float

    def __post_init__(self):
        if min(vars(self).values()) < 0:
            raise ValueError("Lipschitz coefficients must be nonnegative")

    def margin_terms(self, bounds: UncertaintyBounds) -> tuple[float, float]:
        const = (
            (self.f_e + self.alpha_e + self.edot_e + self.eddot_e) * bounds.eps_e
            + (self.f_edot + self.alpha_edot + self.edot_edot + self.eddot_edot) * bounds.eps_edot
            + self.eddot_eddot * bounds.eps_eddot
        )
        return const, self.g_e * bounds.eps_e + self.g_edot * bounds.eps_edot


def segway_lipschitz(
    barrier: SegwayBarrier,
    sys: ControlAffineSystem,
    x,
    e_hat: float,
    e_dot_hat: float,
    domains: EnvDomains,
    gamma: float,
) -> SegwayLipschitzBundle:
    """Coefficients at state ``x`` and estimate ``(e_hat, e_dot_hat)``.

    They depend on the estimate and on the domain radii, never on the true
    environment. Raises DomainViolation if the estimate leaves its domain.
    """
    tol = 1e-12
    if not domains.e[0] - tol <= e_hat <= domains.e[1] + tol:
        raise DomainViolation(f"e_hat={e_hat!r} outside {domains.e}")
    if not domains.e_dot[0] - tol <= e_dot_hat <= domains.e_dot[1] + tol:
        raise DomainViolation(f"e_dot_hat={e_dot_hat!r} outside {domains.e_dot}")
    C = barrier.contractions(sys, x)
    H1 = abs(barrier.H1(x))
    h1 = abs(barrier.h1(x))
    ge = barrier.gamma_e
    ed_max, edd_max, e_max = domains.max_e_dot, domains.max_e_ddot, domains.max_e
    return SegwayLipschitzBundle(
        f_e=abs(C[1]),
        f_edot=abs(C[2]),
        g_e=abs(C[4]),
        g_edot=0.0,
        edot_e=2 * ge * ed_max,
        edot_edot=H1 + 2 * ge * abs(e_hat) + 2 * abs(e_dot_hat) + 2 * ed_max,
        eddot_e=2 * edd_max,
        eddot_edot=0.0,
        eddot_eddot=h1 + 2 * abs(e_hat),
        alpha_e=gamma * H1 + gamma * ge * (abs(e_hat) + e_max) + 2 * gamma * ed_max,
        alpha_edot=gamma * h1 + 2 * gamma * abs(e_hat),
    )


@dataclass(frozen=True)
class TrackingGains:
    K_pdot: float = 8.0
    K_phi: float = 40.0
    K_phidot: float = 10.0
    pdot_desired: float = 1.0


def segway_desired_controller(gains: TrackingGains):
    """Speed-tracking law that also balances the frame upright."""

    def u_d(x):
        return np.array([
            gains.K_pdot * (x[2] - gains.pdot_desired) + gains.K_phi * x[1] + gains.K_phidot * x[3]
        ])

    return u_d


@dataclass(frozen=True)
class SegwayScenario:
    """Scenario settings layered on top of :class:`SegwayParams`.

    ``coefficients`` picks the tabulated combined coefficients (``"published"``)
    or ones recomputed from the physical parameters (``"derived"``).
    """

    gamma: float = 7.5
    gamma_e: float = 7.5
    tau: float = 0.1
    delta_v: float = 0.05
    eps_e: float = 0.0055
    eps_edot: float = 0.055
    eps_eddot: float = 0.0
    e0: float = 1.0
    v_obs: float = 0.5
    y: float = 1.0418
    r: float = 0.2
    K_pdot: float = 8.0
    K_phi: float = 40.0
    K_phidot: float = 10.0
    pdot_desired: float = 1.0
    domains: EnvDomains = field(default_factory=EnvDomains)
    horizon: float = 7.5
    coefficients: str = "published"
    # (p, phi, v, omega); cruising at the desired speed
    initial_state: tuple = (0.0, 0.0, 1.0, 0.0)

    def __post_init__(self):
        if self.coefficients not in ("published", "derived"):
            raise ValueError(f"unknown coefficients source {self.coefficients!r}")
        if not (self.gamma > 0 and self.gamma_e > 0 and self.tau >= 0):
            raise ValueError("gamma, gamma_e must be positive and tau nonnegative")

    def obstacle(self) -> ObstacleMotion:
        return ObstacleMotion(self.e0, self.v_obs, self.y, self.r)

    def gains(self) -> TrackingGains:
        return TrackingGains(self.K_pdot, self.K_phi, self.K_phidot, self.pdot_desired)


def coefficients_for(params: SegwayParams, scenario: SegwayScenario) -> SegwayCoefficients:
    if scenario.coefficients == "derived":
        return SegwayCoefficients.from_params(params)
    return SegwayCoefficients.published(g=params.g, R=params.R)


def biased_predictor(delta_v: float) -> EnvironmentPredictor:
    """Constant-velocity extrapolation of ``E = (e, e_dot)`` with the speed magnitude underestimated.

    For an obstacle moving toward -e, adding ``delta_v`` to ``e_dot`` shrinks its speed.
    """
    return EnvironmentPredictor(
        model="custom",
        gamma=lambda tau, E: np.array([E[0] + (E[1] + delta_v) * tau, E[1] + delta_v]),
        gamma_dot=lambda tau, E, Edot: np.array([E[1] + delta_v, 0.0]),
    )


def run_segway_scenario(
    name: str,
    params: Optional[SegwayParams] = None,
    scenario: Optional[SegwayScenario] = None,
    options: Optional[RunOptions] = None,
) -> TrajectoryLog:
    """Simulate one named Segway scenario.

    ``barrier`` holds the true clearance H and ``extended_barrier`` the true H_e.
    The robust delayed run also logs the predicted state (``xp_*``) and the
    realized environment prediction errors (``err_e``, ``err_edot``).
    """
    if name not in SCENARIOS:
        raise UnknownScenario(f"unknown Segway scenario {name!r}; choose from {sorted(SCENARIOS)}")
    params = params or SegwayParams()
    sc = scenario or SegwayScenario()
    options = options or RunOptions()
    sys = segway_dynamics(coefficients_for(params, sc))
    obstacle = sc.obstacle()
    bar = segway_barrier(params, obstacle, sc.gamma_e)
    He = bar.extended()
    alpha = ClassKappa.linear(sc.gamma)
    u_des = segway_desired_controller(sc.gains())
    tau = sc.tau if name != "nodelay" else 0.0
    config = SimulationConfig(
        horizon=options.horizon if options.horizon is not None else sc.horizon,
        initial_state=np.array(sc.initial_state, dtype=float),
        dt_integration=options.dt_integration,
        dt_control=options.dt_control,
        tau=tau,
    )
    steps = config.delay_steps

    def aug(env):
        e, ed, edd = env[0][0], env[1][0], env[2][0]
        return np.array([e, ed]), np.array([ed, edd])

    if name in ("nodelay", "delay_naive"):
        def controller(t, x, buf, env):
            E, Edot = aug(env)
            return ecbf_filter(He, alpha, sys, x, E, Edot, u_des(x))
    else:
        pred = biased_predictor(sc.delta_v)
        bounds = UncertaintyBounds(sc.eps_e, sc.eps_edot, sc.eps_eddot)

        def margin(x_p, est: EnvironmentEstimate):
            return segway_lipschitz(bar, sys, x_p, est.e_hat[0], est.e_hat[1], sc.domains, sc.gamma)

        def controller(t, x, buf, env):
            E, Edot = aug(env)
            out = delayed_robust_ecbf_filter(
                He, alpha, sys, x, buf, tau, steps, pred, E, Edot, bounds, margin, u_des, t=t
            )
            # logging only: compare the prediction with where the obstacle will be
            E_hat = pred.gamma(tau, E)
            true_p = obstacle.signal(t + tau)
            xp = out.x_eval
            return ControlAction.from_outcome(
                out,
                xp_p=xp[0], xp_phi=xp[1], xp_v=xp[2], xp_omega=xp[3],
                err_e=true_p[0][0] - E_hat[0], err_edot=true_p[1][0] - E_hat[1],
            )

    log = simulate(
        sys,
        controller,
        obstacle.signal,
        config,
        barrier=lambda x, env: bar.H(x, env[0][0]),
        extended_barrier=lambda x, env: bar.He(x, env[0][0], env[1][0]),
    )
    e0, ed0, _ = obstacle.signal(0.0)
    log.meta.update(
        scenario=f"segway:{name}",
        tau=tau,
        initial_extended_barrier=bar.He(config.initial_state, e0[0], ed0[0]),
        coefficients=sc.coefficients,
    )
    if tau > 0:
        buf0 = InputHistoryBuffer(tau)
        n_hist = int(round(tau / config.dt_control))
        for j in range(n_hist):
            buf0.record((j - n_hist) * config.dt_control, np.zeros(1))
        verdict = check_initial_history(sys, bar.clearance(), config.initial_state, buf0, tau, steps, obstacle.signal)
        log.meta["initial_history_safe"] = verdict.ok
    return log


def csv_columns(log: TrajectoryLog) -> list:
    return [
        ("p", log.x[:, 0]),
        ("phi", log.x[:, 1]),
        ("v", log.x[:, 2]),
        ("omega", log.x[:, 3]),
        ("e", log.env[:, 0]),
        ("e_dot", log.env_dot[:, 0]),
        ("H", log.barrier),
        ("H_e", log.extended_barrier),
        ("u_des", log.u_desired[:, 0]),
        ("u", log.u_applied[:, 0]),
        ("residual", log.residual),
    ]
