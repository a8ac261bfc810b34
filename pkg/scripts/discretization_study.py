"""Convergence studies for the time discretization.

1. RK4 predictor error on a damped oscillator under repeated step halving
   (ratios near 16 indicate fourth order).
2. Barrier deficit of the delay-free ACC run against the control period:
   the input is held between control instants, so the worst H below zero
   shrinks roughly linearly with dt_control.
"""

import argparse

import numpy as np

from safeguard import acc
from safeguard.core import ControlAffineSystem
from safeguard.delay import InputHistoryBuffer, predict_state, predict_state_linear
from safeguard.sim import RunOptions


def predictor_order():
    A = np.array([[0.0, 1.0], [-9.0, -0.4]])
    B = np.array([[0.0], [1.0]])
    sys = ControlAffineSystem(2, 1, lambda x: A @ x, lambda x: B)
    buf = InputHistoryBuffer(1.0).record(-1.0, [1.0])
    x0 = np.array([1.0, 0.0])
    exact = predict_state_linear(A, B, x0, buf, 1.0, 1, t=0.0)
    print("steps   error        ratio")
    prev = None
    for steps in (5, 10, 20, 40, 80, 160):
        err = np.linalg.norm(predict_state(sys, x0, buf, 1.0, steps, t=0.0) - exact)
        ratio = "" if prev is None else f"{prev / err:8.2f}"
        print(f"{steps:5d}   {err:.3e}  {ratio}")
        prev = err


def hold_deficit(onset: float, v_low: float):
    params = acc.AccParams(brake_onset=onset, v1_low=v_low)
    print(f"\nACC nodelay, brake onset {onset:g} s, HV low speed {v_low:g} m/s")
    print("dt_control   min H")
    for dt in (2e-3, 1e-3, 5e-4, 2.5e-4):
        log = acc.run_scenario("nodelay", params, RunOptions(dt_integration=dt, dt_control=dt))
        print(f"{dt:10.2e}   {log.barrier.min():+.3e}")


def main():
    ap = argparse.ArgumentParser(description="time-discretization studies")
    ap.add_argument("--onset", type=float, default=13.0)
    ap.add_argument("--v-low", type=float, default=5.0)
    args = ap.parse_args()
    predictor_order()
    hold_deficit(args.onset, args.v_low)


if __name__ == "__main__":
    main()
