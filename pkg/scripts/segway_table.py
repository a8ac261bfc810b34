"""Compare the Segway combined coefficients recomputed from the physical
parameters with the tabulated ones, and find the pendulum offset L that the
tabulated values imply."""

from dataclasses import replace

from scipy.optimize import brentq

from safeguard.segway import PUBLISHED_COMBINED, SegwayParams, derived_combined


def main():
    p = SegwayParams()
    derived = derived_combined(p)
    print(f"{'name':6s} {'derived':>11s} {'tabulated':>11s} {'rel. err':>9s}")
    for k, pub in PUBLISHED_COMBINED.items():
        print(f"{k:6s} {derived[k]:11.5f} {pub:11.5f} {abs(derived[k] - pub) / abs(pub):9.1e}")
    # J0 = m L^2 + J_G is the only combined value that depends on L alone
    L = brentq(lambda L: replace(p, L=L).J0 - PUBLISHED_COMBINED["J0"], 0.1, 0.2)
    implied = derived_combined(replace(p, L=L))
    worst = max(abs(implied[k] - v) / abs(v) for k, v in PUBLISHED_COMBINED.items())
    print(f"\nL implied by J0: {L:.5f} m (tabulated {p.L}); worst relative error with it: {worst:.1e}")


if __name__ == "__main__":
    main()
