"""Run every registered scenario and print a one-line safety summary per run.

    python3 scripts/run_all.py [--out DIR]

With ``--out`` the trajectory CSVs and manifests are written as the CLI would.
"""

import argparse
import time
from pathlib import Path

from safeguard import cli


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=None)
    args = ap.parse_args()
    print(f"{'scenario':24s} {'min H':>11s} {'first viol.':>11s} {'max|u|':>8s} {'active':>7s} {'secs':>6s}")
    for key in cli.REGISTRY:
        run = cli.resolve(key, [], {})
        t0 = time.perf_counter()
        log, columns = cli.execute(run)
        secs = time.perf_counter() - t0
        s = cli.summarize(log)
        fv = "-" if s["first_violation_time"] is None else f"{s['first_violation_time']:.3f}"
        print(f"{key:24s} {s['min_barrier']:11.4g} {fv:>11s} {s['max_abs_u']:8.3g} "
              f"{s['activation_fraction']:7.1%} {secs:6.2f}")
        if args.out is not None:
            cli.write_outputs(args.out / key, run, log, columns, "completed")


if __name__ == "__main__":
    main()
