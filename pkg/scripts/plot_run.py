"""Plot a trajectory CSV written by ``safeguard run``.

    python3 scripts/plot_run.py runs/acc:nodelay/trajectory.csv [-o fig.png]

Top panel: barrier column(s); bottom panel: desired and applied input.
"""

import argparse

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("csv")
    ap.add_argument("-o", "--output", default=None)
    args = ap.parse_args()
    data = np.genfromtxt(args.csv, delimiter=",", names=True)
    fig, (top, bottom) = plt.subplots(2, 1, sharex=True, figsize=(7, 5))
    for name in ("H", "H_e"):
        if name in data.dtype.names:
            top.plot(data["t"], data[name], label=name)
    top.axhline(0.0, color="k", lw=0.5)
    top.legend()
    bottom.plot(data["t"], data["u_des"], "--", label="desired")
    bottom.plot(data["t"], data["u"], label="applied")
    bottom.set_xlabel("t [s]")
    bottom.legend()
    fig.tight_layout()
    out = args.output or args.csv.rsplit(".", 1)[0] + ".png"
    fig.savefig(out, dpi=120)
    print(out)


if __name__ == "__main__":
    main()
