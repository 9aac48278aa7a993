"""Plot the analytic loss CDF against a Monte Carlo empirical CDF.

    factorvar cdf --example --grid 0:0.30:200 --out curve.csv
    factorvar mc-check --example --samples 1000000 --curve-out mc_curve.csv
    python docs/examples/plot_cdf.py curve.csv mc_curve.csv cdf.png
"""

import csv
import sys

import matplotlib.pyplot as plt


def read_curve(path):
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return [float(r["x"]) for r in rows], [float(r["cdf"]) for r in rows]


def main(argv):
    if len(argv) != 4:
        sys.exit(__doc__)
    analytic, simulated, out = argv[1:]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(*read_curve(simulated), drawstyle="steps-post", label="Monte Carlo")
    ax.plot(*read_curve(analytic), linestyle="--", label="quadrature")
    ax.set_xlabel("loss (fraction of notional)")
    ax.set_ylabel("P(L ≤ x)")
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(out, dpi=150)


if __name__ == "__main__":
    main(sys.argv)
