#!/usr/bin/env python3
"""Performance-degradation figure: closed-loop cost excess over the optimal
controller as a function of the per-sample iteration budget, for the
disturbance-free and the noisy plant.

    plot_degradation.py bench.mbar.csv -o fig2.png
"""

import argparse
import csv
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

REQUIRED = ("mbar", "nominal_degradation", "noisy_loss_mean")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("csv_path")
    ap.add_argument("-o", "--output", default="fig_degradation.png")
    ns = ap.parse_args()

    with open(ns.csv_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        sys.exit(f"{ns.csv_path}: empty sweep file")
    missing = [c for c in REQUIRED if c not in rows[0]]
    if missing:
        sys.exit(f"{ns.csv_path}: sweep schema mismatch, missing {missing}")

    m = [int(float(r["mbar"])) for r in rows]
    nominal = [100 * float(r["nominal_degradation"]) for r in rows]
    noisy = [100 * float(r["noisy_loss_mean"]) for r in rows]

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(m, nominal, "s-", color="tab:blue", label="disturbance-free")
    ax.plot(m, noisy, "^-", color="tab:red", label="process noise")
    ax.set_xscale("log")
    floor = min(v for v in nominal + noisy if v > 0) if any(
        v > 0 for v in nominal + noisy) else 1e-3
    if all(v > 0 for v in nominal + noisy):
        ax.set_yscale("log")
    ax.set_xlabel("inner iterations per sample")
    ax.set_ylabel("closed-loop cost excess [%]")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(ns.output, dpi=150)
    print(f"wrote {ns.output} ({len(m)} sweep points)")


if __name__ == "__main__":
    main()
