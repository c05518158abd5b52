#!/usr/bin/env python3
"""Timing figure: median per-sample wall time of the real-time iteration
and of the warm-started condensed baseline as the horizon grows.

    plot_timing.py bench.horizon.csv -o fig3.png
"""

import argparse
import csv
import sys
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

REQUIRED = ("N", "algo", "median_us")
STYLE = {"centralized": ("s-", "tab:blue", "condensed baseline (warm start)"),
         "rti": ("*-", "tab:red", "parallel real-time iteration")}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("csv_path")
    ap.add_argument("-o", "--output", default="fig_timing.png")
    ns = ap.parse_args()

    with open(ns.csv_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        sys.exit(f"{ns.csv_path}: empty sweep file")
    missing = [c for c in REQUIRED if c not in rows[0]]
    if missing:
        sys.exit(f"{ns.csv_path}: sweep schema mismatch, missing {missing}")

    series = defaultdict(list)
    for r in rows:
        series[r["algo"]].append((int(float(r["N"])), float(r["median_us"])))

    fig, ax = plt.subplots(figsize=(6, 4))
    for algo, pts in series.items():
        pts.sort()
        marker, color, label = STYLE.get(algo, ("o-", "gray", algo))
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker,
                color=color, label=label)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("horizon length N")
    ax.set_ylabel("median time per sample [us]")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(ns.output, dpi=150)
    print(f"wrote {ns.output} ({sum(len(v) for v in series.values())} points)")


if __name__ == "__main__":
    main()
