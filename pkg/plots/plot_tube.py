#!/usr/bin/env python3
"""Phase-plane figure: closed-loop trajectories with their tube
cross-sections, the terminal set, and the terminal set inflated by the
cross-section.

    plot_tube.py trace.csv tube.json bundle.json -o fig1.png \
        [--overlay trace2.csv tube2.json] [--label "..."] ...

The script is a read-only consumer of the trace/tube/bundle files; the one
numerical check it performs is the point-in-polygon audit of every
trajectory point against its tube polygon, and it aborts nonzero if that
fails.
"""

import argparse
import csv
import json
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Polygon as MplPolygon  # noqa: E402

TRACE_COLUMNS = ("k", "x1", "x2", "q1", "q2")


def read_trace(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    missing = [c for c in TRACE_COLUMNS if c not in header]
    if missing:
        sys.exit(f"{path}: trace schema mismatch, missing columns {missing}")
    idx = {c: header.index(c) for c in header}
    data = np.array([[float(v) for v in r] for r in rows[1:]])
    states = data[:, [idx["x1"], idx["x2"]]]
    nominal = data[:, [idx["q1"], idx["q2"]]]
    return states, nominal


def read_tube(path):
    with open(path) as fh:
        doc = json.load(fh)
    for key in ("tube", "terminal_set", "terminal_set_inflated"):
        if key not in doc:
            sys.exit(f"{path}: tube schema mismatch, missing '{key}'")
    return doc


def point_in_polygon(point, vertices, tol=1e-7):
    """Containment by halfspaces of the convex polygon (counter-clockwise
    ring)."""
    v = np.asarray(vertices)
    n = len(v)
    for i in range(n):
        a, b = v[i], v[(i + 1) % n]
        edge = b - a
        normal = np.array([edge[1], -edge[0]])
        nn = np.linalg.norm(normal)
        if nn < 1e-14:
            continue
        normal = normal / nn
        if normal @ (point - a) > tol:
            return False
    return True


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("trace")
    ap.add_argument("tube")
    ap.add_argument("bundle")
    ap.add_argument("--overlay", nargs=2, action="append", default=[],
                    metavar=("TRACE", "TUBE"), help="additional trace/tube pair")
    ap.add_argument("--label", action="append", default=[],
                    help="legend label per trace (repeatable)")
    ap.add_argument("-o", "--output", default="fig_tube.png")
    ns = ap.parse_args()

    pairs = [(ns.trace, ns.tube)] + [tuple(p) for p in ns.overlay]
    labels = ns.label + [f"run {i + 1}" for i in range(len(ns.label), len(pairs))]

    with open(ns.bundle) as fh:
        bundle = json.load(fh)
    if "X_T" not in bundle:
        sys.exit(f"{ns.bundle}: bundle schema mismatch, missing 'X_T'")

    fig, ax = plt.subplots(figsize=(7, 5))
    base = read_tube(pairs[0][1])
    ax.add_patch(MplPolygon(base["terminal_set_inflated"], closed=True,
                            facecolor="0.35", edgecolor="none", zorder=1,
                            label="terminal set + cross-section"))
    ax.add_patch(MplPolygon(base["terminal_set"], closed=True,
                            facecolor="white", edgecolor="0.2", zorder=2,
                            label="terminal set"))

    tube_shades = ["0.85", "0.65", "0.75"]
    line_colors = ["tab:red", "tab:blue", "tab:green", "tab:orange"]
    audit_failures = 0
    audit_points = 0
    for i, (trace_path, tube_path) in enumerate(pairs):
        states, _ = read_trace(trace_path)
        tube = read_tube(tube_path)
        for entry in tube["tube"]:
            ax.add_patch(MplPolygon(entry["vertices"], closed=True,
                                    facecolor=tube_shades[i % len(tube_shades)],
                                    edgecolor="none", alpha=0.55, zorder=3))
        if len(states):
            ax.plot(states[:, 0], states[:, 1], "-o", ms=2.5, lw=1.1,
                    color=line_colors[i % len(line_colors)], zorder=5,
                    label=labels[i])
        for entry in tube["tube"]:
            k = int(entry["k"])
            if k < len(states):
                audit_points += 1
                if not point_in_polygon(states[k], entry["vertices"]):
                    audit_failures += 1

    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    ax.legend(loc="upper right", fontsize=8)
    ax.autoscale_view()
    ax.set_title("closed-loop trajectories inside their tubes")
    fig.tight_layout()
    fig.savefig(ns.output, dpi=150)

    print(f"tube audit: {audit_points - audit_failures}/{audit_points} points inside")
    if audit_failures:
        sys.exit(f"tube audit failed for {audit_failures} points")
    print(f"wrote {ns.output}")


if __name__ == "__main__":
    main()
