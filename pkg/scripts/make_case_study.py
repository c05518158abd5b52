#!/usr/bin/env python3
"""Regenerate the shipped case-study artifacts (bundle, traces, sweeps).

Everything goes through the CLI so the files match what a user would
produce; expect a few minutes of compute for the sweeps.
"""

import argparse
import pathlib
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from rttube.cli import main as cli  # noqa: E402


def run(args):
    code = cli(args)
    if code != 0:
        raise SystemExit(f"command failed ({code}): {' '.join(args)}")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(pathlib.Path(__file__).resolve().parents[1]
                                         / "artifacts" / "case_study"))
    ap.add_argument("--quick", action="store_true",
                    help="reduced sweep sizes for a fast smoke run")
    ns = ap.parse_args()
    out = pathlib.Path(ns.out)
    out.mkdir(parents=True, exist_ok=True)

    bundle = out / "bundle.json"
    run(["synthesize", "-o", str(bundle)])

    for mbar in (2, 5):
        run(["run", str(bundle), "--controller", "aladin", "--explicit",
             "--mbar", str(mbar), "--N", "20", "--steps", "50", "--seed", "1",
             "--noise", "uniform", "-o", str(out / f"trace_mbar{mbar}.csv")])
    run(["run", str(bundle), "--controller", "centralized", "--N", "20",
         "--steps", "50", "--seed", "1", "--noise", "uniform",
         "-o", str(out / "trace_centralized.csv")])

    seeds = "4" if ns.quick else "20"
    reps = "40" if ns.quick else "100"
    mlist = "2,5,20,100" if ns.quick else "2,3,5,10,20,50,100,200,500"
    horizons = "10,40,100" if ns.quick else "10,20,30,40,50,60,70,80,90,100"
    run(["bench", str(bundle), "--kind", "both", "--horizons", horizons,
         "--mbar-list", mlist, "--seeds", seeds, "--reps", reps,
         "-o", str(out / "bench.csv")])

    run(["compare", str(bundle), "--mbar", "200", "--states", "20",
         "--explicit", "-o", str(out / "compare.json")])
    print(f"artifacts written under {out}")


if __name__ == "__main__":
    main()
