"""Command-line entry point.

Subcommands: ``synthesize`` (offline controller data to a JSON bundle),
``run`` (closed-loop simulation to trace CSV + tube JSON), ``bench``
(horizon / inner-iteration sweeps to CSV + slopes JSON), ``compare``
(real-time vs centralized input deviation statistics).

Exit codes: 0 success, 2 config error, 3 assumption-validation failure,
4 runtime infeasibility.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import BUNDLE_SCHEMA_VERSION
from .casestudy import X0_BENCHMARK, default_config
from .geometry import HPolytope
from .problem import CentralizedTubeController, StageInfeasible
from .realtime import RealTimeTubeController, RtiConfig, build_stage_maps, calibrate_gamma
from .sim import (InfeasibleAtStep, run_closed_loop, write_diagnostics_csv,
                  write_trace_csv, write_tube_json)
from .synthesis import (PlantModel, SynthesisError, TighteningEmpty,
                        load_bundle, save_bundle, synthesize)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VALIDATION = 3
EXIT_INFEASIBLE = 4


class ConfigError(Exception):
    pass


def load_config(path) -> tuple[PlantModel, dict]:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    cfg = default_config()
    cfg.update(raw)
    try:
        model = PlantModel(
            A=np.array(cfg["A"], dtype=float), B=np.array(cfg["B"], dtype=float),
            X=HPolytope.from_json_dict(cfg["X"]),
            U=HPolytope.from_json_dict(cfg["U"]),
            W=HPolytope.from_json_dict(cfg["W"]),
            Q=np.array(cfg["Q"], dtype=float), R=np.array(cfg["R"], dtype=float),
        )
    except (KeyError, SynthesisError, Exception) as exc:
        raise ConfigError(f"invalid model data: {exc}") from exc
    return model, cfg


def cmd_synthesize(args) -> int:
    try:
        model, cfg = load_config(args.config) if args.config else (None, default_config())
        if model is None:
            from .casestudy import case_study_model

            model = case_study_model()
        syn = synthesize(model, eps_rpi=cfg.get("eps_rpi", 1e-4))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TighteningEmpty as exc:
        print(f"validation failure: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except SynthesisError as exc:
        print(f"validation failure: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    if not syn.validation.get("all_passed", False):
        print(f"assumption validation failed: {syn.validation}", file=sys.stderr)
        return EXIT_VALIDATION
    save_bundle(args.output, model, syn)
    print(f"bundle written to {args.output} (K = {np.round(syn.K, 4).tolist()})")
    return EXIT_OK


def _load_bundle_or_exit(path):
    try:
        return load_bundle(path)
    except FileNotFoundError:
        print(f"bundle not found: {path}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)
    except SynthesisError as exc:
        print(f"bundle error: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _make_controller(args, model, syn):
    if args.controller == "centralized":
        return CentralizedTubeController(syn, model, args.N)
    mode = "explicit" if args.explicit else "online"
    maps = build_stage_maps(syn, model, args.N) if mode == "explicit" else None
    cfg = RtiConfig(inner_iters=args.mbar, gamma=args.gamma, mode=mode,
                    workers=args.workers)
    return RealTimeTubeController(syn, model, args.N, cfg, stage_maps=maps)


def cmd_run(args) -> int:
    model, syn = _load_bundle_or_exit(args.bundle)
    x0 = np.array([float(v) for v in args.x0.split(",")]) if args.x0 else X0_BENCHMARK
    try:
        ctrl = _make_controller(args, model, syn)
        trace = run_closed_loop(ctrl, syn, model, x0, args.steps,
                                noise=args.noise, seed=args.seed)
    except InfeasibleAtStep as exc:
        print(f"infeasible at step {exc.step}: {exc.cause}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except StageInfeasible as exc:
        print(f"infeasible at stage {exc.stage}", file=sys.stderr)
        return EXIT_INFEASIBLE
    out = Path(args.output)
    write_trace_csv(out, trace)
    write_tube_json(out.with_suffix(".tube.json"), trace, syn)
    if trace.diagnostics:
        write_diagnostics_csv(out.with_suffix(".diag.csv"), trace.diagnostics)
    print(f"trace written to {out} ({trace.T} steps, all feasible: "
          f"{bool(trace.feasible.all())})")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import (sweep_horizon, sweep_mbar, write_horizon_csv,
                        write_mbar_csv, write_slopes_json)

    model, syn = _load_bundle_or_exit(args.bundle)
    out = Path(args.output)
    maps = build_stage_maps(syn, model, 20)
    gamma = args.gamma or calibrate_gamma(syn, model, 20)
    if args.kind in ("horizon", "both"):
        horizons = tuple(int(v) for v in args.horizons.split(","))
        res = sweep_horizon(syn, model, X0_BENCHMARK, horizons=horizons,
                            inner_iters=args.mbar, stage_maps=maps, gamma=gamma,
                            min_samples=args.reps)
        write_horizon_csv(out.with_suffix(".horizon.csv"), res)
        write_slopes_json(out.with_suffix(".slopes.json"), res)
        print(f"horizon sweep: slopes {res.slopes}")
    if args.kind in ("mbar", "both"):
        m_values = tuple(int(v) for v in args.mbar_list.split(","))
        res = sweep_mbar(syn, model, X0_BENCHMARK, N=args.N, m_values=m_values,
                         seeds=tuple(range(args.seeds)), stage_maps=maps, gamma=gamma)
        write_mbar_csv(out.with_suffix(".mbar.csv"), res)
        print(f"inner-iteration sweep written ({len(m_values)} points, "
              f"{args.seeds} seeds)")
    return EXIT_OK


def cmd_compare(args) -> int:
    model, syn = _load_bundle_or_exit(args.bundle)
    maps = build_stage_maps(syn, model, args.N) if args.explicit else None
    mode = "explicit" if args.explicit else "online"
    cfg = RtiConfig(inner_iters=args.mbar, gamma=args.gamma, mode=mode)
    ctrl = RealTimeTubeController(syn, model, args.N, cfg, stage_maps=maps)
    base = CentralizedTubeController(syn, model, args.N)
    rng = np.random.default_rng(args.seed)
    devs = []
    tried = 0
    while len(devs) < args.states and tried < 50 * args.states:
        tried += 1
        x0 = rng.uniform(-1.0, 1.0, size=model.n_x) * np.array([10.0, 3.0])[:model.n_x]
        try:
            base.reset()
            sol = base.solve(x0)
        except StageInfeasible:
            continue
        ctrl.reset()
        u, _, _ = ctrl.rti_step(x0)
        devs.append(float(np.max(np.abs(u - sol.u))))
    devs = np.array(devs)
    summary = {"states": len(devs), "mbar": args.mbar,
               "max_deviation": float(devs.max()),
               "mean_deviation": float(devs.mean()),
               "median_deviation": float(np.median(devs))}
    with open(args.output, "w") as fh:
        json.dump(summary, fh, indent=1)
    print(json.dumps(summary))
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="rttube",
                                description="rigid tube MPC synthesis, simulation and benchmarks")
    p.add_argument("--version", action="version",
                   version=f"bundle schema {BUNDLE_SCHEMA_VERSION}")
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("synthesize", help="offline synthesis to a JSON bundle")
    ps.add_argument("--config", help="JSON config; defaults to the benchmark system")
    ps.add_argument("-o", "--output", default="bundle.json")
    ps.set_defaults(fn=cmd_synthesize)

    pr = sub.add_parser("run", help="closed-loop simulation")
    pr.add_argument("bundle")
    pr.add_argument("--controller", choices=("aladin", "centralized"), default="aladin")
    pr.add_argument("--mbar", type=int, default=5)
    pr.add_argument("--N", type=int, default=20)
    pr.add_argument("--steps", type=int, default=50)
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--noise", choices=("uniform", "vertex", "zero"), default="uniform")
    pr.add_argument("--explicit", action="store_true",
                    help="evaluate stage problems by the precomputed affine maps")
    pr.add_argument("--x0", help="comma-separated initial state")
    pr.add_argument("--gamma", type=float, default=None)
    pr.add_argument("--workers", type=int, default=1)
    pr.add_argument("-o", "--output", default="trace.csv")
    pr.set_defaults(fn=cmd_run)

    pb = sub.add_parser("bench", help="timing and degradation sweeps")
    pb.add_argument("bundle")
    pb.add_argument("--kind", choices=("horizon", "mbar", "both"), default="both")
    pb.add_argument("--horizons", default="10,20,30,40,50,60,70,80,90,100")
    pb.add_argument("--mbar", type=int, default=5)
    pb.add_argument("--mbar-list", default="1,2,3,5,10,20,50,100,200,500")
    pb.add_argument("--N", type=int, default=20)
    pb.add_argument("--seeds", type=int, default=20)
    pb.add_argument("--reps", type=int, default=100)
    pb.add_argument("--gamma", type=float, default=None)
    pb.add_argument("--workers", type=int, default=1)
    pb.add_argument("-o", "--output", default="bench.csv")
    pb.set_defaults(fn=cmd_bench)

    pc = sub.add_parser("compare", help="real-time vs centralized input deviation")
    pc.add_argument("bundle")
    pc.add_argument("--mbar", type=int, default=200)
    pc.add_argument("--N", type=int, default=20)
    pc.add_argument("--states", type=int, default=100)
    pc.add_argument("--seed", type=int, default=0)
    pc.add_argument("--explicit", action="store_true")
    pc.add_argument("--gamma", type=float, default=None)
    pc.add_argument("-o", "--output", default="compare.json")
    pc.set_defaults(fn=cmd_compare)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
