"""Timing and scaling harness.

Horizon sweep: per-sample wall time of the real-time iteration versus the
warm-started condensed baseline, measured along noisy closed-loop
transients from the benchmark initial state (the regime where both
controllers do real work), pooled over restarts; medians and a log-log
slope fit per algorithm. Inner-iteration sweep: closed-loop cost
degradation against the centralized controller for the disturbance-free
and noisy cases. Timing excludes I/O and serialization; warm-up samples
are discarded.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .problem import CentralizedTubeController
from .realtime import RealTimeTubeController, RtiConfig
from .sim import closed_loop_cost, run_closed_loop
from .synthesis import PlantModel, TubeSynthesis


@dataclass
class HorizonSweepResult:
    horizons: list
    median_us: dict      # algo -> list
    p95_us: dict
    slopes: dict         # algo -> fitted log-log slope

    def rows(self):
        out = []
        for algo in ("rti", "centralized"):
            for N, med, p95 in zip(self.horizons, self.median_us[algo], self.p95_us[algo]):
                out.append((N, algo, med, p95))
        return out


def sweep_horizon(syn: TubeSynthesis, model: PlantModel, x0,
                  horizons=tuple(range(10, 101, 10)), inner_iters=5,
                  steps_per_run=20, min_samples=100, seed=7,
                  stage_maps=None, gamma=None) -> HorizonSweepResult:
    """Median per-sample wall time for one real-time step and one
    warm-started centralized solve, per horizon."""
    from .realtime import build_stage_maps, calibrate_gamma

    if stage_maps is None:
        stage_maps = build_stage_maps(syn, model, max(10, min(horizons)))
    if gamma is None:
        gamma = calibrate_gamma(syn, model, min(horizons))

    median_us = {"rti": [], "centralized": []}
    p95_us = {"rti": [], "centralized": []}
    for N in horizons:
        cfg = RtiConfig(mode="explicit", inner_iters=inner_iters, gamma=gamma)
        rt = RealTimeTubeController(syn, model, N, cfg, stage_maps=stage_maps)
        ct = CentralizedTubeController(syn, model, N)
        for algo, ctrl in (("rti", rt), ("centralized", ct)):
            times = []
            run = 0
            while len(times) < min_samples:
                trace = run_closed_loop(ctrl, syn, model, x0, steps_per_run,
                                        noise="uniform", seed=seed + 1000 * run)
                # first sample of each restart is the cold solve: warm-up
                times.extend(trace.step_times[1:])
                if isinstance(ctrl, RealTimeTubeController):
                    ctrl.reset()
                else:
                    ctrl.reset()
                run += 1
            times = np.array(times) * 1e6
            median_us[algo].append(float(np.median(times)))
            p95_us[algo].append(float(np.percentile(times, 95)))

    slopes = {}
    for algo in ("rti", "centralized"):
        slopes[algo] = float(np.polyfit(np.log(np.asarray(horizons, dtype=float)),
                                        np.log(np.asarray(median_us[algo])), 1)[0])
    return HorizonSweepResult(horizons=list(horizons), median_us=median_us,
                              p95_us=p95_us, slopes=slopes)


@dataclass
class MbarSweepResult:
    m_values: list
    nominal_degradation: list    # relative cost excess, w = 0
    noisy_degradation_mean: list  # per-seed centralized reference
    noisy_degradation_max: list
    noisy_loss_mean: list        # single nominal-optimal reference (figure style)
    seeds: list


def sweep_mbar(syn: TubeSynthesis, model: PlantModel, x0, N=20,
               m_values=(1, 2, 3, 5, 10, 20, 50), seeds=tuple(range(20)),
               steps=50, stage_maps=None, gamma=None) -> MbarSweepResult:
    """Closed-loop cost degradation of the real-time controller against the
    centralized optimum, for the nominal and the disturbed plant."""
    from .realtime import build_stage_maps, calibrate_gamma

    if stage_maps is None:
        stage_maps = build_stage_maps(syn, model, N)
    if gamma is None:
        gamma = calibrate_gamma(syn, model, N)

    base = CentralizedTubeController(syn, model, N)
    base_nominal = closed_loop_cost(run_closed_loop(base, syn, model, x0, steps,
                                                    noise="zero", seed=0))
    base_noisy = {}
    for s in seeds:
        base.reset()
        base_noisy[s] = closed_loop_cost(run_closed_loop(base, syn, model, x0,
                                                         steps, noise="uniform", seed=s))

    nominal_deg, noisy_mean, noisy_max, noisy_loss = [], [], [], []
    for m in m_values:
        cfg = RtiConfig(mode="explicit", inner_iters=m, gamma=gamma)
        ctrl = RealTimeTubeController(syn, model, N, cfg, stage_maps=stage_maps)
        cost0 = closed_loop_cost(run_closed_loop(ctrl, syn, model, x0, steps,
                                                 noise="zero", seed=0))
        nominal_deg.append(cost0 / base_nominal - 1.0)
        rel, loss = [], []
        for s in seeds:
            ctrl.reset()
            cost = closed_loop_cost(run_closed_loop(ctrl, syn, model, x0, steps,
                                                    noise="uniform", seed=s))
            rel.append(cost / base_noisy[s] - 1.0)
            loss.append(cost / base_nominal - 1.0)
        noisy_mean.append(float(np.mean(rel)))
        noisy_max.append(float(np.max(rel)))
        noisy_loss.append(float(np.mean(loss)))
    return MbarSweepResult(m_values=list(m_values), nominal_degradation=nominal_deg,
                           noisy_degradation_mean=noisy_mean,
                           noisy_degradation_max=noisy_max,
                           noisy_loss_mean=noisy_loss, seeds=list(seeds))


def write_horizon_csv(path, res: HorizonSweepResult):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["N", "algo", "median_us", "p95_us"])
        wr.writerows(res.rows())


def write_slopes_json(path, res: HorizonSweepResult):
    with open(path, "w") as fh:
        json.dump({"horizons": res.horizons, "slopes": res.slopes,
                   "median_us": res.median_us}, fh, indent=1)


def write_mbar_csv(path, res: MbarSweepResult):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["mbar", "nominal_degradation", "noisy_degradation_mean",
                     "noisy_degradation_max", "noisy_loss_mean"])
        for i, m in enumerate(res.m_values):
            wr.writerow([m, res.nominal_degradation[i],
                         res.noisy_degradation_mean[i], res.noisy_degradation_max[i],
                         res.noisy_loss_mean[i]])
