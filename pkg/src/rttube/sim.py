"""Closed-loop simulation with tube auditing.

Runs the plant under either controller, samples disturbances from a seeded
generator, and records everything needed to audit the theory: realized and
nominal stage costs, tube membership of the state around the nominal
trajectory, constraint satisfaction, and per-sample solver time.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .geometry import HPolytope, minkowski_sum_2d
from .problem import CentralizedTubeController, StageInfeasible
from .realtime import RealTimeTubeController
from .synthesis import PlantModel, TubeSynthesis


class SimError(Exception):
    pass


class InfeasibleAtStep(SimError):
    def __init__(self, step, trace, cause):
        self.step = step
        self.trace = trace
        self.cause = cause
        super().__init__(f"controller infeasible at step {step}: {cause}")


def sample_disturbance(W: HPolytope, mode: str, rng: np.random.Generator):
    """One disturbance draw: uniform over the set (rejection from its
    bounding box), a random bounding-box vertex, or zero."""
    n = W.dim
    if mode == "zero":
        return np.zeros(n)
    lo, hi = W.bounding_box()
    if mode == "uniform":
        while True:
            w = rng.uniform(lo, hi)
            if W.contains(w, tol=1e-12):
                return w
    if mode == "vertex":
        signs = rng.integers(0, 2, size=n)
        return np.where(signs == 1, hi, lo)
    raise SimError(f"unknown disturbance mode {mode!r}")


@dataclass
class SimTrace:
    states: np.ndarray          # (T+1, n_x)
    nominal: np.ndarray         # (T, n_x) first-stage nominal per sample
    inputs: np.ndarray          # (T, n_u)
    nominal_inputs: np.ndarray  # (T, n_u)
    disturbances: np.ndarray    # (T, n_x)
    stage_costs: np.ndarray     # (T,) realized l(x_k, u_k)
    nominal_costs: np.ndarray   # (T,) l(q_k, v_k)
    step_times: np.ndarray      # (T,) seconds per control computation
    feasible: np.ndarray        # (T,) bool
    tube_ok: np.ndarray         # (T,) bool: x_k in {q_k} (+) Z
    state_ok: np.ndarray        # (T,) bool: x_k in X
    input_ok: np.ndarray        # (T,) bool: u_k in U
    values: np.ndarray          # (T,) objective of the per-sample problem (nan for rti)
    diagnostics: list = field(default_factory=list)

    @property
    def T(self):
        return self.inputs.shape[0]

    def replay_consistent(self, model: PlantModel):
        """Exact replay of the recorded dynamics."""
        for k in range(self.T):
            x_next = model.A @ self.states[k] + model.B @ self.inputs[k] + self.disturbances[k]
            if not np.array_equal(x_next, self.states[k + 1]):
                return False
        return True


def run_closed_loop(controller, syn: TubeSynthesis, model: PlantModel, x0,
                    steps: int, noise: str = "uniform", seed: int = 0) -> SimTrace:
    """Simulate ``steps`` samples of the disturbed plant under the given
    controller ('centralized' instance or real-time instance)."""
    rng = np.random.default_rng(seed)
    n_x, n_u = model.n_x, model.n_u
    x = np.asarray(x0, dtype=float).reshape(-1).copy()

    states = np.zeros((steps + 1, n_x))
    nominal = np.zeros((steps, n_x))
    inputs = np.zeros((steps, n_u))
    nominal_inputs = np.zeros((steps, n_u))
    dists = np.zeros((steps, n_x))
    stage_costs = np.zeros(steps)
    nominal_costs = np.zeros(steps)
    times = np.zeros(steps)
    feas = np.zeros(steps, dtype=bool)
    tube_ok = np.zeros(steps, dtype=bool)
    state_ok = np.zeros(steps, dtype=bool)
    input_ok = np.zeros(steps, dtype=bool)
    values = np.full(steps, np.nan)
    diagnostics = []

    states[0] = x
    is_rt = isinstance(controller, RealTimeTubeController)
    for k in range(steps):
        try:
            if is_rt:
                u, (q0, v0), diag = controller.rti_step(x)
                times[k] = diag.wall_time
                diagnostics.extend(diag.rows(k))
            else:
                sol = controller.solve(x)
                u, q0, v0 = sol.u, sol.q0, sol.v0
                times[k] = sol.wall_time
                values[k] = sol.value
        except StageInfeasible as exc:
            raise InfeasibleAtStep(k, _partial_trace(
                states, nominal, inputs, nominal_inputs, dists, stage_costs,
                nominal_costs, times, feas, tube_ok, state_ok, input_ok,
                values, diagnostics, k), exc) from exc
        feas[k] = True
        u = np.asarray(u, dtype=float).reshape(-1)
        w = sample_disturbance(model.W, noise, rng)
        nominal[k] = q0
        nominal_inputs[k] = v0
        inputs[k] = u
        dists[k] = w
        stage_costs[k] = model.stage_cost(x, u)
        nominal_costs[k] = model.stage_cost(q0, v0)
        tube_ok[k] = syn.Z_h.contains(x - q0, tol=1e-7)
        state_ok[k] = model.X.contains(x, tol=1e-9)
        input_ok[k] = model.U.contains(u, tol=1e-9)
        x = model.A @ x + model.B @ u + w
        states[k + 1] = x

    return SimTrace(states=states, nominal=nominal, inputs=inputs,
                    nominal_inputs=nominal_inputs, disturbances=dists,
                    stage_costs=stage_costs, nominal_costs=nominal_costs,
                    step_times=times, feasible=feas, tube_ok=tube_ok,
                    state_ok=state_ok, input_ok=input_ok, values=values,
                    diagnostics=diagnostics)


def _partial_trace(states, nominal, inputs, nominal_inputs, dists, stage_costs,
                   nominal_costs, times, feas, tube_ok, state_ok, input_ok,
                   values, diagnostics, k):
    return SimTrace(states=states[:k + 1], nominal=nominal[:k], inputs=inputs[:k],
                    nominal_inputs=nominal_inputs[:k], disturbances=dists[:k],
                    stage_costs=stage_costs[:k], nominal_costs=nominal_costs[:k],
                    step_times=times[:k], feasible=feas[:k], tube_ok=tube_ok[:k],
                    state_ok=state_ok[:k], input_ok=input_ok[:k], values=values[:k],
                    diagnostics=diagnostics)


def closed_loop_cost(trace: SimTrace, horizon_used: int | None = None) -> float:
    """Accumulated realized stage cost over the run (optionally truncated)."""
    costs = trace.stage_costs if horizon_used is None else trace.stage_costs[:horizon_used]
    return float(np.sum(costs))


def make_centralized(syn, model, N) -> CentralizedTubeController:
    return CentralizedTubeController(syn, model, N)


# ---------------------------------------------------------------------------
# trace output
# ---------------------------------------------------------------------------

def trace_csv_header(n_x, n_u):
    cols = ["k"]
    cols += [f"x{i+1}" for i in range(n_x)]
    cols += [f"q{i+1}" for i in range(n_x)]
    cols += ["u"] if n_u == 1 else [f"u{i+1}" for i in range(n_u)]
    cols += [f"w{i+1}" for i in range(n_x)]
    cols += ["stage_cost", "rti_us", "feasible"]
    return cols


def write_trace_csv(path, trace: SimTrace):
    n_x = trace.states.shape[1]
    n_u = trace.inputs.shape[1]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(trace_csv_header(n_x, n_u))
        for k in range(trace.T):
            row = [k]
            row += list(trace.states[k])
            row += list(trace.nominal[k])
            row += list(trace.inputs[k])
            row += list(trace.disturbances[k])
            row += [trace.stage_costs[k], trace.step_times[k] * 1e6,
                    int(trace.feasible[k])]
            wr.writerow(row)


def read_trace_csv(path):
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        rows = [[float(v) for v in row] for row in rd]
    return header, np.array(rows)


def write_tube_json(path, trace: SimTrace, syn: TubeSynthesis):
    """Per-step tube cross-sections {q_k} (+) Z as polygon vertex lists,
    plus the terminal sets for plotting."""
    Zv = syn.Z_h.vertices_2d()
    steps = []
    for k in range(trace.T):
        steps.append({"k": k, "vertices": (Zv + trace.nominal[k]).tolist()})
    terminal = syn.X_T.vertices_2d()
    inflated = minkowski_sum_2d(syn.X_T, syn.Z_h).vertices_2d()
    doc = {
        "tube": steps,
        "terminal_set": terminal.tolist(),
        "terminal_set_inflated": inflated.tolist(),
        "cross_section": Zv.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def write_diagnostics_csv(path, diagnostics):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["sample", "inner_iteration", "primal_residual",
                     "dual_residual", "wall_us"])
        wr.writerows(diagnostics)
