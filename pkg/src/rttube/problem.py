"""Constraint and cost assembly for the tube MPC optimal control problem.

Two equivalent views are built from one synthesis result: the stagewise
separable form (identical middle-stage sets, a measurement-coupled first
stage, a terminal set) used by the real-time iteration, and a condensed
dense QP in (q0, v) used by the centralized baseline. The initial state
enters only through the membership rows of the first stage, so those rows
are refreshed per sample while everything else stays factored.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .geometry import HPolytope
from .solvers import DenseQP, solve_qp
from .synthesis import PlantModel, TubeSynthesis


class ProblemError(Exception):
    pass


class EmptyStageSet(ProblemError):
    pass


class StageInfeasible(ProblemError):
    def __init__(self, stage, message=""):
        self.stage = stage
        super().__init__(message or f"stage {stage} subproblem infeasible")


@dataclass
class StageSets:
    """Halfspace data for the stagewise form.

    ``Y_mid`` constrains every interior stage vector (q, v); the first stage
    adds membership rows F_Z (x0 - q0) <= g_Z instantiated per sample;
    ``Y_term`` constrains the terminal state.
    """

    Y_mid: HPolytope
    Y_term: HPolytope
    Z_rows: tuple  # (F_Z, g_Z)
    n_x: int
    n_u: int

    def y0_polytope(self, x0) -> HPolytope:
        F_Z, g_Z = self.Z_rows
        x0 = np.asarray(x0, dtype=float).reshape(-1)
        F_mem = np.hstack([-F_Z, np.zeros((F_Z.shape[0], self.n_u))])
        g_mem = g_Z - F_Z @ x0
        return HPolytope(np.vstack([self.Y_mid.F, F_mem]),
                         np.concatenate([self.Y_mid.g, g_mem]), normalize=False)

    def membership_rows(self):
        """First-stage rows as (F over (q, v), base offsets, x0 coefficient):
        rows read F y <= g + E x0."""
        F_Z, g_Z = self.Z_rows
        F = np.hstack([-F_Z, np.zeros((F_Z.shape[0], self.n_u))])
        return F, g_Z, -F_Z


def build_stage_sets(syn: TubeSynthesis, model: PlantModel) -> StageSets:
    n_x, n_u = model.n_x, model.n_u
    FX, gX = syn.X_tight.F, syn.X_tight.g
    FU, gU = syn.U_tight.F, syn.U_tight.g
    rows = np.vstack([
        np.hstack([FX, np.zeros((FX.shape[0], n_u))]),
        np.hstack([np.zeros((FU.shape[0], n_x)), FU]),
        np.hstack([FX @ model.A, FX @ model.B]),
    ])
    offs = np.concatenate([gX, gU, gX])
    Y_mid = HPolytope(rows, offs).prune_redundant()
    if Y_mid.is_empty():
        raise EmptyStageSet("interior stage set is empty")
    if syn.X_T.is_empty():
        raise EmptyStageSet("terminal set is empty")
    return StageSets(Y_mid=Y_mid, Y_term=syn.X_T,
                     Z_rows=(syn.Z_h.F, syn.Z_h.g), n_x=n_x, n_u=n_u)


@dataclass
class CondensedQP:
    """Dense QP in zeta = (q0, v_0..v_{N-1}) with the states eliminated.

    The inequality offsets split into a static part and the first-stage
    membership rows g_Z - F_Z x0; ``set_x0`` rewrites only the latter.
    """

    H: np.ndarray
    F: np.ndarray
    g: np.ndarray
    mem_slice: slice
    g_mem_base: np.ndarray
    S_mem: np.ndarray  # g_mem = g_mem_base + S_mem @ x0
    Phi: np.ndarray    # (N+1, n_x, nz) trajectory map
    row_blocks: dict
    N: int
    n_x: int
    n_u: int

    def set_x0(self, x0):
        x0 = np.asarray(x0, dtype=float).reshape(-1)
        self.g[self.mem_slice] = self.g_mem_base + self.S_mem @ x0

    def as_qp(self, x0=None) -> DenseQP:
        if x0 is not None:
            self.set_x0(x0)
        return DenseQP(H=self.H, c=np.zeros(self.H.shape[0]), F=self.F, g=self.g)

    def expand(self, zeta):
        """Stage trajectories (Q (N+1, n_x), V (N, n_u)) from the decision."""
        zeta = np.asarray(zeta, dtype=float).reshape(-1)
        Qtraj = self.Phi @ zeta
        V = zeta[self.n_x:].reshape(self.N, self.n_u)
        return Qtraj, V

    def objective_value(self, zeta):
        zeta = np.asarray(zeta, dtype=float).reshape(-1)
        return float(0.5 * zeta @ self.H @ zeta)


def build_condensed(syn: TubeSynthesis, model: PlantModel, N: int, x0=None) -> CondensedQP:
    if N < 1:
        raise ProblemError("horizon must be at least 1")
    n_x, n_u = model.n_x, model.n_u
    nz = n_x + N * n_u
    A, B = model.A, model.B

    Phi = np.zeros((N + 1, n_x, nz))
    Apow = np.eye(n_x)
    Phi[0, :, :n_x] = Apow
    for k in range(1, N + 1):
        Phi[k, :, :n_x] = A @ Phi[k - 1, :, :n_x]
        Phi[k, :, n_x:] = A @ Phi[k - 1, :, n_x:]
        Phi[k, :, n_x + (k - 1) * n_u: n_x + k * n_u] += B

    H = np.zeros((nz, nz))
    for k in range(N):
        H += 2.0 * Phi[k].T @ model.Q @ Phi[k]
        sel = np.zeros((n_u, nz))
        sel[:, n_x + k * n_u: n_x + (k + 1) * n_u] = np.eye(n_u)
        H += 2.0 * sel.T @ model.R @ sel
    H += 2.0 * Phi[N].T @ syn.P @ Phi[N]
    H = 0.5 * (H + H.T)

    FX, gX = syn.X_tight.F, syn.X_tight.g
    FU, gU = syn.U_tight.F, syn.U_tight.g
    FT, gT = syn.X_T.F, syn.X_T.g
    F_Z, g_Z = syn.Z_h.F, syn.Z_h.g

    rows, offs = [], []
    row_blocks = {}
    cursor = 0

    def add_block(name, Fb, gb):
        nonlocal cursor
        rows.append(Fb)
        offs.append(gb)
        row_blocks[name] = slice(cursor, cursor + Fb.shape[0])
        cursor += Fb.shape[0]

    for k in range(N):
        add_block(f"state_{k}", FX @ Phi[k], gX)
    for k in range(N):
        sel = np.zeros((n_u, nz))
        sel[:, n_x + k * n_u: n_x + (k + 1) * n_u] = np.eye(n_u)
        add_block(f"input_{k}", FU @ sel, gU)
    add_block("terminal", FT @ Phi[N], gT)
    mem_F = np.zeros((F_Z.shape[0], nz))
    mem_F[:, :n_x] = -F_Z
    add_block("membership", mem_F, g_Z.copy())
    mem_slice = row_blocks["membership"]

    cqp = CondensedQP(H=H, F=np.vstack(rows), g=np.concatenate(offs),
                      mem_slice=mem_slice, g_mem_base=g_Z.copy(), S_mem=-F_Z,
                      Phi=Phi, row_blocks=row_blocks, N=N, n_x=n_x, n_u=n_u)
    if x0 is not None:
        cqp.set_x0(x0)
    return cqp


def tube_feedback(x0, q0, v0, K):
    """Applied input v0 + K (x0 - q0); admissible by construction, so no
    clipping."""
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    q0 = np.asarray(q0, dtype=float).reshape(-1)
    v0 = np.asarray(v0, dtype=float).reshape(-1)
    return v0 + np.atleast_2d(K) @ (x0 - q0)


@dataclass
class CentralizedSolution:
    u: np.ndarray
    q0: np.ndarray
    v0: np.ndarray
    value: float
    zeta: np.ndarray
    Qtraj: np.ndarray
    V: np.ndarray
    mu: np.ndarray
    active_set: tuple
    wall_time: float
    iterations: int


class CentralizedTubeController:
    """Baseline controller: condensed QP solved to optimality each sample
    with a warm-started active set."""

    def __init__(self, syn: TubeSynthesis, model: PlantModel, N: int):
        self.syn = syn
        self.model = model
        self.N = N
        self.cqp = build_condensed(syn, model, N)
        self.qp = self.cqp.as_qp(np.zeros(model.n_x))
        self._warm_active = None
        self._warm_x = None
        self._last_x0 = None

    def reset(self):
        self._warm_active = None
        self._warm_x = None
        self._last_x0 = None

    def _feasible_candidate(self, x0):
        """Cheap feasible starts before the phase-1 fallback: the previous
        decision, then the previous decision with q0 translated by the
        measurement increment (preserves the membership rows)."""
        if self._warm_x is None:
            return None
        cands = [self._warm_x]
        if self._last_x0 is not None:
            shifted = self._warm_x.copy()
            shifted[:self.cqp.n_x] += np.asarray(x0, dtype=float) - self._last_x0
            cands.append(shifted)
        for cand in cands:
            if np.max(self.qp.F @ cand - self.qp.g) <= 1e-9:
                return cand
        return None

    def solve(self, x0) -> CentralizedSolution:
        self.cqp.set_x0(x0)
        self.qp.g = self.cqp.g
        t0 = time.perf_counter()
        start = self._feasible_candidate(x0)
        sol = solve_qp(self.qp, warm_active=self._warm_active, x0=start)
        wall = time.perf_counter() - t0
        self._last_x0 = np.asarray(x0, dtype=float).copy()
        if sol.status != "optimal":
            raise StageInfeasible(0, f"centralized problem {sol.status} at x0={np.asarray(x0)}"
                                     f" ({self._diagnose(x0)})")
        self._warm_active = sol.active_set
        self._warm_x = sol.x
        Qtraj, V = self.cqp.expand(sol.x)
        q0, v0 = Qtraj[0], V[0]
        u = tube_feedback(x0, q0, v0, self.syn.K)
        return CentralizedSolution(u=u, q0=q0, v0=v0, value=self.cqp.objective_value(sol.x),
                                   zeta=sol.x, Qtraj=Qtraj, V=V, mu=sol.mu_ineq,
                                   active_set=sol.active_set, wall_time=wall,
                                   iterations=sol.iterations)

    def _diagnose(self, x0):
        """Name the constraint blocks that cannot be satisfied (minimal
        uniform-relaxation point)."""
        from scipy.optimize import linprog

        m, nz = self.qp.F.shape
        c = np.zeros(nz + 1)
        c[-1] = 1.0
        res = linprog(c, A_ub=np.hstack([self.qp.F, -np.ones((m, 1))]),
                      b_ub=self.qp.g, bounds=[(None, None)] * nz + [(0, None)],
                      method="highs")
        if res.status != 0:
            return "diagnosis LP failed"
        viol = self.qp.F @ res.x[:-1] - self.qp.g
        bad = [name for name, sl in self.cqp.row_blocks.items()
               if np.max(viol[sl], initial=-np.inf) > 1e-9]
        return "violated blocks: " + (", ".join(bad) if bad else "none")


def recover_duals(syn: TubeSynthesis, model: PlantModel, cqp: CondensedQP,
                  sol: CentralizedSolution):
    """Stagewise primal/dual variables of the separable form from a
    condensed solution.

    Stage inequality multipliers transfer one-to-one (the duplicated
    next-state rows of the interior stages get zero), and the coupling
    multipliers follow from the stagewise stationarity recursion run
    backward from the terminal stage.
    """
    N, n_x = cqp.N, cqp.n_x
    Qtraj, V = sol.Qtraj, sol.V
    ys = [np.concatenate([Qtraj[k], V[k]]) for k in range(N)] + [Qtraj[N]]

    mu_x = [sol.mu[cqp.row_blocks[f"state_{k}"]] for k in range(N)]
    mu_T = sol.mu[cqp.row_blocks["terminal"]]

    FX = syn.X_tight.F
    FT = syn.X_T.F
    lam = [None] * (N + 1)  # 1-indexed
    lam[N] = -2.0 * syn.P @ Qtraj[N] - FT.T @ mu_T
    for k in range(N - 1, 0, -1):
        lam[k] = model.A.T @ lam[k + 1] - 2.0 * model.Q @ Qtraj[k] - FX.T @ mu_x[k]
    return ys, lam[1:]


def coupling_residual(model: PlantModel, ys):
    """max_k |D y_{k+1} - C y_k| for a stagewise trajectory."""
    n_x = model.n_x
    worst = 0.0
    for k in range(len(ys) - 1):
        q, v = ys[k][:n_x], ys[k][n_x:]
        nxt = ys[k + 1][:n_x] if ys[k + 1].size > n_x else ys[k + 1]
        worst = max(worst, float(np.max(np.abs(model.A @ q + model.B @ v - nxt))))
    return worst
