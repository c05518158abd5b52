"""Real-time suboptimal tube MPC controller.

Each sampling instant runs a fixed number of inner iterations, each of
which (a) solves one small proximal QP per stage — all interior stages
share a template, so in explicit mode they are answered by one batched
piecewise-affine lookup — and (b) recenters the iterate through an
equality-constrained tracking QP whose factorization is horizon-independent
data computed once. A conjugate-based rescale guards the warm-shifted
initial iterate, and the applied input comes from the last decoupled
first-stage solution through the ancillary feedback law.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .explicit import ExplicitStageMap, StageTemplate, enumerate_regions
from .geometry import HPolytope
from .problem import (CentralizedTubeController, StageInfeasible, StageSets,
                      build_stage_sets, recover_duals, tube_feedback)
from .solvers import CoupledLqrSolver, DenseQP, solve_qp
from .synthesis import PlantModel, TubeSynthesis


@dataclass
class RtiConfig:
    inner_iters: int = 5          # iterations spent per sampling instant
    gamma: float | None = None    # rescale constant; calibrated when None
    warm_shift: bool = True
    mode: str = "explicit"        # explicit | online
    workers: int = 1

    def __post_init__(self):
        if self.inner_iters < 1:
            raise ValueError("need at least one inner iteration per sample")
        if self.gamma is not None and self.gamma <= 0:
            raise ValueError("rescale constant must be positive")
        if self.mode not in ("explicit", "online"):
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass
class AladinState:
    """Primal stage vectors, coupling multipliers, and the iteration count."""

    Y: np.ndarray        # (N, n_x + n_u)
    y_term: np.ndarray   # (n_x,)
    Lam: np.ndarray      # (N, n_x), multipliers for the N coupling equalities
    j: int = 0

    def copy(self):
        return AladinState(self.Y.copy(), self.y_term.copy(), self.Lam.copy(), self.j)

    @property
    def y(self):
        return [self.Y[k] for k in range(self.Y.shape[0])] + [self.y_term]

    @property
    def lam(self):
        return [self.Lam[k] for k in range(self.Lam.shape[0])]


@dataclass
class RtiDiagnostics:
    primal_residuals: list = field(default_factory=list)
    dual_residuals: list = field(default_factory=list)
    wall_time: float = 0.0
    rescaled: bool = False
    rescale_value: float = 0.0
    map_misses: int = 0

    def rows(self, sample_index):
        """Diagnostic CSV rows: sample, inner iteration, residuals, wall us."""
        per_iter = self.wall_time * 1e6 / max(len(self.primal_residuals), 1)
        return [(sample_index, j + 1, p, d, per_iter)
                for j, (p, d) in enumerate(zip(self.primal_residuals,
                                               self.dual_residuals))]


class RealTimeTubeController:
    def __init__(self, syn: TubeSynthesis, model: PlantModel, N: int,
                 config: RtiConfig | None = None, stage_maps=None):
        self.syn = syn
        self.model = model
        self.N = int(N)
        self.config = config or RtiConfig()
        self.n_x, self.n_u = model.n_x, model.n_u

        self.H_mid = np.block([
            [model.Q, np.zeros((self.n_x, self.n_u))],
            [np.zeros((self.n_u, self.n_x)), model.R],
        ])
        self.H_term = syn.P
        self.H_mid_inv = np.linalg.inv(self.H_mid)
        self.H_term_inv = np.linalg.inv(self.H_term)

        self.C = np.hstack([model.A, model.B])
        self.D = np.hstack([np.eye(self.n_x), np.zeros((self.n_x, self.n_u))])
        self.coupled = CoupledLqrSolver([self.H_mid] * self.N + [self.H_term],
                                        self.C, self.D)

        self.stage_sets = build_stage_sets(syn, model)
        self._setup_online_workspaces()

        if self.config.gamma is None:
            self.config.gamma = calibrate_gamma(syn, model, self.N)

        self.maps = None
        if self.config.mode == "explicit":
            self.maps = stage_maps or build_stage_maps(syn, model, self.N)
        self.reset()

    # -- state management ----------------------------------------------------

    def reset(self):
        """Cold start: all-zero primal and dual iterates."""
        self.state = AladinState(Y=np.zeros((self.N, self.n_x + self.n_u)),
                                 y_term=np.zeros(self.n_x),
                                 Lam=np.zeros((self.N, self.n_x)))
        self._xi0_prev = None
        self._last_x0 = None
        for ws in self._stage_warm:
            ws.clear()

    def _setup_online_workspaces(self):
        Y = self.stage_sets.Y_mid
        self._qp_mid = DenseQP(H=4.0 * self.H_mid, c=np.zeros(self.n_x + self.n_u),
                               F=Y.F, g=Y.g)
        T = self.stage_sets.Y_term
        self._qp_term = DenseQP(H=4.0 * self.H_term, c=np.zeros(self.n_x),
                                F=T.F, g=T.g)
        F_mem, g_mem_base, E_mem = self.stage_sets.membership_rows()
        self._first_F = np.vstack([Y.F, F_mem])
        self._first_g_base = np.concatenate([Y.g, g_mem_base])
        self._first_E = np.vstack([np.zeros((Y.num_rows, self.n_x)), E_mem])
        self._qp_first = DenseQP(H=4.0 * self.H_mid, c=np.zeros(self.n_x + self.n_u),
                                 F=self._first_F, g=self._first_g_base.copy())
        self._mid_seed, _ = Y.chebyshev_center()
        self._term_seed, _ = T.chebyshev_center()
        # one warm active-set store per stage (first, middles, terminal)
        self._stage_warm = [dict() for _ in range(self.N + 1)]

    # -- conjugate machinery ---------------------------------------------------

    def _stage_coefficients(self, Lam):
        """Linear terms of the coupled Lagrangian per stage:
        c_0 = -C' lam_1, c_k = D' lam_k - C' lam_{k+1}, c_N = lam_N."""
        CtL = Lam @ self.C  # row k: C' lam_{k+1}
        G = np.zeros((self.N, self.n_x + self.n_u))
        G[0] = -CtL[0]
        if self.N > 1:
            G[1:, :self.n_x] = Lam[:-1]
            G[1:] -= CtL[1:]
        return G, Lam[-1].copy()

    def conjugate_value(self, Lam=None):
        """max_y -J(y) + (coupling linear form) evaluated stagewise in
        closed form (quarter quadratic in each stage coefficient)."""
        if Lam is None:
            Lam = self.state.Lam
        G, g_term = self._stage_coefficients(np.asarray(Lam, dtype=float))
        val = 0.25 * float(np.einsum("ki,ij,kj->", G, self.H_mid_inv, G))
        val += 0.25 * float(g_term @ self.H_term_inv @ g_term)
        return val

    def primal_cost(self, Y=None, y_term=None):
        if Y is None:
            Y, y_term = self.state.Y, self.state.y_term
        val = float(np.einsum("ki,ij,kj->", Y, self.H_mid, Y))
        val += float(y_term @ self.H_term @ y_term)
        return val

    def rescale(self, x0):
        """Shrink the warm-shifted iterate when its conjugate-pair value
        exceeds the calibrated quadratic bound. Returns (rescaled, f1)."""
        x0 = np.asarray(x0, dtype=float).reshape(-1)
        f1 = self.primal_cost() + self.conjugate_value()
        threshold = self.config.gamma ** 2 * float(x0 @ self.model.Q @ x0)
        if f1 >= threshold and f1 > 0.0:
            factor = np.sqrt(threshold / f1)
            self.state.Y *= factor
            self.state.y_term *= factor
            self.state.Lam *= factor
            return True, f1
        return False, f1

    # -- inner iteration -------------------------------------------------------

    def solve_decoupled(self, x0, state: AladinState | None = None, mode=None):
        """Stagewise proximal solves at the current iterate. Returns
        (Xi (N, nx+nu), xi_term (nx,), misses)."""
        if state is None:
            state = self.state
        mode = mode or self.config.mode
        x0 = np.asarray(x0, dtype=float).reshape(-1)
        G, g_term = self._stage_coefficients(state.Lam)
        Theta = G - 2.0 * state.Y @ self.H_mid
        theta_term = g_term - 2.0 * self.H_term @ state.y_term

        misses = 0
        Xi = np.empty_like(state.Y)
        if mode == "explicit":
            if self.N > 1:
                vals, found = self.maps["middle"].evaluate_batch(Theta[1:])
                Xi[1:] = vals
                for rel in np.flatnonzero(~found):
                    k = rel + 1
                    Xi[k] = self._solve_stage_online(k, Theta[k], x0)
                    misses += 1
            xi0 = self.maps["first"].evaluate(np.concatenate([Theta[0], x0]))
            if xi0 is None:
                xi0 = self._solve_stage_online(0, Theta[0], x0)
                misses += 1
            Xi[0] = xi0
            xi_term = self.maps["terminal"].evaluate(theta_term)
            if xi_term is None:
                xi_term = self._solve_stage_online(self.N, theta_term, x0)
                misses += 1
        else:
            for k in range(self.N):
                Xi[k] = self._solve_stage_online(k, Theta[k], x0)
            xi_term = self._solve_stage_online(self.N, theta_term, x0)
        return Xi, np.asarray(xi_term, dtype=float), misses

    def _solve_stage_online(self, k, theta, x0):
        warm = self._stage_warm[k]
        if k == 0:
            qp = self._qp_first
            qp.c = np.asarray(theta, dtype=float)
            qp.g = self._first_g_base + self._first_E @ x0
            seed = self._stage0_seed(x0, qp)
        elif k == self.N:
            qp = self._qp_term
            qp.c = np.asarray(theta, dtype=float)
            seed = self._term_seed
        else:
            qp = self._qp_mid
            qp.c = np.asarray(theta, dtype=float)
            seed = self._mid_seed
        sol = solve_qp(qp, warm_active=warm.get("active"), x0=seed)
        if sol.status != "optimal":
            raise StageInfeasible(k, f"stage {k} proximal QP {sol.status}")
        warm["active"] = sol.active_set
        return sol.x

    def _stage0_seed(self, x0, qp):
        cands = []
        if self._xi0_prev is not None:
            cands.append(self._xi0_prev)
            if self._last_x0 is not None:
                shifted = self._xi0_prev.copy()
                shifted[:self.n_x] += x0 - self._last_x0
                cands.append(shifted)
        for cand in cands:
            if np.max(qp.F @ cand - qp.g) <= 1e-9:
                return cand
        return None  # phase-1 fallback inside the solver

    def coupled_step(self, Xi, xi_term, state: AladinState | None = None):
        """Equality-constrained recentering; returns (Y_next, y_term_next,
        Delta)."""
        if state is None:
            state = self.state
        refs_mid = 2.0 * Xi - state.Y
        ref_term = 2.0 * xi_term - state.y_term
        return self.coupled.solve_arrays(refs_mid, ref_term)

    def inner_iteration(self, x0, state: AladinState | None = None):
        """One decoupled + coupled sweep with the dual update applied.
        Returns (Xi, xi_term, diag dict)."""
        if state is None:
            state = self.state
        Xi, xi_term, misses = self.solve_decoupled(x0, state)
        Y_next, y_term_next, Delta = self.coupled_step(Xi, xi_term, state)
        # coupling violation of the decoupled solution, and the dual move
        gap = Xi[1:, :self.n_x] - Xi[:-1] @ self.C.T if self.N > 1 else np.zeros((0, self.n_x))
        gap_term = xi_term - self.C @ Xi[-1]
        primal = max(float(np.max(np.abs(gap), initial=0.0)),
                     float(np.max(np.abs(gap_term))))
        dual = float(np.max(np.abs(Delta)))
        state.Y = Y_next
        state.y_term = y_term_next
        state.Lam = state.Lam + Delta
        state.j += 1
        return Xi, xi_term, {"primal": primal, "dual": dual, "misses": misses}

    def rti_step(self, x0):
        """One sampling instant: rescale, fixed inner iterations, input
        extraction from the last decoupled solution, warm shift."""
        t0 = time.perf_counter()
        x0 = np.asarray(x0, dtype=float).reshape(-1)
        diag = RtiDiagnostics()
        diag.rescaled, diag.rescale_value = self.rescale(x0)
        Xi = xi_term = None
        for _ in range(self.config.inner_iters):
            Xi, xi_term, d = self.inner_iteration(x0)
            diag.primal_residuals.append(d["primal"])
            diag.dual_residuals.append(d["dual"])
            diag.map_misses += d["misses"]
        q0 = Xi[0, :self.n_x]
        v0 = Xi[0, self.n_x:]
        u = tube_feedback(x0, q0, v0, self.syn.K)
        self._xi0_prev = Xi[0].copy()
        self._last_x0 = x0.copy()
        if self.config.warm_shift:
            self._warm_shift()
        diag.wall_time = time.perf_counter() - t0
        return u.reshape(-1), (q0.copy(), v0.copy()), diag

    def _warm_shift(self):
        st = self.state
        Y = np.empty_like(st.Y)
        Y[:-1] = st.Y[1:]
        # the shifted slot inherits the old terminal state under the
        # ancillary gain (the stated shift leaves its input unspecified)
        Y[-1, :self.n_x] = st.y_term
        Y[-1, self.n_x:] = self.syn.K @ st.y_term
        Lam = np.zeros_like(st.Lam)
        Lam[:-1] = st.Lam[1:]
        st.Y = Y
        st.y_term = np.zeros(self.n_x)
        st.Lam = Lam

    # -- diagnostics ----------------------------------------------------------

    def estimate_contraction(self, x0, j_max=40, baseline=None):
        """Empirical linear-rate estimate toward the centralized optimum at a
        fixed measurement. Purely diagnostic; never in the control path."""
        x0 = np.asarray(x0, dtype=float).reshape(-1)
        if baseline is None:
            baseline = CentralizedTubeController(self.syn, self.model, self.N)
        sol = baseline.solve(x0)
        ys_star, lam_star = recover_duals(self.syn, self.model, baseline.cqp, sol)
        Y_star = np.vstack(ys_star[:self.N])
        yt_star = ys_star[self.N]
        Lam_star = np.vstack(lam_star)

        saved = self.state
        self.state = AladinState(Y=np.zeros_like(Y_star), y_term=np.zeros_like(yt_star),
                                 Lam=np.zeros_like(Lam_star))
        self.rescale(x0)
        errors = []
        for _ in range(j_max):
            dY = self.state.Y - Y_star
            dyt = self.state.y_term - yt_star
            dLam = self.state.Lam - Lam_star
            e = self.primal_cost(dY, dyt) + self.conjugate_value(dLam)
            errors.append(e)
            self.inner_iteration(x0)
        self.state = saved

        errors = np.array(errors)
        tail = errors[len(errors) // 2:]
        tail = tail[tail > 1e-24]
        if len(tail) < 2:
            return 0.0, errors
        ratios = tail[1:] / tail[:-1]
        kappa = float(np.exp(np.mean(np.log(ratios))))
        return kappa, errors


def calibrate_gamma(syn: TubeSynthesis, model: PlantModel, N: int,
                    n_dirs=8, levels=(0.25, 0.5, 0.75, 0.95), safety=1.1,
                    r_max=60.0):
    """Offline rescale-constant calibration: probe the feasible region along
    rays, then bound (primal + conjugate dual value) / (x0' Q x0) over a
    scaled grid and inflate by the safety factor."""
    ctrl = CentralizedTubeController(syn, model, N)
    angles = np.linspace(0, 2 * np.pi, n_dirs, endpoint=False)
    dirs = np.column_stack([np.cos(angles), np.sin(angles)])
    if model.n_x != 2:
        rng = np.random.default_rng(0)
        dirs = rng.normal(size=(n_dirs, model.n_x))
        dirs /= np.linalg.norm(dirs, axis=1)[:, None]

    def feasible(x0):
        try:
            ctrl.reset()
            return ctrl.solve(x0)
        except StageInfeasible:
            return None

    probe = RealTimeTubeController.__new__(RealTimeTubeController)  # only for conjugate math
    probe.model = model
    probe.N = N
    probe.n_x, probe.n_u = model.n_x, model.n_u
    probe.C = np.hstack([model.A, model.B])
    probe.H_mid = np.block([
        [model.Q, np.zeros((model.n_x, model.n_u))],
        [np.zeros((model.n_u, model.n_x)), model.R],
    ])
    probe.H_term = syn.P
    probe.H_mid_inv = np.linalg.inv(probe.H_mid)
    probe.H_term_inv = np.linalg.inv(syn.P)

    worst = 0.0
    for d in dirs:
        lo, hi = 0.0, r_max
        if feasible(d * r_max) is not None:
            lo = r_max
        else:
            for _ in range(18):
                mid = 0.5 * (lo + hi)
                if feasible(d * mid) is not None:
                    lo = mid
                else:
                    hi = mid
        if lo <= 1e-9:
            continue
        for t in levels:
            x0 = d * (lo * t)
            denom = float(x0 @ model.Q @ x0)
            if denom < 1e-12:
                continue
            sol = feasible(x0)
            if sol is None:
                continue
            _, lam_star = recover_duals(syn, model, ctrl.cqp, sol)
            ratio = (sol.value + probe.conjugate_value(np.vstack(lam_star))) / denom
            worst = max(worst, ratio)
    if worst <= 0.0:
        raise RuntimeError("rescale calibration found no feasible probe states")
    return float(np.sqrt(safety * worst))


def build_stage_maps(syn: TubeSynthesis, model: PlantModel, N: int,
                     rollout_seeds=(0, 1), rollout_steps=30, box_margin=2.0):
    """Enumerate the three stage maps with parameter boxes calibrated from
    online-mode closed-loop rollouts (observed coefficient ranges, doubled)."""
    cfg = RtiConfig(mode="online", inner_iters=5)
    ctrl = RealTimeTubeController(syn, model, N, cfg)
    ss = ctrl.stage_sets

    theta_mid_max = np.full(model.n_x + model.n_u, 1e-6)
    theta_first_max = np.full(model.n_x + model.n_u, 1e-6)
    theta_term_max = np.full(model.n_x, 1e-6)
    x0_max = np.full(model.n_x, 1e-6)
    w_radii = _box_radii(model.W)

    for seed in rollout_seeds:
        rng = np.random.default_rng(seed)
        x = _rollout_start(syn, model, N, rng)
        ctrl.reset()
        for _ in range(rollout_steps):
            # record the coefficients exactly as the decoupled step sees them
            G, g_term = ctrl._stage_coefficients(ctrl.state.Lam)
            Theta = G - 2.0 * ctrl.state.Y @ ctrl.H_mid
            theta_term = g_term - 2.0 * ctrl.H_term @ ctrl.state.y_term
            theta_first_max = np.maximum(theta_first_max, np.abs(Theta[0]))
            if N > 1:
                theta_mid_max = np.maximum(theta_mid_max, np.abs(Theta[1:]).max(axis=0))
            theta_term_max = np.maximum(theta_term_max, np.abs(theta_term))
            x0_max = np.maximum(x0_max, np.abs(x))
            u, _, _ = ctrl.rti_step(x)
            w = rng.uniform(-1.0, 1.0, size=model.n_x) * w_radii
            x = model.A @ x + model.B @ u + w

    nxu = model.n_x + model.n_u
    mid_box = HPolytope.from_bounds(-box_margin * theta_mid_max, box_margin * theta_mid_max)
    term_box = HPolytope.from_bounds(-box_margin * theta_term_max, box_margin * theta_term_max)
    first_bounds = np.concatenate([box_margin * theta_first_max, box_margin * x0_max])
    first_box = HPolytope.from_bounds(-first_bounds, first_bounds)

    mid_template = StageTemplate(H=4.0 * ctrl.H_mid, F=ss.Y_mid.F, g=ss.Y_mid.g,
                                 Tc=np.eye(nxu), E=np.zeros((ss.Y_mid.num_rows, nxu)))
    term_template = StageTemplate(H=4.0 * ctrl.H_term, F=ss.Y_term.F, g=ss.Y_term.g,
                                  Tc=np.eye(model.n_x),
                                  E=np.zeros((ss.Y_term.num_rows, model.n_x)))
    F_mem, g_mem, E_mem = ss.membership_rows()
    first_F = np.vstack([ss.Y_mid.F, F_mem])
    first_g = np.concatenate([ss.Y_mid.g, g_mem])
    p_first = nxu + model.n_x
    Tc_first = np.hstack([np.eye(nxu), np.zeros((nxu, model.n_x))])
    E_first = np.vstack([
        np.zeros((ss.Y_mid.num_rows, p_first)),
        np.hstack([np.zeros((E_mem.shape[0], nxu)), E_mem]),
    ])
    first_template = StageTemplate(H=4.0 * ctrl.H_mid, F=first_F, g=first_g,
                                   Tc=Tc_first, E=E_first)

    maps = {
        "middle": enumerate_regions(mid_template, mid_box, stage_kind="middle"),
        "terminal": enumerate_regions(term_template, term_box, stage_kind="terminal"),
        "first": enumerate_regions(first_template, first_box, stage_kind="first"),
    }
    for m in maps.values():
        m.regions.sort(key=lambda r: len(r.active))
    return maps


def _box_radii(W: HPolytope):
    """Per-coordinate upper radii of the bounding box of W."""
    return W.bounding_box()[1]


def _rollout_start(syn, model, N, rng):
    """A state comfortably inside the feasible region for box calibration."""
    ctrl = CentralizedTubeController(syn, model, N)
    for _ in range(50):
        x = rng.uniform(-1.0, 1.0, size=model.n_x) * 8.0
        try:
            ctrl.reset()
            ctrl.solve(x)
            return x
        except StageInfeasible:
            continue
    return np.zeros(model.n_x)
