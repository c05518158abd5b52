"""Dense convex solvers sized for desk-scale MPC work.

``solve_lp`` wraps the HiGHS simplex/IPM for support functions, redundancy
certificates and feasibility restoration. ``solve_qp`` is a primal
active-set method for strictly convex inequality-constrained QPs with
warm-started working sets. ``CoupledLqrSolver`` factors the block-
tridiagonal equality-constrained tracking QP once per controller and then
solves it per iterate by a backward/forward Riccati sweep; when the
backward cost-to-go sequence is stationary the sweep collapses to short
truncated convolutions, which is what keeps the per-sample cost linear in
the horizon with a small constant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog


@dataclass
class LPResult:
    value: float
    x: np.ndarray | None
    status: str  # optimal | infeasible | unbounded


def solve_lp(c, F, g) -> LPResult:
    """max c.x subject to F x <= g."""
    res = linprog(-np.asarray(c, dtype=float), A_ub=F, b_ub=g,
                  bounds=(None, None), method="highs")
    if res.status == 0:
        return LPResult(-res.fun, res.x, "optimal")
    if res.status == 2:
        return LPResult(np.nan, None, "infeasible")
    if res.status == 3:
        return LPResult(np.inf, None, "unbounded")
    raise RuntimeError(f"LP failure: {res.message}")


@dataclass
class DenseQP:
    """min 1/2 x'H x + c'x  s.t.  F x <= g,  Ae x = be  (H must be SPD)."""

    H: np.ndarray
    c: np.ndarray
    F: np.ndarray | None = None
    g: np.ndarray | None = None
    Ae: np.ndarray | None = None
    be: np.ndarray | None = None

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.c = np.asarray(self.c, dtype=float).reshape(-1)
        n = self.H.shape[0]
        if self.H.shape != (n, n) or self.c.size != n:
            raise ValueError("inconsistent QP dimensions")
        if np.max(np.abs(self.H - self.H.T)) > 1e-10 * max(1.0, np.max(np.abs(self.H))):
            raise ValueError("H must be symmetric")
        if np.min(np.linalg.eigvalsh(self.H)) <= 0:
            raise ValueError("H must be positive definite")
        if self.F is None:
            self.F = np.zeros((0, n))
            self.g = np.zeros(0)
        else:
            self.F = np.atleast_2d(np.asarray(self.F, dtype=float))
            self.g = np.asarray(self.g, dtype=float).reshape(-1)
        if self.Ae is None:
            self.Ae = np.zeros((0, n))
            self.be = np.zeros(0)
        else:
            self.Ae = np.atleast_2d(np.asarray(self.Ae, dtype=float))
            self.be = np.asarray(self.be, dtype=float).reshape(-1)
        self.n = n

    def objective(self, x):
        return float(0.5 * x @ self.H @ x + self.c @ x)


@dataclass
class QPSolution:
    x: np.ndarray | None
    mu_ineq: np.ndarray | None
    mu_eq: np.ndarray | None
    active_set: tuple
    status: str  # optimal | infeasible | iter_limit
    iterations: int = 0
    kkt_residual: float = np.inf


def kkt_residual(qp: DenseQP, x, mu_ineq, mu_eq):
    """Worst violation over stationarity, primal/dual feasibility and
    complementarity."""
    grad = qp.H @ x + qp.c
    if qp.F.shape[0]:
        grad = grad + qp.F.T @ mu_ineq
    if qp.Ae.shape[0]:
        grad = grad + qp.Ae.T @ mu_eq
    res = np.max(np.abs(grad)) if grad.size else 0.0
    if qp.F.shape[0]:
        slack = qp.F @ x - qp.g
        res = max(res, float(np.max(slack, initial=0.0)))
        res = max(res, float(np.max(-mu_ineq, initial=0.0)))
        res = max(res, float(np.max(np.abs(mu_ineq * slack), initial=0.0)))
    if qp.Ae.shape[0]:
        res = max(res, float(np.max(np.abs(qp.Ae @ x - qp.be))))
    return res


ACTIVITY_TOL = 1e-9


def _feasible_start(qp: DenseQP, x0=None):
    """A feasible point, from the hint if usable, else via phase-1 LP."""
    if x0 is not None:
        x0 = np.asarray(x0, dtype=float).reshape(-1)
        ok = True
        if qp.F.shape[0] and np.max(qp.F @ x0 - qp.g) > ACTIVITY_TOL:
            ok = False
        if qp.Ae.shape[0] and np.max(np.abs(qp.Ae @ x0 - qp.be)) > ACTIVITY_TOL:
            ok = False
        if ok:
            return x0
    m = qp.F.shape[0]
    if m == 0 and qp.Ae.shape[0] == 0:
        return np.zeros(qp.n)
    # min t s.t. F x - t <= g, Ae x = be, t >= 0
    c = np.zeros(qp.n + 1)
    c[-1] = 1.0
    A_ub = np.hstack([qp.F, -np.ones((m, 1))]) if m else None
    bounds = [(None, None)] * qp.n + [(0, None)]
    res = linprog(c, A_ub=A_ub, b_ub=qp.g if m else None,
                  A_eq=np.hstack([qp.Ae, np.zeros((qp.Ae.shape[0], 1))]) if qp.Ae.shape[0] else None,
                  b_eq=qp.be if qp.Ae.shape[0] else None,
                  bounds=bounds, method="highs")
    if res.status != 0 or res.x[-1] > 1e-7:
        return None
    return res.x[:-1]


def solve_qp(qp: DenseQP, warm_active=None, x0=None, max_iter=None) -> QPSolution:
    """Primal active-set solve.

    ``warm_active`` seeds the working set (indices of inequality rows);
    ``x0`` seeds the feasible point. Each working-set change refactorizes
    the bordered KKT system directly, which is the robust choice at these
    sizes. Ties in the blocking-constraint ratio test break toward the
    lowest row index so cycling cannot occur on degenerate vertices.
    """
    n, m = qp.n, qp.F.shape[0]
    if max_iter is None:
        max_iter = 50 * (n + m + qp.Ae.shape[0])

    x = _feasible_start(qp, x0)
    if x is None:
        return QPSolution(None, None, None, (), "infeasible")

    if warm_active:
        working = [i for i in sorted(set(warm_active))
                   if i < m and abs(qp.F[i] @ x - qp.g[i]) <= 1e-6]
        if working and not _rows_independent(qp, working):
            working = _independent_subset(qp, working)
    else:
        working = []

    mu_w = np.zeros(len(working))
    mu_eq = np.zeros(qp.Ae.shape[0])
    for it in range(1, max_iter + 1):
        x_eq, mu_w, mu_eq, ok = _solve_eqp(qp, working)
        if not ok:
            # dependent working set (should not happen: guarded on entry);
            # drop the newest row and retry
            working.pop()
            continue
        p = x_eq - x
        if np.max(np.abs(p), initial=0.0) <= 1e-11 * (1.0 + np.max(np.abs(x), initial=0.0)):
            # stationary on the working set: check multiplier signs
            if len(working) == 0 or np.min(mu_w) >= -ACTIVITY_TOL:
                x = x_eq
                mu = np.zeros(m)
                mu[list(working)] = np.maximum(mu_w, 0.0)
                return QPSolution(x, mu, mu_eq, tuple(working), "optimal", it,
                                  kkt_residual(qp, x, mu, mu_eq))
            # drop the most negative multiplier (lowest index on ties)
            j = int(np.lexsort((working, mu_w))[0])
            working.pop(j)
            continue
        # ratio test over rows outside the working set
        alpha = 1.0
        blocker = -1
        if m:
            mask = np.ones(m, dtype=bool)
            mask[list(working)] = False
            rows = np.flatnonzero(mask)
            if rows.size:
                Fp = qp.F[rows] @ p
                slack = qp.g[rows] - qp.F[rows] @ x
                cand = Fp > 1e-12
                if np.any(cand):
                    ratios = slack[cand] / Fp[cand]
                    ratios = np.maximum(ratios, 0.0)
                    rmin = np.min(ratios)
                    if rmin < alpha - 1e-12:
                        alpha = rmin
                        tied = rows[cand][np.abs(ratios - rmin) <= 1e-12 * (1 + rmin)]
                        blocker = int(np.min(tied))
        x = x + alpha * p
        if blocker >= 0:
            trial = working + [blocker]
            if _rows_independent(qp, trial):
                working = trial
            else:
                # degenerate geometry: replace the least useful row
                working = _independent_subset(qp, trial)
    mu = np.zeros(m)
    mu[list(working)] = np.maximum(mu_w, 0.0) if len(working) else 0.0
    return QPSolution(x, mu, mu_eq, tuple(working), "iter_limit", max_iter,
                      kkt_residual(qp, x, mu, mu_eq))


def _solve_eqp(qp: DenseQP, working):
    """Equality-constrained subproblem on the working set via one bordered
    KKT factorization."""
    A = qp.Ae if not working else np.vstack([qp.Ae, qp.F[list(working)]])
    b = qp.be if not working else np.concatenate([qp.be, qp.g[list(working)]])
    n, me = qp.n, A.shape[0]
    KKT = np.zeros((n + me, n + me))
    KKT[:n, :n] = qp.H
    KKT[:n, n:] = A.T
    KKT[n:, :n] = A
    rhs = np.concatenate([-qp.c, b])
    try:
        sol = np.linalg.solve(KKT, rhs)
    except np.linalg.LinAlgError:
        return None, None, None, False
    if not np.all(np.isfinite(sol)):
        return None, None, None, False
    x = sol[:n]
    lam = sol[n:]
    n_eq = qp.Ae.shape[0]
    return x, lam[n_eq:], lam[:n_eq], True


def _rows_independent(qp: DenseQP, working):
    if not working:
        return True
    A = np.vstack([qp.Ae, qp.F[list(working)]]) if qp.Ae.shape[0] else qp.F[list(working)]
    return np.linalg.matrix_rank(A, tol=1e-9) == A.shape[0]


def _independent_subset(qp: DenseQP, working):
    out = []
    for i in working:
        if _rows_independent(qp, out + [i]):
            out.append(i)
    return out


# ---------------------------------------------------------------------------
# Coupled equality-constrained tracking QP
# ---------------------------------------------------------------------------

class CoupledLqrSolver:
    """min sum_k (y_k - r_k)' H_k (y_k - r_k)
       s.t. D y_{k+1} = C y_k (k < N-1), y_N = C y_{N-1},
    with a free initial stage. C = [A B], D = [I 0].

    The quadratic data is factored once (backward Riccati pass over the
    cost-to-go matrices); every ``solve`` then only propagates the
    reference-dependent linear terms. If the cost-to-go sequence is
    stationary to machine precision, the linear backward/forward sweeps are
    constant-coefficient recursions and are evaluated as truncated
    convolutions instead of a Python-level loop.
    """

    def __init__(self, stage_hessians, C, D):
        C = np.atleast_2d(np.asarray(C, dtype=float))
        D = np.atleast_2d(np.asarray(D, dtype=float))
        n_x = D.shape[0]
        n_u = C.shape[1] - n_x
        if not np.array_equal(D, np.hstack([np.eye(n_x), np.zeros((n_x, n_u))])):
            raise ValueError("coupling selector must be [I 0]")
        self.A = C[:, :n_x]
        self.B = C[:, n_x:]
        self.n_x, self.n_u = n_x, n_u
        self.N = len(stage_hessians) - 1
        if self.N < 1:
            raise ValueError("need at least two stages")

        Hs = [np.atleast_2d(np.asarray(H, dtype=float)) for H in stage_hessians]
        if Hs[-1].shape != (n_x, n_x):
            raise ValueError("terminal weight must act on the state only")
        for H in Hs[:-1]:
            if H.shape != (n_x + n_u, n_x + n_u):
                raise ValueError("middle-stage weights must act on (state, input)")
            if np.min(np.linalg.eigvalsh(H)) <= 0:
                raise ValueError("stage weights must be positive definite")
        self.Hs = Hs

        A, B = self.A, self.B
        Pi = Hs[-1].copy()
        self.Pi = [None] * (self.N + 1)
        self.Kk = [None] * self.N
        self.Sv_inv = [None] * self.N
        self.Pi[self.N] = Pi
        for k in range(self.N - 1, -1, -1):
            H = Hs[k]
            Gqq = H[:n_x, :n_x]
            Gqv = H[:n_x, n_x:]
            Gvv = H[n_x:, n_x:]
            Sv = Gvv + B.T @ Pi @ B
            Sv_inv = np.linalg.inv(Sv)
            Kk = Sv_inv @ (Gqv.T + B.T @ Pi @ A)
            Pi = Gqq + A.T @ Pi @ A - (Gqv + A.T @ Pi @ B) @ Kk
            Pi = 0.5 * (Pi + Pi.T)
            self.Pi[k] = Pi
            self.Kk[k] = Kk
            self.Sv_inv[k] = Sv_inv

        self._stationary = all(
            np.max(np.abs(self.Pi[k] - self.Pi[self.N])) <= 1e-11 * (1 + np.max(np.abs(self.Pi[self.N])))
            for k in range(self.N + 1)
        ) and all(np.max(np.abs(Hs[k] - Hs[0])) == 0.0 for k in range(self.N))
        if self._stationary:
            self._build_stationary_kernels()

    # -- general path -------------------------------------------------------

    def solve_loop(self, refs):
        """Reference Riccati sweep, one Python step per stage."""
        N, A, B, n_x = self.N, self.A, self.B, self.n_x
        refs = [np.asarray(r, dtype=float).reshape(-1) for r in refs]
        if len(refs) != N + 1:
            raise ValueError("need one reference per stage")
        pi = -self.Hs[N] @ refs[N]
        pis = [None] * (N + 1)
        ds = [None] * N
        pis[N] = pi
        for k in range(N - 1, -1, -1):
            H = self.Hs[k]
            Gqq, Gqv, Gvv = H[:n_x, :n_x], H[:n_x, n_x:], H[n_x:, n_x:]
            rq, rv = refs[k][:n_x], refs[k][n_x:]
            d = self.Sv_inv[k] @ (Gqv.T @ rq + Gvv @ rv - B.T @ pi)
            pi = -(Gqq @ rq + Gqv @ rv) + (Gqv + A.T @ self.Pi[k + 1] @ B) @ d + A.T @ pi
            pis[k] = pi
            ds[k] = d
        q = -np.linalg.solve(self.Pi[0], pis[0])
        ys = []
        Delta = [None] * (N + 1)
        for k in range(N):
            v = -self.Kk[k] @ q + ds[k]
            ys.append(np.concatenate([q, v]))
            q = A @ q + B @ v
            Delta[k + 1] = -2.0 * (self.Pi[k + 1] @ q + pis[k + 1])
        ys.append(q)
        return ys, Delta[1:]

    # -- stationary fast path ------------------------------------------------

    def _build_stationary_kernels(self):
        n_x, n_u = self.n_x, self.n_u
        A, B = self.A, self.B
        P = self.Pi[self.N]
        H = self.Hs[0]
        Gqq, Gqv, Gvv = H[:n_x, :n_x], H[:n_x, n_x:], H[n_x:, n_x:]
        Sv_inv = self.Sv_inv[0]
        Kk = self.Kk[0]
        Acl = A - B @ Kk
        # pi_k = S2 r_k + Acl' pi_{k+1}
        T = Gqv + A.T @ P @ B
        S2 = np.hstack([-(Gqq - T @ Sv_inv @ Gqv.T), -(Gqv - T @ Sv_inv @ Gvv)])
        M = Acl.T
        rho = max(abs(np.linalg.eigvals(Acl)))
        if rho >= 1.0:
            self._stationary = False
            return
        L = max(8, int(np.ceil(np.log(1e-18) / np.log(max(rho, 1e-6)))))
        self._L = L
        Mp = [np.eye(n_x)]
        Ap = [np.eye(n_x)]
        for _ in range(L - 1):
            Mp.append(M @ Mp[-1])
            Ap.append(Acl @ Ap[-1])
        self._M_powers = np.stack(Mp)          # (L, nx, nx)
        self._Acl_powers = np.stack(Ap)        # (L, nx, nx)
        self._Kb = np.einsum("lij,jk->lik", self._M_powers, S2)   # (L, nx, nx+nu)
        self._Kf = np.einsum("lij,jk->lik", self._Acl_powers, B)  # (L, nx, nu)
        self._S2 = S2
        self._P = P
        self._P_inv = np.linalg.inv(P)
        self._Acl = Acl
        self._Kk0 = Kk
        self._Sv_inv0 = Sv_inv
        self._GqvT = Gqv.T
        self._Gvv = Gvv

    def solve_arrays(self, refs_mid, ref_term):
        """Array-native solve: stage references as an (N, nx+nu) array plus
        the terminal reference; returns (Y (N, nx+nu), y_N (nx,),
        Delta (N, nx)). Uses the convolution path when stationary, the
        stagewise loop otherwise."""
        N, n_x, n_u = self.N, self.n_x, self.n_u
        if not self._stationary:
            refs = [refs_mid[k] for k in range(N)] + [ref_term]
            ys, Delta = self.solve_loop(refs)
            return np.vstack(ys[:N]), ys[N], np.vstack(Delta)
        L = self._L
        refs_mid = np.asarray(refs_mid, dtype=float).reshape(N, n_x + n_u)
        ref_term = np.asarray(ref_term, dtype=float).reshape(n_x)

        # backward sweep: pi_k = sum_i M^i S2 r_{k+i} + M^{N-k} pi_N
        pi = np.empty((N + 1, n_x))
        Lr = min(L, N)
        padded = np.vstack([refs_mid, np.zeros((Lr - 1, n_x + n_u))])
        for a in range(n_x):
            acc = np.correlate(padded[:, 0], self._Kb[:Lr, a, 0], mode="valid")
            for b in range(1, n_x + n_u):
                acc = acc + np.correlate(padded[:, b], self._Kb[:Lr, a, b], mode="valid")
            pi[:N, a] = acc
        pi_N = -self._P @ ref_term
        pi[N] = pi_N
        tail = min(L - 1, N)
        ks = np.arange(N - tail, N)
        pi[ks] += self._M_powers[N - ks] @ pi_N

        # feedforward and forward state sweep
        d = (refs_mid[:, :n_x] @ self._GqvT.T + refs_mid[:, n_x:] @ self._Gvv.T
             - pi[1:] @ self.B) @ self._Sv_inv0.T
        q0 = -self._P_inv @ pi[0]
        q = np.zeros((N + 1, n_x))
        kq = min(L, N + 1)
        q[:kq] = self._Acl_powers[:kq] @ q0
        for a in range(n_x):
            acc = np.convolve(d[:, 0], self._Kf[:, a, 0], mode="full")[:N]
            for b in range(1, n_u):
                acc += np.convolve(d[:, b], self._Kf[:, a, b], mode="full")[:N]
            q[1:, a] += acc
        Y = np.empty((N, n_x + n_u))
        Y[:, :n_x] = q[:N]
        Y[:, n_x:] = -q[:N] @ self._Kk0.T + d
        Delta = -2.0 * (q[1:] @ self._P.T + pi[1:])
        return Y, q[N], Delta

    def solve(self, refs_mid, ref_term):
        """List-of-stages facade over :meth:`solve_arrays`."""
        Y, yN, Delta = self.solve_arrays(refs_mid, ref_term)
        ys = [Y[k] for k in range(self.N)] + [yN]
        return ys, [Delta[k] for k in range(self.N)]


def solve_eqqp_tridiag(stage_hessians, refs, C, D):
    """One-shot coupled solve; see ``CoupledLqrSolver``. Returns
    (stage vectors y, equality multipliers)."""
    solver = CoupledLqrSolver(stage_hessians, C, D)
    return solver.solve_loop(refs)


def coupled_kkt_residual(solver: CoupledLqrSolver, refs, ys, Delta):
    """Stationarity + primal residual of the coupled QP solution (for
    certification in tests and diagnostics)."""
    N, A, B = solver.N, solver.A, solver.B
    n_x = solver.n_x
    res = 0.0
    for k in range(N):
        gap = (A @ ys[k][:n_x] + B @ ys[k][n_x:]) - ys[k + 1][:n_x]
        res = max(res, float(np.max(np.abs(gap))))
    for k in range(N + 1):
        H = solver.Hs[k]
        r = np.asarray(refs[k], dtype=float).reshape(-1)
        grad = 2.0 * H @ (ys[k] - r)
        if k == 0:
            grad = grad - np.hstack([A, B]).T @ Delta[0]
        elif k < N:
            grad = grad + np.concatenate([Delta[k - 1], np.zeros(solver.n_u)]) \
                - np.hstack([A, B]).T @ Delta[k]
        else:
            grad = grad + Delta[N - 1]
        res = max(res, float(np.max(np.abs(grad))))
    return res
