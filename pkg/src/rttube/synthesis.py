"""Offline controller synthesis for rigid tube MPC.

Produces the ancillary feedback gain and terminal weight (discrete Riccati
equation), a robust positively invariant cross-section for the error
dynamics, the tightened state/input constraints, and the maximal positively
invariant terminal set, then validates the standard tube MPC assumptions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import BUNDLE_SCHEMA_VERSION
from .geometry import (
    HPolytope,
    SupportSet,
    inclusion_margin,
    linear_image_2d,
    minkowski_sum_2d,
    pontryagin_diff,
)


class SynthesisError(Exception):
    pass


class NoConvergence(SynthesisError):
    pass


class TighteningEmpty(SynthesisError):
    """A tightened constraint set came out empty (disturbance too large)."""


@dataclass
class PlantModel:
    A: np.ndarray
    B: np.ndarray
    X: HPolytope
    U: HPolytope
    W: HPolytope
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.R = np.atleast_2d(np.asarray(self.R, dtype=float))
        self.n_x = self.A.shape[0]
        self.n_u = self.B.shape[1]
        if self.A.shape != (self.n_x, self.n_x):
            raise SynthesisError("A must be square")
        if self.B.shape[0] != self.n_x:
            raise SynthesisError("B row count must match state dimension")
        if np.min(np.linalg.eigvalsh(self.R)) <= 0:
            raise SynthesisError("R must be positive definite")
        if np.min(np.linalg.eigvalsh(self.Q)) <= 0:
            raise SynthesisError("Q must be positive definite")

    def stage_cost(self, q, v):
        q = np.asarray(q, dtype=float).reshape(-1)
        v = np.asarray(v, dtype=float).reshape(-1)
        return float(q @ self.Q @ q + v @ self.R @ v)


@dataclass
class TubeSynthesis:
    K: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    Z: SupportSet
    Z_h: HPolytope
    alpha: float
    s: int
    X_T: HPolytope
    X_tight: HPolytope
    U_tight: HPolytope
    A_K: np.ndarray
    validation: dict = field(default_factory=dict)


def solve_dare(A, B, Q, R, tol=1e-12, max_iter=100_000):
    """Fixed-point iteration of the Riccati map from P0 = Q.

    Returns (P, K) with the feedback convention u = K x (stabilizing K, so
    K carries the minus sign).
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    P = Q.copy()
    for _ in range(max_iter):
        S = R + B.T @ P @ B
        P_next = Q + A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(S, B.T @ P @ A)
        P_next = 0.5 * (P_next + P_next.T)
        if not np.all(np.isfinite(P_next)) or np.max(np.abs(P_next)) > 1e14:
            raise NoConvergence("Riccati iteration diverged; (A, B) may not be stabilizable")
        if np.max(np.abs(P_next - P)) < tol:
            P = P_next
            break
        P = P_next
    else:
        raise NoConvergence("Riccati iteration did not converge; (A, B) may not be stabilizable")
    K = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    return P, K


def dare_residual(A, B, Q, R, P):
    S = R + B.T @ P @ B
    return np.max(np.abs(P - (Q + A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(S, B.T @ P @ A))))


def compute_rpi(A_K, W: HPolytope, eps=1e-4, s_max=200):
    """Invariant outer approximation of the minimal RPI set for
    z+ = A_K z + w, w in W.

    Finds the smallest truncation depth s with
        alpha(s) <= eps / (eps + M(s)),
    where alpha(s) = max_i h_W((A_K^s)^T f_i)/g_i over the facets of W and
    M(s) bounds the infinity norm of the truncated sum via coordinate
    supports. Returns the set (1 - alpha)^{-1} (+)_{i<s} A_K^i W in lazy
    support form, together with (alpha, s).
    """
    A_K = np.atleast_2d(np.asarray(A_K, dtype=float))
    n = A_K.shape[0]
    if max(abs(np.linalg.eigvals(A_K))) >= 1.0:
        raise SynthesisError("closed-loop matrix must be Schur stable")
    if not W.has_origin_interior():
        raise SynthesisError("disturbance set must contain the origin in its interior")

    powers = [np.eye(n)]
    s = 0
    while True:
        s += 1
        if s > s_max:
            raise NoConvergence(f"no valid truncation depth below {s_max}")
        powers.append(powers[-1] @ A_K)
        A_s = powers[s]
        alpha = max(W.support(A_s.T @ f) / g for f, g in zip(W.F, W.g))
        M_s = 0.0
        for j in range(n):
            e = np.zeros(n)
            e[j] = 1.0
            for sign in (1.0, -1.0):
                M_s = max(M_s, sum(W.support(powers[i].T @ (sign * e)) for i in range(s)))
        if alpha <= eps / (eps + M_s):
            break

    Z = SupportSet([(powers[i], W) for i in range(s)], scale=1.0 / (1.0 - alpha))
    return Z, alpha, s


def materialize_rpi_2d(Z: SupportSet) -> HPolytope:
    """Explicit polygon for a 2-D lazy invariant set (term-by-term Minkowski
    sums, then the scale applied to the offsets)."""
    if Z.dim != 2:
        raise SynthesisError("explicit materialization restricted to 2-D")
    acc = None
    for M, base in Z.terms:
        term_poly = linear_image_2d(M, base)
        acc = term_poly if acc is None else minkowski_sum_2d(acc, term_poly)
    return acc.scale(Z.scale).prune_redundant()


def outer_approx_directions(Z: SupportSet, n_dirs=32) -> HPolytope:
    """Direction-sampled outer approximation (used for membership rows when
    the state dimension rules out exact polygon sums). Approximate by
    construction; flagged by the caller."""
    if Z.dim != 2:
        raise SynthesisError("direction sampling currently assumes a planar set")
    angles = np.linspace(0.0, 2 * np.pi, n_dirs, endpoint=False)
    F = np.column_stack([np.cos(angles), np.sin(angles)])
    g = np.array([Z.support(f) for f in F])
    return HPolytope(F, g, normalize=False)


def compute_mpi_terminal(A_K, X_tight: HPolytope, U_tight: HPolytope, K,
                         t_max=500) -> HPolytope:
    """Maximal positively invariant set for q+ = A_K q under
    q in X_tight, K q in U_tight (constraint-iteration with per-row LP
    redundancy certificates at termination)."""
    K = np.atleast_2d(np.asarray(K, dtype=float))
    H0 = np.vstack([X_tight.F, U_tight.F @ K])
    h0 = np.concatenate([X_tight.g, U_tight.g])
    base = HPolytope(H0, h0)
    if not base.has_origin_interior():
        raise SynthesisError("tightened constraint set lost the origin interior")
    H0, h0 = base.F, base.g

    rows = [H0]
    A_pow = np.atleast_2d(np.asarray(A_K, dtype=float))
    current_F = H0.copy()
    current_g = h0.copy()
    for t in range(t_max):
        cand_F = H0 @ A_pow  # rows for tau = t + 1
        # all candidate rows redundant w.r.t. the accumulated set?
        all_redundant = True
        from .geometry import _solve_lp_max

        for f, g in zip(cand_F, h0):
            val, _, status = _solve_lp_max(f, current_F, current_g)
            if status == "unbounded" or val > g + 1e-9:
                all_redundant = False
                break
        if all_redundant:
            return HPolytope(current_F, current_g, normalize=False).prune_redundant()
        rows.append(cand_F)
        current_F = np.vstack([current_F, cand_F])
        current_g = np.concatenate([current_g, h0])
        A_pow = A_pow @ A_K
    raise NoConvergence("no finite determination of the invariant set")


def validate_assumptions(syn: TubeSynthesis, model: PlantModel) -> dict:
    """Pass/fail report with margins for the standing assumptions:
    invariance of the terminal set, the two tightening inclusions, the
    terminal-cost Lyapunov inequality, and basic set flags."""
    report = {}

    image = SupportSet([(syn.A_K, syn.X_T)])
    report["terminal_invariant"] = {
        "margin": float(inclusion_margin(image, syn.X_T)),
    }
    report["terminal_in_tight_state"] = {
        "margin": float(inclusion_margin(syn.X_T, syn.X_tight)),
    }
    K_image = SupportSet([(syn.K, syn.X_T)])
    report["terminal_input_in_tight_input"] = {
        "margin": float(inclusion_margin(K_image, syn.U_tight)),
    }
    for item in ("terminal_invariant", "terminal_in_tight_state",
                 "terminal_input_in_tight_input"):
        report[item]["passed"] = bool(report[item]["margin"] >= -1e-8)

    # m((A+BK)q) + l(q, Kq) <= m(q) as a matrix inequality
    lyap = syn.P - syn.A_K.T @ syn.P @ syn.A_K - syn.Q - syn.K.T @ syn.R @ syn.K
    min_eig = float(np.min(np.linalg.eigvalsh(0.5 * (lyap + lyap.T))))
    report["terminal_cost_decrease"] = {"min_eig": min_eig, "passed": bool(min_eig >= -1e-8)}

    # invariance of the error cross-section: A_K Z (+) W inside Z
    viol = rpi_invariance_violation(syn, model)
    report["error_set_invariant"] = {"violation": viol, "passed": bool(viol <= 1e-6)}

    report["state_set_origin_interior"] = {"passed": bool(model.X.has_origin_interior())}
    report["input_set_ok"] = {
        "passed": bool(model.U.is_bounded() and model.U.has_origin_interior())
    }
    report["disturbance_set_ok"] = {
        "passed": bool(model.W.is_bounded() and model.W.has_origin_interior())
    }
    report["tightened_sets_nonempty"] = {
        "passed": bool(not syn.X_tight.is_empty() and not syn.U_tight.is_empty())
    }

    report["all_passed"] = all(v["passed"] for v in report.values() if isinstance(v, dict))
    return report


def rpi_invariance_violation(syn: TubeSynthesis, model: PlantModel) -> float:
    """max over facets (f, g) of the explicit cross-section of
    h_Z(A_K^T f) + h_W(f) - g; <= 0 certifies robust invariance."""
    worst = -np.inf
    for f, g in zip(syn.Z_h.F, syn.Z_h.g):
        worst = max(worst, syn.Z.support(syn.A_K.T @ f) + model.W.support(f) - g)
    return float(worst)


def synthesize(model: PlantModel, eps_rpi=1e-4) -> TubeSynthesis:
    P, K = solve_dare(model.A, model.B, model.Q, model.R)
    A_K = model.A + model.B @ K
    Z, alpha, s = compute_rpi(A_K, model.W, eps=eps_rpi)
    Z_h = materialize_rpi_2d(Z) if model.n_x == 2 else outer_approx_directions(Z)
    X_tight = pontryagin_diff(model.X, Z).prune_redundant()
    U_tight = pontryagin_diff(model.U, Z.linear_image(K)).prune_redundant()
    if X_tight.is_empty() or U_tight.is_empty():
        raise TighteningEmpty("tightened state or input set is empty; disturbance too large")
    X_T = compute_mpi_terminal(A_K, X_tight, U_tight, K)

    syn = TubeSynthesis(K=K, P=P, Q=model.Q, R=model.R, Z=Z, Z_h=Z_h,
                        alpha=alpha, s=s, X_T=X_T, X_tight=X_tight,
                        U_tight=U_tight, A_K=A_K)
    syn.validation = validate_assumptions(syn, model)
    if not all(syn.validation[k]["passed"]
               for k in ("terminal_invariant", "terminal_in_tight_state",
                         "terminal_input_in_tight_input")):
        raise SynthesisError(f"terminal set failed its inclusion checks: {syn.validation}")
    return syn


def bundle_to_dict(model: PlantModel, syn: TubeSynthesis) -> dict:
    return {
        "schema_version": BUNDLE_SCHEMA_VERSION,
        "model": {
            "A": model.A.tolist(),
            "B": model.B.tolist(),
            "Q": model.Q.tolist(),
            "R": model.R.tolist(),
            "X": model.X.to_json_dict(),
            "U": model.U.to_json_dict(),
            "W": model.W.to_json_dict(),
        },
        "K": syn.K.tolist(),
        "P": syn.P.tolist(),
        "Z": {"support_form": syn.Z.to_json_dict(), "h_form": syn.Z_h.to_json_dict()},
        "alpha": syn.alpha,
        "s": syn.s,
        "X_T": syn.X_T.to_json_dict(),
        "X_tight": syn.X_tight.to_json_dict(),
        "U_tight": syn.U_tight.to_json_dict(),
        "validation": syn.validation,
    }


def bundle_from_dict(d: dict) -> tuple[PlantModel, TubeSynthesis]:
    if d.get("schema_version") != BUNDLE_SCHEMA_VERSION:
        raise SynthesisError(f"unsupported bundle schema: {d.get('schema_version')}")
    m = d["model"]
    model = PlantModel(
        A=np.array(m["A"]), B=np.array(m["B"]),
        X=HPolytope.from_json_dict(m["X"]),
        U=HPolytope.from_json_dict(m["U"]),
        W=HPolytope.from_json_dict(m["W"]),
        Q=np.array(m["Q"]), R=np.array(m["R"]),
    )
    K = np.array(d["K"], dtype=float)
    P = np.array(d["P"], dtype=float)
    syn = TubeSynthesis(
        K=K, P=P, Q=model.Q, R=model.R,
        Z=SupportSet.from_json_dict(d["Z"]["support_form"]),
        Z_h=HPolytope.from_json_dict(d["Z"]["h_form"]),
        alpha=d["alpha"], s=d["s"],
        X_T=HPolytope.from_json_dict(d["X_T"]),
        X_tight=HPolytope.from_json_dict(d["X_tight"]),
        U_tight=HPolytope.from_json_dict(d["U_tight"]),
        A_K=model.A + model.B @ K,
        validation=d.get("validation", {}),
    )
    return model, syn


def save_bundle(path, model: PlantModel, syn: TubeSynthesis):
    with open(path, "w") as fh:
        json.dump(bundle_to_dict(model, syn), fh, indent=1)


def load_bundle(path) -> tuple[PlantModel, TubeSynthesis]:
    with open(path) as fh:
        return bundle_from_dict(json.load(fh))
