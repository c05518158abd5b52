"""Offline multi-parametric solution of the proximal stage QPs.

Every interior stage shares one template whose parameter is the collapsed
linear cost coefficient; the first stage appends the measured state (it
shifts the membership rows), and the terminal stage is the same idea in the
state dimension. Enumeration walks candidate optimal active sets, keeps
those with linearly independent rows, builds each critical region from
primal feasibility plus dual nonnegativity, and drops regions that are
empty inside the calibrated parameter box. Point location is a sequential
scan with a last-hit cache; a miss falls back to the online solver and is
counted.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from .geometry import HPolytope
from .solvers import DenseQP, solve_qp


class ExplicitError(Exception):
    pass


class TemplateTooLarge(ExplicitError):
    pass


@dataclass
class StageTemplate:
    """Parametric strictly convex QP
        min_x 1/2 x' H x + (Tc theta)' x   s.t.  F x <= g + E theta.
    """

    H: np.ndarray
    F: np.ndarray
    g: np.ndarray
    Tc: np.ndarray
    E: np.ndarray

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.F = np.atleast_2d(np.asarray(self.F, dtype=float))
        self.g = np.asarray(self.g, dtype=float).reshape(-1)
        self.Tc = np.atleast_2d(np.asarray(self.Tc, dtype=float))
        self.E = np.atleast_2d(np.asarray(self.E, dtype=float))
        self.n = self.H.shape[0]
        self.m = self.F.shape[0]
        self.p = self.Tc.shape[1]
        if np.min(np.linalg.eigvalsh(self.H)) <= 0:
            raise ExplicitError("stage Hessian must be positive definite")
        if self.E.shape != (self.m, self.p):
            raise ExplicitError("parameter-offset map has the wrong shape")

    def solve_online(self, theta, warm_active=None, x0=None):
        theta = np.asarray(theta, dtype=float).reshape(-1)
        qp = DenseQP(H=self.H, c=self.Tc @ theta, F=self.F,
                     g=self.g + self.E @ theta)
        return solve_qp(qp, warm_active=warm_active, x0=x0)


@dataclass
class CriticalRegion:
    R: HPolytope          # region in parameter space
    A_law: np.ndarray     # x(theta) = A_law theta + b_law
    b_law: np.ndarray
    active: tuple

    def to_json_dict(self):
        return {"F": self.R.F.tolist(), "g": self.R.g.tolist(),
                "A_law": self.A_law.tolist(), "b_law": self.b_law.tolist(),
                "active": list(self.active)}

    @classmethod
    def from_json_dict(cls, d):
        return cls(R=HPolytope(np.array(d["F"]), np.array(d["g"]), normalize=False),
                   A_law=np.array(d["A_law"], dtype=float),
                   b_law=np.array(d["b_law"], dtype=float),
                   active=tuple(d["active"]))


@dataclass
class ExplicitStageMap:
    regions: list
    param_dim: int
    stage_kind: str          # first | middle | terminal
    param_box: HPolytope
    misses: int = 0
    _last_hit: int = field(default=0, repr=False)
    _stack: tuple | None = field(default=None, repr=False)

    def _build_stack(self):
        """All region inequalities stacked for one-shot point location."""
        Fs = np.vstack([r.R.F for r in self.regions])
        gs = np.concatenate([r.R.g for r in self.regions])
        counts = [r.R.num_rows for r in self.regions]
        offsets = np.concatenate([[0], np.cumsum(counts)[:-1]])
        self._stack = (Fs, gs, offsets.astype(int))

    def evaluate(self, theta, tol=1e-9):
        """Affine law of the region containing theta, or None on a miss.
        Checks the last-hit region first, then locates over all regions in
        one stacked pass."""
        theta = np.asarray(theta, dtype=float).reshape(-1)
        reg = self.regions[self._last_hit]
        if np.all(reg.R.F @ theta <= reg.R.g + tol):
            return reg.A_law @ theta + reg.b_law
        if self._stack is None:
            self._build_stack()
        Fs, gs, offsets = self._stack
        ok = Fs @ theta <= gs + tol
        hits = np.flatnonzero(np.minimum.reduceat(ok, offsets))
        if hits.size == 0:
            self.misses += 1
            return None
        idx = int(hits[0])
        self._last_hit = idx
        reg = self.regions[idx]
        return reg.A_law @ theta + reg.b_law

    def evaluate_batch(self, thetas, tol=1e-9):
        """Vectorized lookup: (values (n, n_x), found mask). Unmatched rows
        are left as NaN for the caller's fallback."""
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        n = thetas.shape[0]
        if self._stack is None:
            self._build_stack()
            self._law_stack = (np.stack([r.A_law for r in self.regions]),
                               np.stack([r.b_law for r in self.regions]))
        elif not hasattr(self, "_law_stack"):
            self._law_stack = (np.stack([r.A_law for r in self.regions]),
                               np.stack([r.b_law for r in self.regions]))
        Fs, gs, offsets = self._stack
        ok = (Fs @ thetas.T) <= (gs + tol)[:, None]
        per_region = np.minimum.reduceat(ok, offsets, axis=0)  # (R, n)
        found = per_region.any(axis=0)
        ridx = np.argmax(per_region, axis=0)
        A_st, b_st = self._law_stack
        out = np.empty((n, A_st.shape[1]))
        uniq = np.unique(ridx)
        if uniq.size == 1:
            r = int(uniq[0])
            np.matmul(thetas, A_st[r].T, out=out)
            out += b_st[r]
        else:
            for r in uniq:
                sel = ridx == r
                out[sel] = thetas[sel] @ A_st[r].T + b_st[r]
        out[~found] = np.nan
        self.misses += int(np.sum(~found))
        return out, found

    def to_json_dict(self):
        return {"stage_kind": self.stage_kind, "param_dim": self.param_dim,
                "param_box": self.param_box.to_json_dict(),
                "regions": [r.to_json_dict() for r in self.regions]}

    @classmethod
    def from_json_dict(cls, d):
        return cls(regions=[CriticalRegion.from_json_dict(r) for r in d["regions"]],
                   param_dim=d["param_dim"], stage_kind=d["stage_kind"],
                   param_box=HPolytope.from_json_dict(d["param_box"]))

    def serialized_size(self):
        return len(json.dumps(self.to_json_dict()).encode())


def enumerate_regions(template: StageTemplate, param_box: HPolytope,
                      stage_kind="middle", max_rows=40) -> ExplicitStageMap:
    """Critical-region enumeration over candidate active sets up to the
    variable count, with independence filtering and LP emptiness pruning
    against the parameter box."""
    m, n, p = template.m, template.n, template.p
    if m > max_rows:
        raise TemplateTooLarge(f"{m} constraint rows exceeds the cap {max_rows}")
    H_inv = np.linalg.inv(template.H)
    regions = []
    for size in range(0, n + 1):
        for combo in itertools.combinations(range(m), size):
            reg = _build_region(template, H_inv, combo, param_box)
            if reg is not None:
                regions.append(reg)
    if not regions:
        raise ExplicitError("no nonempty critical regions (check the parameter box)")
    return ExplicitStageMap(regions=regions, param_dim=p, stage_kind=stage_kind,
                            param_box=param_box)


def _build_region(template, H_inv, combo, param_box):
    F, g, Tc, E = template.F, template.g, template.Tc, template.E
    n, m, p = template.n, template.m, template.p
    idx = list(combo)
    rest = [i for i in range(m) if i not in combo]

    if idx:
        Fa = F[idx]
        if np.linalg.matrix_rank(Fa, tol=1e-9) < len(idx):
            return None  # LICQ failure: skipped; online fallback covers it
        S = Fa @ H_inv @ Fa.T
        S_inv = np.linalg.inv(S)
        # mu(theta) = -S^-1 [(Fa H^-1 Tc + E_a) theta + g_a]
        Mu_A = -S_inv @ (Fa @ H_inv @ Tc + E[idx])
        mu_b = -S_inv @ g[idx]
        A_law = -H_inv @ (Tc + Fa.T @ Mu_A)
        b_law = -H_inv @ Fa.T @ mu_b
    else:
        Mu_A = np.zeros((0, p))
        mu_b = np.zeros(0)
        A_law = -H_inv @ Tc
        b_law = np.zeros(n)

    rows, offs = [], []
    if rest:
        # primal feasibility of the inactive rows: F_r x(theta) <= g_r + E_r theta
        rows.append(F[rest] @ A_law - E[rest])
        offs.append(g[rest] - F[rest] @ b_law)
    if idx:
        # dual nonnegativity: -mu(theta) <= 0
        rows.append(-Mu_A)
        offs.append(mu_b)
    if not rows:
        # unconstrained template: one region covering everything
        region = HPolytope(np.eye(p)[:1], [1e30], normalize=False)
        return CriticalRegion(R=region, A_law=A_law, b_law=b_law, active=())
    Fr = np.vstack(rows)
    gr = np.concatenate(offs)
    keep = np.linalg.norm(Fr, axis=1) > 1e-11
    # rows with a zero normal are parameter-independent: drop satisfied
    # ones, kill the region on violated ones
    if np.any(~keep):
        if np.any(gr[~keep] < -1e-9):
            return None
        Fr, gr = Fr[keep], gr[keep]
    if Fr.shape[0] == 0:
        region = HPolytope(np.eye(p)[:1], [1e30], normalize=False)
        return CriticalRegion(R=region, A_law=A_law, b_law=b_law, active=tuple(combo))
    region = HPolytope(Fr, gr)
    # regions are stored with their exact optimality inequalities only; the
    # box is just the pruning window
    if region.intersect(param_box).is_empty(tol=1e-10):
        return None
    return CriticalRegion(R=region, A_law=A_law, b_law=b_law, active=tuple(combo))
