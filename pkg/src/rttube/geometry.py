"""Polyhedral set algebra for rigid tube MPC.

Sets live in halfspace form {x | F x <= g} with rows normalized to unit
Euclidean norm, so offset tolerances mean the same thing across sets.
Disturbance-reachability sets (the tube cross-section and its input image)
are kept in a lazy Minkowski-sum form whose support function is evaluated
term by term; an explicit 2-D halfspace form is only materialized where a
membership constraint or a plot needs it.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import linprog


class GeometryError(Exception):
    pass


class UnboundedDirection(GeometryError):
    """Support function query along a recession direction."""


class DimensionUnsupported(GeometryError):
    """Operation only implemented for 2-D sets."""


def _solve_lp_max(c, F, g):
    """max c.x s.t. F x <= g. Returns (value, x, status in {optimal,
    infeasible, unbounded})."""
    res = linprog(-np.asarray(c, dtype=float), A_ub=F, b_ub=g,
                  bounds=(None, None), method="highs")
    if res.status == 0:
        return -res.fun, res.x, "optimal"
    if res.status == 2:
        return np.nan, None, "infeasible"
    if res.status == 3:
        return np.inf, None, "unbounded"
    raise GeometryError(f"LP solver failure: {res.message}")


class HPolytope:
    """Polyhedron {x | F x <= g} with unit-norm facet rows.

    Instances are immutable; the arrays are flagged read-only so they can be
    shared across concurrent workers.
    """

    def __init__(self, F, g, normalize=True):
        F = np.atleast_2d(np.asarray(F, dtype=float)).copy()
        g = np.asarray(g, dtype=float).reshape(-1).copy()
        if F.shape[0] != g.shape[0]:
            raise GeometryError(f"row mismatch: F has {F.shape[0]} rows, g has {g.shape[0]}")
        norms = np.linalg.norm(F, axis=1)
        if np.any(norms < 1e-12):
            raise GeometryError("zero facet normal")
        if normalize:
            F /= norms[:, None]
            g /= norms
        F.setflags(write=False)
        g.setflags(write=False)
        self.F = F
        self.g = g
        self.dim = F.shape[1]

    @property
    def num_rows(self):
        return self.F.shape[0]

    @classmethod
    def from_bounds(cls, lb, ub):
        lb = np.asarray(lb, dtype=float).reshape(-1)
        ub = np.asarray(ub, dtype=float).reshape(-1)
        n = lb.size
        eye = np.eye(n)
        return cls(np.vstack([eye, -eye]), np.concatenate([ub, -lb]))

    @classmethod
    def box(cls, radius, dim):
        """Infinity-norm ball of the given radius."""
        r = float(radius) * np.ones(dim)
        return cls.from_bounds(-r, r)

    def support(self, a):
        a = np.asarray(a, dtype=float).reshape(-1)
        if a.size != self.dim:
            raise GeometryError("direction dimension mismatch")
        val, _, status = _solve_lp_max(a, self.F, self.g)
        if status == "unbounded":
            raise UnboundedDirection(f"unbounded in direction {a}")
        if status == "infeasible":
            raise GeometryError("support of an empty set")
        return val

    def contains(self, x, tol=1e-9):
        x = np.asarray(x, dtype=float).reshape(-1)
        return bool(np.all(self.F @ x <= self.g + tol))

    def is_empty(self, tol=1e-9):
        res = linprog(np.zeros(self.dim), A_ub=self.F, b_ub=self.g + tol,
                      bounds=(None, None), method="highs")
        return res.status == 2

    def is_bounded(self):
        for j in range(self.dim):
            for sign in (1.0, -1.0):
                e = np.zeros(self.dim)
                e[j] = sign
                _, _, status = _solve_lp_max(e, self.F, self.g)
                if status == "unbounded":
                    return False
        return True

    def has_origin_interior(self, tol=1e-9):
        return bool(np.all(self.g > tol))

    def bounding_box(self):
        """Cached per-coordinate bounds (lo, hi) of a bounded polytope."""
        if not hasattr(self, "_bbox"):
            hi = np.array([self.support(np.eye(self.dim)[j]) for j in range(self.dim)])
            lo = -np.array([self.support(-np.eye(self.dim)[j]) for j in range(self.dim)])
            self._bbox = (lo, hi)
        return self._bbox

    def chebyshev_center(self):
        """Center and radius of the largest inscribed ball."""
        # max r s.t. F x + r <= g (rows unit norm)
        m = self.num_rows
        c = np.zeros(self.dim + 1)
        c[-1] = -1.0
        A = np.hstack([self.F, np.ones((m, 1))])
        res = linprog(c, A_ub=A, b_ub=self.g, bounds=(None, None), method="highs")
        if res.status != 0:
            return None, -np.inf
        return res.x[:-1], res.x[-1]

    def intersect(self, other: "HPolytope") -> "HPolytope":
        if other.dim != self.dim:
            raise GeometryError("dimension mismatch")
        return HPolytope(np.vstack([self.F, other.F]),
                         np.concatenate([self.g, other.g]), normalize=False)

    def scale(self, rho: float) -> "HPolytope":
        if rho <= 0:
            raise GeometryError("scale factor must be positive")
        return HPolytope(self.F, self.g * rho, normalize=False)

    def prune_redundant(self, tol=1e-9) -> "HPolytope":
        """Drop rows implied by the rest (LP test per row)."""
        keep = []
        F, g = self.F, self.g
        active = list(range(self.num_rows))
        for i in range(self.num_rows):
            others = [j for j in active if j != i]
            if not others:
                keep.append(i)
                continue
            val, _, status = _solve_lp_max(F[i], F[others], g[others])
            if status == "unbounded" or (status == "optimal" and val > g[i] + tol):
                keep.append(i)
            else:
                active.remove(i)
        return HPolytope(F[keep], g[keep], normalize=False)

    def vertices_2d(self, tol=1e-9):
        """Counter-clockwise vertex list of a bounded 2-D polytope."""
        if self.dim != 2:
            raise DimensionUnsupported("vertex enumeration restricted to 2-D")
        F, g = self.F, self.g
        m = self.num_rows
        pts = []
        for i in range(m):
            for j in range(i + 1, m):
                A = np.vstack([F[i], F[j]])
                det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
                if abs(det) < 1e-12:
                    continue
                x = np.linalg.solve(A, np.array([g[i], g[j]]))
                if np.all(F @ x <= g + max(tol, 1e-9) * (1 + abs(x).max())):
                    pts.append(x)
        if not pts:
            raise GeometryError("no vertices found (empty or unbounded set)")
        pts = np.array(pts)
        # dedupe at a threshold tied to the set scale
        scale = max(np.ptp(pts[:, 0]), np.ptp(pts[:, 1]), 1e-300)
        order = np.lexsort((pts[:, 1], pts[:, 0]))
        pts = pts[order]
        dedup = [pts[0]]
        for p in pts[1:]:
            if np.linalg.norm(p - dedup[-1]) > 1e-9 * scale:
                dedup.append(p)
        pts = np.array(dedup)
        centroid = pts.mean(axis=0)
        ang = np.arctan2(pts[:, 1] - centroid[1], pts[:, 0] - centroid[0])
        return pts[np.argsort(ang)]

    def to_json_dict(self):
        return {"F": self.F.tolist(), "g": self.g.tolist()}

    @classmethod
    def from_json_dict(cls, d):
        return cls(np.array(d["F"], dtype=float), np.array(d["g"], dtype=float),
                   normalize=False)

    def __repr__(self):
        return f"HPolytope(rows={self.num_rows}, dim={self.dim})"


class SupportSet:
    """Lazy scaled Minkowski sum  scale * (M_0 B_0 (+) M_1 B_1 (+) ...).

    Only the support function is ever needed:
        h(a) = scale * sum_i h_{B_i}(M_i^T a).
    """

    def __init__(self, terms, scale=1.0):
        if scale <= 0:
            raise GeometryError("scale must be positive")
        self.terms = []
        dim = None
        for M, base in terms:
            M = np.atleast_2d(np.asarray(M, dtype=float)).copy()
            if M.shape[1] != base.dim:
                raise GeometryError("term matrix does not match base dimension")
            if dim is None:
                dim = M.shape[0]
            elif M.shape[0] != dim:
                raise GeometryError("terms must share the ambient dimension")
            M.setflags(write=False)
            self.terms.append((M, base))
        if dim is None:
            raise GeometryError("a SupportSet needs at least one term")
        self.dim = dim
        self.scale = float(scale)

    def support(self, a):
        a = np.asarray(a, dtype=float).reshape(-1)
        if a.size != self.dim:
            raise GeometryError("direction dimension mismatch")
        return self.scale * sum(base.support(M.T @ a) for M, base in self.terms)

    def linear_image(self, M) -> "SupportSet":
        M = np.atleast_2d(np.asarray(M, dtype=float))
        return SupportSet([(M @ Mi, base) for Mi, base in self.terms], self.scale)

    def to_json_dict(self):
        return {
            "scale": self.scale,
            "terms": [{"M": M.tolist(), "base": base.to_json_dict()}
                      for M, base in self.terms],
        }

    @classmethod
    def from_json_dict(cls, d):
        terms = [(np.array(t["M"], dtype=float), HPolytope.from_json_dict(t["base"]))
                 for t in d["terms"]]
        return cls(terms, scale=d["scale"])

    def __repr__(self):
        return f"SupportSet(terms={len(self.terms)}, dim={self.dim}, scale={self.scale:g})"


def support(S, a):
    """Support function max_{x in S} a.x for either set representation."""
    return S.support(a)


def pontryagin_diff(Y: HPolytope, S) -> HPolytope:
    """Facetwise erosion {x | F_Y x <= g_Y - h_S(rows of F_Y)}.

    Exact for halfspace-form Y. The result may be empty; callers decide
    whether that is an error (check with ``is_empty``).
    """
    offsets = np.array([support(S, f) for f in Y.F])
    return HPolytope(Y.F, Y.g - offsets, normalize=False)


def minkowski_sum_2d(P: HPolytope, Q: HPolytope) -> HPolytope:
    """Exact Minkowski sum of two bounded 2-D polytopes by edge merging."""
    if P.dim != 2 or Q.dim != 2:
        raise DimensionUnsupported("Minkowski sum implemented for 2-D only")
    vp = P.vertices_2d()
    vq = Q.vertices_2d()
    verts = _edge_merge_sum(vp, vq)
    return hpolytope_from_vertices_2d(verts)


def _cyclic_from_lowest(v):
    """Rotate a CCW vertex ring to start at the lexicographically lowest
    (y, then x) vertex."""
    start = np.lexsort((v[:, 0], v[:, 1]))[0]
    return np.roll(v, -start, axis=0)


def _edge_merge_sum(vp, vq):
    """Classic convex-polygon Minkowski sum: walk the two edge fans in
    angular order, accumulating from the bottom-most vertices."""
    vp = _cyclic_from_lowest(vp)
    vq = _cyclic_from_lowest(vq)
    np_, nq = len(vp), len(vq)
    ep = np.roll(vp, -1, axis=0) - vp
    eq = np.roll(vq, -1, axis=0) - vq
    out = [vp[0] + vq[0]]
    i = j = 0
    while i < np_ or j < nq:
        if i >= np_:
            step = eq[j]; j += 1
        elif j >= nq:
            step = ep[i]; i += 1
        else:
            cross = ep[i, 0] * eq[j, 1] - ep[i, 1] * eq[j, 0]
            if cross > 1e-12:
                step = ep[i]; i += 1
            elif cross < -1e-12:
                step = eq[j]; j += 1
            else:  # parallel edges advance together
                step = ep[i] + eq[j]; i += 1; j += 1
        out.append(out[-1] + step)
    return np.array(out[:-1])  # last point closes the ring


def hpolytope_from_vertices_2d(verts) -> HPolytope:
    """Halfspace form of the convex hull of 2-D points (CCW input ring or
    arbitrary points; duplicates tolerated)."""
    verts = np.atleast_2d(np.asarray(verts, dtype=float))
    if verts.shape[1] != 2:
        raise DimensionUnsupported("expected 2-D points")
    verts = _convex_hull_2d(verts)
    n = len(verts)
    if n == 1:
        # single point: tight box
        x = verts[0]
        eye = np.eye(2)
        return HPolytope(np.vstack([eye, -eye]),
                         np.concatenate([x, -x]), normalize=False)
    if n == 2:
        # segment: slab plus end caps
        a, b = verts
        t = (b - a) / np.linalg.norm(b - a)
        nrm = np.array([t[1], -t[0]])
        F = np.vstack([nrm, -nrm, t, -t])
        g = np.array([nrm @ a, -(nrm @ a), t @ b, -(t @ a)])
        return HPolytope(F, g, normalize=False)
    scale = max(np.ptp(verts[:, 0]), np.ptp(verts[:, 1]), 1e-300)
    rows, offs = [], []
    for k in range(n):
        a, b = verts[k], verts[(k + 1) % n]
        edge = b - a
        if np.linalg.norm(edge) < 1e-12 * scale:
            continue
        normal = np.array([edge[1], -edge[0]])
        normal /= np.linalg.norm(normal)
        rows.append(normal)
        offs.append(normal @ a)
    return HPolytope(np.array(rows), np.array(offs), normalize=False)


def _convex_hull_2d(pts):
    """Andrew monotone chain, CCW output; collinearity threshold scales with
    the point-cloud extent."""
    pts = np.unique(pts, axis=0)
    if len(pts) <= 2:
        return pts
    scale = max(np.ptp(pts[:, 0]), np.ptp(pts[:, 1]), 1e-300)
    eps = 1e-13 * scale * scale
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]

    def half(points):
        chain = []
        for p in points:
            while len(chain) >= 2:
                o, a = chain[-2], chain[-1]
                if (a[0] - o[0]) * (p[1] - o[1]) - (a[1] - o[1]) * (p[0] - o[0]) <= eps:
                    chain.pop()
                else:
                    break
            chain.append(p)
        return chain

    lower = half(pts)
    upper = half(pts[::-1])
    return np.array(lower[:-1] + upper[:-1])


def contains(S: HPolytope, x, tol=1e-9):
    return S.contains(x, tol)


def set_inclusion(P, Q: HPolytope, tol=1e-9):
    """P subset of Q, tested facetwise on Q via support functions."""
    return inclusion_margin(P, Q) >= -tol


def inclusion_margin(P, Q: HPolytope):
    """min over facets (f, g) of Q of g - h_P(f); nonnegative iff P <= Q."""
    return min(gq - support(P, f) for f, gq in zip(Q.F, Q.g))


def linear_image_2d(M, P: HPolytope) -> HPolytope:
    """Explicit H-form of M P for 2-D images (via vertex mapping)."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != 2:
        raise DimensionUnsupported("explicit linear images restricted to 2-D")
    verts = P.vertices_2d()
    return hpolytope_from_vertices_2d(verts @ M.T)
