import time

import numpy as np
import pytest

from rttube.geometry import HPolytope, SupportSet, set_inclusion
from rttube.synthesis import (
    NoConvergence,
    PlantModel,
    SynthesisError,
    TighteningEmpty,
    bundle_from_dict,
    bundle_to_dict,
    compute_mpi_terminal,
    compute_rpi,
    dare_residual,
    materialize_rpi_2d,
    solve_dare,
    synthesize,
    validate_assumptions,
)


class TestDare:
    def test_case_study_gains(self, model):
        t0 = time.perf_counter()
        P, K = solve_dare(model.A, model.B, model.Q, model.R)
        assert time.perf_counter() - t0 < 1.0
        # converged solution for this data; the values printed in the source
        # material round K the same way but carry a typo in P[1,1]
        assert np.max(np.abs(K - np.array([[-0.62, -1.27]]))) < 0.005
        assert dare_residual(model.A, model.B, model.Q, model.R, P) <= 1e-10

    def test_deadbeat_plant(self):
        B = np.array([[1.0], [0.4]])
        Q = np.diag([2.0, 3.0])
        R = np.array([[0.7]])
        P, K = solve_dare(np.zeros((2, 2)), B, Q, R)
        assert np.allclose(P, Q, atol=1e-12)
        assert np.allclose(K, 0.0, atol=1e-12)

    def test_reduces_to_lyapunov_without_input(self):
        rng = np.random.default_rng(2)
        A = 0.8 * rng.normal(size=(2, 2))
        A /= max(1.0, max(abs(np.linalg.eigvals(A))) / 0.7)
        Q = np.eye(2)
        P, K = solve_dare(A, np.zeros((2, 1)), Q, np.array([[1.0]]))
        # oracle: fixed-point Lyapunov iteration
        L = Q.copy()
        for _ in range(10_000):
            L_next = Q + A.T @ L @ A
            if np.max(np.abs(L_next - L)) < 1e-14:
                break
            L = L_next
        assert np.max(np.abs(P - L_next)) < 1e-9
        assert np.allclose(K, 0.0)

    def test_unstabilizable_raises(self):
        A = np.array([[2.0, 0.0], [0.0, 0.5]])
        B = np.array([[0.0], [1.0]])  # unstable mode uncontrollable
        with pytest.raises(NoConvergence):
            solve_dare(A, B, np.eye(2), np.array([[1.0]]), max_iter=2000)


class TestRpi:
    def test_nilpotent_single_step(self):
        W = HPolytope.box(0.1, 2)
        Z, alpha, s = compute_rpi(np.zeros((2, 2)), W)
        assert s == 1
        assert alpha == pytest.approx(0.0, abs=1e-15)
        for a in ([1.0, 0.0], [0.3, -0.9]):
            assert Z.support(a) == pytest.approx(W.support(a), rel=1e-12)

    def test_scalar_contraction_geometric_series(self):
        # oracle: sum of 0.5^i supports approaches 2
        W = HPolytope.box(1.0, 2)
        Z, alpha, s = compute_rpi(0.5 * np.eye(2), W, eps=1e-4)
        assert Z.support([1.0, 0.0]) == pytest.approx(2.0, abs=2e-4)

    def test_case_study_invariance_margin(self, model, syn):
        from rttube.synthesis import rpi_invariance_violation

        t0 = time.perf_counter()
        Z, alpha, s = compute_rpi(syn.A_K, model.W, eps=1e-4)
        assert time.perf_counter() - t0 < 5.0
        assert s == syn.s and alpha == pytest.approx(syn.alpha)
        assert rpi_invariance_violation(syn, model) <= 1e-4

    def test_unstable_matrix_rejected(self):
        with pytest.raises(SynthesisError):
            compute_rpi(np.eye(2), HPolytope.box(0.1, 2))

    def test_materialized_form_matches_supports(self, syn):
        poly = materialize_rpi_2d(syn.Z)
        rng = np.random.default_rng(5)
        for a in rng.normal(size=(30, 2)):
            assert poly.support(a) == pytest.approx(syn.Z.support(a), abs=1e-10)

    def test_random_membership_under_one_step(self, model, syn):
        # robust invariance sampled pointwise: A_K z + w stays inside
        rng = np.random.default_rng(11)
        verts = syn.Z_h.vertices_2d()
        for _ in range(1000):
            lam = rng.dirichlet(np.ones(len(verts)))
            z = lam @ verts
            w = rng.uniform(-0.1, 0.1, size=2)
            assert syn.Z_h.contains(syn.A_K @ z + w, tol=1e-6)


class TestMpiTerminal:
    def test_static_matrix_returns_base_set(self, syn):
        X_t = HPolytope.from_bounds([-1, -1], [1, 1])
        U_t = HPolytope([[1.0], [-1.0]], [2.0, 2.0])
        out = compute_mpi_terminal(np.zeros((2, 2)), X_t, U_t, np.array([[0.2, 0.1]]))
        for a in np.random.default_rng(0).normal(size=(20, 2)):
            assert out.support(a) == pytest.approx(X_t.support(a), abs=1e-9)

    def test_case_study_invariance_checks(self, model, syn):
        image = SupportSet([(syn.A_K, syn.X_T)])
        assert set_inclusion(image, syn.X_T, tol=1e-8)
        assert set_inclusion(syn.X_T, syn.X_tight, tol=1e-9)
        assert set_inclusion(SupportSet([(syn.K, syn.X_T)]), syn.U_tight, tol=1e-9)

    def test_fixed_point_of_one_more_iteration(self, model, syn):
        # another constraint sweep must add nothing
        H0 = np.vstack([syn.X_tight.F, syn.U_tight.F @ syn.K])
        h0 = np.concatenate([syn.X_tight.g, syn.U_tight.g])
        base = HPolytope(H0, h0)
        t = 1
        A_pow = syn.A_K.copy()
        grown = syn.X_T
        from rttube.geometry import _solve_lp_max

        for _ in range(60):
            redundant = True
            for f, g in zip(base.F @ A_pow, base.g):
                val, _, status = _solve_lp_max(f, grown.F, grown.g)
                if status != "optimal" or val > g + 1e-9:
                    redundant = False
                    break
            if redundant:
                break
            A_pow = A_pow @ syn.A_K
            t += 1
        assert redundant

    def test_monotone_in_input_tightening(self, model, syn):
        small_U = syn.U_tight.scale(0.1)
        shrunk = compute_mpi_terminal(syn.A_K, syn.X_tight, small_U, syn.K)
        assert set_inclusion(shrunk, syn.X_T, tol=1e-9)


class TestValidation:
    def test_case_study_report_passes(self, model, syn):
        rep = validate_assumptions(syn, model)
        assert rep["all_passed"]
        for key in ("terminal_invariant", "terminal_in_tight_state",
                    "terminal_input_in_tight_input"):
            assert rep[key]["margin"] >= -1e-9

    def test_halved_terminal_weight_fails(self, model, syn):
        import dataclasses

        bad = dataclasses.replace(syn, P=0.5 * syn.P)
        rep = validate_assumptions(bad, model)
        assert not rep["terminal_cost_decrease"]["passed"]

    def test_giant_disturbance_reported(self, model):
        big = PlantModel(A=model.A, B=model.B, X=model.X, U=model.U,
                         W=model.W.scale(100.0), Q=model.Q, R=model.R)
        with pytest.raises(TighteningEmpty):
            synthesize(big)

    def test_r_must_be_positive_definite(self, model):
        with pytest.raises(SynthesisError):
            PlantModel(A=model.A, B=model.B, X=model.X, U=model.U, W=model.W,
                       Q=model.Q, R=np.zeros((1, 1)))


class TestBundle:
    def test_roundtrip(self, model, syn):
        d = bundle_to_dict(model, syn)
        model2, syn2 = bundle_from_dict(d)
        assert np.array_equal(syn2.K, syn.K)
        assert np.array_equal(syn2.P, syn.P)
        assert np.array_equal(syn2.X_T.F, syn.X_T.F)
        a = np.array([0.4, -0.6])
        assert syn2.Z.support(a) == pytest.approx(syn.Z.support(a), rel=1e-14)
