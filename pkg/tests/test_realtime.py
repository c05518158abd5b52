import numpy as np
import pytest

from rttube.casestudy import X0_BENCHMARK
from rttube.problem import CentralizedTubeController, recover_duals
from rttube.realtime import (
    AladinState,
    RealTimeTubeController,
    RtiConfig,
    calibrate_gamma,
)


@pytest.fixture(scope="module")
def ctrl20(model, syn, gamma20):
    return RealTimeTubeController(syn, model, 20,
                                  RtiConfig(mode="online", inner_iters=5, gamma=gamma20))


@pytest.fixture(scope="module")
def baseline20(model, syn):
    return CentralizedTubeController(syn, model, 20)


def load_centralized_optimum(ctrl, baseline, x0):
    baseline.reset()
    sol = baseline.solve(x0)
    ys, lam = recover_duals(ctrl.syn, ctrl.model, baseline.cqp, sol)
    return sol, np.vstack(ys[:ctrl.N]), ys[ctrl.N], np.vstack(lam)


class TestConjugate:
    def test_zero_multipliers(self, ctrl20):
        assert ctrl20.conjugate_value(np.zeros((20, 2))) == 0.0

    def test_terminal_only_closed_form(self, ctrl20, syn):
        Lam = np.zeros((20, 2))
        lam_N = np.array([0.7, -1.3])
        Lam[-1] = lam_N
        # the terminal coefficient is lam_N itself; the last interior stage
        # sees -C' lam_N
        C = ctrl20.C
        c_mid = -C.T @ lam_N
        expected = 0.25 * lam_N @ np.linalg.inv(syn.P) @ lam_N
        expected += 0.25 * c_mid @ ctrl20.H_mid_inv @ c_mid
        assert ctrl20.conjugate_value(Lam) == pytest.approx(expected, rel=1e-12)

    def test_against_numerical_maximization(self, ctrl20, model, syn):
        # oracle: the unconstrained maximizer solved stage by stage
        rng = np.random.default_rng(4)
        Lam = rng.normal(size=(20, 2))
        G, g_term = ctrl20._stage_coefficients(Lam)
        val = 0.0
        for k in range(20):
            y = np.linalg.solve(2 * ctrl20.H_mid, G[k])
            val += -y @ ctrl20.H_mid @ y + G[k] @ y
        y = np.linalg.solve(2 * syn.P, g_term)
        val += -y @ syn.P @ y + g_term @ y
        assert ctrl20.conjugate_value(Lam) == pytest.approx(val, rel=1e-8)


class TestRescale:
    def test_below_threshold_is_identity(self, ctrl20):
        ctrl20.reset()
        ctrl20.state.Y[0, 0] = 0.01
        before = ctrl20.state.Y.copy()
        rescaled, _ = ctrl20.rescale(X0_BENCHMARK)
        assert not rescaled
        assert np.array_equal(ctrl20.state.Y, before)

    def test_quadratic_homogeneity(self, ctrl20):
        # an iterate four times over the bound shrinks by half
        ctrl20.reset()
        rng = np.random.default_rng(8)
        ctrl20.state.Y = rng.normal(size=(20, 3))
        ctrl20.state.Lam = rng.normal(size=(20, 2))
        x0 = np.array([0.1, 0.0])
        thr = ctrl20.config.gamma ** 2 * float(x0 @ ctrl20.model.Q @ x0)
        f1 = ctrl20.primal_cost() + ctrl20.conjugate_value()
        factor = np.sqrt(4 * thr / f1)
        ctrl20.state.Y *= factor
        ctrl20.state.y_term *= factor
        ctrl20.state.Lam *= factor
        Y_before = ctrl20.state.Y.copy()
        rescaled, f_before = ctrl20.rescale(x0)
        assert rescaled
        assert f_before == pytest.approx(4 * thr, rel=1e-9)
        assert np.allclose(ctrl20.state.Y, 0.5 * Y_before, atol=1e-12)
        # post-rescale value sits on the bound
        f_after = ctrl20.primal_cost() + ctrl20.conjugate_value()
        assert f_after <= thr + 1e-9

    def test_zero_state_zero_value_skips(self, ctrl20):
        ctrl20.reset()
        rescaled, f1 = ctrl20.rescale(np.zeros(2))
        assert not rescaled and f1 == 0.0

    def test_zero_state_nonzero_value_scales_to_zero(self, ctrl20):
        ctrl20.reset()
        ctrl20.state.Y[0, 0] = 1.0
        rescaled, _ = ctrl20.rescale(np.zeros(2))
        assert rescaled
        assert np.max(np.abs(ctrl20.state.Y)) == 0.0


class TestFixedPoint:
    def test_centralized_optimum_is_stationary(self, ctrl20, baseline20):
        sol, Y_star, yt_star, Lam_star = load_centralized_optimum(
            ctrl20, baseline20, X0_BENCHMARK)
        ctrl20.reset()
        ctrl20.state.Y = Y_star.copy()
        ctrl20.state.y_term = yt_star.copy()
        ctrl20.state.Lam = Lam_star.copy()
        Xi, xi_term, diag = ctrl20.inner_iteration(X0_BENCHMARK)
        assert np.max(np.abs(ctrl20.state.Y - Y_star)) <= 1e-7
        assert np.max(np.abs(ctrl20.state.Lam - Lam_star)) <= 1e-7
        assert np.max(np.abs(Xi - Y_star)) <= 1e-7
        assert diag["dual"] <= 1e-7

    def test_origin_is_trivial_fixed_point(self, ctrl20):
        ctrl20.reset()
        Xi, xi_term, _ = ctrl20.inner_iteration(np.zeros(2))
        assert np.max(np.abs(Xi)) <= 1e-12
        assert np.max(np.abs(ctrl20.state.Y)) <= 1e-12


class TestConvergence:
    def test_input_matches_oracle_at_benchmark_state(self, model, syn, gamma20,
                                                     baseline20, stage_maps):
        ctrl = RealTimeTubeController(syn, model, 20,
                                      RtiConfig(mode="explicit", inner_iters=200,
                                                gamma=gamma20),
                                      stage_maps=stage_maps)
        sol = baseline20.solve(X0_BENCHMARK)
        baseline20.reset()
        u, _, _ = ctrl.rti_step(X0_BENCHMARK)
        assert np.max(np.abs(u - sol.u)) <= 1e-6

    def test_residual_tail_contracts(self, ctrl20, baseline20):
        sol, Y_star, yt_star, Lam_star = load_centralized_optimum(
            ctrl20, baseline20, X0_BENCHMARK)
        ctrl20.reset()
        dist = []
        errors = []
        for _ in range(40):
            ctrl20.inner_iteration(X0_BENCHMARK)
            dist.append(np.linalg.norm(ctrl20.state.Y - Y_star))
            e = (ctrl20.primal_cost(ctrl20.state.Y - Y_star,
                                    ctrl20.state.y_term - yt_star)
                 + ctrl20.conjugate_value(ctrl20.state.Lam - Lam_star))
            errors.append(e)
        # the conjugate-pair error contracts monotonically; the plain primal
        # distance contracts in geometric mean (it carries a damped
        # period-two component)
        errors = np.array(errors)
        assert np.all(np.diff(errors[5:]) <= 1e-9)
        tail = np.array(dist[20:])
        ratios = tail[1:] / tail[:-1]
        assert np.exp(np.mean(np.log(ratios))) < 1.0
        assert dist[-1] < dist[20]

    def test_contraction_estimator(self, model, syn, gamma20, baseline20):
        ctrl = RealTimeTubeController(syn, model, 20,
                                      RtiConfig(mode="online", inner_iters=5,
                                                gamma=gamma20))
        kappa, errors = ctrl.estimate_contraction(X0_BENCHMARK, j_max=30,
                                                  baseline=baseline20)
        assert 0.0 < kappa < 1.0
        tail = errors[15:]
        assert np.all(np.diff(tail) <= 1e-9)

    def test_contraction_trivial_at_origin(self, model, syn, gamma20, baseline20):
        ctrl = RealTimeTubeController(syn, model, 20,
                                      RtiConfig(mode="online", inner_iters=5,
                                                gamma=gamma20))
        kappa, errors = ctrl.estimate_contraction(np.zeros(2), j_max=10,
                                                  baseline=baseline20)
        assert kappa == 0.0
        assert np.max(errors) == 0.0


class TestRtiStep:
    def test_warm_shift_layout(self, ctrl20, syn):
        ctrl20.reset()
        rng = np.random.default_rng(12)
        Y = rng.normal(size=(20, 3))
        yt = rng.normal(size=2)
        Lam = rng.normal(size=(20, 2))
        ctrl20.state.Y = Y.copy()
        ctrl20.state.y_term = yt.copy()
        ctrl20.state.Lam = Lam.copy()
        ctrl20._warm_shift()
        st = ctrl20.state
        assert np.array_equal(st.Y[:-1], Y[1:])
        assert np.allclose(st.Y[-1, :2], yt)
        assert np.allclose(st.Y[-1, 2:], syn.K @ yt)
        assert np.array_equal(st.Lam[:-1], Lam[1:])
        assert np.all(st.Lam[-1] == 0.0)
        assert np.all(st.y_term == 0.0)

    def test_diagnostics_rows(self, model, syn, gamma20, stage_maps):
        ctrl = RealTimeTubeController(syn, model, 20,
                                      RtiConfig(mode="explicit", inner_iters=3,
                                                gamma=gamma20),
                                      stage_maps=stage_maps)
        u, (q0, v0), diag = ctrl.rti_step(X0_BENCHMARK)
        rows = diag.rows(sample_index=7)
        assert len(rows) == 3
        assert rows[0][0] == 7 and rows[0][1] == 1
        assert all(len(r) == 5 for r in rows)
        assert np.all(np.isfinite(u))

    def test_state_counter_advances(self, model, syn, gamma20, stage_maps):
        ctrl = RealTimeTubeController(syn, model, 20,
                                      RtiConfig(mode="explicit", inner_iters=4,
                                                gamma=gamma20),
                                      stage_maps=stage_maps)
        ctrl.rti_step(X0_BENCHMARK)
        assert ctrl.state.j == 4

    def test_config_validation(self):
        with pytest.raises(ValueError):
            RtiConfig(inner_iters=0)
        with pytest.raises(ValueError):
            RtiConfig(gamma=-1.0)
        with pytest.raises(ValueError):
            RtiConfig(mode="magic")


class TestGammaCalibration:
    def test_bound_holds_on_probe_states(self, model, syn, gamma20, baseline20):
        # the calibrated constant must dominate the conjugate-pair value at
        # moderate feasible states
        ctrl = RealTimeTubeController(syn, model, 20,
                                      RtiConfig(mode="online", inner_iters=1,
                                                gamma=gamma20))
        rng = np.random.default_rng(3)
        checked = 0
        while checked < 10:
            x0 = rng.uniform(-1, 1, size=2) * np.array([6.0, 1.5])
            if float(x0 @ model.Q @ x0) < 1e-6:
                continue
            try:
                baseline20.reset()
                sol = baseline20.solve(x0)
            except Exception:
                continue
            checked += 1
            _, lam = recover_duals(syn, model, baseline20.cqp, sol)
            f_star = sol.value + ctrl.conjugate_value(np.vstack(lam))
            assert f_star <= gamma20 ** 2 * float(x0 @ model.Q @ x0) * (1 + 1e-9)
