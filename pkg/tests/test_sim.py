import numpy as np
import pytest

from rttube.casestudy import X0_BENCHMARK
from rttube.problem import CentralizedTubeController
from rttube.realtime import RealTimeTubeController, RtiConfig
from rttube.sim import (
    InfeasibleAtStep,
    closed_loop_cost,
    read_trace_csv,
    run_closed_loop,
    sample_disturbance,
    trace_csv_header,
    write_diagnostics_csv,
    write_trace_csv,
    write_tube_json,
)


@pytest.fixture(scope="module")
def rti5(model, syn, gamma20, stage_maps):
    return RealTimeTubeController(syn, model, 20,
                                  RtiConfig(mode="explicit", inner_iters=5,
                                            gamma=gamma20),
                                  stage_maps=stage_maps)


class TestDisturbanceSampling:
    def test_zero_mode(self, model):
        w = sample_disturbance(model.W, "zero", np.random.default_rng(0))
        assert np.array_equal(w, np.zeros(2))

    def test_uniform_mode_fills_box(self, model):
        rng = np.random.default_rng(1)
        ws = np.array([sample_disturbance(model.W, "uniform", rng)
                       for _ in range(100_000)])
        assert np.max(np.abs(ws)) <= 0.1
        assert np.max(np.abs(ws)) >= 0.099

    def test_vertex_mode(self, model):
        rng = np.random.default_rng(2)
        for _ in range(50):
            w = sample_disturbance(model.W, "vertex", rng)
            assert np.allclose(np.abs(w), 0.1)

    def test_unknown_mode(self, model):
        from rttube.sim import SimError

        with pytest.raises(SimError):
            sample_disturbance(model.W, "gaussian", np.random.default_rng(0))


class TestClosedLoop:
    def test_benchmark_run_all_audits_pass(self, model, syn, rti5):
        rti5.reset()
        tr = run_closed_loop(rti5, syn, model, X0_BENCHMARK, 50,
                             noise="uniform", seed=11)
        assert tr.feasible.all()
        assert tr.tube_ok.all()
        assert tr.state_ok.all()
        assert tr.input_ok.all()
        assert tr.replay_consistent(model)

    def test_nominal_centralized_converges(self, model, syn):
        ctrl = CentralizedTubeController(syn, model, 20)
        tr = run_closed_loop(ctrl, syn, model, X0_BENCHMARK, 51,
                             noise="zero", seed=0)
        assert np.linalg.norm(tr.states[50]) < 1e-4

    def test_lyapunov_descent_under_centralized(self, model, syn):
        ctrl = CentralizedTubeController(syn, model, 20)
        tr = run_closed_loop(ctrl, syn, model, X0_BENCHMARK, 40,
                             noise="zero", seed=0)
        for k in range(tr.T - 1):
            assert tr.values[k + 1] <= tr.values[k] - tr.nominal_costs[k] + 1e-8

    def test_terminal_region_stays_invariant(self, model, syn, rti5):
        from rttube.geometry import minkowski_sum_2d

        inflated = minkowski_sum_2d(syn.X_T, syn.Z_h)
        x0 = np.array([-1.0, 0.3])
        assert syn.X_T.contains(x0)
        rti5.reset()
        tr = run_closed_loop(rti5, syn, model, x0, 40, noise="uniform", seed=5)
        for k in range(tr.T):
            assert inflated.contains(tr.states[k], tol=1e-7)

    def test_robust_convergence_into_cross_section(self, model, syn, rti5):
        rti5.reset()
        tr = run_closed_loop(rti5, syn, model, X0_BENCHMARK, 200,
                             noise="uniform", seed=3)
        margin = syn.Z_h.scale(1.0)  # membership of x against Z (+) margin
        from rttube.geometry import HPolytope, minkowski_sum_2d

        inflated = minkowski_sum_2d(syn.Z_h, HPolytope.box(0.05, 2))
        tail = tr.states[160:]
        for x in tail:
            assert inflated.contains(x, tol=1e-9)

    def test_determinism(self, model, syn, rti5):
        rti5.reset()
        a = run_closed_loop(rti5, syn, model, X0_BENCHMARK, 30,
                            noise="uniform", seed=21)
        rti5.reset()
        b = run_closed_loop(rti5, syn, model, X0_BENCHMARK, 30,
                            noise="uniform", seed=21)
        assert np.array_equal(a.states, b.states)
        assert np.array_equal(a.inputs, b.inputs)
        assert np.array_equal(a.disturbances, b.disturbances)

    def test_infeasible_start_raises_with_partial_trace(self, model, syn):
        ctrl = CentralizedTubeController(syn, model, 20)
        with pytest.raises(InfeasibleAtStep) as err:
            run_closed_loop(ctrl, syn, model, np.array([0.0, 50.0]), 10,
                            noise="zero", seed=0)
        assert err.value.step == 0
        assert err.value.trace.T == 0


class TestCost:
    def test_zero_trajectory_zero_cost(self, model, syn):
        ctrl = CentralizedTubeController(syn, model, 20)
        tr = run_closed_loop(ctrl, syn, model, np.zeros(2), 10, noise="zero", seed=0)
        assert closed_loop_cost(tr) == pytest.approx(0.0, abs=1e-20)

    def test_large_iteration_budget_matches_optimal(self, model, syn, gamma20,
                                                    stage_maps):
        base = CentralizedTubeController(syn, model, 20)
        c_base = closed_loop_cost(run_closed_loop(base, syn, model, X0_BENCHMARK,
                                                  50, noise="zero", seed=0))
        ctrl = RealTimeTubeController(syn, model, 20,
                                      RtiConfig(mode="explicit", inner_iters=1000,
                                                gamma=gamma20),
                                      stage_maps=stage_maps)
        c = closed_loop_cost(run_closed_loop(ctrl, syn, model, X0_BENCHMARK, 50,
                                             noise="zero", seed=0))
        assert c / c_base - 1.0 <= 0.01

    def test_truncated_cost(self, model, syn):
        ctrl = CentralizedTubeController(syn, model, 20)
        tr = run_closed_loop(ctrl, syn, model, X0_BENCHMARK, 20, noise="zero", seed=0)
        assert closed_loop_cost(tr, 5) == pytest.approx(float(np.sum(tr.stage_costs[:5])))


class TestTraceFiles:
    def test_csv_roundtrip(self, tmp_path, model, syn, rti5):
        rti5.reset()
        tr = run_closed_loop(rti5, syn, model, X0_BENCHMARK, 10,
                             noise="uniform", seed=2)
        path = tmp_path / "trace.csv"
        write_trace_csv(path, tr)
        header, rows = read_trace_csv(path)
        assert header == trace_csv_header(2, 1)
        assert header == ["k", "x1", "x2", "q1", "q2", "u", "w1", "w2",
                          "stage_cost", "rti_us", "feasible"]
        assert rows.shape == (10, 11)
        assert np.allclose(rows[:, 1:3], tr.states[:10])

    def test_tube_json(self, tmp_path, model, syn, rti5):
        import json

        rti5.reset()
        tr = run_closed_loop(rti5, syn, model, X0_BENCHMARK, 5,
                             noise="zero", seed=0)
        path = tmp_path / "tube.json"
        write_tube_json(path, tr, syn)
        doc = json.loads(path.read_text())
        assert len(doc["tube"]) == 5
        assert len(doc["terminal_set"]) >= 3
        # each recorded state sits inside its tube polygon
        from rttube.geometry import hpolytope_from_vertices_2d

        for k, entry in enumerate(doc["tube"]):
            poly = hpolytope_from_vertices_2d(np.array(entry["vertices"]))
            assert poly.contains(tr.states[k], tol=1e-7)

    def test_diagnostics_csv(self, tmp_path, model, syn, rti5):
        rti5.reset()
        tr = run_closed_loop(rti5, syn, model, X0_BENCHMARK, 3,
                             noise="zero", seed=0)
        path = tmp_path / "diag.csv"
        write_diagnostics_csv(path, tr.diagnostics)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "sample,inner_iteration,primal_residual,dual_residual,wall_us"
        assert len(lines) == 1 + 3 * 5
