"""Study drivers: preflight gating, tables, figures, error measures."""

import numpy as np
import pytest

from spacetimefv.mesh import build_mesh_1d
from spacetimefv.numflux import make_scheme
from spacetimefv.solver import project_initial_data
from spacetimefv.studies import (ScenarioConfig, _balance_slab_pairs,
                                 l1_slice_error, preflight,
                                 random_piecewise_initial,
                                 run_convergence_study, run_diagnostics_suite,
                                 run_single)


class TestScenarioConfig:
    def test_nonpositive_final_time_rejected(self):
        with pytest.raises(ValueError, match="final time"):
            ScenarioConfig(scenario_id="flat-burgers-1d", T=0.0)

    def test_levels_below_one_rejected(self):
        with pytest.raises(ValueError, match="levels"):
            ScenarioConfig(scenario_id="flat-burgers-1d", levels=0)

    def test_scheme_falls_back_to_scenario_default(self, scenario_b):
        config = ScenarioConfig(scenario_id="variable-density-1d")
        assert config.scheme_name(scenario_b) == "lf"
        config = ScenarioConfig(scenario_id="variable-density-1d",
                                scheme="godunov")
        assert config.scheme_name(scenario_b) == "godunov"


class TestL1Error:
    def test_matching_values_give_zero(self, mesh_a20):
        exact = lambda t, x: np.full_like(np.asarray(x, dtype=float), 0.4)
        values = np.full(20, 0.4)
        assert l1_slice_error(mesh_a20, values, exact, 0.1) == 0.0

    def test_uniform_offset_integrates_to_itself(self, mesh_a20):
        # The slice has unit total measure, so a 0.1 offset has L1 mass 0.1.
        exact = lambda t, x: np.full_like(np.asarray(x, dtype=float), 0.4)
        values = np.full(20, 0.5)
        assert abs(l1_slice_error(mesh_a20, values, exact, 0.1) - 0.1) <= 1e-14


class TestRandomPiecewiseInitial:
    def test_projection_reproduces_cell_values_1d(self, scenario_a):
        mesh = build_mesh_1d(scenario_a.flux, 14, 0.8, 0.05)
        fn = random_piecewise_initial(mesh, np.random.default_rng(4))
        state = project_initial_data(mesh, scenario_a.flux, fn)
        nodes = mesh.slabs[0].template.nodes_lo
        mids = 0.5 * (nodes[:-1] + nodes[1:])
        assert state.warnings == ()
        assert np.max(np.abs(state.values - fn(mids))) <= 1e-12

    def test_projection_reproduces_cell_values_2d(self, scenario_d):
        mesh = scenario_d.build_mesh(cells=5, T=0.05)
        fn = random_piecewise_initial(mesh, np.random.default_rng(9))
        state = project_initial_data(mesh, scenario_d.flux, fn)
        tpl = mesh.slabs[0].template
        mx = 0.5 * (tpl.xs[:-1] + tpl.xs[1:])
        my = 0.5 * (tpl.ys[:-1] + tpl.ys[1:])
        gx, gy = np.meshgrid(mx, my)
        mids = np.stack([gx.ravel(), gy.ravel()], axis=-1)
        assert np.max(np.abs(state.values - fn(mids))) <= 1e-12

    def test_band_keeps_data_inside_the_state_range(self, scenario_a):
        mesh = build_mesh_1d(scenario_a.flux, 14, 0.8, 0.05)
        rng = np.random.default_rng(12)
        for _ in range(5):
            fn = random_piecewise_initial(mesh, rng, band=0.8)
            x = np.linspace(0.0, 1.0, 200, endpoint=False)
            assert np.all(np.abs(fn(x)) <= 0.8 * 1.25 + 1e-12)


class TestBalancePairs:
    def test_full_window_comes_first(self):
        pairs = _balance_slab_pairs(12, 10)
        assert pairs[0] == (0, 12)
        assert len(pairs) == len(set(pairs))
        assert all(0 <= i < j <= 12 for i, j in pairs)
        assert pairs == _balance_slab_pairs(12, 10)

    def test_short_foliation_dedupes(self):
        pairs = _balance_slab_pairs(2, 10)
        assert pairs[0] == (0, 2)
        assert len(pairs) == len(set(pairs))


class TestPreflight:
    def test_shipped_scenario_passes(self, scenario_a, mesh_a20):
        report = preflight(scenario_a, mesh_a20, make_scheme("godunov"))
        assert report.passed
        assert report.failures == ()

    def test_underdissipative_scheme_fails_the_flux_gate(self, scenario_a,
                                                         mesh_a20):
        report = preflight(scenario_a, mesh_a20,
                           make_scheme("lf", lambda_scale=0.5))
        assert not report.flux_passed
        assert report.mesh_passed
        assert any("monotone" in f for f in report.failures)


class TestRunSingle:
    def test_tables_and_figure_written(self, tmp_path):
        config = ScenarioConfig(scenario_id="flat-burgers-1d", cells=10,
                                T=0.05, out_dir=str(tmp_path))
        result = run_single(config)
        assert result.failures == ()
        names = sorted(p.split("/")[-1] for p in result.paths)
        assert names == ["intermediates.csv", "mesh_summary.csv",
                         "solution.png", "trajectory.csv"]
        assert (tmp_path / "solution.png").stat().st_size > 0
        assert result.trajectory.states[-1].slab == result.trajectory.num_slabs

    def test_failed_preflight_stops_before_marching(self, tmp_path):
        config = ScenarioConfig(scenario_id="flat-burgers-1d", cells=10,
                                T=0.05, scheme="lf", lf_lambda_scale=0.5,
                                out_dir=str(tmp_path), make_plots=False)
        result = run_single(config)
        assert result.trajectory is None
        assert result.paths == ()
        assert result.failures
        assert not result.preflight.passed


class TestConvergence:
    def test_scenario_without_oracle_is_rejected(self):
        config = ScenarioConfig(scenario_id="variable-density-1d",
                                initial="sine", levels=2, make_plots=False)
        with pytest.raises(ValueError, match="no exact oracle"):
            run_convergence_study(config)

    def test_smooth_burgers_refines_toward_the_oracle(self, tmp_path):
        config = ScenarioConfig(scenario_id="flat-burgers-1d", cells=12,
                                T=0.05, levels=2, out_dir=str(tmp_path),
                                make_plots=False)
        table, failures, paths = run_convergence_study(config)
        assert failures == ()
        assert table.err_l1[1] < table.err_l1[0]
        assert table.observed_rate > 0.5
        assert table.num_slabs[1] > table.num_slabs[0]
        assert (tmp_path / "convergence.csv").exists()


class TestDiagnosticsSuite:
    def test_clean_march_passes_everything(self, tmp_path):
        config = ScenarioConfig(scenario_id="flat-burgers-1d", cells=10,
                                T=0.05, out_dir=str(tmp_path),
                                make_plots=False, contraction_pairs=2,
                                balance_pairs=4)
        report, failures, paths = run_diagnostics_suite(config)
        assert failures == ()
        assert report.all_finite
        assert np.all(report.face_max <= report.face_threshold)
        assert np.all(report.element_max <= report.element_threshold)
        assert report.contraction is not None
        for name in ("face_residuals.csv", "element_residuals.csv",
                     "balance.csv", "dissipation.csv", "contraction.csv",
                     "global_terms.csv", "modulus.csv"):
            assert (tmp_path / name).exists()
