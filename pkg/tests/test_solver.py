"""Slab march: projection, element updates, conservation, determinism."""

import math

import numpy as np
import pytest

from spacetimefv.forms import default_quadrature, form_integral
from spacetimefv.mesh import (
    FoliatedMesh,
    SlabView,
    _slab_margins,
    _state_grid,
    _template_1d,
    build_mesh_1d,
    build_mesh_2d_torus,
)
from spacetimefv.numflux import GodunovScheme, make_scheme
from spacetimefv.scenarios import classical_flux_field
from spacetimefv.solver import (
    INTERMEDIATES_HEADER,
    TRAJECTORY_HEADER,
    SliceState,
    SolverConfig,
    SolverError,
    advance_slice,
    intermediates_rows,
    project_initial_data,
    reconstruct,
    run,
    step_element,
    trajectory_rows,
)

TWO_PI = 2.0 * math.pi


def unit_burgers_flux():
    return classical_flux_field(
        1,
        [lambda u, x: u + 0.0 * x[..., 0],
         lambda u, x: 0.5 * u ** 2 + 0.0 * x[..., 0]],
        [lambda u, x: 1.0 + 0.0 * (u + x[..., 0]),
         lambda u, x: u + 0.0 * x[..., 0]],
        u_range=(-1.0, 1.0), geometry_compatible=True)


def hand_mesh(num_cells, tau, flux=None):
    """Single-slab static mesh with a prescribed time step.

    The public builder refuses CFL margins at or above the fraction, so the
    marginal tau/h = 1/2 case is assembled from the template directly; the
    solver itself accepts margins up to 1 + 1e-9.
    """
    flux = flux or unit_burgers_flux()
    quad = default_quadrature()
    nodes = np.linspace(0.0, 1.0, num_cells + 1)
    tpl = _template_1d(flux, quad, nodes, nodes, tau)
    view = SlabView(tpl, 0.0, 0)
    margins = [_slab_margins(flux, view, quad, _state_grid(flux))]
    return FoliatedMesh(flux, quad, np.array([0.0, tau]), [view], margins,
                        0.99, "static-1d")


def classical_godunov_step(u, tau_over_h):
    """Textbook periodic Godunov update for the Burgers flux u^2 / 2."""
    f = lambda w: 0.5 * w ** 2
    up = np.roll(u, -1)
    flux_right = np.maximum(f(np.maximum(u, 0.0)), f(np.minimum(up, 0.0)))
    flux_left = np.roll(flux_right, 1)
    return u - tau_over_h * (flux_right - flux_left)


class TestProjection:
    def test_constant_data_projects_to_itself(self, scenario_a, scenario_b,
                                              scenario_d, mesh_a20):
        for mesh in (mesh_a20,
                     build_mesh_1d(scenario_b.flux, 8, 0.8, 0.05),
                     build_mesh_2d_torus(scenario_d.flux, 6, 6, 0.8, 0.05)):
            state = project_initial_data(mesh, mesh.flux, lambda x: 0.4 + 0.0 * np.asarray(x if mesh.n == 1 else x[..., 0]))
            assert np.max(np.abs(state.values - 0.4)) <= 1e-12
            assert state.warnings == ()

    def test_sine_projects_to_cell_averages(self, scenario_a):
        # phi is the identity here, so projection is the exact cell average.
        mesh = build_mesh_1d(scenario_a.flux, 10, 0.8, 0.02)
        state = project_initial_data(mesh, scenario_a.flux,
                                     lambda x: np.sin(TWO_PI * x))
        nodes = np.linspace(0.0, 1.0, 11)
        a, b = nodes[:-1], nodes[1:]
        sine_avg = (np.cos(TWO_PI * a) - np.cos(TWO_PI * b)) / (TWO_PI * (b - a))
        assert np.max(np.abs(state.values - sine_avg)) <= 1e-12
        assert abs(float(state.values[0]) - 0.30396) <= 5e-6

    def test_out_of_range_data_refused(self, scenario_a, mesh_a20):
        with pytest.raises(SolverError):
            project_initial_data(mesh_a20, scenario_a.flux,
                                 lambda x: 2.0 + 0.0 * x)

    def test_tiny_excursion_clamps_with_warning(self, scenario_a, mesh_a20):
        hi = scenario_a.flux.u_range[1]
        state = project_initial_data(mesh_a20, scenario_a.flux,
                                     lambda x: hi + 5e-10 + 0.0 * x)
        assert len(state.warnings) == 1
        assert np.max(state.values) <= hi


class TestStepElement:
    def test_frozen_riemann_updates(self):
        mesh = hand_mesh(10, 0.05)
        values = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
        state = SliceState(slab=0, time=0.0, values=values)
        scheme = GodunovScheme()
        u_plus, tildes = step_element(mesh, state, 3, scheme)
        assert abs(u_plus - 0.25) <= 1e-12
        assert tildes == []
        u_plus, _ = step_element(mesh, state, 2, scheme)
        assert abs(u_plus - 1.0) <= 1e-12

    def test_intermediates_recorded_on_request(self):
        mesh = hand_mesh(10, 0.05)
        values = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
        state = SliceState(slab=0, time=0.0, values=values)
        config = SolverConfig(record_intermediates=True)
        u_plus, tildes = step_element(mesh, state, 3, GodunovScheme(), config)
        assert len(tildes) == 2
        # Slot mean of the averaged flux reproduces the element update.
        assert abs(0.5 * sum(tildes) - u_plus) <= 1e-9

    def test_cfl_margin_refusal(self):
        mesh = hand_mesh(10, 0.06)
        state = SliceState(slab=0, time=0.0, values=np.zeros(10))
        with pytest.raises(SolverError, match="CFL margin"):
            step_element(mesh, state, 3, GodunovScheme())
        with pytest.raises(SolverError, match="CFL margin"):
            advance_slice(mesh, state, GodunovScheme())


class TestAdvanceSlice:
    def test_matches_classical_godunov_update(self):
        mesh = hand_mesh(10, 0.05)
        rng = np.random.default_rng(21)
        values = rng.uniform(-0.9, 0.9, 10)
        state = SliceState(slab=0, time=0.0, values=values)
        new_state, tildes = advance_slice(mesh, state, GodunovScheme())
        expected = classical_godunov_step(values, 0.5)
        assert np.max(np.abs(new_state.values - expected)) <= 1e-12
        assert tildes is None
        assert new_state.slab == 1

    def test_matches_step_element(self):
        mesh = hand_mesh(10, 0.05)
        rng = np.random.default_rng(22)
        values = rng.uniform(-0.9, 0.9, 10)
        state = SliceState(slab=0, time=0.0, values=values)
        new_state, _ = advance_slice(mesh, state, GodunovScheme())
        for k in range(10):
            one, _ = step_element(mesh, state, k, GodunovScheme())
            assert abs(one - new_state.values[k]) <= 1e-11

    def test_rejects_final_slice_and_bad_shape(self, mesh_a20):
        scheme = GodunovScheme()
        bad = SliceState(slab=0, time=0.0, values=np.zeros(5))
        with pytest.raises(SolverError):
            advance_slice(mesh_a20, bad, scheme)
        end = SliceState(slab=mesh_a20.num_slabs, time=mesh_a20.final_time,
                         values=np.zeros(20))
        with pytest.raises(SolverError):
            advance_slice(mesh_a20, end, scheme)


class TestRunInvariants:
    def test_conserved_totals_are_flat(self, shock_traj):
        totals = shock_traj.slice_totals()
        assert np.ptp(totals) <= 1e-12 * (1.0 + abs(float(totals[0])))

    def test_max_principle(self, shock_traj):
        for prev, nxt in zip(shock_traj.states, shock_traj.states[1:]):
            assert float(np.max(nxt.values)) <= float(np.max(prev.values)) + 1e-12
            assert float(np.min(nxt.values)) >= float(np.min(prev.values)) - 1e-12

    def test_runs_are_bitwise_deterministic(self, scenario_a):
        mesh = build_mesh_1d(scenario_a.flux, 12, 0.8, 0.05)
        u0 = scenario_a.initial("sine").fn
        config = SolverConfig(record_intermediates=True)
        t1 = run(mesh, scenario_a.flux, make_scheme("godunov"), u0, config)
        t2 = run(mesh, scenario_a.flux, make_scheme("godunov"), u0, config)
        for s1, s2 in zip(t1.states, t2.states):
            assert np.array_equal(s1.values, s2.values)
        for a, b in zip(t1.intermediates, t2.intermediates):
            assert np.array_equal(a, b)

    def test_constant_state_is_stationary_on_moving_mesh(self, scenario_c):
        mesh = build_mesh_1d(scenario_c.flux, 12, 0.8, 0.1,
                             motion=scenario_c.motion)
        traj = run(mesh, scenario_c.flux, make_scheme("lf"),
                   lambda x: 0.4 + 0.0 * x)
        for st in traj.states:
            assert np.max(np.abs(st.values - 0.4)) <= 1e-12

    def test_flux_mismatch_refused(self, mesh_a20):
        with pytest.raises(SolverError):
            run(mesh_a20, unit_burgers_flux(), make_scheme("godunov"),
                lambda x: 0.0 * x)

    def test_convex_decomposition_identity(self, shock_traj):
        mesh, flux = shock_traj.mesh, shock_traj.flux
        fn = flux.component_fn
        for i in (0, shock_traj.num_slabs - 1):
            tildes = shock_traj.intermediates[i]
            u_next = shock_traj.states[i + 1].values
            arr = mesh.slabs[i].arrays()
            m_up = mesh.measures(i, "upper")
            phi_plus = form_integral(fn, u_next[:, None], arr.up_pts,
                                     arr.up_min, arr.w_space) / m_up
            phi_tilde = form_integral(fn, tildes[:, :, None], arr.up_pts[:, None],
                                      arr.up_min[:, None], arr.w_space) / m_up[:, None]
            gap = np.max(np.abs(phi_plus - np.mean(phi_tilde, axis=1)))
            assert gap <= 2e-12 * (1.0 + np.max(np.abs(phi_plus)))
            assert shock_traj.states[i + 1].warnings == ()

    def test_jensen_inequality_for_levels(self, shock_traj):
        # phi(u_plus) is the slot mean, so |phi(.) - phi(c)| obeys Jensen.
        mesh, flux = shock_traj.mesh, shock_traj.flux
        fn = flux.component_fn
        i = 0
        tildes = shock_traj.intermediates[i]
        u_next = shock_traj.states[i + 1].values
        arr = mesh.slabs[i].arrays()
        m_up = mesh.measures(i, "upper")
        phi_plus = form_integral(fn, u_next[:, None], arr.up_pts,
                                 arr.up_min, arr.w_space) / m_up
        phi_tilde = form_integral(fn, tildes[:, :, None], arr.up_pts[:, None],
                                  arr.up_min[:, None], arr.w_space) / m_up[:, None]
        for c in (0.0, 0.5):
            phi_c = form_integral(fn, np.full_like(u_next, c)[:, None],
                                  arr.up_pts, arr.up_min, arr.w_space) / m_up
            lhs = np.abs(phi_plus - phi_c)
            rhs = np.mean(np.abs(phi_tilde - phi_c[:, None]), axis=1)
            assert np.all(lhs <= rhs + 1e-10)


class TestReconstruct:
    def test_constant_everywhere(self, const_traj):
        mesh = const_traj.mesh
        rng = np.random.default_rng(31)
        for _ in range(20):
            t = float(rng.uniform(0.0, mesh.final_time))
            x = float(rng.uniform(0.0, 1.0))
            assert abs(reconstruct(const_traj, t, x) - 0.4) <= 1e-12

    def test_slice_time_uses_lower_slab_state(self, shock_traj):
        mesh = shock_traj.mesh
        t1 = float(mesh.slice_times[1])
        k = mesh.locate_element(1, t1, 0.52)
        assert reconstruct(shock_traj, t1, 0.52) == float(
            shock_traj.states[1].values[k])

    def test_boundary_tie_prefers_smaller_id(self, shock_traj):
        v = reconstruct(shock_traj, 0.0, 0.25)
        assert v == float(shock_traj.states[0].values[9])

    def test_outside_foliation_rejected(self, shock_traj):
        T = shock_traj.mesh.final_time
        with pytest.raises(ValueError):
            reconstruct(shock_traj, -0.1, 0.5)
        with pytest.raises(ValueError):
            reconstruct(shock_traj, T + 0.1, 0.5)
        assert reconstruct(shock_traj, T, 0.1) == float(
            shock_traj.states[-1].values[shock_traj.mesh.locate_element(
                shock_traj.mesh.num_slabs - 1, T, 0.1)])


class TestConfigAndRows:
    def test_inversion_tol_bounds(self):
        with pytest.raises(ValueError):
            SolverConfig(inversion_tol=1e-5)
        with pytest.raises(ValueError):
            SolverConfig(inversion_tol=0.0)

    def test_row_shapes(self, shock_traj):
        rows = trajectory_rows(shock_traj)
        N, E = shock_traj.num_slabs, shock_traj.mesh.num_elements()
        assert len(rows) == (N + 1) * E
        assert all(len(r) == len(TRAJECTORY_HEADER) for r in rows)
        irows = intermediates_rows(shock_traj)
        assert len(irows) == N * E * 2
        assert all(len(r) == len(INTERMEDIATES_HEADER) for r in irows)
