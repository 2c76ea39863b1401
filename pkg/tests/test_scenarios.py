"""Shipped scenario registry: flux storage, closedness, initial data."""

import dataclasses
import math
from fractions import Fraction

import numpy as np
import pytest

from spacetimefv.forms import check_geometry_compatible
from spacetimefv.oracles import make_oracle
from spacetimefv.scenarios import (classical_flux_field, get_scenario,
                                   rational_velocity, scenario_registry)

ALL_IDS = ("flat-burgers-1d", "variable-density-1d", "moving-mesh-burgers-1d",
           "torus-advection-2d")


class TestRegistry:
    def test_registry_ships_exactly_four_scenarios(self):
        ids = tuple(sc.scenario_id for sc in scenario_registry())
        assert ids == ALL_IDS

    def test_registry_is_built_once(self):
        assert scenario_registry() is scenario_registry()
        a1 = get_scenario("flat-burgers-1d")
        a2 = get_scenario("flat-burgers-1d")
        assert a1 is a2
        # The moving-mesh problem reuses the same flux field object.
        assert get_scenario("moving-mesh-burgers-1d").flux is a1.flux

    def test_unknown_id_lists_available(self):
        with pytest.raises(ValueError, match="available.*flat-burgers-1d"):
            get_scenario("burgers")

    def test_recipe_carries_scenario_defaults(self, scenario_a):
        rec = scenario_a.recipe()
        assert rec.cells == 40
        assert rec.cfl_fraction == 0.8
        assert rec.T == 0.3
        assert rec.dim == 1
        assert rec.flux is scenario_a.flux


class TestClassicalStorage:
    def test_odd_components_are_sign_flipped(self):
        field = classical_flux_field(
            1,
            components=(lambda u, x: 2.0 * u, lambda u, x: u ** 3),
            derivatives=(lambda u, x: 2.0 * np.ones_like(u),
                         lambda u, x: 3.0 * u ** 2),
            u_range=(-1.0, 1.0))
        x = np.array([0.1, 0.7])
        assert field.component_fn(0, 0.6, x) == 1.2
        assert field.component_fn(1, 0.6, x) == -(0.6 ** 3)
        assert field.component_du_fn(1, 0.6, x) == -(3.0 * 0.36)

    def test_torus_components_follow_velocities(self, scenario_d):
        a, b = scenario_d.velocities
        x = np.array([0.2, 0.3, 0.8])
        u = 0.7
        assert scenario_d.flux.component_fn(0, u, x) == u
        assert scenario_d.flux.component_fn(1, u, x) == -(a * u)
        assert scenario_d.flux.component_fn(2, u, x) == b * u

    def test_component_count_mismatch_rejected(self):
        with pytest.raises(ValueError, match="classical components"):
            classical_flux_field(2, components=(lambda u, x: u,),
                                 derivatives=(lambda u, x: 1.0,),
                                 u_range=(-1.0, 1.0))


class TestClosedness:
    def test_static_burgers_residual_is_exactly_zero(self, scenario_a):
        # No component depends on the base point, so each finite-difference
        # partial is identically zero, not merely small.
        samples = [(u, (t, s)) for u in (-1.0, -0.3, 0.4, 1.2)
                   for t in (0.0, 0.13) for s in (0.25, 0.8)]
        report = check_geometry_compatible(scenario_a.flux, samples)
        assert report.passed
        assert report.max_residual == 0.0

    def test_variable_density_field_is_closed(self, scenario_b):
        rng = np.random.default_rng(7)
        samples = [(float(u), (float(t), float(s)))
                   for u, t, s in zip(rng.uniform(-1.25, 1.25, 200),
                                      rng.uniform(0.0, 1.0, 200),
                                      rng.uniform(0.0, 1.0, 200))]
        report = check_geometry_compatible(scenario_b.flux, samples)
        assert report.passed

    def test_variable_density_slope_stays_positive(self, scenario_b):
        t, s = np.meshgrid(np.linspace(0.0, 1.0, 41), np.linspace(0.0, 1.0, 41))
        x = np.stack([t, s], axis=-1)
        du0 = scenario_b.flux.component_du_fn(0, np.full_like(t, 0.3), x)
        assert np.all(du0 > 0.0)


class TestInitialData:
    def test_default_initial_lookup(self, scenario_a):
        ic = scenario_a.initial()
        assert ic.name == "sine"
        assert ic.oracle == "burgers-smooth"

    def test_unknown_initial_lists_names(self, scenario_a):
        with pytest.raises(ValueError, match="available: sine, two-front"):
            scenario_a.initial("gaussian")

    def test_two_front_values_and_wrap(self, scenario_a):
        fn = scenario_a.initial("two-front").fn
        x = np.linspace(0.0, 1.0, 101, endpoint=False)
        vals = fn(x)
        assert set(np.unique(vals)) == {0.0, 1.0}
        assert np.all(vals[x < 0.5] == 1.0)
        assert fn(np.array([1.25]))[0] == fn(np.array([0.25]))[0]

    def test_variable_density_sine_has_no_oracle(self, scenario_b):
        ic = scenario_b.initial("sine")
        assert ic.oracle is None
        assert make_oracle(scenario_b, ic) is None

    def test_torus_constant_matches_trailing_pair_convention(self, scenario_d):
        fn = scenario_d.initial("constant").fn
        pts = np.zeros((3, 5, 2))
        assert fn(pts).shape == (3, 5)
        assert np.all(fn(pts) == 0.4)


class TestRationalVelocity:
    def test_dyadic_values_certify_exactly(self):
        assert rational_velocity(0.5) == Fraction(1, 2)
        assert rational_velocity(0.25) == Fraction(1, 4)
        assert rational_velocity(1.0) == Fraction(1, 1)

    def test_float_third_is_rejected(self):
        # float(1/3) is a dyadic with a huge denominator, not 1/3.
        with pytest.raises(ValueError, match="not exactly a rational"):
            rational_velocity(1.0 / 3.0)

    def test_irrational_is_rejected(self):
        with pytest.raises(ValueError, match="not exactly a rational"):
            rational_velocity(math.sqrt(2.0))

    def test_translation_oracle_refuses_uncertified_speed(self, scenario_d):
        bent = dataclasses.replace(scenario_d, velocities=(1.0 / 3.0, 0.5))
        with pytest.raises(ValueError, match="not exactly a rational"):
            make_oracle(bent, bent.initial("product-sine"))
