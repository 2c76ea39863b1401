"""Shipped model problems: flux fields, meshes, and initial data.

Constructors accept classical (density, flux) component data and store the
alternating-sign form components, so user-facing problem statements read
d_t f0 + sum_i d_i f_i = 0 while the assembled field matches the oriented
face machinery exactly.  Every shipped field is geometry compatible, which
validate_mesh exploits for its closed-surface cancellation check.

The registry is a static tuple built once; scenario objects own their flux
field so meshes, schemes, and marches built through one scenario share one
field object identically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from .forms import FluxField, QuadratureRule
from .mesh import FoliatedMesh, MeshRecipe, build_mesh_1d, build_mesh_2d_torus

__all__ = [
    "InitialCondition",
    "Scenario",
    "classical_flux_field",
    "get_scenario",
    "rational_velocity",
    "scenario_registry",
]

TWO_PI = 2.0 * math.pi

# Largest admissible denominator when a velocity must be certified rational
# for the periodic translation oracle.
RATIONAL_DENOMINATOR_CAP = 10 ** 6


def classical_flux_field(dim: int, components, derivatives, u_range,
                         geometry_compatible: bool = False) -> FluxField:
    """Build a flux field from classical components (f0, f1[, f2]).

    components[alpha](u, x) and derivatives[alpha](u, x) give the density
    (alpha 0) and spatial fluxes; storage flips the sign of every odd slot
    so the assembled exterior derivative reproduces the classical law.
    """
    if len(components) != dim + 1 or len(derivatives) != dim + 1:
        raise ValueError("need %d classical components, got %d"
                         % (dim + 1, len(components)))

    def component_fn(alpha, u, x):
        return (-1.0) ** alpha * components[alpha](u, x)

    def component_du_fn(alpha, u, x):
        return (-1.0) ** alpha * derivatives[alpha](u, x)

    return FluxField(dimension=dim, component_fn=component_fn,
                     component_du_fn=component_du_fn, u_range=u_range,
                     geometry_compatible=geometry_compatible)


def rational_velocity(value: float, cap: int = RATIONAL_DENOMINATOR_CAP) -> Fraction:
    """Certify a velocity as an exactly representable small rational.

    The translation oracle on the torus relies on exact periodic return, so
    a velocity whose float value is not a rational with denominator <= cap
    is rejected rather than silently approximated.
    """
    exact = Fraction(value)
    reduced = exact.limit_denominator(cap)
    if reduced != exact:
        raise ValueError(
            "velocity %.17g is not exactly a rational with denominator <= %d; "
            "the periodic translation oracle does not apply" % (value, cap))
    return exact


@dataclass(frozen=True)
class InitialCondition:
    """Named pointwise initial data with an optional exact-solution tag."""

    name: str
    fn: Callable
    oracle: str | None = None
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Scenario:
    """One shipped model problem with its defaults and initial-data library."""

    scenario_id: str
    title: str
    dim: int
    flux: FluxField
    default_scheme: str
    default_cells: int
    default_cfl: float
    default_T: float
    default_initial: str
    initials: tuple
    motion: Callable | None = None
    velocities: tuple | None = None

    def initial(self, name: str | None = None) -> InitialCondition:
        name = name or self.default_initial
        for ic in self.initials:
            if ic.name == name:
                return ic
        raise ValueError("scenario %s has no initial data %r; available: %s"
                         % (self.scenario_id, name,
                            ", ".join(ic.name for ic in self.initials)))

    def build_mesh(self, cells: int | None = None, cfl: float | None = None,
                   T: float | None = None,
                   quad: QuadratureRule | None = None) -> FoliatedMesh:
        cells = cells if cells is not None else self.default_cells
        cfl = cfl if cfl is not None else self.default_cfl
        T = T if T is not None else self.default_T
        if self.dim == 1:
            return build_mesh_1d(self.flux, cells, cfl, T, motion=self.motion,
                                 quad=quad)
        return build_mesh_2d_torus(self.flux, cells, cells, cfl, T, quad=quad)

    def recipe(self, cells: int | None = None, cfl: float | None = None,
               T: float | None = None,
               quad: QuadratureRule | None = None) -> MeshRecipe:
        return MeshRecipe(
            flux=self.flux,
            cells=cells if cells is not None else self.default_cells,
            cfl_fraction=cfl if cfl is not None else self.default_cfl,
            T=T if T is not None else self.default_T,
            dim=self.dim, motion=self.motion, quad=quad)


def _burgers_flux(u_range=(-1.25, 1.25)) -> FluxField:
    return classical_flux_field(
        1,
        components=(lambda u, x: u + 0.0 * x[..., 0],
                    lambda u, x: 0.5 * u ** 2 + 0.0 * x[..., 0]),
        derivatives=(lambda u, x: np.ones_like(u + x[..., 0]),
                     lambda u, x: u + 0.0 * x[..., 0]),
        u_range=u_range, geometry_compatible=True)


def _variable_density_flux(speed: float = 0.5, wobble: float = 0.4,
                           u_range=(-1.25, 1.25)) -> FluxField:
    """Closed field from the potential
    u X(x) + speed u (t + wobble sin(2 pi t) sin(2 pi x) / (2 pi)),
    with X'(x) = 1 + sin(2 pi x)/2.

    Exactness of the potential's second derivative makes the field closed
    for every fixed state, so constants are equilibria and u rides the
    characteristics dx/dt = -component1/component0 without amplification.
    The wobble makes both components genuinely time dependent; in
    particular the pullback onto a static vertical face varies along the
    face.  Slope bounds: du-component0 = X' + speed*wobble*sin*cos stays in
    [1/2 - speed*wobble, 3/2 + speed*wobble], positive for the defaults.
    """

    def component_fn(alpha, u, x):
        t, s = x[..., 0], x[..., 1]
        if alpha == 0:
            return u * (1.0 + 0.5 * np.sin(TWO_PI * s)
                        + speed * wobble * np.sin(TWO_PI * t) * np.cos(TWO_PI * s))
        return speed * u * (1.0 + wobble * np.cos(TWO_PI * t) * np.sin(TWO_PI * s))

    def component_du_fn(alpha, u, x):
        t, s = x[..., 0], x[..., 1]
        ones = np.ones_like(u + t)
        if alpha == 0:
            return ones * (1.0 + 0.5 * np.sin(TWO_PI * s)
                           + speed * wobble * np.sin(TWO_PI * t) * np.cos(TWO_PI * s))
        return ones * speed * (1.0 + wobble * np.cos(TWO_PI * t) * np.sin(TWO_PI * s))

    return FluxField(dimension=1, component_fn=component_fn,
                     component_du_fn=component_du_fn, u_range=u_range,
                     geometry_compatible=True)


def _torus_advection_flux(a: float, b: float,
                          u_range=(-1.25, 1.25)) -> FluxField:
    return classical_flux_field(
        2,
        components=(lambda u, x: u + 0.0 * x[..., 0],
                    lambda u, x: a * u + 0.0 * x[..., 0],
                    lambda u, x: b * u + 0.0 * x[..., 0]),
        derivatives=(lambda u, x: np.ones_like(u + x[..., 0]),
                     lambda u, x: a * np.ones_like(u + x[..., 0]),
                     lambda u, x: b * np.ones_like(u + x[..., 0])),
        u_range=u_range, geometry_compatible=True)


def _mesh_motion(x, t):
    return 0.08 * np.sin(TWO_PI * x) * np.cos(TWO_PI * t)


def _sine_initial(x):
    return 0.5 + 0.4 * np.sin(TWO_PI * np.asarray(x, dtype=float))


def _two_front_initial(x):
    x = np.mod(np.asarray(x, dtype=float), 1.0)
    return np.where(x < 0.5, 1.0, 0.0)


def _product_sine_initial(x):
    x = np.asarray(x, dtype=float)
    return (0.5 + 0.3 * np.sin(TWO_PI * x[..., 0]) * np.sin(TWO_PI * x[..., 1]))


def _constant_initial(value: float, dim: int = 1):
    if dim == 1:
        return lambda x: np.full_like(np.asarray(x, dtype=float), value)
    return lambda x: np.full(np.asarray(x, dtype=float).shape[:-1], value)


def _build_registry():
    burgers = _burgers_flux()
    torus_a, torus_b = 1.0, 0.5
    smooth_ic = InitialCondition(
        name="sine", fn=_sine_initial, oracle="burgers-smooth",
        params={"mean": 0.5, "amplitude": 0.4})
    riemann_ic = InitialCondition(
        name="two-front", fn=_two_front_initial, oracle="burgers-two-front",
        params={"left": 1.0, "right": 0.0, "jump": 0.5})
    const_ic = InitialCondition(
        name="constant", fn=_constant_initial(0.4), oracle="constant",
        params={"value": 0.4})
    scenario_a = Scenario(
        scenario_id="flat-burgers-1d",
        title="Burgers on a static circle",
        dim=1, flux=burgers, default_scheme="godunov", default_cells=40,
        default_cfl=0.8, default_T=0.3, default_initial="sine",
        initials=(smooth_ic, riemann_ic, const_ic))
    scenario_b = Scenario(
        scenario_id="variable-density-1d",
        title="Potential-built linear transport with variable density",
        dim=1, flux=_variable_density_flux(), default_scheme="lf",
        default_cells=40, default_cfl=0.8, default_T=0.4,
        default_initial="sine",
        initials=(
            InitialCondition(name="sine", fn=_sine_initial, oracle=None),
            const_ic,
        ))
    scenario_c = Scenario(
        scenario_id="moving-mesh-burgers-1d",
        title="Burgers on a circle with tilting vertical faces",
        dim=1, flux=burgers, default_scheme="lf", default_cells=40,
        default_cfl=0.8, default_T=0.3, default_initial="sine",
        initials=(smooth_ic, riemann_ic, const_ic), motion=_mesh_motion)
    scenario_d = Scenario(
        scenario_id="torus-advection-2d",
        title="Constant advection on the flat 2-torus",
        dim=2, flux=_torus_advection_flux(torus_a, torus_b),
        default_scheme="godunov", default_cells=12, default_cfl=0.8,
        default_T=0.25, default_initial="product-sine",
        initials=(
            InitialCondition(name="product-sine", fn=_product_sine_initial,
                             oracle="translation",
                             params={"a": torus_a, "b": torus_b}),
            InitialCondition(name="constant", fn=_constant_initial(0.4, dim=2),
                             oracle="constant", params={"value": 0.4}),
        ),
        velocities=(torus_a, torus_b))
    return (scenario_a, scenario_b, scenario_c, scenario_d)


_REGISTRY: tuple | None = None


def scenario_registry() -> tuple:
    """The static tuple of shipped scenarios, built once per process."""
    global _REGISTRY
    if _REGISTRY is None:
        _REGISTRY = _build_registry()
    return _REGISTRY


def get_scenario(scenario_id: str) -> Scenario:
    for sc in scenario_registry():
        if sc.scenario_id == scenario_id:
            return sc
    raise ValueError("unknown scenario %r; available: %s"
                     % (scenario_id,
                        ", ".join(s.scenario_id for s in scenario_registry())))
