"""Shared fixtures: small meshes and short marches reused across test files.

Session scope keeps the expensive objects (meshes, trajectories with
recorded update intermediates) built once; every consumer treats them as
immutable, matching the library's own concurrency contract.
"""

import numpy as np
import pytest

from spacetimefv import (
    SolverConfig,
    build_mesh_1d,
    get_scenario,
    make_scheme,
    run,
)


@pytest.fixture(scope="session")
def scenario_a():
    return get_scenario("flat-burgers-1d")


@pytest.fixture(scope="session")
def scenario_b():
    return get_scenario("variable-density-1d")


@pytest.fixture(scope="session")
def scenario_c():
    return get_scenario("moving-mesh-burgers-1d")


@pytest.fixture(scope="session")
def scenario_d():
    return get_scenario("torus-advection-2d")


@pytest.fixture(scope="session")
def mesh_a20(scenario_a):
    return build_mesh_1d(scenario_a.flux, 20, 0.8, 0.1)


@pytest.fixture(scope="session")
def shock_traj(scenario_a):
    """Godunov march of the two-front data with intermediates recorded."""
    mesh = build_mesh_1d(scenario_a.flux, 40, 0.8, 0.25)
    scheme = make_scheme("godunov")
    config = SolverConfig(record_intermediates=True)
    initial = scenario_a.initial("two-front")
    return run(mesh, scenario_a.flux, scheme, initial.fn, config)


@pytest.fixture(scope="session")
def const_traj(scenario_a, mesh_a20):
    scheme = make_scheme("godunov")
    config = SolverConfig(record_intermediates=True)
    initial = scenario_a.initial("constant")
    return run(mesh_a20, scenario_a.flux, scheme, initial.fn, config)


@pytest.fixture(scope="session")
def gauss_integral():
    """Independent composite Gauss-Legendre integrator for scalar densities.

    Deliberately built straight from numpy's node tables, bypassing the
    package's quadrature and face plumbing, so it can serve as an oracle
    for pullback integrals.
    """

    def integrate(fn, a, b, n=40, panels=8):
        x, w = np.polynomial.legendre.leggauss(n)
        edges = np.linspace(a, b, panels + 1)
        total = 0.0
        for lo, hi in zip(edges[:-1], edges[1:]):
            mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
            total += half * float(np.sum(w * fn(mid + half * x)))
        return total

    return integrate
