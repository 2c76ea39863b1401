"""Finite volume solvers for scalar conservation laws on foliated spacetimes.

The flux is a parametrized field of differential n-forms integrated over
mesh faces; schemes act on face-averaged integrals, so the same solver
covers flat, variable-coefficient, and moving-mesh problems.  Entropy
diagnostics certify discrete inequalities a posteriori, and the studies
layer batches runs, convergence tables, and diagnostics suites behind a
CLI.
"""

from .forms import (
    FacePatch,
    FluxField,
    EntropyFluxField,
    QuadratureRule,
    default_quadrature,
    entropy_flux_from_U,
    form_integral,
    invert_averaged_flux,
)
from .mesh import (
    FoliatedMesh,
    MeshConstructionError,
    MeshRecipe,
    build_mesh_1d,
    build_mesh_2d_torus,
    mesh_summary_rows,
    refinement_sequence,
    validate_hyperbolicity,
    validate_mesh,
)
from .numflux import (
    GodunovScheme,
    LaxFriedrichsScheme,
    check_flux_properties,
    check_scheme_on_mesh,
    kruzkov_numerical_flux,
    make_scheme,
    slab_flux_context,
)
from .solver import (
    SliceState,
    SolverConfig,
    SolverError,
    Trajectory,
    project_initial_data,
    run,
    step_element,
)
from .entropy import (
    ConvexEntropy,
    DiagnosticsReport,
    KruzkovEntropy,
    SmoothBumpTestFunction,
    contraction_distance,
    contraction_distances,
    dissipation_estimate,
    element_entropy_residual,
    entropy_balance,
    estimate_convexity_modulus,
    face_entropy_residual,
    global_inequality_terms,
    quadratic_entropy,
    standard_test_functions,
)
from .scenarios import Scenario, get_scenario, scenario_registry
from .oracles import OracleDomainError, exact_burgers_oracle, make_oracle
from .studies import (
    ScenarioConfig,
    l1_slice_error,
    preflight,
    run_convergence_study,
    run_diagnostics_suite,
    run_single,
)
from .cli import main

__version__ = "0.1.0"

__all__ = [
    "ConvexEntropy",
    "DiagnosticsReport",
    "EntropyFluxField",
    "FacePatch",
    "FluxField",
    "FoliatedMesh",
    "GodunovScheme",
    "KruzkovEntropy",
    "LaxFriedrichsScheme",
    "MeshConstructionError",
    "MeshRecipe",
    "OracleDomainError",
    "QuadratureRule",
    "Scenario",
    "ScenarioConfig",
    "SliceState",
    "SmoothBumpTestFunction",
    "SolverConfig",
    "SolverError",
    "Trajectory",
    "build_mesh_1d",
    "build_mesh_2d_torus",
    "check_flux_properties",
    "check_scheme_on_mesh",
    "contraction_distance",
    "contraction_distances",
    "default_quadrature",
    "dissipation_estimate",
    "element_entropy_residual",
    "entropy_balance",
    "entropy_flux_from_U",
    "estimate_convexity_modulus",
    "exact_burgers_oracle",
    "face_entropy_residual",
    "form_integral",
    "get_scenario",
    "global_inequality_terms",
    "invert_averaged_flux",
    "kruzkov_numerical_flux",
    "l1_slice_error",
    "main",
    "make_oracle",
    "make_scheme",
    "mesh_summary_rows",
    "preflight",
    "project_initial_data",
    "quadratic_entropy",
    "refinement_sequence",
    "run",
    "run_convergence_study",
    "run_diagnostics_suite",
    "run_single",
    "scenario_registry",
    "slab_flux_context",
    "standard_test_functions",
    "step_element",
    "validate_hyperbolicity",
    "validate_mesh",
]
