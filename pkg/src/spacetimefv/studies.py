"""Batch studies: single runs, convergence tables, diagnostics suites.

Every study resolves a ScenarioConfig against the registry, enforces the
preflight (mesh validation, hyperbolicity witness, flux-axiom scan) before
marching, and writes its tables through the frozen CSV contract with
figures rendered alongside.  Studies return their report objects plus a
list of failure strings; the CLI maps a nonempty list to the assertion
exit code without re-deriving anything.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np

from .entropy import (
    BalanceReport,
    DiagnosticsReport,
    GlobalInequalityReport,
    KruzkovEntropy,
    contraction_distances,
    dissipation_estimate,
    entropy_balance,
    entropy_residual_scan,
    estimate_convexity_modulus,
    global_inequality_terms,
    quadratic_entropy,
    standard_test_functions,
    DIAGNOSTICS_HEADER,
)
from .forms import QuadratureRule
from .mesh import (
    MESH_SUMMARY_HEADER,
    FoliatedMesh,
    mesh_summary_rows,
    refinement_sequence,
    validate_hyperbolicity,
    validate_mesh,
)
from .numflux import FLUX_REPORT_HEADER, check_scheme_on_mesh, make_scheme
from .oracles import make_oracle
from .plotting import (
    contraction_figure,
    convergence_figure,
    residuals_figure,
    solution_figure,
)
from .reporting import write_csv
from .scenarios import Scenario, get_scenario
from .solver import (
    INTERMEDIATES_HEADER,
    TRAJECTORY_HEADER,
    SolverConfig,
    Trajectory,
    intermediates_rows,
    run,
    trajectory_rows,
)

__all__ = [
    "CONVERGENCE_HEADER",
    "ConvergenceTable",
    "PreflightReport",
    "RunResult",
    "ScenarioConfig",
    "l1_slice_error",
    "preflight",
    "random_piecewise_initial",
    "run_convergence_study",
    "run_diagnostics_suite",
    "run_flux_check",
    "run_mesh_validation",
    "run_single",
]

CONVERGENCE_HEADER = ["level", "h", "tau", "err_l1", "rate"]
PREFLIGHT_SAMPLES = 200


@dataclass(frozen=True)
class ScenarioConfig:
    """Resolved knobs for one study; None fields fall back to the scenario."""

    scenario_id: str
    cells: int | None = None
    cfl: float | None = None
    T: float | None = None
    scheme: str | None = None
    initial: str | None = None
    levels: int = 3
    out_dir: str = "runs"
    seed: int = 0
    lf_lambda_scale: float = 1.0
    record_intermediates: bool = True
    make_plots: bool = True
    contraction_pairs: int = 5
    balance_pairs: int = 10
    kruzkov_levels: tuple = (-0.5, 0.0, 0.5)
    inversion_tol: float = 1e-12
    skip_preflight: bool = False

    def __post_init__(self):
        if self.T is not None and not self.T > 0.0:
            raise ValueError("final time must be positive")
        if self.levels < 1:
            raise ValueError("levels must be at least 1")

    def resolve(self) -> Scenario:
        return get_scenario(self.scenario_id)

    def scheme_name(self, scenario: Scenario) -> str:
        return self.scheme or scenario.default_scheme


@dataclass(frozen=True)
class PreflightReport:
    """Structural, hyperbolicity, and flux-axiom gates for one mesh."""

    mesh_passed: bool
    hyperbolicity_passed: bool
    flux_passed: bool
    failures: tuple

    @property
    def passed(self) -> bool:
        return self.mesh_passed and self.hyperbolicity_passed and self.flux_passed


def preflight(scenario: Scenario, mesh: FoliatedMesh, scheme,
              n_samples: int = PREFLIGHT_SAMPLES, seed: int = 0) -> PreflightReport:
    failures = []
    mesh_report = validate_mesh(mesh)
    if not mesh_report.passed:
        failures.extend("mesh: %s" % v for v in mesh_report.violations[:8])
    hyp = validate_hyperbolicity(mesh)
    if not hyp.passed:
        failures.append("hyperbolicity: %s" % hyp.summary())
    slab_ids = None
    if mesh.num_slabs > 8:
        slab_ids = sorted({int(i) for i in
                           np.linspace(0, mesh.num_slabs - 1, 8).round()})
    cert = check_scheme_on_mesh(scheme, mesh, n_samples=n_samples, seed=seed,
                                slabs=slab_ids)
    if not cert.passed:
        for prop, (slab, face, value, threshold, ok) in sorted(cert.worst.items()):
            if not ok:
                failures.append(
                    "flux %s: residual %.3g > %.3g at slab %d face %d"
                    % (prop, value, threshold, slab, face))
    return PreflightReport(mesh_passed=mesh_report.passed,
                           hyperbolicity_passed=hyp.passed,
                           flux_passed=cert.passed, failures=tuple(failures))


def _prepare(config: ScenarioConfig):
    scenario = config.resolve()
    mesh = scenario.build_mesh(cells=config.cells, cfl=config.cfl, T=config.T)
    scheme = make_scheme(config.scheme_name(scenario), config.lf_lambda_scale)
    solver_config = SolverConfig(inversion_tol=config.inversion_tol,
                                 record_intermediates=config.record_intermediates)
    return scenario, mesh, scheme, solver_config


def _out_path(config: ScenarioConfig, name: str) -> str:
    os.makedirs(config.out_dir, exist_ok=True)
    return os.path.join(config.out_dir, name)


# ---------------------------------------------------------------------------
# Single runs.

@dataclass(frozen=True)
class RunResult:
    trajectory: Trajectory | None
    preflight: PreflightReport | None
    paths: tuple
    failures: tuple


def run_single(config: ScenarioConfig) -> RunResult:
    """March one scenario and write trajectory, mesh summary, and figure.

    The preflight is enforced: a failing mesh, hyperbolicity, or flux gate
    stops the study before any slab is solved.
    """
    scenario, mesh, scheme, solver_config = _prepare(config)
    failures = []
    pre = None
    if not config.skip_preflight:
        pre = preflight(scenario, mesh, scheme, seed=config.seed)
        failures.extend(pre.failures)
        if not pre.passed:
            return RunResult(trajectory=None, preflight=pre, paths=(),
                             failures=tuple(failures))
    initial = scenario.initial(config.initial)
    trajectory = run(mesh, scenario.flux, scheme, initial.fn, solver_config)
    for state in trajectory.states:
        failures.extend(state.warnings)
    paths = [
        write_csv(_out_path(config, "trajectory.csv"), TRAJECTORY_HEADER,
                  trajectory_rows(trajectory)),
        write_csv(_out_path(config, "mesh_summary.csv"), MESH_SUMMARY_HEADER,
                  mesh_summary_rows(mesh)),
    ]
    if config.record_intermediates:
        paths.append(write_csv(_out_path(config, "intermediates.csv"),
                               INTERMEDIATES_HEADER,
                               intermediates_rows(trajectory)))
    if config.make_plots:
        paths.append(solution_figure(
            _out_path(config, "solution.png"), mesh,
            trajectory.states[0].values, trajectory.states[-1].values))
    return RunResult(trajectory=trajectory, preflight=pre, paths=tuple(paths),
                     failures=tuple(failures))


# ---------------------------------------------------------------------------
# Convergence studies.

@dataclass(frozen=True)
class ConvergenceTable:
    """Refinement levels with L1 errors against the exact oracle."""

    scenario_id: str
    initial: str
    levels: tuple
    h: tuple
    tau: tuple
    err_l1: tuple
    rates: tuple
    num_slabs: tuple

    def rows(self):
        out = []
        for i, lev in enumerate(self.levels):
            rate = self.rates[i] if self.rates[i] is not None else None
            out.append([lev, self.h[i], self.tau[i], self.err_l1[i], rate])
        return out

    @property
    def observed_rate(self) -> float:
        usable = [r for r in self.rates if r is not None]
        if not usable:
            raise ValueError("need at least two levels for a rate")
        return usable[-1]


def l1_slice_error(mesh: FoliatedMesh, values, exact_fn, T: float) -> float:
    """L1 distance between cell values and exact_fn on the final slice.

    Uses the stored per-cell quadrature of the last slab's upper faces; the
    time-slot minor is exactly the chart cell measure there.
    """
    arr = mesh.slabs[-1].arrays()
    pts = arr.up_pts[..., 1] if mesh.n == 1 else arr.up_pts[..., 1:]
    exact = np.asarray(exact_fn(T, pts), dtype=float)
    diff = np.abs(values[:, None] - exact) * arr.up_min[..., 0]
    return float(np.sum(diff @ arr.w_space))


def run_convergence_study(config: ScenarioConfig):
    """Refine, march, and tabulate L1 errors; scenario must have an oracle."""
    scenario = config.resolve()
    initial = scenario.initial(config.initial)
    oracle = make_oracle(scenario, initial)
    if oracle is None:
        raise ValueError("initial data %r of scenario %s has no exact oracle"
                         % (initial.name, scenario.scenario_id))
    recipe = scenario.recipe(cells=config.cells, cfl=config.cfl, T=config.T)
    scheme = make_scheme(config.scheme_name(scenario), config.lf_lambda_scale)
    solver_config = SolverConfig(inversion_tol=config.inversion_tol,
                                 record_intermediates=False)
    failures = []
    errs, hs, taus, nslabs = [], [], [], []
    for entry in refinement_sequence(recipe, config.levels):
        mesh = entry.mesh
        if not config.skip_preflight:
            pre = preflight(scenario, mesh, scheme, seed=config.seed)
            failures.extend("level %d %s" % (entry.level, f) for f in pre.failures)
        trajectory = run(mesh, scenario.flux, scheme, initial.fn, solver_config)
        errs.append(l1_slice_error(mesh, trajectory.states[-1].values, oracle,
                                   mesh.final_time))
        hs.append(entry.h)
        taus.append(entry.tau_max)
        nslabs.append(mesh.num_slabs)
    rates = [None]
    for k in range(1, len(errs)):
        rates.append(float(np.log2(errs[k - 1] / errs[k]))
                     if errs[k] > 0.0 and errs[k - 1] > 0.0 else None)
    table = ConvergenceTable(
        scenario_id=scenario.scenario_id, initial=initial.name,
        levels=tuple(range(config.levels)), h=tuple(hs), tau=tuple(taus),
        err_l1=tuple(errs), rates=tuple(rates), num_slabs=tuple(nslabs))
    paths = [write_csv(_out_path(config, "convergence.csv"),
                       CONVERGENCE_HEADER, table.rows())]
    if config.make_plots:
        paths.append(convergence_figure(
            _out_path(config, "convergence.png"), hs, errs,
            "%s / %s" % (scenario.scenario_id, initial.name)))
    return table, tuple(failures), tuple(paths)


# ---------------------------------------------------------------------------
# Diagnostics suite.

def random_piecewise_initial(mesh: FoliatedMesh, rng: np.random.Generator,
                             band: float = 0.8):
    """Random cell-constant initial data inside a centered sub-band of the
    admissible state range; projection reproduces the cell values exactly."""
    lo, hi = mesh.flux.u_range
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    values = rng.uniform(mid - band * half, mid + band * half,
                         size=mesh.num_elements(0))
    tpl = mesh.slabs[0].template
    if mesh.n == 1:
        nodes = tpl.nodes_lo

        def fn(x):
            k = np.searchsorted(nodes, np.mod(x, 1.0), side="right") - 1
            return values[np.clip(k, 0, len(values) - 1)]

        return fn
    xs, ys = tpl.xs, tpl.ys
    nx = len(xs) - 1

    def fn(x):
        ix = np.searchsorted(xs, np.mod(x[..., 0], 1.0), side="right") - 1
        iy = np.searchsorted(ys, np.mod(x[..., 1], 1.0), side="right") - 1
        ix = np.clip(ix, 0, nx - 1)
        iy = np.clip(iy, 0, len(ys) - 2)
        return values[iy * nx + ix]

    return fn


def _balance_slab_pairs(num_slabs: int, count: int):
    pairs = [(0, num_slabs)]
    for k in range(1, count):
        i = (k * num_slabs) // (2 * count)
        j = num_slabs - ((count - k) * num_slabs) // (2 * count)
        pairs.append((min(i, j), max(i, j)))
    seen, out = set(), []
    for p in pairs:
        if p not in seen:
            seen.add(p)
            out.append(p)
    return out[:count]


def run_diagnostics_suite(config: ScenarioConfig):
    """Full entropy certification of one march.

    Residual scans run for the quadratic entropy and the configured
    threshold levels; balance uses the estimated convexity modulus; the
    contraction check marches companion pairs from seeded random data; the
    global inequality is tested against the standard bump pair.  All
    violated inequalities are returned as failure strings with their slab
    and element witnesses; the suite keeps going after a failed preflight
    so the assertion report is complete.
    """
    scenario, mesh, scheme, solver_config = _prepare(config)
    solver_config = replace(solver_config, record_intermediates=True)
    failures = []
    pre = preflight(scenario, mesh, scheme, seed=config.seed)
    failures.extend(pre.failures)
    initial = scenario.initial(config.initial)
    trajectory = run(mesh, scenario.flux, scheme, initial.fn, solver_config)

    flux = scenario.flux
    entropies = [quadratic_entropy(flux)]
    entropies.extend(KruzkovEntropy(flux, c) for c in config.kruzkov_levels)
    labels = tuple(e.label for e in entropies)

    N = mesh.num_slabs
    face_max = np.empty(N)
    elem_max = np.empty(N)
    face_argmax, elem_argmax = [], []
    face_threshold = 0.0
    elem_threshold = 0.0
    for s in range(N):
        worst_f, worst_e = -np.inf, -np.inf
        arg_f, arg_e = 0, 0
        scans = entropy_residual_scan(trajectory, s, entropies)
        for entropy, ((res_f, thr_f), (res_e, thr_e)) in zip(entropies, scans):
            face_threshold = max(face_threshold, thr_f)
            elem_threshold = max(elem_threshold, float(np.max(thr_e)))
            if float(np.max(res_f)) > worst_f:
                worst_f = float(np.max(res_f))
                arg_f = int(np.argmax(np.max(res_f, axis=1)))
            if float(np.max(res_e)) > worst_e:
                worst_e = float(np.max(res_e))
                arg_e = int(np.argmax(res_e))
            if np.any(res_f > thr_f):
                k = int(np.argmax(np.max(res_f, axis=1)))
                failures.append(
                    "face residual %.3g > %.3g at slab %d element %d (%s)"
                    % (float(np.max(res_f)), thr_f, s, k, entropy.label))
            if np.any(res_e > thr_e):
                k = int(np.argmax(res_e - thr_e))
                failures.append(
                    "element residual %.3g > %.3g at slab %d element %d (%s)"
                    % (float(res_e[k]), float(thr_e[k]), s, k, entropy.label))
        face_max[s] = worst_f
        elem_max[s] = worst_e
        face_argmax.append(arg_f)
        elem_argmax.append(arg_e)

    modulus = estimate_convexity_modulus(mesh, entropies[0])
    beta = 0.0 if modulus.degenerate else modulus.beta_global
    balance_pairs = _balance_slab_pairs(N, config.balance_pairs)
    balance = []
    for (i, j) in balance_pairs:
        rep = entropy_balance(trajectory, i, j, entropies[0], beta)
        balance.append(rep)
        if not rep.satisfied:
            failures.append(
                "entropy balance violated on slices (%d, %d): slack %.3g"
                % (i, j, rep.slack))

    dissipation = dissipation_estimate(trajectory, entropies[0])
    if not np.isfinite(dissipation.lhs_sum):
        failures.append("dissipation sum is not finite")

    rng = np.random.default_rng(config.seed)
    contraction_series = None
    for p in range(config.contraction_pairs):
        ua = random_piecewise_initial(mesh, rng)
        ub = random_piecewise_initial(mesh, rng)
        ta = run(mesh, flux, scheme, ua, solver_config)
        tb = run(mesh, flux, scheme, ub, solver_config)
        series = contraction_distances(ta, tb)
        if contraction_series is None:
            contraction_series = series
        slack = 1e-10 * (1.0 + float(series[0]))
        growth = np.diff(series)
        if np.any(growth > slack):
            s = int(np.argmax(growth))
            failures.append(
                "contraction distance grew by %.3g across slab %d (pair %d)"
                % (float(growth[s]), s, p))

    global_terms = []
    if N >= 3:
        for g, psi in enumerate(standard_test_functions(mesh, count=2)):
            rep = global_inequality_terms(trajectory, psi, entropies[0])
            global_terms.append(rep)
            if not rep.satisfied:
                failures.append(
                    "global inequality violated for bump %d: lhs %.3g > bound %.3g"
                    % (g, rep.lhs, rep.bound + rep.tol))

    report = DiagnosticsReport(
        entropy_labels=labels, face_max=face_max,
        face_threshold=face_threshold, element_max=elem_max,
        element_threshold=elem_threshold, balance_pairs=tuple(balance_pairs),
        balance=tuple(balance), dissipation=dissipation,
        contraction=contraction_series, global_terms=tuple(global_terms),
        face_argmax=tuple(face_argmax), element_argmax=tuple(elem_argmax))
    if not report.all_finite:
        failures.append("diagnostics produced non-finite values")

    rows = report.rows()
    kinds = {
        "face_residuals.csv": [r for r in rows if r[0] == "face_residual"],
        "element_residuals.csv": [r for r in rows if r[0] == "element_residual"],
        "balance.csv": [r for r in rows if r[0].startswith("balance")],
        "dissipation.csv": [r for r in rows if r[0].startswith("dissipation")],
        "contraction.csv": [r for r in rows if r[0] == "contraction"],
        "global_terms.csv": [r for r in rows if r[0].startswith("global")],
    }
    paths = []
    for name, subset in kinds.items():
        paths.append(write_csv(_out_path(config, name), DIAGNOSTICS_HEADER,
                               subset))
    modulus_rows = [["modulus_global", "", "", modulus.beta_global, "",
                     not modulus.degenerate]]
    for s, arr in zip(modulus.slabs, modulus.per_element):
        for k, v in enumerate(arr):
            modulus_rows.append(["modulus_element", s, k, float(v), "",
                                 float(v) > 0.0])
    paths.append(write_csv(_out_path(config, "modulus.csv"),
                           DIAGNOSTICS_HEADER, modulus_rows))
    if config.make_plots:
        paths.append(residuals_figure(
            _out_path(config, "entropy_residuals.png"), face_max, elem_max))
        if contraction_series is not None:
            paths.append(contraction_figure(
                _out_path(config, "contraction.png"), contraction_series))
    return report, tuple(failures), tuple(paths)


# ---------------------------------------------------------------------------
# Flux-axiom and mesh-validation reports.

def run_flux_check(config: ScenarioConfig):
    """Scan both schemes' axioms over the scenario mesh; one CSV per scheme."""
    scenario, mesh, _, _ = _prepare(config)
    failures, paths, certificates = [], [], {}
    for name in ("lf", "godunov"):
        scheme = make_scheme(name, config.lf_lambda_scale if name == "lf" else 1.0)
        cert = check_scheme_on_mesh(scheme, mesh, n_samples=1000,
                                    seed=config.seed)
        certificates[name] = cert
        if not cert.passed:
            for prop, (slab, face, value, threshold, ok) in sorted(cert.worst.items()):
                if not ok:
                    failures.append(
                        "%s %s: residual %.3g > %.3g at slab %d face %d"
                        % (name, prop, value, threshold, slab, face))
        paths.append(write_csv(_out_path(config, "flux_properties_%s.csv" % name),
                               FLUX_REPORT_HEADER, cert.rows()))
    return certificates, tuple(failures), tuple(paths)


def run_mesh_validation(config: ScenarioConfig):
    """Structural and hyperbolicity validation plus the mesh summary table."""
    scenario, mesh, _, _ = _prepare(config)
    failures = []
    mesh_report = validate_mesh(mesh)
    if not mesh_report.passed:
        failures.extend("mesh: %s" % v for v in mesh_report.violations[:16])
    hyp = validate_hyperbolicity(mesh)
    if not hyp.passed:
        failures.append("hyperbolicity: %s" % hyp.summary())
    paths = (write_csv(_out_path(config, "mesh_summary.csv"),
                       MESH_SUMMARY_HEADER, mesh_summary_rows(mesh)),)
    return (mesh_report, hyp), tuple(failures), paths
