"""Command line front end.

Exit codes: 0 on success, 2 when any asserted inequality or preflight
check fails, 1 on usage or runtime errors.  Identical invocations write
byte-identical tables.
"""

from __future__ import annotations

import argparse
import sys

from .mesh import MeshConstructionError
from .scenarios import scenario_registry
from .solver import SolverError
from .studies import (
    ScenarioConfig,
    run_convergence_study,
    run_diagnostics_suite,
    run_flux_check,
    run_mesh_validation,
    run_single,
)

__all__ = ["main", "parse_config_file", "resolve_config"]


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems through exit code 1."""

    def error(self, message):
        raise CliError(message)


def _parse_bool(text: str) -> bool:
    if text == "true":
        return True
    if text == "false":
        return False
    raise ValueError("expected true or false, got %r" % text)


# Dotted config keys to ScenarioConfig fields.  The same names back the
# file format and the flag overrides, so a file can pin every knob.
_CONFIG_KEYS = {
    "scenario": ("scenario_id", str),
    "initial": ("initial", str),
    "mesh.cells": ("cells", int),
    "mesh.cfl": ("cfl", float),
    "mesh.T": ("T", float),
    "scheme.kind": ("scheme", str),
    "scheme.lf_lambda_scale": ("lf_lambda_scale", float),
    "solver.inversion_tol": ("inversion_tol", float),
    "study.levels": ("levels", int),
    "study.seed": ("seed", int),
    "study.out": ("out_dir", str),
    "study.plots": ("make_plots", _parse_bool),
    "study.contraction_pairs": ("contraction_pairs", int),
    "study.balance_pairs": ("balance_pairs", int),
}


def parse_config_file(path: str) -> dict:
    """Flat key = value text; # starts a comment, blank lines are skipped."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise CliError("cannot read config %s: %s" % (path, exc))
    values = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError("%s:%d: expected key = value, got %r"
                           % (path, lineno, line))
        key, _, text = (part.strip() for part in line.partition("="))
        if key not in _CONFIG_KEYS:
            raise CliError("%s:%d: unknown key %r (known: %s)"
                           % (path, lineno, key, ", ".join(sorted(_CONFIG_KEYS))))
        field, convert = _CONFIG_KEYS[key]
        try:
            values[field] = convert(text)
        except ValueError as exc:
            raise CliError("%s:%d: bad value for %s: %s" % (path, lineno, key, exc))
    return values


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--scenario", help="scenario id from the registry")
    parser.add_argument("--initial", help="initial data name within the scenario")
    parser.add_argument("--cells", type=int, help="cells per axis at level 0")
    parser.add_argument("--cfl", type=float, help="CFL margin fraction in (0, 1)")
    parser.add_argument("--T", type=float, help="final time")
    parser.add_argument("--scheme", choices=("lf", "godunov"),
                        help="numerical flux scheme")
    parser.add_argument("--levels", type=int, help="refinement levels")
    parser.add_argument("--out", help="output directory for tables and figures")
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--seed", type=int, help="seed for sampled checks")
    parser.add_argument("--lf-lambda-scale", type=float, dest="lf_lambda_scale",
                        help="scale on the LF diffusion coefficient")
    parser.add_argument("--no-plots", action="store_true",
                        help="skip figure rendering")


def build_parser() -> _Parser:
    parser = _Parser(prog="spacetimefv",
                     description="Finite volume studies on foliated spacetimes.")
    sub = parser.add_subparsers(dest="command", required=True)
    specs = [
        ("run", "march one scenario and write the trajectory table"),
        ("converge", "refinement study with L1 errors against the oracle"),
        ("diagnose", "entropy residuals, balances, contraction, global bound"),
        ("check-flux", "numerical flux axiom scan for both schemes"),
        ("validate-mesh", "structural and hyperbolicity validation"),
    ]
    for name, help_text in specs:
        q = sub.add_parser(name, help=help_text)
        _add_common(q)
    return parser


def resolve_config(args) -> ScenarioConfig:
    values = {}
    if args.config:
        values.update(parse_config_file(args.config))
    overrides = {
        "scenario_id": args.scenario,
        "initial": args.initial,
        "cells": args.cells,
        "cfl": args.cfl,
        "T": args.T,
        "scheme": args.scheme,
        "levels": args.levels,
        "out_dir": args.out,
        "seed": args.seed,
        "lf_lambda_scale": args.lf_lambda_scale,
    }
    for key, value in overrides.items():
        if value is not None:
            values[key] = value
    if args.no_plots:
        values["make_plots"] = False
    if "scenario_id" not in values:
        raise CliError("no scenario selected; available: %s"
                       % ", ".join(s.scenario_id for s in scenario_registry()))
    try:
        return ScenarioConfig(**values)
    except ValueError as exc:
        raise CliError(str(exc))


def _cmd_run(config: ScenarioConfig):
    result = run_single(config)
    lines = ["wrote %s" % p for p in result.paths]
    if result.trajectory is not None:
        final = result.trajectory.states[-1].values
        lines.append("final slice: %d elements, min %.6g, max %.6g"
                     % (len(final), float(final.min()), float(final.max())))
    return list(result.failures), lines


def _cmd_converge(config: ScenarioConfig):
    table, failures, paths = run_convergence_study(config)
    lines = ["wrote %s" % p for p in paths]
    for i, lev in enumerate(table.levels):
        rate = ("%.3f" % table.rates[i]) if table.rates[i] is not None else "-"
        lines.append("level %d: h %.6g, tau %.6g, err_l1 %.6g, rate %s"
                     % (lev, table.h[i], table.tau[i], table.err_l1[i], rate))
    return list(failures), lines


def _cmd_diagnose(config: ScenarioConfig):
    report, failures, paths = run_diagnostics_suite(config)
    lines = ["wrote %s" % p for p in paths]
    lines.append("face residual max %.3g (threshold %.3g)"
                 % (float(report.face_max.max()), report.face_threshold))
    lines.append("element residual max %.3g (threshold %.3g)"
                 % (float(report.element_max.max()), report.element_threshold))
    lines.append("balance pairs: %d, dissipation sum %.6g"
                 % (len(report.balance),
                    report.dissipation.lhs_sum if report.dissipation else 0.0))
    lines.append("diagnostics %s" % ("PASS" if not failures else "FAIL"))
    return list(failures), lines


def _cmd_check_flux(config: ScenarioConfig):
    certificates, failures, paths = run_flux_check(config)
    lines = ["wrote %s" % p for p in paths]
    for name, cert in sorted(certificates.items()):
        lines.append("%s: consistency %.3g, conservation %.3g, faces %d, %s"
                     % (name, cert.consistency_max, cert.conservation_max,
                        cert.faces_checked, "pass" if cert.passed else "FAIL"))
    return list(failures), lines


def _cmd_validate_mesh(config: ScenarioConfig):
    (mesh_report, hyp), failures, paths = run_mesh_validation(config)
    lines = ["wrote %s" % p for p in paths]
    lines.append("slabs %d, elements %d, violations %d"
                 % (mesh_report.slabs_checked, mesh_report.elements_checked,
                    len(mesh_report.violations)))
    lines.append(hyp.summary())
    return list(failures), lines


_COMMANDS = {
    "run": _cmd_run,
    "converge": _cmd_converge,
    "diagnose": _cmd_diagnose,
    "check-flux": _cmd_check_flux,
    "validate-mesh": _cmd_validate_mesh,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        config = resolve_config(args)
        failures, lines = _COMMANDS[args.command](config)
    except CliError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    except (ValueError, MeshConstructionError, SolverError, OSError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    for line in lines:
        print(line)
    if failures:
        for f in failures:
            print("FAIL: %s" % f, file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
