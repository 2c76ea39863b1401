"""Slab-by-slab finite volume march for flux fields on foliated meshes.

Each element update balances the pullback integrals of the flux form over
its spacelike faces against the total fluxes through its vertical ring:

    |e+| phi+(u_plus) = |e-| phi-(u_minus) - sum over vertical faces of q.

The scheme is explicit in the data but implicit in the upper averaged flux,
so every step ends in a monotone scalar inversion (bracketed Newton with a
bisection fallback).  Whole slabs advance as one vectorized batch; the
per-element path (step_element) exists as an independently checkable view
of the same update and for the convex-decomposition intermediates.

Hypersurface values are carried as SliceState vectors: u_K on slab i is
the trace on the element's lower face.  For moving meshes the element ids
of consecutive slabs are matched by shared face endpoints, so the upper
value of slab i is the lower value of slab i+1 with the same id.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .forms import (
    FluxField,
    InversionConvergenceError,
    InversionRangeError,
    QuadratureRule,
    averaged_flux,
    form_integral,
    invert_averaged_flux,
)
from .mesh import FoliatedMesh
from .numflux import TotalFluxScheme, slab_flux_context

__all__ = [
    "SolverError",
    "SolverConfig",
    "SliceState",
    "Trajectory",
    "project_initial_data",
    "step_element",
    "advance_slice",
    "run",
    "reconstruct",
    "trajectory_rows",
    "intermediates_rows",
    "TRAJECTORY_HEADER",
    "INTERMEDIATES_HEADER",
]

CFL_REFUSAL_SLACK = 1e-9
CLAMP_TOL = 1e-9
STATE_RANGE_SLACK = 1e-9


class SolverError(RuntimeError):
    """Element update failed; carries slab and element context."""

    def __init__(self, message: str, slab: int | None = None, element: int | None = None):
        self.slab = slab
        self.element = element
        where = ""
        if slab is not None:
            where = " [slab %d%s]" % (slab, "" if element is None else ", element %d" % element)
        super().__init__(message + where)


@dataclass(frozen=True)
class SolverConfig:
    """Solver knobs: inversion tolerance, quadrature, bookkeeping flags."""

    inversion_tol: float = 1e-12
    record_intermediates: bool = False
    quad: QuadratureRule | None = None
    scheme_name: str | None = None

    def __post_init__(self):
        if not (0.0 < self.inversion_tol <= 1e-6):
            raise ValueError("inversion tolerance must lie in (0, 1e-6]")


@dataclass(frozen=True)
class SliceState:
    """Piecewise constant hypersurface data: one value per element of a slab."""

    slab: int
    time: float
    values: np.ndarray
    warnings: tuple = ()

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def num_elements(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class Trajectory:
    """Full march: states 0..N plus optional per-slab intermediates."""

    mesh: FoliatedMesh
    flux: FluxField
    scheme: TotalFluxScheme
    config: SolverConfig
    states: tuple
    intermediates: tuple = ()
    initial_data: Callable | None = None

    @property
    def num_slabs(self) -> int:
        return len(self.states) - 1

    def slice_totals(self) -> np.ndarray:
        """Conserved totals sum of integral i*omega(u_j) per slice j.

        Slice j < N integrates over the lower faces of slab j; the final
        slice uses the upper faces of the last slab.
        """
        mesh, fn = self.mesh, self.flux.component_fn
        out = np.empty(len(self.states))
        for j, st in enumerate(self.states):
            i = min(j, mesh.num_slabs - 1)
            arr = mesh.slabs[i].arrays()
            pts, mins = (arr.lo_pts, arr.lo_min) if j < len(self.states) - 1 else (arr.up_pts, arr.up_min)
            vals = form_integral(fn, st.values[:, None], pts, mins, arr.w_space)
            out[j] = float(np.sum(vals))
        return out


def _range_check(flux: FluxField, values: np.ndarray, slab: int) -> tuple:
    lo, hi = flux.u_range
    out_lo = float(np.min(values)) - lo
    out_hi = hi - float(np.max(values))
    warnings = ()
    if out_lo < -STATE_RANGE_SLACK or out_hi < -STATE_RANGE_SLACK:
        warnings = ("slab %d values leave u_range by %.3g" %
                    (slab, max(-out_lo, -out_hi)),)
    return warnings


def _invert_on_faces(flux: FluxField, points, minors, weights, measures, targets,
                     tol: float, slab: int, element_ids, max_iter: int = 100,
                     seeds=None):
    """Vectorized monotone inversion of the averaged flux on stacked faces.

    Solves phi_face(u) = target per face with a bracketed Newton iteration;
    converged entries freeze while the rest keep iterating.  The bracket is
    u_range widened by ten percent per side, as in the scalar inversion.
    seeds, when given, start the iteration (a seed with zero residual is
    returned unchanged, so stationary updates stay bitwise stationary).
    """
    fn, du = flux.component_fn, flux.component_du_fn
    lo0, hi0 = flux.u_range
    pad = 0.1 * (hi0 - lo0)
    n = targets.shape[0]
    lo = np.full(n, lo0 - pad)
    hi = np.full(n, hi0 + pad)

    def phi(u):
        return form_integral(fn, u[:, None], points, minors, weights) / measures

    def dphi(u):
        return form_integral(du, u[:, None], points, minors, weights) / measures

    f_lo = phi(lo) - targets
    f_hi = phi(hi) - targets
    bad = (f_lo > 0.0) | (f_hi < 0.0)
    if np.any(bad):
        k = int(np.argmax(bad))
        raise SolverError(
            "averaged-flux target %.17g outside the bracket range" % targets[k],
            slab=slab, element=int(element_ids[k]))
    u = 0.5 * (lo + hi) if seeds is None else np.clip(np.asarray(seeds, float), lo, hi)
    f = phi(u) - targets
    active = np.abs(f) > tol
    for _ in range(max_iter):
        if not np.any(active):
            break
        d = dphi(u)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = u - f / d
        inside = (d > 0.0) & (newton >= lo) & (newton <= hi) & np.isfinite(newton)
        u_new = np.where(inside, newton, 0.5 * (lo + hi))
        f_new = phi(u_new) - targets
        pos = f_new > 0.0
        hi = np.where(active & pos, u_new, hi)
        lo = np.where(active & ~pos, u_new, lo)
        u = np.where(active, u_new, u)
        f = np.where(active, f_new, f)
        active = np.abs(f) > tol
    if np.any(active):
        k = int(np.argmax(np.abs(np.where(active, f, 0.0))))
        raise SolverError(
            "averaged-flux inversion stalled at residual %.3g (tol %.3g)"
            % (abs(f[k]), tol), slab=slab, element=int(element_ids[k]))
    # Two polish steps toward machine residual, kept only when they improve.
    for _ in range(2):
        d = dphi(u)
        with np.errstate(divide="ignore", invalid="ignore"):
            u_try = np.clip(u - f / d, lo, hi)
        u_try = np.where(d > 0.0, u_try, u)
        f_try = phi(u_try) - targets
        better = np.abs(f_try) < np.abs(f)
        u = np.where(better, u_try, u)
        f = np.where(better, f_try, f)
    return u


def project_initial_data(mesh: FoliatedMesh, flux: FluxField, u0: Callable,
                         config: SolverConfig | None = None) -> SliceState:
    """Project pointwise initial data onto slab 0 by matching face integrals.

    For each element the projected value solves
    integral of i*omega(u_K) over e- = integral of i*omega(u0(x)) over e-.
    u0 receives spatial coordinates: shape (...,) for 1d slices, (..., 2)
    for 2d slices.  Values that leave u_range by at most 1e-9 are clamped
    with a recorded warning; larger excursions raise.
    """
    config = config or SolverConfig()
    arr = mesh.slabs[0].arrays()
    sp = arr.lo_pts[..., 1:]
    u0_vals = np.asarray(u0(sp[..., 0] if mesh.n == 1 else sp), dtype=float)
    u0_vals = np.broadcast_to(u0_vals, arr.lo_pts.shape[:-1])
    targets = form_integral(flux.component_fn, u0_vals, arr.lo_pts, arr.lo_min,
                            arr.w_space)
    measures = mesh.measures(0, "lower")
    E = measures.shape[0]
    # Seeding with a nodal sample makes the seed residual exactly zero for
    # constant data, so constants project to the same float on every element.
    values = _invert_on_faces(flux, arr.lo_pts, arr.lo_min, arr.w_space, measures,
                              targets / measures, config.inversion_tol, slab=0,
                              element_ids=np.arange(E), seeds=u0_vals[..., 0])
    lo, hi = flux.u_range
    warnings = []
    worst = max(float(np.max(values - hi, initial=0.0)),
                float(np.max(lo - values, initial=0.0)))
    if worst > 0.0:
        if worst > CLAMP_TOL:
            k = int(np.argmax(np.maximum(values - hi, lo - values)))
            raise SolverError(
                "projected value leaves u_range by %.3g (> %.3g)" % (worst, CLAMP_TOL),
                slab=0, element=k)
        values = np.clip(values, lo, hi)
        warnings.append("projection clamped into u_range by up to %.3g" % worst)
    return SliceState(slab=0, time=float(mesh.slice_times[0]), values=values,
                      warnings=tuple(warnings))


def _cfl_refuse(mesh: FoliatedMesh, slab: int, element: int | None = None):
    margins = mesh.margins[slab]
    m = margins if element is None else margins[element:element + 1]
    worst = float(np.max(m))
    if worst > 1.0 + CFL_REFUSAL_SLACK:
        k = element if element is not None else int(np.argmax(margins))
        raise SolverError("CFL margin %.6g exceeds 1" % worst, slab=slab, element=k)


def step_element(mesh: FoliatedMesh, state: SliceState, k: int,
                 scheme: TotalFluxScheme, config: SolverConfig | None = None):
    """Advance one element through its slab; returns (u_plus, intermediates).

    Follows the per-element balance with the element's own oriented faces
    and scalar inversions.  intermediates is the list of one-face states
    u~ of the convex decomposition, one per vertical face, computed when
    config.record_intermediates is set (else empty).
    """
    config = config or SolverConfig()
    i = state.slab
    _cfl_refuse(mesh, i, k)
    elem = mesh.element(i, k)
    flux, quad = mesh.flux, config.quad or mesh.quad
    u = state.values
    ctx = slab_flux_context(flux, mesh.slabs[i], quad)
    tpl = mesh.slabs[i].template
    outward = 0.0
    q_faces = []
    for ref in elem.vertical:
        a = u[tpl.face_plus[ref.face]]
        b = u[tpl.face_minus[ref.face]]
        q_can = float(scheme.face_flux(ctx, np.asarray([a])[:, None],
                                       np.asarray([b])[:, None])[0, ref.face])
        q_faces.append(ref.sign * q_can)
        outward += ref.sign * q_can
    lower_int = elem.measure_lower * averaged_flux(flux, elem.lower, float(u[k]), quad)
    target = (lower_int - outward) / elem.measure_upper
    try:
        u_plus = invert_averaged_flux(flux, elem.upper, target,
                                      tol=config.inversion_tol, quad=quad,
                                      x0=float(u[k]))
    except (InversionRangeError, InversionConvergenceError) as exc:
        raise SolverError(str(exc), slab=i, element=k) from exc
    tildes = []
    if config.record_intermediates:
        phi_up_prev = averaged_flux(flux, elem.upper, float(u[k]), quad)
        n_k = elem.n_vertical
        for slot, ref in enumerate(elem.vertical):
            q_self = ref.sign * float(ctx.phi(np.asarray([u[k]])[:, None])[0, ref.face])
            t_slot = phi_up_prev - n_k / elem.measure_upper * (q_faces[slot] - q_self)
            try:
                tildes.append(invert_averaged_flux(flux, elem.upper, t_slot,
                                                   tol=config.inversion_tol, quad=quad,
                                                   x0=float(u[k])))
            except (InversionRangeError, InversionConvergenceError) as exc:
                raise SolverError(str(exc), slab=i, element=k) from exc
    return u_plus, tildes


def advance_slice(mesh: FoliatedMesh, state: SliceState, scheme: TotalFluxScheme,
                  config: SolverConfig | None = None):
    """Advance a whole slab in one vectorized batch.

    Returns (SliceState for slab i+1, intermediates) where intermediates is
    an (E, N_K) array of the convex-decomposition states, or None when not
    recorded.  The update is atomic: any failure leaves no partial state.
    """
    config = config or SolverConfig()
    i = state.slab
    if i >= mesh.num_slabs:
        raise SolverError("state lies on the final slice; no slab to advance",
                          slab=i)
    _cfl_refuse(mesh, i)
    flux = mesh.flux
    view = mesh.slabs[i]
    tpl = view.template
    arr = view.arrays()
    u = state.values
    if u.shape[0] != tpl.num_elements:
        raise SolverError("state has %d values for %d elements"
                          % (u.shape[0], tpl.num_elements), slab=i)
    ctx = slab_flux_context(flux, view, config.quad or mesh.quad)
    q = scheme.face_flux(ctx, u[tpl.face_plus], u[tpl.face_minus])
    outward = np.sum(tpl.elem_signs * q[tpl.elem_faces], axis=1)
    lower_int = form_integral(flux.component_fn, u[:, None], arr.lo_pts,
                              arr.lo_min, arr.w_space)
    m_up = mesh.measures(i, "upper")
    targets = (lower_int - outward) / m_up
    E = tpl.num_elements
    u_plus = _invert_on_faces(flux, arr.up_pts, arr.up_min, arr.w_space, m_up,
                              targets, config.inversion_tol, slab=i,
                              element_ids=np.arange(E), seeds=u)
    tildes = None
    warnings = _range_check(flux, u_plus, i + 1)
    if config.record_intermediates:
        S = tpl.elem_faces.shape[1]
        phi_up_prev = form_integral(flux.component_fn, u[:, None], arr.up_pts,
                                    arr.up_min, arr.w_space) / m_up
        phi_self = np.empty((E, S))
        for s in range(S):
            fidx = tpl.elem_faces[:, s]
            phi_self[:, s] = form_integral(flux.component_fn, u[:, None],
                                           arr.v_pts[fidx], arr.v_min[fidx],
                                           arr.w_vert)
        q_out = tpl.elem_signs * (q[tpl.elem_faces] - phi_self)
        t_tilde = phi_up_prev[:, None] - tpl.n_vertical[:, None] / m_up[:, None] * q_out
        pts_t = np.broadcast_to(arr.up_pts[:, None], (E, S) + arr.up_pts.shape[1:])
        min_t = np.broadcast_to(arr.up_min[:, None], (E, S) + arr.up_min.shape[1:])
        flat_ids = np.repeat(np.arange(E), S)
        tilde_flat = _invert_on_faces(
            flux, pts_t.reshape((E * S,) + arr.up_pts.shape[1:]),
            min_t.reshape((E * S,) + arr.up_min.shape[1:]), arr.w_space,
            np.repeat(m_up, S), t_tilde.ravel(), config.inversion_tol,
            slab=i, element_ids=flat_ids, seeds=np.repeat(u, S))
        tildes = tilde_flat.reshape(E, S)
        # Convex decomposition identity: upper averaged flux of u_plus equals
        # the slot mean of the one-face states' averaged fluxes.
        phi_plus = form_integral(flux.component_fn, u_plus[:, None], arr.up_pts,
                                 arr.up_min, arr.w_space) / m_up
        phi_tilde = form_integral(flux.component_fn, tildes[:, :, None],
                                  arr.up_pts[:, None], arr.up_min[:, None],
                                  arr.w_space) / m_up[:, None]
        gap = np.max(np.abs(phi_plus - np.mean(phi_tilde, axis=1)))
        tol = 2.0 * config.inversion_tol * (1.0 + float(np.max(np.abs(phi_plus))))
        if gap > tol:
            warnings = warnings + (
                "convex decomposition gap %.3g exceeds %.3g on slab %d"
                % (float(gap), tol, i),)
    return SliceState(slab=i + 1, time=float(mesh.slice_times[i + 1]),
                      values=u_plus, warnings=warnings), tildes


def run(mesh: FoliatedMesh, flux: FluxField, scheme: TotalFluxScheme,
        u0: Callable, config: SolverConfig | None = None) -> Trajectory:
    """March the full foliation from projected initial data.

    flux must be the field the mesh was built against; the result is
    deterministic for identical inputs.
    """
    config = config or SolverConfig()
    if flux is not mesh.flux and flux != mesh.flux:
        raise SolverError("flux field differs from the one bound to the mesh")
    states = [project_initial_data(mesh, flux, u0, config)]
    inters = []
    for _ in range(mesh.num_slabs):
        new_state, tildes = advance_slice(mesh, states[-1], scheme, config)
        states.append(new_state)
        inters.append(tildes)
    return Trajectory(mesh=mesh, flux=flux, scheme=scheme, config=config,
                      states=tuple(states), intermediates=tuple(inters),
                      initial_data=u0)


def reconstruct(trajectory: Trajectory, t: float, x) -> float:
    """Piecewise constant spacetime value: the lower trace of the prism at (t, x).

    On a slice time t_i the value comes from slice state i (lower slab
    convention); spatial boundary ties go to the smaller element id.
    """
    mesh = trajectory.mesh
    times = mesh.slice_times
    if t < times[0] or t > times[-1]:
        raise ValueError("time %.17g outside [%.17g, %.17g]" % (t, times[0], times[-1]))
    exact = np.nonzero(times == t)[0]
    if exact.size:
        j = int(exact[0])
        slab = min(j, mesh.num_slabs - 1)
        state = trajectory.states[j]
    else:
        slab = mesh.slab_for_time(t)
        state = trajectory.states[slab]
    k = mesh.locate_element(slab, t, x)
    return float(state.values[k])


TRAJECTORY_HEADER = ["slab", "time", "element", "u"]
INTERMEDIATES_HEADER = ["slab", "element", "face", "u_tilde"]


def trajectory_rows(trajectory: Trajectory):
    rows = []
    for st in trajectory.states:
        for k, v in enumerate(st.values):
            rows.append([st.slab, st.time, k, float(v)])
    return rows


def intermediates_rows(trajectory: Trajectory):
    rows = []
    for i, tilde in enumerate(trajectory.intermediates):
        if tilde is None:
            continue
        E, S = tilde.shape
        tpl = trajectory.mesh.slabs[i].template
        for k in range(E):
            for s in range(S):
                rows.append([i, k, int(tpl.elem_faces[k, s]), float(tilde[k, s])])
    return rows
