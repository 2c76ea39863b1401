"""Entropy structure and a posteriori diagnostics for slab marches.

The solver module advances cell values; everything here certifies the march
after the fact.  Two entropy families are supported: threshold entropies
with profile |u - c| whose flux forms are sign(u - c) (omega(u) - omega(c)),
and smooth convex profiles U whose flux forms integrate U'(v) d_v omega.
Both expose the same small surface (face integrals of the entropy flux form,
pointwise component values, a numerical entropy flux paired with a scheme)
so the diagnostics below are written once.

The numerical entropy flux for a convex profile superposes threshold fluxes:

    Q_U(a, b) = beta_c q(a, b) + 1/2 int U''(c) Q(a, b, c) dc + kappa_face

with beta_c the mean of U' at the ends of the state interval and kappa_face
fixed by exact consistency at the lower end of the state interval.  For the
diffusive two-point scheme this collapses to the closed form

    Q_U(a, b) = 1/2 (Omega_face(a) + Omega_face(b)) + lambda/2 (U(a) - U(b))

which is used directly.  For the exact-Riemann scheme the c integral is done
segment by segment: the integrand is analytic between breakpoints, and the
breakpoints are the two states, the interior stationary states of the face
flux, and the states where the face flux crosses the flux level of one of
those candidates.  Crossings are bracketed on the monotone pieces between
stationary states and bisected to machine width, so a fixed-order rule per
segment integrates to quadrature accuracy.

Diagnostics returned as numbers follow one convention: a residual is the
left side minus the right side of the inequality it tests, so negative or
tiny values pass.  Thresholds are scale-relative and reported next to the
values they gate.  All sums run in fixed element order, so repeated calls
on the same trajectory reproduce bitwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .forms import (
    EntropyFluxField,
    FluxField,
    QuadratureRule,
    default_quadrature,
    entropy_flux_from_U,
    form_integral,
    form_values,
)
from .mesh import FoliatedMesh
from .numflux import (
    LaxFriedrichsScheme,
    SlabFluxContext,
    TotalFluxScheme,
    kruzkov_face_flux,
    slab_flux_context,
)
from .solver import SliceState, Trajectory

__all__ = [
    "BalanceReport",
    "ConvexEntropy",
    "DiagnosticsReport",
    "DissipationEstimate",
    "DIAGNOSTICS_HEADER",
    "ELEMENT_RESIDUAL_TOL",
    "FACE_RESIDUAL_TOL",
    "GLOBAL_INEQUALITY_TOL",
    "GlobalInequalityReport",
    "KruzkovEntropy",
    "ModulusReport",
    "SmoothBumpTestFunction",
    "contraction_distance",
    "contraction_distances",
    "dissipation_estimate",
    "element_entropy_residual",
    "element_entropy_residuals",
    "entropy_balance",
    "entropy_residual_scan",
    "estimate_convexity_modulus",
    "face_entropy_residual",
    "face_entropy_residuals",
    "global_inequality_terms",
    "quadratic_entropy",
    "standard_test_functions",
]

FACE_RESIDUAL_TOL = 1e-9
ELEMENT_RESIDUAL_TOL = 1e-9
GLOBAL_INEQUALITY_TOL = 1e-8
BALANCE_TOL = 1e-9
CONTRACTION_TOL = 1e-10
MODULUS_GRID_POINTS = 128
SEGMENT_GL_NODES = 24
LEVEL_ROOT_ITERS = 60

DIAGNOSTICS_HEADER = ["kind", "slab", "element", "value", "threshold", "pass"]

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(SEGMENT_GL_NODES)
_GL_NODES = 0.5 * (_GL_NODES + 1.0)
_GL_WEIGHTS = 0.5 * _GL_WEIGHTS


class KruzkovEntropy:
    """Threshold entropy at level c: profile |u - c|, flux form
    sign(u - c) (omega(u) - omega(c))."""

    def __init__(self, flux: FluxField, level: float):
        self.flux = flux
        self.level = float(level)
        lo, hi = flux.u_range
        if not lo <= self.level <= hi:
            raise ValueError("threshold level %.17g outside state range [%g, %g]"
                             % (self.level, lo, hi))

    @property
    def label(self) -> str:
        return "kruzkov[c=%.6g]" % self.level

    def profile(self, u):
        return np.abs(np.asarray(u, dtype=float) - self.level)

    def omega_face_values(self, points, minors, weights, u):
        """Integral of the pulled-back entropy flux form, per stacked face.

        u has the stacked face axis last and broadcasts against it.
        """
        u = np.asarray(u, dtype=float)
        fn = self.flux.component_fn
        phi_u = form_integral(fn, u[..., None], points, minors, weights)
        phi_c = form_integral(fn, self.level, points, minors, weights)
        return np.sign(u - self.level) * (phi_u - phi_c)

    def omega_face_values_weighted(self, points, minors, weights, u, node_scale):
        """Same integral with an extra pointwise factor at the quadrature nodes."""
        u = np.asarray(u, dtype=float)
        fn = self.flux.component_fn
        vals_u = form_values(fn, u[..., None], points, minors)
        vals_c = form_values(fn, self.level, points, minors)
        s = np.sign(u - self.level)[..., None]
        return np.sum(s * (vals_u - vals_c) * node_scale * weights, axis=-1)

    def omega_face_values_pointwise(self, points, minors, weights, u_nodes):
        """Integral with node-valued state u_nodes matching points[..., 0]."""
        u_nodes = np.asarray(u_nodes, dtype=float)
        fn = self.flux.component_fn
        vals_u = form_values(fn, u_nodes, points, minors)
        vals_c = form_values(fn, self.level, points, minors)
        return np.sum(np.sign(u_nodes - self.level) * (vals_u - vals_c) * weights,
                      axis=-1)

    def omega_component_values(self, alpha: int, u, x):
        u = np.asarray(u, dtype=float)
        fn = self.flux.component_fn
        return np.sign(u - self.level) * (fn(alpha, u, x) - fn(alpha, self.level, x))

    def numerical_flux(self, scheme: TotalFluxScheme, ctx: SlabFluxContext, a, b):
        return kruzkov_face_flux(scheme, ctx, a, b, self.level)


class ConvexEntropy:
    """Smooth convex entropy profile U with flux form int_0^u U'(v) d_v omega."""

    def __init__(self, flux: FluxField, U, U_du, U_d2, name: str = "convex",
                 field: EntropyFluxField | None = None):
        self.flux = flux
        self.U_fn = U
        self.field = field if field is not None else entropy_flux_from_U(
            flux, U, U_du, U_d2)
        self.name = name

    @property
    def label(self) -> str:
        return self.name

    def profile(self, u):
        return np.asarray(self.U_fn(np.asarray(u, dtype=float)), dtype=float)

    def omega_face_values(self, points, minors, weights, u):
        return self.field.face_integral_values(u, points, minors, weights)

    def omega_face_values_weighted(self, points, minors, weights, u, node_scale):
        u = np.asarray(u, dtype=float)
        om = self._pointwise(u[..., None], points, minors)
        return np.sum(om * node_scale * weights, axis=-1)

    def omega_face_values_pointwise(self, points, minors, weights, u_nodes):
        om = self._pointwise(np.asarray(u_nodes, dtype=float), points, minors)
        return np.sum(om * weights, axis=-1)

    def _pointwise(self, u_nodes, points, minors):
        out = 0.0
        for alpha in range(points.shape[-1]):
            out = out + (self.field.omega_component(alpha, u_nodes, points)
                         * minors[..., alpha])
        return out

    def omega_component_values(self, alpha: int, u, x):
        return self.field.omega_component(alpha, np.asarray(u, dtype=float), x)

    def numerical_flux(self, scheme: TotalFluxScheme, ctx: SlabFluxContext, a, b):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if isinstance(scheme, LaxFriedrichsScheme):
            oa = self.omega_face_values(ctx.points, ctx.minors, ctx.weights, a)
            ob = self.omega_face_values(ctx.points, ctx.minors, ctx.weights, b)
            lam = scheme.lam(ctx)
            return 0.5 * (oa + ob) + 0.5 * lam * (self.profile(a) - self.profile(b))
        return self._superposed_flux(scheme, ctx, a, b)

    # Superposition path: beta_c q + 1/2 int U'' Q_kruzkov dc + kappa_face.
    def _superposed_flux(self, scheme, ctx, a, b):
        lo, hi = self.flux.u_range
        beta_c = 0.5 * float(self.field.U_du_fn(lo) + self.field.U_du_fn(hi))
        anchor = np.full(ctx.num_faces, lo)
        kappa = (self.omega_face_values(ctx.points, ctx.minors, ctx.weights, anchor)
                 - beta_c * ctx.phi(anchor)
                 - 0.5 * self._c_integral(scheme, ctx, anchor, anchor))
        return (beta_c * scheme.face_flux(ctx, a, b)
                + 0.5 * self._c_integral(scheme, ctx, a, b)
                + kappa)

    def _c_integral(self, scheme, ctx, a, b):
        lo, hi = self.flux.u_range
        a, b = np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float))
        amin = np.clip(np.minimum(a, b), lo, hi)
        amax = np.clip(np.maximum(a, b), lo, hi)
        cols = [np.broadcast_to(np.float64(lo), amin.shape), amin, amax,
                np.broadcast_to(np.float64(hi), amin.shape)]
        ustar, pstar = ctx.stationary_points()
        n_star = ustar.shape[1]
        if n_star:
            for k in range(n_star):
                col = np.broadcast_to(ustar[:, k], amin.shape)
                cols.append(np.where(np.isfinite(col), col, hi))
            # Monotone pieces between stationary states bracket every state
            # where Phi crosses the level of a candidate minimizer.
            bounds = np.sort(np.concatenate(
                [np.full((ctx.num_faces, 1), lo),
                 np.where(np.isfinite(ustar), ustar, hi),
                 np.full((ctx.num_faces, 1), hi)], axis=1), axis=1)
            levels = [ctx.phi(amin), ctx.phi(amax)]
            for k in range(n_star):
                levels.append(np.broadcast_to(pstar[:, k], amin.shape))
            for j in range(bounds.shape[1] - 1):
                p_lo, p_hi = bounds[:, j], bounds[:, j + 1]
                for lev in levels:
                    cols.append(_level_crossing(ctx, lev, p_lo, p_hi, hi))
        bp = np.sort(np.stack(cols, axis=-1), axis=-1)
        seg_lo = np.moveaxis(bp[..., :-1], -2, -1)
        seg_hi = np.moveaxis(bp[..., 1:], -2, -1)
        width = seg_hi - seg_lo
        c = (seg_lo[..., None, :, :]
             + width[..., None, :, :] * _GL_NODES[:, None, None])
        a_bc = np.moveaxis(a[..., None, None], -3, -1)
        b_bc = np.moveaxis(b[..., None, None], -3, -1)
        integrand = (self.field.U_d2_fn(c)
                     * kruzkov_face_flux(scheme, ctx, a_bc, b_bc, c))
        per_seg = np.einsum("g,...gsf->...sf", _GL_WEIGHTS, integrand)
        return np.sum(per_seg * width, axis=-2)


def _level_crossing(ctx, level, p_lo, p_hi, fill):
    """State in [p_lo, p_hi] where the face flux meets level, else fill.

    Phi is monotone on the piece, so bisection on the sign of Phi - level
    converges; pieces without a sign change collapse to the fill state.
    """
    f_lo = ctx.phi(p_lo) - level
    f_hi = ctx.phi(p_hi) - level
    have = f_lo * f_hi <= 0.0
    lo_w = np.where(have, np.broadcast_to(p_lo, level.shape), fill)
    hi_w = np.where(have, np.broadcast_to(p_hi, level.shape), fill)
    down = f_lo <= 0.0
    for _ in range(LEVEL_ROOT_ITERS):
        mid = 0.5 * (lo_w + hi_w)
        below = (ctx.phi(mid) - level) <= 0.0
        take_lo = below == down
        lo_w = np.where(take_lo, mid, lo_w)
        hi_w = np.where(take_lo, hi_w, mid)
    return 0.5 * (lo_w + hi_w)


def quadratic_entropy(flux: FluxField, center: float = 0.0) -> ConvexEntropy:
    """Entropy with profile (u - center)^2 / 2."""
    c0 = float(center)
    return ConvexEntropy(
        flux,
        U=lambda u: 0.5 * (u - c0) ** 2,
        U_du=lambda u: u - c0,
        U_d2=lambda u: np.ones_like(np.asarray(u, dtype=float)),
        name="quadratic[c=%.6g]" % c0 if c0 else "quadratic",
    )


# ---------------------------------------------------------------------------
# Per-face and per-element residuals of the discrete entropy inequalities.

def _slab_parts(trajectory: Trajectory, slab: int):
    mesh = trajectory.mesh
    if not 0 <= slab < mesh.num_slabs:
        raise ValueError("slab %d outside 0..%d" % (slab, mesh.num_slabs - 1))
    view = mesh.slabs[slab]
    arr = view.arrays()
    quad = trajectory.config.quad or default_quadrature()
    ctx = slab_flux_context(trajectory.flux, view, quad)
    return view.template, arr, ctx


def _require_intermediates(trajectory: Trajectory, slab: int):
    if slab >= len(trajectory.intermediates) or trajectory.intermediates[slab] is None:
        raise ValueError(
            "per-face update states were not recorded; rerun with "
            "SolverConfig(record_intermediates=True)")
    return trajectory.intermediates[slab]


def _outward_flux_differences(tpl, ctx, scheme, entropy, u):
    """Outward Q(u_K, u_nb) - Q(u_K, u_K) per element slot, plus Q arrays."""
    q_pair = entropy.numerical_flux(scheme, ctx, u[tpl.face_plus], u[tpl.face_minus])
    q_plus = entropy.numerical_flux(scheme, ctx, u[tpl.face_plus], u[tpl.face_plus])
    q_minus = entropy.numerical_flux(scheme, ctx, u[tpl.face_minus], u[tpl.face_minus])
    q_self = np.where(tpl.elem_signs > 0, q_plus[tpl.elem_faces],
                      q_minus[tpl.elem_faces])
    return tpl.elem_signs * (q_pair[tpl.elem_faces] - q_self)


def _residual_parts(trajectory: Trajectory, slab: int, entropy, tpl, arr, ctx,
                    need_face: bool, need_element: bool):
    """Face and element residual assembly from one shared flux sweep."""
    u = trajectory.states[slab].values
    m_up = trajectory.mesh.measures(slab, "upper")
    o_prev = entropy.omega_face_values(arr.up_pts, arr.up_min, arr.w_space, u)
    qdiff = _outward_flux_differences(tpl, ctx, trajectory.scheme, entropy, u)
    scale = 1.0 + float(np.max(np.abs(o_prev / m_up)))
    face = element = None
    if need_face:
        tilde = _require_intermediates(trajectory, slab)
        o_tilde = entropy.omega_face_values(arr.up_pts, arr.up_min, arr.w_space,
                                            tilde.T).T / m_up[:, None]
        res = (o_tilde - (o_prev / m_up)[:, None]
               + tpl.n_vertical[:, None] / m_up[:, None] * qdiff)
        face = (res, FACE_RESIDUAL_TOL * scale)
    if need_element:
        u_next = trajectory.states[slab + 1].values
        o_next = entropy.omega_face_values(arr.up_pts, arr.up_min, arr.w_space,
                                           u_next)
        element = ((o_next - o_prev) + np.sum(qdiff, axis=1),
                   ELEMENT_RESIDUAL_TOL * m_up * scale)
    return face, element


def face_entropy_residuals(trajectory: Trajectory, slab: int, entropy):
    """Residuals of the per-face entropy inequality on one slab, (E, S).

    Entry (k, s) is Omega-avg(u_tilde) - Omega-avg(u_K) plus the outward
    entropy flux imbalance scaled by N_K / |e+|; nonpositive up to roundoff
    when the step was admissible.  Returns (residuals, threshold).
    """
    tpl, arr, ctx = _slab_parts(trajectory, slab)
    face, _ = _residual_parts(trajectory, slab, entropy, tpl, arr, ctx,
                              need_face=True, need_element=False)
    return face


def face_entropy_residual(trajectory: Trajectory, slab: int, element: int,
                          slot: int, entropy) -> float:
    """Scalar version of face_entropy_residuals for one element slot."""
    res, _ = face_entropy_residuals(trajectory, slab, entropy)
    return float(res[element, slot])


def element_entropy_residuals(trajectory: Trajectory, slab: int, entropy):
    """Residuals of the per-element entropy inequality on one slab, (E,).

    Entry k is the entropy flux gain through the upper face plus the total
    outward entropy flux imbalance; summed over a slab the pair terms cancel
    exactly, leaving the slabwise entropy decrease.  Returns
    (residuals, thresholds) with thresholds scaled by the upper measures.
    """
    tpl, arr, ctx = _slab_parts(trajectory, slab)
    _, element = _residual_parts(trajectory, slab, entropy, tpl, arr, ctx,
                                 need_face=False, need_element=True)
    return element


def entropy_residual_scan(trajectory: Trajectory, slab: int, entropies):
    """Both residual kinds for several entropies from one flux sweep each.

    Scanning face and element residuals separately repeats the numerical
    entropy flux assembly, which dominates the cost for superposed convex
    entropies; this shares it.  Returns one
    ((face_res, face_threshold), (element_res, element_thresholds))
    pair per entropy, in order.
    """
    tpl, arr, ctx = _slab_parts(trajectory, slab)
    return [_residual_parts(trajectory, slab, entropy, tpl, arr, ctx,
                            need_face=True, need_element=True)
            for entropy in entropies]


def element_entropy_residual(trajectory: Trajectory, slab: int, element: int,
                             entropy) -> float:
    """Scalar version of element_entropy_residuals for one element."""
    res, _ = element_entropy_residuals(trajectory, slab, entropy)
    return float(res[element])


# ---------------------------------------------------------------------------
# Slice entropy totals, balance with quadratic dissipation, contraction.

def _slice_face_arrays(mesh: FoliatedMesh, index: int):
    if index < mesh.num_slabs:
        arr = mesh.slabs[index].arrays()
        return arr.lo_pts, arr.lo_min, arr.w_space
    arr = mesh.slabs[mesh.num_slabs - 1].arrays()
    return arr.up_pts, arr.up_min, arr.w_space


def slice_entropy_total(trajectory: Trajectory, index: int, entropy) -> float:
    """Total integral of the entropy flux form over slice index.

    Slices below the top are integrated over the lower faces of their slab,
    the top slice over the upper faces of the last slab, matching the
    conserved-total convention.
    """
    if not 0 <= index < len(trajectory.states):
        raise ValueError("slice %d outside 0..%d" % (index, len(trajectory.states) - 1))
    pts, mins, w = _slice_face_arrays(trajectory.mesh, index)
    vals = entropy.omega_face_values(pts, mins, w, trajectory.states[index].values)
    return float(np.sum(vals))


@dataclass(frozen=True)
class BalanceReport:
    """Entropy totals of two slices with the quadratic dissipation between."""

    lhs: float
    rhs: float
    dissipation: float
    beta: float
    degenerate: bool
    tol: float

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs - self.dissipation

    @property
    def satisfied(self) -> bool:
        return self.lhs + self.dissipation <= self.rhs + self.tol


def entropy_balance(trajectory: Trajectory, i: int, j: int, entropy,
                    beta: float) -> BalanceReport:
    """Entropy decay between slice i and slice j >= i.

    lhs is the entropy total at slice j, rhs at slice i, and dissipation the
    quadratic sum over the slabs in between with coefficient beta / (2 N_K).
    A nonpositive beta marks a degenerate profile; the dissipation is then
    computed with beta = 0 so the report still states a valid inequality.
    """
    if not 0 <= i <= j < len(trajectory.states):
        raise ValueError("slice pair (%d, %d) outside trajectory range 0..%d"
                         % (i, j, len(trajectory.states) - 1))
    lhs = slice_entropy_total(trajectory, j, entropy)
    rhs = slice_entropy_total(trajectory, i, entropy)
    degenerate = beta <= 0.0
    beta_eff = 0.0 if degenerate else float(beta)
    dissipation = 0.0
    for m in range(i, j):
        tilde = _require_intermediates(trajectory, m)
        u_next = trajectory.states[m + 1].values
        m_up = trajectory.mesh.measures(m, "upper")
        n_k = trajectory.mesh.slabs[m].template.n_vertical
        sq = np.sum((tilde - u_next[:, None]) ** 2, axis=1)
        dissipation += float(np.sum(0.5 * beta_eff * m_up / n_k * sq))
    tol = BALANCE_TOL * (1.0 + abs(rhs))
    return BalanceReport(lhs=lhs, rhs=rhs, dissipation=dissipation,
                         beta=float(beta), degenerate=degenerate, tol=tol)


@dataclass(frozen=True)
class DissipationEstimate:
    """Total quadratic update dissipation against the initial entropy."""

    lhs_sum: float
    initial_entropy: float

    @property
    def ratio(self) -> float:
        return self.lhs_sum / self.initial_entropy


def dissipation_estimate(trajectory: Trajectory, entropy=None) -> DissipationEstimate:
    """Sum of |e+|/N_K (u_tilde - u+)^2 over all slabs and slots, with the
    entropy integral of the initial data as the natural comparison scale.

    The initial entropy uses the pointwise initial data when the trajectory
    carries it, else the projected slab-0 values.  The ratio of the two is
    the empirical stability constant; it is mesh-dependent but settles under
    refinement.
    """
    mesh = trajectory.mesh
    if entropy is None:
        entropy = quadratic_entropy(trajectory.flux)
    total = 0.0
    for m in range(mesh.num_slabs):
        tilde = _require_intermediates(trajectory, m)
        u_next = trajectory.states[m + 1].values
        m_up = mesh.measures(m, "upper")
        n_k = mesh.slabs[m].template.n_vertical
        sq = np.sum((tilde - u_next[:, None]) ** 2, axis=1)
        total += float(np.sum(m_up / n_k * sq))
    arr = mesh.slabs[0].arrays()
    if trajectory.initial_data is not None:
        sp = arr.lo_pts[..., 1:]
        u0 = np.asarray(trajectory.initial_data(
            sp[..., 0] if mesh.n == 1 else sp), dtype=float)
        u0 = np.broadcast_to(u0, arr.lo_pts.shape[:-1])
        vals = entropy.omega_face_values_pointwise(arr.lo_pts, arr.lo_min,
                                                   arr.w_space, u0)
    else:
        vals = entropy.omega_face_values(arr.lo_pts, arr.lo_min, arr.w_space,
                                         trajectory.states[0].values)
    return DissipationEstimate(lhs_sum=total, initial_entropy=float(np.sum(vals)))


def contraction_distance(mesh: FoliatedMesh, state_u: SliceState,
                         state_v: SliceState, flux: FluxField | None = None) -> float:
    """Flux-weighted L1 distance between two states on the same slice.

    Integrates sign(u - v) (omega(u) - omega(v)) over the slice; symmetric,
    zero only for identical states, and nonincreasing slab to slab along
    paired marches of the same scheme.
    """
    if state_u.slab != state_v.slab:
        raise ValueError("states live on slices %d and %d of the foliation"
                         % (state_u.slab, state_v.slab))
    flux = flux if flux is not None else mesh.flux
    pts, mins, w = _slice_face_arrays(mesh, state_u.slab)
    fn = flux.component_fn
    fu = form_integral(fn, state_u.values[:, None], pts, mins, w)
    fv = form_integral(fn, state_v.values[:, None], pts, mins, w)
    return float(np.sum(np.sign(state_u.values - state_v.values) * (fu - fv)))


def contraction_distances(traj_u: Trajectory, traj_v: Trajectory) -> np.ndarray:
    """Per-slice contraction distances of two marches on one mesh."""
    if traj_u.mesh is not traj_v.mesh:
        raise ValueError("trajectories must share a mesh")
    return np.array([
        contraction_distance(traj_u.mesh, su, sv)
        for su, sv in zip(traj_u.states, traj_v.states)
    ])


# ---------------------------------------------------------------------------
# Convexity modulus of the entropy flux seen through the physical flux.

@dataclass(frozen=True)
class ModulusReport:
    """Grid estimate of the convexity modulus, global and per element."""

    beta_global: float
    per_element: tuple
    slabs: tuple
    grid_points: int

    @property
    def degenerate(self) -> bool:
        return self.beta_global <= 0.0


def estimate_convexity_modulus(mesh: FoliatedMesh, entropy,
                               slabs=None, n_grid: int = MODULUS_GRID_POINTS,
                               quad: QuadratureRule | None = None) -> ModulusReport:
    """Lower-bound the convexity of the entropy face average as a function
    of the physical face average, per upper face.

    Second divided differences of Omega-avg against phi-avg on an n_grid
    state grid estimate the modulus in flux coordinates; the squared minimal
    phi slope converts it to a modulus against squared state increments, the
    form the dissipation terms use.  The global value is the minimum over
    the requested slabs (all by default).
    """
    quad = quad or default_quadrature()
    slab_ids = tuple(range(mesh.num_slabs)) if slabs is None else tuple(slabs)
    lo, hi = mesh.flux.u_range
    grid = np.linspace(lo, hi, n_grid)
    per_element = []
    beta_global = np.inf
    for s in slab_ids:
        arr = mesh.slabs[s].arrays()
        m_up = mesh.measures(s, "upper")
        x = form_integral(mesh.flux.component_fn, grid[:, None, None],
                          arr.up_pts, arr.up_min, arr.w_space) / m_up
        y = entropy.omega_face_values(arr.up_pts, arr.up_min, arr.w_space,
                                      np.broadcast_to(grid[:, None], x.shape)) / m_up
        dx = np.diff(x, axis=0)
        slopes = np.diff(y, axis=0) / dx
        second = 2.0 * np.diff(slopes, axis=0) / (x[2:] - x[:-2])
        beta_phi = np.min(second, axis=0)
        c_lower = np.min(dx / np.diff(grid)[:, None], axis=0)
        beta_u = np.where(beta_phi > 0.0, beta_phi * c_lower ** 2, beta_phi)
        per_element.append(beta_u)
        beta_global = min(beta_global, float(np.min(beta_u)))
    return ModulusReport(beta_global=beta_global, per_element=tuple(per_element),
                         slabs=slab_ids, grid_points=n_grid)


# ---------------------------------------------------------------------------
# Compactly supported space-time test functions.

class SmoothBumpTestFunction:
    """Tensor product of C^2 bumps (1 - r^2)^3, one factor per axis.

    The first axis is time (not wrapped); spatial axes wrap with period one,
    which forces their radii below one half so the wrapped distance stays
    smooth across the support.  Values and gradients are exactly zero
    outside the support, so containment checks are bitwise.
    """

    def __init__(self, center, radii, amplitude: float = 1.0):
        self.center = np.asarray(center, dtype=float)
        self.radii = np.asarray(radii, dtype=float)
        if self.center.shape != self.radii.shape or self.center.ndim != 1:
            raise ValueError("center and radii must be 1d and congruent")
        if np.any(self.radii <= 0.0):
            raise ValueError("radii must be positive")
        if np.any(self.radii[1:] >= 0.5):
            raise ValueError("spatial radii must stay below half the period")
        self.amplitude = float(amplitude)
        if self.amplitude <= 0.0:
            raise ValueError("amplitude must be positive")

    def _offsets(self, pts):
        d = np.asarray(pts, dtype=float) - self.center
        d[..., 1:] -= np.round(d[..., 1:])
        return d / self.radii

    def value(self, pts):
        r = self._offsets(pts)
        f = np.maximum(1.0 - r ** 2, 0.0) ** 3
        return self.amplitude * np.prod(f, axis=-1)

    def gradient(self, pts):
        r = self._offsets(pts)
        base = np.maximum(1.0 - r ** 2, 0.0)
        f = base ** 3
        df = -6.0 * r * base ** 2 / self.radii
        out = np.empty_like(r)
        for axis in range(r.shape[-1]):
            others = np.prod(np.delete(f, axis, axis=-1), axis=-1)
            out[..., axis] = self.amplitude * df[..., axis] * others
        return out

    @property
    def support_end(self) -> float:
        return float(self.center[0] + self.radii[0])


def standard_test_functions(mesh: FoliatedMesh, count: int = 2):
    """Bumps sized to one mesh, supports ending before its last two slabs.

    Using the coarsest mesh of a refinement family keeps the same functions
    admissible on every finer member, whose last two slabs start later.
    """
    if mesh.num_slabs < 3:
        raise ValueError("foliation needs at least three slabs")
    t_end = float(mesh.slice_times[-3])
    layouts_1d = [((0.45 * t_end, 0.35), (0.45 * t_end, 0.30)),
                  ((0.55 * t_end, 0.70), (0.40 * t_end, 0.24)),
                  ((0.35 * t_end, 0.10), (0.30 * t_end, 0.20))]
    layouts_2d = [((0.45 * t_end, 0.35, 0.45), (0.45 * t_end, 0.30, 0.32)),
                  ((0.55 * t_end, 0.70, 0.20), (0.40 * t_end, 0.24, 0.28)),
                  ((0.35 * t_end, 0.15, 0.75), (0.30 * t_end, 0.20, 0.22))]
    layouts = layouts_1d if mesh.n == 1 else layouts_2d
    if count > len(layouts):
        raise ValueError("at most %d standard test functions" % len(layouts))
    return tuple(SmoothBumpTestFunction(c, r) for c, r in layouts[:count])


# ---------------------------------------------------------------------------
# Global space-time inequality: volume term against the three error sums.

@dataclass(frozen=True)
class GlobalInequalityReport:
    """Weak-form entropy production split into its three discrete errors."""

    lhs: float
    a_term: float
    b_term: float
    c_term: float
    tol: float

    @property
    def bound(self) -> float:
        return self.a_term + self.b_term + self.c_term

    @property
    def slack(self) -> float:
        return self.bound - self.lhs

    @property
    def satisfied(self) -> bool:
        return self.lhs <= self.bound + self.tol


def _psi_support_check(mesh: FoliatedMesh, psi, quad: QuadratureRule):
    for s in (mesh.num_slabs - 2, mesh.num_slabs - 1):
        view = mesh.slabs[s]
        arr = view.arrays()
        pts, _ = view.volume_quadrature(quad)
        worst = max(float(np.max(np.abs(psi.value(pts)))),
                    float(np.max(np.abs(psi.value(arr.lo_pts)))),
                    float(np.max(np.abs(psi.value(arr.up_pts)))),
                    float(np.max(np.abs(psi.value(arr.v_pts)))))
        if worst > 0.0:
            raise ValueError(
                "test function must vanish on the last two slabs; found %.3g "
                "on slab %d" % (worst, s))


def global_inequality_terms(trajectory: Trajectory, psi, entropy):
    """Volume entropy production of the march tested against psi, with the
    three mesh-scale error sums that bound it.

    lhs collects minus the volume integral of d psi wedge Omega(u) over
    every prism plus the initial-slice pairing with psi; the bound splits
    into the update convexity defect weighted by psi oscillation (A), the
    vertical-face oscillation pairing (B), and the upper-face oscillation
    pairing (C).  Returns a GlobalInequalityReport; psi must be nonnegative
    and vanish on the last two slabs.
    """
    mesh = trajectory.mesh
    quad = trajectory.config.quad or default_quadrature()
    amb = mesh.n + 1
    _psi_support_check(mesh, psi, quad)
    vol_term = 0.0
    init_term = 0.0
    a_term = 0.0
    b_term = 0.0
    c_term = 0.0
    for s in range(mesh.num_slabs):
        view = mesh.slabs[s]
        tpl = view.template
        arr = view.arrays()
        u = trajectory.states[s].values
        u_next = trajectory.states[s + 1].values
        tilde = _require_intermediates(trajectory, s)
        m_up = mesh.measures(s, "upper")

        # Volume pairing with the exact derivative of psi.
        pts, wts = view.volume_quadrature(quad)
        grad = psi.gradient(pts)
        if np.any(psi.value(pts) < 0.0):
            raise ValueError("test function must be nonnegative")
        integ = 0.0
        for alpha in range(amb):
            om = entropy.omega_component_values(alpha, u[:, None], pts)
            integ = integ + (-1.0) ** alpha * grad[..., alpha] * om
        vol_term += float(np.sum(integ * wts))

        if s == 0:
            psi_lo = psi.value(arr.lo_pts)
            node_int = entropy.omega_face_values_weighted(
                arr.lo_pts, arr.lo_min, arr.w_space, u, psi_lo)
            init_term += float(np.sum(node_int))

        # Face averages of psi under the reference area weights.
        aw = tpl.v_area_w
        aw_tot = np.sum(aw, axis=1)
        psi_face = np.sum(psi.value(arr.v_pts) * aw, axis=1) / aw_tot
        w_slot = aw_tot[tpl.elem_faces]
        psi_elem = (np.sum(w_slot * psi_face[tpl.elem_faces], axis=1)
                    / np.sum(w_slot, axis=1))

        o_tilde = entropy.omega_face_values(arr.up_pts, arr.up_min, arr.w_space,
                                            tilde.T).T / m_up[:, None]
        o_next = entropy.omega_face_values(arr.up_pts, arr.up_min, arr.w_space,
                                           u_next) / m_up
        a_term += float(np.sum(
            m_up[:, None] / tpl.n_vertical[:, None]
            * (psi_elem[:, None] - psi_face[tpl.elem_faces])
            * (o_tilde - o_next[:, None])))

        psi_v_nodes = psi.value(arr.v_pts)
        for slot in range(tpl.elem_faces.shape[1]):
            f = tpl.elem_faces[:, slot]
            scale = psi_face[f][:, None] - psi_v_nodes[f]
            vals = entropy.omega_face_values_weighted(
                arr.v_pts[f], arr.v_min[f], arr.w_vert, u, scale)
            b_term += float(np.sum(tpl.elem_signs[:, slot] * vals))

        scale_up = psi_elem[:, None] - psi.value(arr.up_pts)
        hi_next = entropy.omega_face_values_weighted(
            arr.up_pts, arr.up_min, arr.w_space, u_next, scale_up)
        hi_prev = entropy.omega_face_values_weighted(
            arr.up_pts, arr.up_min, arr.w_space, u, scale_up)
        c_term += -float(np.sum(hi_next - hi_prev))

    lhs = -vol_term - init_term
    scale = 1.0 + abs(lhs) + abs(a_term) + abs(b_term) + abs(c_term)
    return GlobalInequalityReport(lhs=lhs, a_term=a_term, b_term=b_term,
                                  c_term=c_term,
                                  tol=GLOBAL_INEQUALITY_TOL * scale)


# ---------------------------------------------------------------------------
# Aggregate report for one diagnosed march.

@dataclass
class DiagnosticsReport:
    """Everything the diagnose path measures for one trajectory.

    Residual maxima are per slab over all entropies requested; balance and
    global rows keep their own reports.  rows() flattens to the diagnostics
    CSV layout, aggregates carrying blank slab/element fields.
    """

    entropy_labels: tuple
    face_max: np.ndarray
    face_threshold: float
    element_max: np.ndarray
    element_threshold: float
    balance_pairs: tuple
    balance: tuple
    dissipation: DissipationEstimate | None
    contraction: np.ndarray | None
    global_terms: tuple
    face_argmax: tuple = ()
    element_argmax: tuple = ()

    @property
    def all_finite(self) -> bool:
        vals = [self.face_max, self.element_max]
        if self.contraction is not None:
            vals.append(self.contraction)
        return all(bool(np.all(np.isfinite(v))) for v in vals)

    @property
    def passed(self) -> bool:
        ok = self.all_finite
        ok = ok and bool(np.all(self.face_max <= self.face_threshold))
        ok = ok and bool(np.all(self.element_max <= self.element_threshold))
        ok = ok and all(r.satisfied for r in self.balance)
        ok = ok and all(r.satisfied for r in self.global_terms)
        if self.contraction is not None and len(self.contraction) > 1:
            scale = CONTRACTION_TOL * (1.0 + float(self.contraction[0]))
            ok = ok and bool(np.all(np.diff(self.contraction) <= scale))
        return ok

    def rows(self):
        out = []
        for s, v in enumerate(self.face_max):
            k = self.face_argmax[s] if self.face_argmax else ""
            out.append(["face_residual", s, k, v, self.face_threshold,
                        v <= self.face_threshold])
        for s, v in enumerate(self.element_max):
            k = self.element_argmax[s] if self.element_argmax else ""
            out.append(["element_residual", s, k, v, self.element_threshold,
                        v <= self.element_threshold])
        for (i, j), rep in zip(self.balance_pairs, self.balance):
            out.append(["balance_slack[%d,%d]" % (i, j), j, "", rep.slack,
                        -rep.tol, rep.satisfied])
        if self.dissipation is not None:
            out.append(["dissipation_sum", "", "", self.dissipation.lhs_sum,
                        "", True])
            out.append(["dissipation_ratio", "", "", self.dissipation.ratio,
                        "", np.isfinite(self.dissipation.ratio)])
        if self.contraction is not None:
            for s, v in enumerate(self.contraction):
                ok = True
                if s:
                    scale = CONTRACTION_TOL * (1.0 + float(self.contraction[0]))
                    ok = v <= self.contraction[s - 1] + scale
                out.append(["contraction", s, "", v, "", ok])
        for g, rep in enumerate(self.global_terms):
            out.append(["global_lhs[%d]" % g, "", "", rep.lhs, rep.bound + rep.tol,
                        rep.satisfied])
            out.append(["global_A[%d]" % g, "", "", rep.a_term, "", True])
            out.append(["global_B[%d]" % g, "", "", rep.b_term, "", True])
            out.append(["global_C[%d]" % g, "", "", rep.c_term, "", True])
        return out
