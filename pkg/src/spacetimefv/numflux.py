"""Total discrete flux schemes on vertical faces and their property checks.

A scheme assigns to each vertical face a two-state numerical flux
q(ubar, vbar) approximating the pullback integral of omega across the face,
with three axioms: consistency q(u, u) = Phi(u) where Phi is the total face
flux, conservation (the two sides sum to zero), and monotonicity
(nondecreasing in the first state, nonincreasing in the second).

All evaluation is canonical-side: each face carries one stored orientation,
q is computed once per face from the plus side, and the minus side uses the
exact negation.  Since both schemes are odd under flipping the face
orientation, bitwise conservation holds by construction and the property
checker verifies the formula-level identity through an explicitly flipped
context.

The Godunov extremum search caches, per face, the interior stationary
states of Phi: grid minima/maxima on a fixed state grid are refined by
golden-section to 1e-12.  Each evaluation then compares the interval
endpoints against the cached interior candidates, so per-pair cost is flat.
Faces whose flux derivative has a fixed sign on the sampled state grid are
certified monotone and skip the grid entirely.  Fluxes are assumed to have
finitely many isolated stationary states resolved at the grid spacing.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .forms import FacePatch, FluxField, QuadratureRule, default_quadrature, form_integral
from .mesh import FoliatedMesh, SlabView, VerticalFaceRef

__all__ = [
    "GODUNOV_GRID_POINTS",
    "LF_MARGIN_FACTOR",
    "SlabFluxContext",
    "slab_flux_context",
    "patch_flux_context",
    "BoundFace",
    "bound_face",
    "TotalFluxScheme",
    "LaxFriedrichsScheme",
    "GodunovScheme",
    "make_scheme",
    "kruzkov_numerical_flux",
    "kruzkov_face_flux",
    "FluxPropertyReport",
    "check_flux_properties",
    "MeshFluxCertificate",
    "check_scheme_on_mesh",
    "FLUX_REPORT_HEADER",
]

GODUNOV_GRID_POINTS = 2048
LF_MARGIN_FACTOR = 1.1
LAMBDA_GRID_POINTS = 64
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
MONOTONE_SECANT_STEP = 1e-3


class SlabFluxContext:
    """Stacked vertical-face geometry with lazy per-face state grids.

    points (F, m, n+1), minors (F, m, n+1) and weights (m,) define the
    canonical-orientation pullback integral of every face in the batch.
    State arguments broadcast with the face axis last: phi(u) accepts u of
    shape (..., F) or a scalar.
    """

    def __init__(self, flux: FluxField, points, minors, weights, label: str = ""):
        self.flux = flux
        self.points = np.asarray(points, dtype=float)
        self.minors = np.asarray(minors, dtype=float)
        self.weights = np.asarray(weights, dtype=float)
        self.label = label
        self._flip: SlabFluxContext | None = None
        self._dphi_bounds: tuple | None = None
        self._stationary: tuple | None = None

    @property
    def num_faces(self) -> int:
        return self.points.shape[0]

    def flipped(self) -> "SlabFluxContext":
        """Same faces with the opposite orientation; total fluxes negate."""
        if self._flip is None:
            other = SlabFluxContext(self.flux, self.points, -self.minors,
                                    self.weights, self.label + "|flipped")
            other._flip = self
            self._flip = other
        return self._flip

    def _as_face_axis(self, u):
        u = np.asarray(u, dtype=float)
        if u.ndim == 0:
            u = u[None]
        return u

    def phi(self, u):
        """Total face flux Phi(u) = integral of i*omega(u); shape (..., F)."""
        u = self._as_face_axis(u)
        return form_integral(self.flux.component_fn, u[..., None], self.points,
                             self.minors, self.weights)

    def dphi(self, u):
        """State derivative of the total face flux; shape (..., F)."""
        u = self._as_face_axis(u)
        return form_integral(self.flux.component_du_fn, u[..., None], self.points,
                             self.minors, self.weights)

    def phi_at(self, face_idx, u):
        """Phi on a gathered batch: face_idx (B,) and u (B,) give (B,)."""
        return form_integral(self.flux.component_fn, np.asarray(u, float)[:, None],
                             self.points[face_idx], self.minors[face_idx], self.weights)

    def dphi_bounds(self):
        """Per-face (min, max, sup|.|) of dPhi on the sampled state grid."""
        if self._dphi_bounds is None:
            lo, hi = self.flux.u_range
            grid = np.linspace(lo, hi, LAMBDA_GRID_POINTS)
            vals = self.dphi(grid[:, None])
            self._dphi_bounds = (np.min(vals, axis=0), np.max(vals, axis=0),
                                 np.max(np.abs(vals), axis=0))
        return self._dphi_bounds

    def dphi_sup(self):
        return self.dphi_bounds()[2]

    def stationary_points(self):
        """Interior stationary states of Phi per face, as NaN-padded (F, K).

        Returns (u_star, phi_star).  Grid-interior extrema of Phi over
        u_range are bracketed on a GODUNOV_GRID_POINTS grid and refined by
        golden-section; faces with single-signed dPhi on the sampled grid
        are monotone and contribute none.
        """
        if self._stationary is None:
            F = self.num_faces
            dmin, dmax, _ = self.dphi_bounds()
            need = ~((dmin > 0.0) | (dmax < 0.0))
            buckets: list[list[tuple[float, float]]] = [[] for _ in range(F)]
            idx = np.nonzero(need)[0]
            if idx.size:
                lo, hi = self.flux.u_range
                gu = np.linspace(lo, hi, GODUNOV_GRID_POINTS)
                faces, b_lo, b_hi, signs = [], [], [], []
                chunk = max(1, 4_000_000 // (GODUNOV_GRID_POINTS * self.points.shape[1]))
                for start in range(0, idx.size, chunk):
                    sub = idx[start:start + chunk]
                    vals = form_integral(self.flux.component_fn, gu[:, None, None],
                                         self.points[sub][None], self.minors[sub][None],
                                         self.weights)
                    for j, f in enumerate(sub):
                        col = vals[:, j]
                        for sgn in (1.0, -1.0):
                            y = sgn * col
                            # Weak right-hand comparison: an extremum between
                            # two symmetric grid nodes ties them exactly and
                            # would evade a doubly strict test.
                            mins = np.nonzero((y[1:-1] < y[:-2]) & (y[1:-1] <= y[2:]))[0] + 1
                            for i in mins:
                                faces.append(f)
                                b_lo.append(gu[i - 1])
                                b_hi.append(gu[i + 1])
                                signs.append(sgn)
                if faces:
                    fidx = np.asarray(faces, dtype=int)
                    a = np.asarray(b_lo)
                    b = np.asarray(b_hi)
                    sg = np.asarray(signs)
                    span = hi - lo
                    tol = 1e-12 * (1.0 + span)
                    width = float(np.max(b - a))
                    n_iter = min(120, max(1, math.ceil(math.log(tol / width)
                                                       / math.log(GOLDEN))))
                    for _ in range(n_iter):
                        d = GOLDEN * (b - a)
                        x1 = b - d
                        x2 = a + d
                        f1 = sg * self.phi_at(fidx, x1)
                        f2 = sg * self.phi_at(fidx, x2)
                        keep_low = f1 < f2
                        b = np.where(keep_low, x2, b)
                        a = np.where(keep_low, a, x1)
                    ustar = 0.5 * (a + b)
                    pstar = self.phi_at(fidx, ustar)
                    for f, u_s, p_s in zip(fidx, ustar, pstar):
                        buckets[f].append((float(u_s), float(p_s)))
            K = max((len(bkt) for bkt in buckets), default=0)
            u_out = np.full((F, max(K, 1)), np.nan)
            p_out = np.full((F, max(K, 1)), np.nan)
            for f, bkt in enumerate(buckets):
                for k, (u_s, p_s) in enumerate(bkt):
                    u_out[f, k] = u_s
                    p_out[f, k] = p_s
            self._stationary = (u_out, p_out) if K > 0 else (u_out[:, :0], p_out[:, :0])
        return self._stationary


def slab_flux_context(flux: FluxField, view: SlabView,
                      quad: QuadratureRule | None = None,
                      faces=None) -> SlabFluxContext:
    """Context over the vertical faces of one slab, canonical orientation."""
    arr = view.arrays()
    pts, mins = arr.v_pts, arr.v_min
    if faces is not None:
        sel = np.atleast_1d(np.asarray(faces, dtype=int))
        pts, mins = pts[sel], mins[sel]
    return SlabFluxContext(flux, pts, mins, arr.w_vert, label="slab=%d" % view.index)


def patch_flux_context(flux: FluxField, patches, quad: QuadratureRule | None = None) -> SlabFluxContext:
    """Context over standalone face patches (all of the same reference dim)."""
    if isinstance(patches, FacePatch):
        patches = [patches]
    geoms = [p.geometry(quad) for p in patches]
    pts = np.stack([g.points for g in geoms])
    mins = np.stack([g.minors for g in geoms])
    return SlabFluxContext(flux, pts, mins, geoms[0].weights, label="patches")


@dataclass(frozen=True)
class BoundFace:
    """One vertical face bound to the outward orientation of its owner element."""

    ctx: SlabFluxContext
    ref: VerticalFaceRef | None = None

    def flipped(self) -> "BoundFace":
        ref = self.ref
        if ref is not None:
            ref = VerticalFaceRef(ref.slab, ref.face, ref.neighbor, ref.element,
                                  -ref.sign)
        return BoundFace(ctx=self.ctx.flipped(), ref=ref)

    @property
    def label(self) -> str:
        if self.ref is None:
            return self.ctx.label
        return "slab=%d face=%d elem=%d" % (self.ref.slab, self.ref.face,
                                            self.ref.element)


def bound_face(flux: FluxField, mesh: FoliatedMesh, ref: VerticalFaceRef,
               quad: QuadratureRule | None = None) -> BoundFace:
    """Bind one mesh face to the outward orientation of ref.element."""
    ctx = slab_flux_context(flux, mesh.slabs[ref.slab], quad, faces=[ref.face])
    if ref.sign < 0:
        ctx = ctx.flipped()
    return BoundFace(ctx=ctx, ref=ref)


class TotalFluxScheme(ABC):
    """Two-state total flux family on vertical faces."""

    name: str = ""

    @abstractmethod
    def face_flux(self, ctx: SlabFluxContext, a, b):
        """q per face with a the plus-side state, b the minus-side; (..., F)."""

    def evaluate(self, face: BoundFace, ubar: float, vbar: float) -> float:
        """Scalar q(ubar, vbar) on a bound face, ubar the owner's trace."""
        out = self.face_flux(face.ctx, np.asarray([float(ubar)]),
                             np.asarray([float(vbar)]))
        return float(np.ravel(out)[0])

    def evaluate_many(self, face: BoundFace, u, v):
        """Vector of q values on one bound face: u, v of shape (S,)."""
        u = np.asarray(u, dtype=float)[:, None]
        v = np.asarray(v, dtype=float)[:, None]
        return self.face_flux(face.ctx, u, v)[:, 0]


class LaxFriedrichsScheme(TotalFluxScheme):
    """Central flux plus graded dissipation.

    q(a, b) = (Phi(a) + Phi(b)) / 2 + (lambda / 2)(a - b) with per-face
    lambda = LF_MARGIN_FACTOR * sup |dPhi| on the sampled state grid.
    lambda_scale rescales lambda; values below 1 void the monotonicity
    guarantee and exist for fault-injection tests.
    """

    name = "lf"

    def __init__(self, lambda_scale: float = 1.0):
        if lambda_scale <= 0.0:
            raise ValueError("lambda_scale must be positive")
        self.lambda_scale = float(lambda_scale)

    def lam(self, ctx: SlabFluxContext):
        return self.lambda_scale * LF_MARGIN_FACTOR * ctx.dphi_sup()

    def face_flux(self, ctx: SlabFluxContext, a, b):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        return 0.5 * (ctx.phi(a) + ctx.phi(b)) + 0.5 * self.lam(ctx) * (a - b)


class GodunovScheme(TotalFluxScheme):
    """Exact-interval extremum flux.

    q(a, b) = min of Phi on [a, b] if a <= b, else max of Phi on [b, a].
    Extrema come from the interval endpoints and the per-face cache of
    interior stationary states (see SlabFluxContext.stationary_points).
    """

    name = "godunov"

    def face_flux(self, ctx: SlabFluxContext, a, b):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        a, b = np.broadcast_arrays(a, b)
        lo = np.minimum(a, b)
        hi = np.maximum(a, b)
        s = np.where(a <= b, 1.0, -1.0)
        best = np.minimum(s * ctx.phi(lo), s * ctx.phi(hi))
        ustar, pstar = ctx.stationary_points()
        for k in range(ustar.shape[1]):
            uk = ustar[:, k]
            mask = np.isfinite(uk) & (lo < uk) & (uk < hi)
            if np.any(mask):
                cand = s * pstar[:, k]
                best = np.where(mask & (cand < best), cand, best)
        return s * best


def make_scheme(name: str, lambda_scale: float = 1.0) -> TotalFluxScheme:
    if name == "lf":
        return LaxFriedrichsScheme(lambda_scale=lambda_scale)
    if name == "godunov":
        return GodunovScheme()
    raise ValueError("unknown scheme %r; choose 'lf' or 'godunov'" % name)


def kruzkov_numerical_flux(scheme: TotalFluxScheme, face: BoundFace,
                           ubar: float, vbar: float, c: float) -> float:
    """Two-state entropy flux Q(u, v, c) = q(u max c, v max c) - q(u min c, v min c)."""
    hi = scheme.evaluate(face, max(ubar, c), max(vbar, c))
    lo = scheme.evaluate(face, min(ubar, c), min(vbar, c))
    return hi - lo


def kruzkov_face_flux(scheme: TotalFluxScheme, ctx: SlabFluxContext, a, b, c):
    """Vectorized Kruzkov numerical flux on a face batch; shapes (..., F)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    hi = scheme.face_flux(ctx, np.maximum(a, c), np.maximum(b, c))
    lo = scheme.face_flux(ctx, np.minimum(a, c), np.minimum(b, c))
    return hi - lo


# ---------------------------------------------------------------------------
# Property certification

FLUX_REPORT_HEADER = ["property", "face", "u", "v", "residual", "threshold", "pass"]

CONSISTENCY_TOL = 1e-10
CONSERVATION_TOL = 1e-10
MONOTONE_TOL = 1e-8


def _axiom_scan(scheme, ctx, a, b, h):
    """Scaled axiom residuals on sample arrays a, b of shape (S, F).

    Returns (consistency, conservation, secant_own, secant_neighbor), each
    (S, F): the first two are scale-relative magnitudes, the secants are
    one-sided difference quotients with step h.
    """
    pa = ctx.phi(a)
    q_aa = scheme.face_flux(ctx, a, a)
    cons = np.abs(q_aa - pa) / (1.0 + np.abs(pa))
    q = scheme.face_flux(ctx, a, b)
    q_flip = scheme.face_flux(ctx.flipped(), b, a)
    consv = np.abs(q + q_flip) / (1.0 + np.abs(q))
    d_own = (scheme.face_flux(ctx, a + h, b) - q) / h
    d_nb = (scheme.face_flux(ctx, a, b + h) - q) / h
    return cons, consv, d_own, d_nb


@dataclass
class FluxPropertyReport:
    """Axiom residuals of one scheme on one bound face over random samples."""

    scheme: str
    face_label: str
    n_samples: int
    seed: int
    consistency_max: float
    conservation_max: float
    secant_own_min: float
    secant_neighbor_max: float
    witnesses: list = field(default_factory=list)
    consistency_tol: float = CONSISTENCY_TOL
    conservation_tol: float = CONSERVATION_TOL
    monotone_tol: float = MONOTONE_TOL

    @property
    def consistency_ok(self) -> bool:
        return self.consistency_max <= self.consistency_tol

    @property
    def conservation_ok(self) -> bool:
        return self.conservation_max <= self.conservation_tol

    @property
    def monotonicity_ok(self) -> bool:
        return (self.secant_own_min >= -self.monotone_tol
                and self.secant_neighbor_max <= self.monotone_tol)

    @property
    def passed(self) -> bool:
        return self.consistency_ok and self.conservation_ok and self.monotonicity_ok

    def rows(self):
        """CSV rows per property: worst witness first, then recorded failures."""
        out = [
            ["consistency", self.face_label, "", "", self.consistency_max,
             self.consistency_tol, self.consistency_ok],
            ["conservation", self.face_label, "", "", self.conservation_max,
             self.conservation_tol, self.conservation_ok],
            ["monotone-own", self.face_label, "", "", self.secant_own_min,
             -self.monotone_tol, self.secant_own_min >= -self.monotone_tol],
            ["monotone-neighbor", self.face_label, "", "", self.secant_neighbor_max,
             self.monotone_tol, self.secant_neighbor_max <= self.monotone_tol],
        ]
        for prop, u, v, residual in self.witnesses:
            out.append([prop, self.face_label, u, v, residual, "", False])
        return out


def check_flux_properties(scheme: TotalFluxScheme, face: BoundFace,
                          n_samples: int = 1000, seed: int = 0) -> FluxPropertyReport:
    """Certify the three flux axioms on one face with randomized state pairs.

    Consistency and conservation residuals are scale-relative with
    tolerance 1e-10; monotonicity uses one-sided secants with tolerance
    1e-8 on the allowed sign violation.  Failures are recorded with their
    witnessing state pair.
    """
    flux = face.ctx.flux
    lo, hi = flux.u_range
    h = MONOTONE_SECANT_STEP * (hi - lo)
    rng = np.random.default_rng(seed)
    a = rng.uniform(lo, hi - h, (n_samples, 1))
    b = rng.uniform(lo, hi - h, (n_samples, 1))
    cons, consv, d_own, d_nb = _axiom_scan(scheme, face.ctx, a, b, h)
    witnesses = []

    def record(prop, mask, values):
        bad = np.nonzero(mask[:, 0])[0]
        for i in bad[:16]:
            witnesses.append((prop, float(a[i, 0]), float(b[i, 0]), float(values[i, 0])))

    record("consistency", cons > CONSISTENCY_TOL, cons)
    record("conservation", consv > CONSERVATION_TOL, consv)
    record("monotone-own", d_own < -MONOTONE_TOL, d_own)
    record("monotone-neighbor", d_nb > MONOTONE_TOL, d_nb)
    return FluxPropertyReport(
        scheme=scheme.name, face_label=face.label, n_samples=n_samples, seed=seed,
        consistency_max=float(np.max(cons)), conservation_max=float(np.max(consv)),
        secant_own_min=float(np.min(d_own)), secant_neighbor_max=float(np.max(d_nb)),
        witnesses=witnesses)


@dataclass
class MeshFluxCertificate:
    """Aggregated axiom scan of one scheme over vertical faces of a mesh."""

    scheme: str
    n_samples: int
    seed: int
    faces_checked: int
    consistency_max: float
    conservation_max: float
    secant_own_min: float
    secant_neighbor_max: float
    worst: dict
    witnesses: list
    passed: bool

    def rows(self):
        out = []
        for prop, (slab, f, value, threshold, ok) in self.worst.items():
            out.append([prop, "slab=%d face=%d" % (slab, f), "", "", value, threshold, ok])
        for prop, slab, f, u, v, residual in self.witnesses:
            out.append([prop, "slab=%d face=%d" % (slab, f), u, v, residual, "", False])
        return out


def check_scheme_on_mesh(scheme: TotalFluxScheme, mesh: FoliatedMesh,
                         n_samples: int = 1000, seed: int = 0,
                         slabs=None) -> MeshFluxCertificate:
    """Run the axiom scan over every vertical face of the chosen slabs.

    Samples are drawn per face; each slab is scanned as one vectorized
    batch.  The certificate keeps the worst residual per property with its
    face, plus capped per-face failure witnesses.
    """
    flux = mesh.flux
    lo, hi = flux.u_range
    h = MONOTONE_SECANT_STEP * (hi - lo)
    if slabs is None:
        slabs = range(mesh.num_slabs)
    faces_checked = 0
    # per property: (extreme value, slab, face); maxima for the first three,
    # minimum for the own-state secant.
    ext = {"consistency": [-math.inf, 0, 0], "conservation": [-math.inf, 0, 0],
           "monotone-own": [math.inf, 0, 0], "monotone-neighbor": [-math.inf, 0, 0]}
    witnesses = []
    for i in slabs:
        view = mesh.slabs[i]
        ctx = slab_flux_context(flux, view, mesh.quad)
        F = ctx.num_faces
        faces_checked += F
        rng = np.random.default_rng(seed + i)
        a = rng.uniform(lo, hi - h, (n_samples, F))
        b = rng.uniform(lo, hi - h, (n_samples, F))
        cons, consv, d_own, d_nb = _axiom_scan(scheme, ctx, a, b, h)
        for prop, vals, pick_max in (("consistency", cons, True),
                                     ("conservation", consv, True),
                                     ("monotone-own", d_own, False),
                                     ("monotone-neighbor", d_nb, True)):
            v = float(np.max(vals) if pick_max else np.min(vals))
            if (v > ext[prop][0]) if pick_max else (v < ext[prop][0]):
                f = int((np.argmax(vals) if pick_max else np.argmin(vals)) % F)
                ext[prop] = [v, i, f]
        for prop, vals, mask in (("consistency", cons, cons > CONSISTENCY_TOL),
                                 ("conservation", consv, consv > CONSERVATION_TOL),
                                 ("monotone-own", d_own, d_own < -MONOTONE_TOL),
                                 ("monotone-neighbor", d_nb, d_nb > MONOTONE_TOL)):
            if len(witnesses) >= 64:
                break
            bad = np.argwhere(mask)
            for s_i, f_i in bad[:4]:
                witnesses.append((prop, i, int(f_i), float(a[s_i, f_i]),
                                  float(b[s_i, f_i]), float(vals[s_i, f_i])))
    cmax, vmax = ext["consistency"][0], ext["conservation"][0]
    own_min, nb_max = ext["monotone-own"][0], ext["monotone-neighbor"][0]
    worst = {
        "consistency": (ext["consistency"][1], ext["consistency"][2], cmax,
                        CONSISTENCY_TOL, cmax <= CONSISTENCY_TOL),
        "conservation": (ext["conservation"][1], ext["conservation"][2], vmax,
                         CONSERVATION_TOL, vmax <= CONSERVATION_TOL),
        "monotone-own": (ext["monotone-own"][1], ext["monotone-own"][2], own_min,
                         -MONOTONE_TOL, own_min >= -MONOTONE_TOL),
        "monotone-neighbor": (ext["monotone-neighbor"][1], ext["monotone-neighbor"][2],
                              nb_max, MONOTONE_TOL, nb_max <= MONOTONE_TOL),
    }
    passed = (cmax <= CONSISTENCY_TOL and vmax <= CONSERVATION_TOL
              and own_min >= -MONOTONE_TOL and nb_max <= MONOTONE_TOL)
    return MeshFluxCertificate(scheme=scheme.name, n_samples=n_samples, seed=seed,
                               faces_checked=faces_checked, consistency_max=cmax,
                               conservation_max=vmax, secant_own_min=float(own_min),
                               secant_neighbor_max=float(nb_max), worst=worst,
                               witnesses=witnesses, passed=passed)
