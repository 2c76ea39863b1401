"""Flux fields of differential n-forms and their hypersurface integrals.

A scalar conservation law on an (n+1)-dimensional chart is written as
d(omega(u)) = 0 where omega(u) is a state-parametrized field of n-forms.
In the coordinate frame we expand

    omega(u) = sum_a omega^a(u, x) * (dx^0 ^ ... ^ dx^(a-1) ^ dx^(a+1) ^ ... ^ dx^n)

so that d(omega(u)) = sum_a (-1)^a d_a omega^a(u) * dvol.  Everything the
solver needs reduces to pullback integrals of such fields over oriented
face patches: face measures, averaged fluxes and their inverses, entropy
flux fields built from convex entropies, and the Kruzkov two-state forms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "DEFAULT_QUAD_POINTS",
    "EvaluationError",
    "DegenerateFaceError",
    "InversionRangeError",
    "InversionConvergenceError",
    "QuadratureRule",
    "default_quadrature",
    "FluxField",
    "FacePatch",
    "FaceGeometry",
    "EntropyFluxField",
    "pullback_integral",
    "pullback_du_integral",
    "face_measure",
    "averaged_flux",
    "averaged_flux_slope",
    "invert_averaged_flux",
    "entropy_flux_from_U",
    "kruzkov_entropy_form",
    "check_flux_derivative",
    "check_geometry_compatible",
]

DEFAULT_QUAD_POINTS = 5

# Derivative checks use central differences at this relative step.
FD_STEP_SCALE = 1e-5


class EvaluationError(ValueError):
    """A flux component evaluated to a non-finite value."""

    def __init__(self, alpha: int, point):
        self.alpha = int(alpha)
        self.point = np.atleast_1d(np.asarray(point, dtype=float))
        super().__init__(
            "flux component %d evaluated non-finite at x=%s"
            % (self.alpha, self.point.tolist())
        )


class DegenerateFaceError(ValueError):
    """Face measure is not strictly positive, so averaging is undefined."""


class InversionRangeError(ValueError):
    """Averaged-flux inversion target falls outside the admissible bracket."""


class InversionConvergenceError(ValueError):
    """Averaged-flux inversion did not converge within the iteration cap."""


class QuadratureRule:
    """Gauss-Legendre nodes and weights on [0, 1], q points per axis.

    Exact for one-dimensional polynomials up to degree 2q - 1; tensor
    products extend this per axis.  Weights are positive and sum to one.
    """

    def __init__(self, q: int = DEFAULT_QUAD_POINTS):
        if q < 1:
            raise ValueError("quadrature rule needs at least one node, got q=%d" % q)
        x, w = np.polynomial.legendre.leggauss(q)
        self.q = q
        self.nodes = (x + 1.0) * 0.5
        self.weights = w * 0.5
        self._tensor_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def tensor(self, dim: int) -> tuple[np.ndarray, np.ndarray]:
        """Product nodes (q**dim, dim) and weights (q**dim,) on the unit cube."""
        if dim < 1:
            raise ValueError("tensor dimension must be >= 1")
        cached = self._tensor_cache.get(dim)
        if cached is None:
            grids = np.meshgrid(*([self.nodes] * dim), indexing="ij")
            pts = np.stack([g.ravel() for g in grids], axis=-1)
            w = self.weights
            for _ in range(dim - 1):
                w = np.multiply.outer(w, self.weights)
            cached = (pts, w.ravel())
            self._tensor_cache[dim] = cached
        return cached

    def __repr__(self):
        return "QuadratureRule(q=%d)" % self.q


_DEFAULT_QUAD = QuadratureRule(DEFAULT_QUAD_POINTS)


def default_quadrature() -> QuadratureRule:
    return _DEFAULT_QUAD


@dataclass(frozen=True)
class FluxField:
    """Chart components of a state-parametrized field of n-forms.

    component_fn(alpha, u, x) is the coefficient omega^alpha multiplying the
    frame n-form that omits dx^alpha; component_du_fn is its derivative in
    the state u.  Both must broadcast, with u of shape (...,) against chart
    points x of shape (..., n+1); x[..., 0] is the time coordinate.
    u_range is the closed interval of admissible states.  Constructors that
    start from classical (density, flux) data f^a must store
    omega^a = (-1)^a f^a so the law reads d_t f^0 + sum_i d_i f^i = 0.
    """

    dimension: int
    component_fn: Callable
    component_du_fn: Callable
    u_range: tuple[float, float]
    geometry_compatible: bool = False

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("slice dimension must be >= 1")
        lo, hi = self.u_range
        if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
            raise ValueError("u_range must be a finite nondegenerate interval")

    @property
    def ambient_dim(self) -> int:
        return self.dimension + 1


@dataclass(frozen=True)
class FaceGeometry:
    """Quadrature data of a face patch: chart points, oriented minors, weights.

    minors[..., a] is the determinant of the parametrization Jacobian with
    row a removed, multiplied by the patch orientation sign; the pullback of
    omega(u) integrates as sum_a omega^a(u, points) * minors[..., a].
    """

    points: np.ndarray
    minors: np.ndarray
    weights: np.ndarray


def _jacobian_minors(jac: np.ndarray) -> np.ndarray:
    """Row-deleted determinants of a stacked (m, n+1, n) Jacobian."""
    m, amb, k = jac.shape
    if amb != k + 1:
        raise ValueError("face Jacobian must map n reference axes into n+1 chart axes")
    out = np.empty((m, amb))
    for a in range(amb):
        rows = [r for r in range(amb) if r != a]
        sub = jac[:, rows, :]
        if k == 1:
            out[:, a] = sub[:, 0, 0]
        else:
            out[:, a] = np.linalg.det(sub)
    return out


class FacePatch:
    """Oriented parametrized patch of an n-dimensional face in chart coordinates.

    parametrization maps reference points S of shape (m, n) in the unit cube
    to chart points (m, n+1); jacobian returns d(chart)/d(reference) stacked
    as (m, n+1, n).  orientation_sign multiplies the induced orientation of
    the parametrization order.  kind is "spacelike" for faces inside a time
    slice and "vertical" for faces joining two slices.
    """

    SPACELIKE = "spacelike"
    VERTICAL = "vertical"

    def __init__(self, parametrization, jacobian, ref_dim: int, ambient_dim: int,
                 orientation_sign: int = 1, kind: str = SPACELIKE):
        if orientation_sign not in (1, -1):
            raise ValueError("orientation_sign must be +1 or -1")
        if ambient_dim != ref_dim + 1:
            raise ValueError("face patches have codimension one")
        self.parametrization = parametrization
        self.jacobian = jacobian
        self.ref_dim = ref_dim
        self.ambient_dim = ambient_dim
        self.orientation_sign = orientation_sign
        self.kind = kind
        self._geometry_cache: dict[int, FaceGeometry] = {}

    @classmethod
    def affine(cls, origin, axes, orientation_sign: int = 1, kind: str = SPACELIKE):
        """Patch s -> origin + s @ axes with constant Jacobian axes.T."""
        origin = np.asarray(origin, dtype=float)
        axes = np.atleast_2d(np.asarray(axes, dtype=float))
        k, amb = axes.shape
        if origin.shape != (amb,):
            raise ValueError("origin and axes disagree on the ambient dimension")
        jac_const = axes.T.copy()

        def param(s):
            return origin + np.asarray(s, dtype=float) @ axes

        def jac(s):
            m = np.asarray(s).shape[0]
            return np.broadcast_to(jac_const, (m, amb, k))

        return cls(param, jac, k, amb, orientation_sign, kind)

    @classmethod
    def interval(cls, t: float, a: float, b: float, orientation_sign: int = 1):
        """Spacelike 1d face {t} x [a, b]."""
        return cls.affine([t, a], [[0.0, b - a]], orientation_sign, cls.SPACELIKE)

    @classmethod
    def segment(cls, p0, p1, orientation_sign: int = 1):
        """Vertical 1d face from chart point p0=(t0,x0) to p1=(t1,x1)."""
        p0 = np.asarray(p0, dtype=float)
        p1 = np.asarray(p1, dtype=float)
        return cls.affine(p0, [p1 - p0], orientation_sign, cls.VERTICAL)

    @classmethod
    def rectangle(cls, t: float, xspan, yspan, orientation_sign: int = 1):
        """Spacelike 2d face {t} x [x0,x1] x [y0,y1]."""
        (x0, x1), (y0, y1) = xspan, yspan
        axes = [[0.0, x1 - x0, 0.0], [0.0, 0.0, y1 - y0]]
        return cls.affine([t, x0, y0], axes, orientation_sign, cls.SPACELIKE)

    @classmethod
    def vertical_strip(cls, axis: int, value: float, tspan, span, orientation_sign: int = 1):
        """Vertical 2d face at fixed x (axis=1) or fixed y (axis=2)."""
        (t0, t1), (s0, s1) = tspan, span
        if axis == 1:
            origin = [t0, value, s0]
            axes = [[t1 - t0, 0.0, 0.0], [0.0, 0.0, s1 - s0]]
        elif axis == 2:
            origin = [t0, s0, value]
            axes = [[t1 - t0, 0.0, 0.0], [0.0, s1 - s0, 0.0]]
        else:
            raise ValueError("axis must be a spatial index, 1 or 2")
        return cls.affine(origin, axes, orientation_sign, cls.VERTICAL)

    def with_orientation(self, sign: int) -> "FacePatch":
        return FacePatch(self.parametrization, self.jacobian, self.ref_dim,
                         self.ambient_dim, sign, self.kind)

    def geometry(self, quad: QuadratureRule | None = None) -> FaceGeometry:
        quad = quad or _DEFAULT_QUAD
        cached = self._geometry_cache.get(quad.q)
        if cached is None:
            s, w = quad.tensor(self.ref_dim)
            pts = np.asarray(self.parametrization(s), dtype=float)
            jac = np.asarray(self.jacobian(s), dtype=float)
            minors = _jacobian_minors(jac) * float(self.orientation_sign)
            cached = FaceGeometry(points=pts, minors=minors, weights=w)
            self._geometry_cache[quad.q] = cached
        return cached


def form_values(component_fn, u, points, minors) -> np.ndarray:
    """Pullback integrand sum_a omega^a(u, x) * minors[..., a] at face nodes.

    u must broadcast against points[..., 0]; a non-finite component raises
    EvaluationError carrying the offending (alpha, point).
    """
    amb = points.shape[-1]
    acc = None
    for a in range(amb):
        vals = np.asarray(component_fn(a, u, points), dtype=float)
        if not np.all(np.isfinite(vals)):
            bad = np.argwhere(~np.isfinite(np.broadcast_to(vals, np.broadcast_shapes(vals.shape, points[..., 0].shape))))
            first = tuple(bad[0])
            raise EvaluationError(a, np.broadcast_to(points, np.broadcast_shapes(vals.shape, points[..., 0].shape) + (amb,))[first])
        term = vals * minors[..., a]
        acc = term if acc is None else acc + term
    return acc


def form_integral(component_fn, u, points, minors, weights):
    """Weighted pullback integral over stacked faces; returns shape points[:-2]."""
    vals = form_values(component_fn, u, points, minors)
    return vals @ weights


def pullback_integral(flux: FluxField, face: FacePatch, u: float,
                      quad: QuadratureRule | None = None) -> float:
    """Integral of the pulled-back n-form over the face at frozen state u."""
    g = face.geometry(quad)
    return float(form_integral(flux.component_fn, float(u), g.points, g.minors, g.weights))


def pullback_du_integral(flux: FluxField, face: FacePatch, u: float,
                         quad: QuadratureRule | None = None) -> float:
    """Integral of the pulled-back state derivative of the form at state u."""
    g = face.geometry(quad)
    return float(form_integral(flux.component_du_fn, float(u), g.points, g.minors, g.weights))


def face_measure(flux: FluxField, face: FacePatch,
                 quad: QuadratureRule | None = None) -> float:
    """Face measure: integral of the pulled-back state derivative at u = 0.

    Must be strictly positive on spacelike faces; a nonpositive value means
    the foliation is not adapted to the flux field and raises
    DegenerateFaceError.
    """
    m = pullback_du_integral(flux, face, 0.0, quad)
    if not (m > 0.0):
        raise DegenerateFaceError(
            "face measure %.6g is not positive; hyperbolicity fails on this face" % m
        )
    return m


def averaged_flux(flux: FluxField, face: FacePatch, u: float,
                  quad: QuadratureRule | None = None) -> float:
    """Face-averaged flux: pullback integral normalized by the face measure."""
    return pullback_integral(flux, face, u, quad) / face_measure(flux, face, quad)


def averaged_flux_slope(flux: FluxField, face: FacePatch, u: float,
                        quad: QuadratureRule | None = None,
                        step: float | None = None) -> float:
    """Central finite-difference slope of the averaged flux at state u."""
    h = step if step is not None else FD_STEP_SCALE * (1.0 + abs(u))
    lo = averaged_flux(flux, face, u - h, quad)
    hi = averaged_flux(flux, face, u + h, quad)
    return (hi - lo) / (2.0 * h)


def invert_averaged_flux(flux: FluxField, face: FacePatch, target: float,
                         tol: float = 1e-12, quad: QuadratureRule | None = None,
                         bracket: tuple[float, float] | None = None,
                         max_iter: int = 100, x0: float | None = None) -> float:
    """Solve averaged_flux(u) = target for u on the admissible bracket.

    The bracket defaults to u_range widened by ten percent of its width on
    each side.  Newton steps use the exact state derivative and fall back to
    bisection whenever they leave the bracket; iteration order is fixed so
    results are deterministic.  After the tolerance is met up to two extra
    Newton polish steps are taken while they strictly reduce the residual.
    x0 seeds the iteration; a seed that already meets the tolerance is kept,
    so a fixed point of the update map stays a fixed point bitwise.
    """
    quad = quad or _DEFAULT_QUAD
    measure = face_measure(flux, face, quad)
    if bracket is None:
        lo, hi = flux.u_range
        pad = 0.1 * (hi - lo)
        lo, hi = lo - pad, hi + pad
    else:
        lo, hi = bracket
    g = face.geometry(quad)

    def phi(u):
        return float(form_integral(flux.component_fn, u, g.points, g.minors, g.weights)) / measure

    def dphi(u):
        return float(form_integral(flux.component_du_fn, u, g.points, g.minors, g.weights)) / measure

    f_lo = phi(lo) - target
    f_hi = phi(hi) - target
    if f_lo > 0.0 or f_hi < 0.0:
        raise InversionRangeError(
            "target %.17g outside averaged-flux range [%.17g, %.17g] of the bracket"
            % (target, f_lo + target, f_hi + target)
        )
    u = min(max(0.5 * (lo + hi) if x0 is None else x0, lo), hi)
    f = phi(u) - target
    converged = False
    for _ in range(max_iter):
        if abs(f) <= tol:
            converged = True
            break
        d = dphi(u)
        u_new = u - f / d if d > 0.0 else None
        if u_new is None or not (lo <= u_new <= hi):
            u_new = 0.5 * (lo + hi)
        f_new = phi(u_new) - target
        if f_new > 0.0:
            hi = u_new
        else:
            lo = u_new
        u, f = u_new, f_new
    if not converged and abs(f) > tol:
        raise InversionConvergenceError(
            "averaged-flux inversion stalled at residual %.3g (tol %.3g)" % (abs(f), tol)
        )
    # Polish toward machine residual; keeps long runs conservative.
    for _ in range(2):
        d = dphi(u)
        if d <= 0.0:
            break
        u_try = min(max(u - f / d, lo), hi)
        f_try = phi(u_try) - target
        if abs(f_try) < abs(f):
            u, f = u_try, f_try
        else:
            break
    return float(u)


def kruzkov_entropy_form(flux: FluxField, u, v, alpha: int, x):
    """Two-state Kruzkov form component sgn(u - v) * (omega^a(u,x) - omega^a(v,x))."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    x = np.asarray(x, dtype=float)
    s = np.sign(u - v)
    vals = s * (np.asarray(flux.component_fn(alpha, u, x), dtype=float)
                - np.asarray(flux.component_fn(alpha, v, x), dtype=float))
    if vals.ndim == 0:
        return float(vals)
    return vals


class EntropyFluxField:
    """Entropy flux field of a convex entropy U over a base flux field.

    Components are Omega^a(u, x) = integral_0^u U'(v) * d_u omega^a(v, x) dv,
    evaluated by composite Gauss-Legendre quadrature in v.  The panel count
    adapts by doubling until the result is stable to 1e-12 relative, so the
    cached rule is exact to quadrature accuracy for smooth components.
    """

    def __init__(self, base_flux: FluxField, U_fn, U_du_fn, U_d2_fn=None,
                 panels: int = 4, nodes_per_panel: int = 12, max_panels: int = 64):
        self.base_flux = base_flux
        self.U_fn = U_fn
        self.U_du_fn = U_du_fn
        self.U_d2_fn = U_d2_fn
        self._panels = panels
        self._nodes = nodes_per_panel
        self._max_panels = max_panels
        x, w = np.polynomial.legendre.leggauss(nodes_per_panel)
        self._gl_nodes = (x + 1.0) * 0.5
        self._gl_weights = w * 0.5

    def _v_rule(self, panels: int) -> tuple[np.ndarray, np.ndarray]:
        """Composite rule on [0, 1] with the given panel count."""
        offs = np.arange(panels)[:, None] / panels
        nodes = (offs + self._gl_nodes[None, :] / panels).ravel()
        weights = np.tile(self._gl_weights / panels, panels)
        return nodes, weights

    def _integrate(self, eval_fn, u):
        """Adaptive integral_0^u eval over v, vectorized over the face batch.

        eval_fn(v_nodes, v_weights) must return the weighted sum over the
        scaled node set; u is a scalar or an array scaling the node layout.
        """
        prev = None
        panels = self._panels
        while True:
            nodes, weights = self._v_rule(panels)
            out = eval_fn(nodes, weights)
            if prev is not None:
                scale = 1.0 + np.max(np.abs(out))
                if np.max(np.abs(out - prev)) <= 1e-12 * scale or panels >= self._max_panels:
                    return out
            prev = out
            panels *= 2

    def omega_component(self, alpha: int, u, x):
        """Entropy flux component Omega^a(u, x); broadcasts like component_fn."""
        u_arr = np.asarray(u, dtype=float)
        x_arr = np.asarray(x, dtype=float)
        du = self.base_flux.component_du_fn
        dU = self.U_du_fn

        def run(nodes, weights):
            v = u_arr[..., None] * nodes
            vals = np.asarray(dU(v), dtype=float) * np.asarray(
                du(alpha, v, x_arr[..., None, :]), dtype=float)
            return (vals @ weights) * u_arr

        out = self._integrate(run, u_arr)
        if out.ndim == 0:
            return float(out)
        return out

    def face_integral_values(self, u, points, minors, weights):
        """Pullback integrals of Omega(u) over stacked faces.

        Computed by exchanging the v integral with the face quadrature:
        integral_0^u U'(v) * (sum_a integral_face d_u omega^a(v) ) dv.
        u broadcasts against the stacked face axis points[..., 0, 0].
        """
        u_arr = np.asarray(u, dtype=float)
        du = self.base_flux.component_du_fn
        dU = self.U_du_fn

        def run(nodes, wts):
            v = u_arr[..., None] * nodes                     # (..., p)
            g = form_integral(du, v[..., None], points[..., None, :, :],
                              minors[..., None, :, :], weights)  # (..., p)
            return ((np.asarray(dU(v), dtype=float) * g) @ wts) * u_arr

        return self._integrate(run, u_arr)

    def face_integral(self, face: FacePatch, u: float,
                      quad: QuadratureRule | None = None) -> float:
        """Pullback integral of Omega(u) over a single face patch."""
        g = face.geometry(quad)
        return float(self.face_integral_values(float(u), g.points, g.minors, g.weights))

    def convexity_violation(self, lo: float, hi: float, n: int = 128) -> float:
        """Most negative second difference of U on an n-point grid (>= 0 is convex)."""
        grid = np.linspace(lo, hi, n)
        vals = np.asarray(self.U_fn(grid), dtype=float)
        second = vals[2:] - 2.0 * vals[1:-1] + vals[:-2]
        return float(np.min(second))


def entropy_flux_from_U(flux: FluxField, U_fn, U_du_fn, U_d2_fn=None) -> EntropyFluxField:
    """Build the entropy flux field of a twice differentiable convex entropy."""
    field = EntropyFluxField(flux, U_fn, U_du_fn, U_d2_fn)
    bad = field.convexity_violation(*flux.u_range)
    if bad < -1e-10:
        raise ValueError("entropy is not convex on u_range: second difference %.3g" % bad)
    return field


@dataclass(frozen=True)
class DerivativeCheckReport:
    max_error: float
    threshold: float
    passed: bool
    worst_sample: tuple


def check_flux_derivative(flux: FluxField, samples, tol: float = 1e-6) -> DerivativeCheckReport:
    """Compare component_du_fn with central differences of component_fn.

    samples is an iterable of (u, x) pairs; the step is scaled by 1 + |u|.
    """
    worst = (0.0, None)
    for u, x in samples:
        x = np.asarray(x, dtype=float)
        h = FD_STEP_SCALE * (1.0 + abs(u))
        for a in range(flux.dimension + 1):
            fd = (float(flux.component_fn(a, u + h, x))
                  - float(flux.component_fn(a, u - h, x))) / (2.0 * h)
            err = abs(fd - float(flux.component_du_fn(a, u, x)))
            if err > worst[0]:
                worst = (err, (a, u, tuple(x.tolist())))
    return DerivativeCheckReport(max_error=worst[0], threshold=tol,
                                 passed=worst[0] <= tol, worst_sample=worst[1])


@dataclass(frozen=True)
class GeometryCompatibilityReport:
    max_residual: float
    threshold: float
    passed: bool
    worst_sample: tuple


def check_geometry_compatible(flux: FluxField, samples, h_fd: float = 1e-5) -> GeometryCompatibilityReport:
    """Finite-difference residual of d(omega(u)) = 0 at frozen states.

    The chart expansion gives d(omega(u)) = sum_a (-1)^a d_a omega^a(u) dvol;
    each partial is a central difference with step h_fd.  The pass threshold
    is 1e-6 * (1 + max |partial|) over the sampled set.
    """
    amb = flux.dimension + 1
    worst = (0.0, None)
    deriv_scale = 0.0
    for u, x in samples:
        x = np.asarray(x, dtype=float)
        res = 0.0
        for a in range(amb):
            e = np.zeros(amb)
            e[a] = h_fd
            d = (float(flux.component_fn(a, u, x + e))
                 - float(flux.component_fn(a, u, x - e))) / (2.0 * h_fd)
            deriv_scale = max(deriv_scale, abs(d))
            res += ((-1.0) ** a) * d
        if abs(res) > worst[0]:
            worst = (abs(res), (u, tuple(x.tolist())))
    threshold = 1e-6 * (1.0 + deriv_scale)
    return GeometryCompatibilityReport(max_residual=worst[0], threshold=threshold,
                                       passed=worst[0] <= threshold, worst_sample=worst[1])
