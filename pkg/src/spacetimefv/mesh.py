"""Foliated spacetime meshes made of prism elements between time slices.

A mesh covers [0, T] x N where N is a periodic unit circle (1d slices) or a
periodic unit square (2d slices).  Each slab, the region between two
consecutive slices, is tiled by prisms with one spacelike lower face, one
spacelike upper face and a ring of vertical faces shared with the spatial
neighbors.  Slice spacing is chosen as the largest uniform step that keeps
every element's CFL margin at or below the requested fraction.

Geometry is stored per slab as stacked quadrature arrays (points, oriented
Jacobian minors, weights) so that whole-slab operations vectorize; the
object API (Element, FacePatch) is built on demand from the same data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .forms import (
    DegenerateFaceError,
    FacePatch,
    FluxField,
    QuadratureRule,
    default_quadrature,
    form_integral,
)

__all__ = [
    "MeshConstructionError",
    "SlabTemplate",
    "SlabView",
    "SlabArrays",
    "FoliatedMesh",
    "Element",
    "VerticalFaceRef",
    "MeshValidationReport",
    "HyperbolicityReport",
    "MeshRecipe",
    "RefinementLevel",
    "build_mesh_1d",
    "build_mesh_2d_torus",
    "validate_mesh",
    "validate_hyperbolicity",
    "refinement_sequence",
    "mesh_summary_rows",
    "MESH_SUMMARY_HEADER",
]

MAX_VERTICAL_FACES = 64
MOTION_CAP_FRACTION = 0.25
STATE_GRID_POINTS = 64


class MeshConstructionError(ValueError):
    """The requested foliated mesh cannot be assembled."""


def _check_nk(n_vertical: np.ndarray):
    if np.any(n_vertical > MAX_VERTICAL_FACES):
        k = int(np.argmax(n_vertical))
        raise MeshConstructionError(
            "element %d has %d vertical faces, cap is %d"
            % (k, int(n_vertical[k]), MAX_VERTICAL_FACES)
        )
    if np.any(n_vertical < 2):
        k = int(np.argmin(n_vertical))
        raise MeshConstructionError("element %d has fewer than 2 vertical faces" % k)


def _state_grid(flux: FluxField, n: int = STATE_GRID_POINTS) -> np.ndarray:
    lo, hi = flux.u_range
    return np.linspace(lo, hi, n)


class SlabTemplate:
    """Stacked face geometry of one slab, with time relative to the slab start.

    Spacelike arrays are stacked per element; vertical arrays per unique
    face with a canonical orientation.  face_plus[f] / face_minus[f] are the
    two adjacent elements; the element on the plus side sees the canonical
    orientation as its outward one, the minus side sees its negative.
    """

    def __init__(self, *, n, tau, lo_pts, lo_min, up_pts, up_min, w_space,
                 v_pts, v_min, w_vert, v_area_w, face_plus, face_minus,
                 elem_faces, elem_signs, elem_neighbors, kind, nodes_lo=None,
                 nodes_up=None, xs=None, ys=None):
        self.n = n
        self.tau = tau
        self.lo_pts, self.lo_min = lo_pts, lo_min
        self.up_pts, self.up_min = up_pts, up_min
        self.w_space = w_space
        self.v_pts, self.v_min, self.w_vert = v_pts, v_min, w_vert
        self.v_area_w = v_area_w
        self.face_plus, self.face_minus = face_plus, face_minus
        self.elem_faces, self.elem_signs = elem_faces, elem_signs
        self.elem_neighbors = elem_neighbors
        self.n_vertical = np.full(lo_pts.shape[0], elem_faces.shape[1], dtype=int)
        self.kind = kind
        self.nodes_lo, self.nodes_up = nodes_lo, nodes_up
        self.xs, self.ys = xs, ys
        _check_nk(self.n_vertical)

    @property
    def num_elements(self) -> int:
        return self.lo_pts.shape[0]

    @property
    def num_vertical_faces(self) -> int:
        return self.v_pts.shape[0]

    def spacelike_diameter(self) -> float:
        if self.kind == "torus-2d":
            dx = np.diff(self.xs)
            dy = np.diff(self.ys)
            return float(np.max(np.hypot(dx[:, None], dy[None, :])))
        widths = np.maximum(np.diff(self.nodes_lo), np.diff(self.nodes_up))
        return float(np.max(widths))

    # Patch constructors for the object API; time is absolute via t0.

    def lower_patch(self, k: int, t0: float) -> FacePatch:
        if self.kind == "torus-2d":
            nx = len(self.xs) - 1
            iy, ix = divmod(k, nx)
            return FacePatch.rectangle(t0, (self.xs[ix], self.xs[ix + 1]),
                                       (self.ys[iy], self.ys[iy + 1]))
        return FacePatch.interval(t0, self.nodes_lo[k], self.nodes_lo[k + 1])

    def upper_patch(self, k: int, t0: float) -> FacePatch:
        if self.kind == "torus-2d":
            nx = len(self.xs) - 1
            iy, ix = divmod(k, nx)
            return FacePatch.rectangle(t0 + self.tau, (self.xs[ix], self.xs[ix + 1]),
                                       (self.ys[iy], self.ys[iy + 1]))
        return FacePatch.interval(t0 + self.tau, self.nodes_up[k], self.nodes_up[k + 1])

    def vertical_patch(self, f: int, t0: float) -> FacePatch:
        """Canonical-orientation patch of vertical face f."""
        if self.kind == "torus-2d":
            nx = len(self.xs) - 1
            ny = len(self.ys) - 1
            tspan = (t0, t0 + self.tau)
            if f < nx * ny:
                iy, ix = divmod(f, nx)
                return FacePatch.vertical_strip(1, self.xs[ix], tspan,
                                                (self.ys[iy], self.ys[iy + 1]))
            g = f - nx * ny
            iy, ix = divmod(g, nx)
            return FacePatch.vertical_strip(2, self.ys[iy], tspan,
                                            (self.xs[ix], self.xs[ix + 1]))
        return FacePatch.segment((t0, self.nodes_lo[f]), (t0 + self.tau, self.nodes_up[f]))


@dataclass(frozen=True)
class SlabArrays:
    """Absolute-time materialization of a slab's stacked geometry."""

    t0: float
    t1: float
    lo_pts: np.ndarray
    lo_min: np.ndarray
    up_pts: np.ndarray
    up_min: np.ndarray
    w_space: np.ndarray
    v_pts: np.ndarray
    v_min: np.ndarray
    w_vert: np.ndarray


class SlabView:
    """One slab of the foliation: shared template plus its time offset."""

    def __init__(self, template: SlabTemplate, t0: float, index: int):
        self.template = template
        self.t0 = float(t0)
        self.index = index

    @property
    def t1(self) -> float:
        return self.t0 + self.template.tau

    @property
    def tau(self) -> float:
        return self.template.tau

    def arrays(self) -> SlabArrays:
        tpl = self.template
        lo = tpl.lo_pts.copy()
        lo[..., 0] += self.t0
        up = tpl.up_pts.copy()
        up[..., 0] += self.t0
        v = tpl.v_pts.copy()
        v[..., 0] += self.t0
        return SlabArrays(t0=self.t0, t1=self.t1, lo_pts=lo, lo_min=tpl.lo_min,
                          up_pts=up, up_min=tpl.up_min, w_space=tpl.w_space,
                          v_pts=v, v_min=tpl.v_min, w_vert=tpl.w_vert)

    def volume_quadrature(self, quad: QuadratureRule | None = None):
        """Quadrature points (E, m, n+1) and weights (E, m) of the prism interiors."""
        quad = quad or default_quadrature()
        tpl = self.template
        tau = tpl.tau
        if tpl.kind == "torus-2d":
            s, w = quad.tensor(3)
            nx = len(tpl.xs) - 1
            ny = len(tpl.ys) - 1
            dx = np.diff(tpl.xs)
            dy = np.diff(tpl.ys)
            E = tpl.num_elements
            m = s.shape[0]
            pts = np.empty((E, m, 3))
            wts = np.empty((E, m))
            iy, ix = np.divmod(np.arange(E), nx)
            pts[:, :, 0] = self.t0 + tau * s[None, :, 0]
            pts[:, :, 1] = tpl.xs[ix][:, None] + dx[ix][:, None] * s[None, :, 1]
            pts[:, :, 2] = tpl.ys[iy][:, None] + dy[iy][:, None] * s[None, :, 2]
            wts[:, :] = (tau * dx[ix] * dy[iy])[:, None] * w[None, :]
            return pts, wts
        s, w = quad.tensor(2)  # columns: sigma (time), s (space)
        a_lo = tpl.nodes_lo[:-1]
        w_lo = np.diff(tpl.nodes_lo)
        a_up = tpl.nodes_up[:-1]
        w_up = np.diff(tpl.nodes_up)
        sig = s[None, :, 0]
        sp = s[None, :, 1]
        x_lo = a_lo[:, None] + w_lo[:, None] * sp
        x_up = a_up[:, None] + w_up[:, None] * sp
        pts = np.empty((tpl.num_elements, s.shape[0], 2))
        pts[:, :, 0] = self.t0 + tau * sig
        pts[:, :, 1] = (1.0 - sig) * x_lo + sig * x_up
        jac = tau * ((1.0 - sig) * w_lo[:, None] + sig * w_up[:, None])
        return pts, jac * w[None, :]


@dataclass(frozen=True)
class VerticalFaceRef:
    """One element's view of a vertical face: orientation sign is outward for it."""

    slab: int
    face: int
    element: int
    neighbor: int
    sign: float


@dataclass(frozen=True)
class Element:
    """Object view of one prism element."""

    slab: int
    index: int
    lower: FacePatch
    upper: FacePatch
    vertical: tuple[VerticalFaceRef, ...]
    measure_lower: float
    measure_upper: float

    @property
    def n_vertical(self) -> int:
        return len(self.vertical)


class FoliatedMesh:
    """Foliation of [0, T] x N into conforming prism slabs, bound to a flux field."""

    def __init__(self, flux: FluxField, quad: QuadratureRule, slice_times: np.ndarray,
                 slabs: list[SlabView], margins: list[np.ndarray], cfl_fraction: float,
                 kind: str):
        self.flux = flux
        self.quad = quad
        self.slice_times = slice_times
        self.slabs = slabs
        self.margins = margins
        self.cfl_fraction = cfl_fraction
        self.kind = kind
        self.n = flux.dimension
        self.h = max(v.template.spacelike_diameter() for v in slabs)
        self._measure_cache: dict[tuple[int, str], np.ndarray] = {}

    @property
    def num_slabs(self) -> int:
        return len(self.slabs)

    @property
    def tau_max(self) -> float:
        return float(np.max(np.diff(self.slice_times)))

    @property
    def tau_min(self) -> float:
        return float(np.min(np.diff(self.slice_times)))

    @property
    def final_time(self) -> float:
        return float(self.slice_times[-1])

    def num_elements(self, slab: int = 0) -> int:
        return self.slabs[slab].template.num_elements

    def measures(self, slab: int, which: str) -> np.ndarray:
        """Face measures of the slab's lower or upper spacelike faces."""
        key = (slab, which)
        out = self._measure_cache.get(key)
        if out is None:
            arr = self.slabs[slab].arrays()
            pts, mins = (arr.lo_pts, arr.lo_min) if which == "lower" else (arr.up_pts, arr.up_min)
            out = np.asarray(form_integral(self.flux.component_du_fn, 0.0, pts, mins, arr.w_space))
            if np.any(out <= 0.0):
                k = int(np.argmin(out))
                raise DegenerateFaceError(
                    "nonpositive face measure %.6g on slab %d element %d"
                    % (float(out[k]), slab, k)
                )
            self._measure_cache[key] = out
        return out

    def element(self, slab: int, k: int) -> Element:
        tpl = self.slabs[slab].template
        t0 = self.slabs[slab].t0
        refs = []
        for slot in range(tpl.elem_faces.shape[1]):
            f = int(tpl.elem_faces[k, slot])
            refs.append(VerticalFaceRef(slab=slab, face=f, element=k,
                                        neighbor=int(tpl.elem_neighbors[k, slot]),
                                        sign=float(tpl.elem_signs[k, slot])))
        return Element(slab=slab, index=k,
                       lower=tpl.lower_patch(k, t0), upper=tpl.upper_patch(k, t0),
                       vertical=tuple(refs),
                       measure_lower=float(self.measures(slab, "lower")[k]),
                       measure_upper=float(self.measures(slab, "upper")[k]))

    def face_patch(self, ref: VerticalFaceRef) -> FacePatch:
        """Vertical face patch oriented outward for ref.element."""
        tpl = self.slabs[ref.slab].template
        patch = tpl.vertical_patch(ref.face, self.slabs[ref.slab].t0)
        return patch.with_orientation(int(ref.sign))

    def vertical_face_refs(self, slab: int):
        """Both element views of every vertical face of the slab."""
        tpl = self.slabs[slab].template
        out = []
        for f in range(tpl.num_vertical_faces):
            p = int(tpl.face_plus[f])
            m = int(tpl.face_minus[f])
            out.append(VerticalFaceRef(slab, f, p, m, 1.0))
            out.append(VerticalFaceRef(slab, f, m, p, -1.0))
        return out

    def locate_element(self, slab: int, t: float, xsp) -> int:
        """Element of the slab containing the spatial point at time t.

        Boundary ties go to the element with the smaller id.
        """
        tpl = self.slabs[slab].template
        if tpl.kind == "torus-2d":
            x, y = float(xsp[0]) % 1.0, float(xsp[1]) % 1.0
            nx = len(tpl.xs) - 1
            ny = len(tpl.ys) - 1
            ix = int(np.searchsorted(tpl.xs[1:], x, side="left"))
            iy = int(np.searchsorted(tpl.ys[1:], y, side="left"))
            return min(iy, ny - 1) * nx + min(ix, nx - 1)
        frac = 0.0 if tpl.tau == 0 else (t - self.slabs[slab].t0) / tpl.tau
        frac = min(max(frac, 0.0), 1.0)
        nodes = (1.0 - frac) * tpl.nodes_lo + frac * tpl.nodes_up
        x = float(xsp if np.ndim(xsp) == 0 else xsp[0])
        x = nodes[0] + ((x - nodes[0]) % 1.0)
        k = int(np.searchsorted(nodes, x, side="left")) - 1
        if k < 0:
            k = 0
        return min(k, len(nodes) - 2)

    def slab_for_time(self, t: float) -> int:
        """Slab whose prism contains time t; a slice time t_i maps to slab i."""
        times = self.slice_times
        if t < times[0] or t > times[-1]:
            raise ValueError("time %.17g outside the foliation [%.17g, %.17g]"
                             % (t, times[0], times[-1]))
        i = int(np.searchsorted(times, t, side="right")) - 1
        return min(i, len(times) - 2)


# ---------------------------------------------------------------------------
# Template assembly


def _template_1d(flux, quad, nodes_lo, nodes_up, tau):
    C = len(nodes_lo) - 1
    s1, w1 = quad.tensor(1)
    s = s1[:, 0]
    m = len(s)
    w_lo = np.diff(nodes_lo)
    w_up = np.diff(nodes_up)
    if np.any(w_lo <= 0.0) or np.any(w_up <= 0.0):
        k = int(np.argmin(np.minimum(w_lo, w_up)))
        raise MeshConstructionError("element %d has nonpositive width" % k)

    lo_pts = np.zeros((C, m, 2))
    lo_pts[:, :, 1] = nodes_lo[:-1, None] + w_lo[:, None] * s[None, :]
    lo_min = np.zeros((C, m, 2))
    lo_min[:, :, 0] = w_lo[:, None]

    up_pts = np.zeros((C, m, 2))
    up_pts[:, :, 0] = tau
    up_pts[:, :, 1] = nodes_up[:-1, None] + w_up[:, None] * s[None, :]
    up_min = np.zeros((C, m, 2))
    up_min[:, :, 0] = w_up[:, None]

    tilt = nodes_up[:-1] - nodes_lo[:-1]
    v_pts = np.zeros((C, m, 2))
    v_pts[:, :, 0] = tau * s[None, :]
    v_pts[:, :, 1] = nodes_lo[:-1, None] + tilt[:, None] * s[None, :]
    v_min = np.zeros((C, m, 2))
    v_min[:, :, 0] = tilt[:, None]
    v_min[:, :, 1] = tau
    v_area_w = w1[None, :] * np.hypot(tau, tilt)[:, None]

    idx = np.arange(C)
    face_plus = idx.copy()
    face_minus = (idx - 1) % C
    elem_faces = np.stack([idx, (idx + 1) % C], axis=1)
    elem_signs = np.tile(np.array([1.0, -1.0]), (C, 1))
    elem_neighbors = np.stack([(idx - 1) % C, (idx + 1) % C], axis=1)

    return SlabTemplate(n=1, tau=tau, lo_pts=lo_pts, lo_min=lo_min, up_pts=up_pts,
                        up_min=up_min, w_space=w1, v_pts=v_pts, v_min=v_min,
                        w_vert=w1, v_area_w=v_area_w, face_plus=face_plus,
                        face_minus=face_minus, elem_faces=elem_faces,
                        elem_signs=elem_signs, elem_neighbors=elem_neighbors,
                        kind="1d", nodes_lo=nodes_lo, nodes_up=nodes_up)


def _template_2d(flux, quad, xs, ys, tau):
    nx, ny = len(xs) - 1, len(ys) - 1
    E = nx * ny
    s2, w2 = quad.tensor(2)
    m = s2.shape[0]
    dx = np.diff(xs)
    dy = np.diff(ys)
    iy, ix = np.divmod(np.arange(E), nx)

    def spacelike(t_rel):
        pts = np.empty((E, m, 3))
        pts[:, :, 0] = t_rel
        pts[:, :, 1] = xs[ix][:, None] + dx[ix][:, None] * s2[None, :, 0]
        pts[:, :, 2] = ys[iy][:, None] + dy[iy][:, None] * s2[None, :, 1]
        mins = np.zeros((E, m, 3))
        mins[:, :, 0] = (dx[ix] * dy[iy])[:, None]
        return pts, mins

    lo_pts, lo_min = spacelike(0.0)
    up_pts, up_min = spacelike(tau)

    # Vertical faces: nx*ny faces normal to x, then nx*ny normal to y.
    F = 2 * E
    v_pts = np.empty((F, m, 3))
    v_min = np.zeros((F, m, 3))
    v_area = np.empty(F)
    fiy, fix = iy, ix
    v_pts[:E, :, 0] = tau * s2[None, :, 0]
    v_pts[:E, :, 1] = xs[fix][:, None]
    v_pts[:E, :, 2] = ys[fiy][:, None] + dy[fiy][:, None] * s2[None, :, 1]
    v_min[:E, :, 1] = (tau * dy[fiy])[:, None]
    v_area[:E] = tau * dy[fiy]
    v_pts[E:, :, 0] = tau * s2[None, :, 0]
    v_pts[E:, :, 1] = xs[fix][:, None] + dx[fix][:, None] * s2[None, :, 1]
    v_pts[E:, :, 2] = ys[fiy][:, None]
    v_min[E:, :, 2] = (tau * dx[fix])[:, None]
    v_area[E:] = tau * dx[fix]
    v_area_w = w2[None, :] * v_area[:, None]

    def cell(jx, jy):
        return (jy % ny) * nx + (jx % nx)

    face_plus = np.empty(F, dtype=int)
    face_minus = np.empty(F, dtype=int)
    face_plus[:E] = cell(ix, iy)          # x-face: plus side is the right cell
    face_minus[:E] = cell(ix - 1, iy)
    face_plus[E:] = cell(ix, iy - 1)      # y-face: plus side is the cell below
    face_minus[E:] = cell(ix, iy)

    left = iy * nx + ix
    right = iy * nx + (ix + 1) % nx
    bottom = E + iy * nx + ix
    top = E + ((iy + 1) % ny) * nx + ix
    elem_faces = np.stack([left, right, bottom, top], axis=1)
    elem_signs = np.tile(np.array([1.0, -1.0, -1.0, 1.0]), (E, 1))
    elem_neighbors = np.stack([cell(ix - 1, iy), cell(ix + 1, iy),
                               cell(ix, iy - 1), cell(ix, iy + 1)], axis=1)

    return SlabTemplate(n=2, tau=tau, lo_pts=lo_pts, lo_min=lo_min, up_pts=up_pts,
                        up_min=up_min, w_space=w2, v_pts=v_pts, v_min=v_min,
                        w_vert=w2, v_area_w=v_area_w, face_plus=face_plus,
                        face_minus=face_minus, elem_faces=elem_faces,
                        elem_signs=elem_signs, elem_neighbors=elem_neighbors,
                        kind="torus-2d", xs=xs, ys=ys)


# ---------------------------------------------------------------------------
# CFL margins


def _slab_margins(flux: FluxField, view: SlabView, quad: QuadratureRule,
                  u_grid: np.ndarray) -> np.ndarray:
    """Per-element CFL margins of one slab on the sampled state grid."""
    arr = view.arrays()
    tpl = view.template
    du = flux.component_du_fn
    ug = u_grid[:, None, None]
    vints = form_integral(du, ug, arr.v_pts[None], arr.v_min[None], arr.w_vert)
    v_sup = np.max(np.abs(vints), axis=0)                     # (F,)
    up_du = form_integral(du, ug, arr.up_pts[None], arr.up_min[None], arr.w_space)
    measures = form_integral(du, 0.0, arr.up_pts, arr.up_min, arr.w_space)
    if np.any(measures <= 0.0):
        k = int(np.argmin(measures))
        raise MeshConstructionError(
            "slab %d element %d has nonpositive upper face measure" % (view.index, k))
    dphi_min = np.min(up_du, axis=0) / measures               # (E,)
    if np.any(dphi_min <= 0.0):
        k = int(np.argmin(dphi_min))
        raise MeshConstructionError(
            "averaged flux is not increasing on slab %d element %d" % (view.index, k))
    worst = np.max(v_sup[tpl.elem_faces], axis=1)             # (E,)
    return tpl.n_vertical / measures * worst / dphi_min


def _sample_slab_indices(num: int, cap: int = 8) -> list[int]:
    if num <= cap:
        return list(range(num))
    picks = np.unique(np.linspace(0, num - 1, cap).astype(int))
    return picks.tolist()


def _choose_num_slabs(build_views: Callable[[int], list[SlabView]], flux, quad,
                      cfl_fraction: float, T: float) -> tuple[list[SlabView], list[np.ndarray]]:
    """Smallest slab count whose sampled CFL margins stay within cfl_fraction."""
    u_grid = _state_grid(flux)

    def sampled_max_margin(views):
        worst = 0.0
        for i in _sample_slab_indices(len(views)):
            worst = max(worst, float(np.max(_slab_margins(flux, views[i], quad, u_grid))))
        return worst

    def feasible(N):
        try:
            views = build_views(N)
            return sampled_max_margin(views) <= cfl_fraction, views
        except MeshConstructionError:
            return False, None

    # Linear-in-tau estimate seeds the integer bisection.
    probe_N = 16
    ok = False
    while not ok and probe_N < 10 ** 7:
        try:
            views = build_views(probe_N)
            ok = True
        except MeshConstructionError:
            probe_N *= 4
    if not ok:
        raise MeshConstructionError("no feasible slab count below 1e7")
    rate = sampled_max_margin(views) / (T / probe_N)
    N_est = max(1, math.ceil(rate * T / cfl_fraction))
    lo = max(1, N_est // 4)
    hi = max(lo + 1, N_est)
    ok_hi, views_hi = feasible(hi)
    while not ok_hi:
        lo = hi
        hi *= 2
        if hi > 10 ** 7:
            raise MeshConstructionError("CFL margin cannot be met below 1e7 slabs")
        ok_hi, views_hi = feasible(hi)
    ok_lo, views_lo = feasible(lo)
    if ok_lo:
        hi, views_hi = lo, views_lo
    else:
        while hi - lo > 1:
            mid = (lo + hi) // 2
            ok_mid, views_mid = feasible(mid)
            if ok_mid:
                hi, views_hi = mid, views_mid
            else:
                lo = mid
    # Full verification on every slab; nudge N upward if sampling missed a peak.
    views = views_hi
    for _ in range(64):
        margins = [_slab_margins(flux, v, quad, u_grid) for v in views]
        if max(float(np.max(m)) for m in margins) <= cfl_fraction * (1.0 + 1e-12):
            return views, margins
        hi += max(1, hi // 16)
        okv, views = feasible(hi)
        if not okv:
            raise MeshConstructionError("CFL verification failed while refining slab count")
    raise MeshConstructionError("CFL verification did not settle")


def build_mesh_1d(flux: FluxField, num_cells: int, cfl_fraction: float, T: float,
                  motion: Callable | None = None,
                  quad: QuadratureRule | None = None) -> FoliatedMesh:
    """Uniform-in-time foliation of [0, T] x S^1 with num_cells spatial cells.

    motion, if given, is a node velocity field v(x, t); nodes advance one
    Euler step per slab and every vertical face tilts accordingly.  Motion
    is capped at MOTION_CAP_FRACTION of the smallest cell width per slab.
    """
    if num_cells < 3:
        raise MeshConstructionError("1d mesh needs at least 3 cells, got %d" % num_cells)
    if not (0.0 < cfl_fraction < 1.0):
        raise MeshConstructionError("cfl_fraction must lie in (0, 1)")
    if not (T > 0.0):
        raise MeshConstructionError("final time must be positive")
    quad = quad or default_quadrature()
    base = np.linspace(0.0, 1.0, num_cells + 1)

    def build_views(N):
        tau = T / N
        nodes = base.copy()
        views = []
        for i in range(N):
            if motion is None:
                nodes_up = nodes
                tpl = views[0].template if views else _template_1d(flux, quad, nodes, nodes_up, tau)
            else:
                t_i = i * tau
                vel = np.asarray(motion(nodes[:-1] % 1.0, t_i), dtype=float)
                min_width = float(np.min(np.diff(nodes)))
                cap = MOTION_CAP_FRACTION * min_width
                step = tau * vel
                if np.any(np.abs(step) > cap):
                    k = int(np.argmax(np.abs(step)))
                    raise MeshConstructionError(
                        "node motion %.3g exceeds cap %.3g at node %d, slab %d"
                        % (float(np.abs(step[k])), cap, k, i))
                nodes_up = np.empty_like(nodes)
                nodes_up[:-1] = nodes[:-1] + step
                nodes_up[-1] = nodes_up[0] + 1.0
                tpl = _template_1d(flux, quad, nodes, nodes_up, tau)
            views.append(SlabView(tpl, i * tau, i))
            nodes = nodes_up
        return views

    views, margins = _choose_num_slabs(build_views, flux, quad, cfl_fraction, T)
    N = len(views)
    times = np.linspace(0.0, T, N + 1)
    kind = "moving-1d" if motion is not None else "static-1d"
    return FoliatedMesh(flux, quad, times, views, margins, cfl_fraction, kind)


def build_mesh_2d_torus(flux: FluxField, nx: int, ny: int, cfl_fraction: float,
                        T: float, quad: QuadratureRule | None = None) -> FoliatedMesh:
    """Uniform static foliation of [0, T] x T^2 with an nx-by-ny cell grid."""
    if nx < 3 or ny < 3:
        raise MeshConstructionError("2d torus mesh needs at least 3 cells per axis")
    if not (0.0 < cfl_fraction < 1.0):
        raise MeshConstructionError("cfl_fraction must lie in (0, 1)")
    if not (T > 0.0):
        raise MeshConstructionError("final time must be positive")
    quad = quad or default_quadrature()
    xs = np.linspace(0.0, 1.0, nx + 1)
    ys = np.linspace(0.0, 1.0, ny + 1)

    def build_views(N):
        tau = T / N
        tpl = _template_2d(flux, quad, xs, ys, tau)
        return [SlabView(tpl, i * tau, i) for i in range(N)]

    views, margins = _choose_num_slabs(build_views, flux, quad, cfl_fraction, T)
    times = np.linspace(0.0, T, len(views) + 1)
    return FoliatedMesh(flux, quad, times, views, margins, cfl_fraction, "torus-2d")


# ---------------------------------------------------------------------------
# Validation


@dataclass
class MeshValidationReport:
    violations: list
    slabs_checked: int
    elements_checked: int

    @property
    def passed(self) -> bool:
        return not self.violations


def validate_mesh(mesh: FoliatedMesh, n_state_samples: int = 5) -> MeshValidationReport:
    """Structural checks of the foliation plus a sampled closed-form Stokes test.

    For geometry-compatible fluxes the oriented face integrals of omega(u)
    around every prism must cancel:
    |e+| phi+(u) - |e-| phi-(u) + sum of vertical integrals = 0.
    """
    violations = []
    flux = mesh.flux
    lo, hi = flux.u_range
    pad = 0.05 * (hi - lo)
    states = np.linspace(lo + pad, hi - pad, n_state_samples)
    elements = 0
    for i, view in enumerate(mesh.slabs):
        tpl = view.template
        E, F = tpl.num_elements, tpl.num_vertical_faces
        elements += E
        if np.any(tpl.n_vertical > MAX_VERTICAL_FACES):
            violations.append(("vertical-face-cap", i, int(np.argmax(tpl.n_vertical))))
        # Adjacency coherence: every face is seen from both sides with
        # opposite signs, and neighbor ids match across the face.
        seen = np.zeros((F, 2), dtype=int)
        for k in range(E):
            for slot in range(tpl.elem_faces.shape[1]):
                f = int(tpl.elem_faces[k, slot])
                sgn = tpl.elem_signs[k, slot]
                other = int(tpl.elem_neighbors[k, slot])
                side = 0 if sgn > 0 else 1
                seen[f, side] += 1
                owner = tpl.face_plus[f] if sgn > 0 else tpl.face_minus[f]
                expected_nb = tpl.face_minus[f] if sgn > 0 else tpl.face_plus[f]
                if owner != k or expected_nb != other:
                    violations.append(("adjacency", i, k, f))
        if np.any(seen != 1):
            f = int(np.argwhere(seen != 1)[0][0])
            violations.append(("face-sharing", i, f))
        # Conforming foliation: the upper slice of slab i must coincide with
        # the lower slice of slab i+1 as a point set.
        if i + 1 < mesh.num_slabs:
            nxt = mesh.slabs[i + 1].template
            if tpl.kind == "torus-2d":
                same = nxt is tpl or (np.array_equal(tpl.xs, nxt.xs)
                                      and np.array_equal(tpl.ys, nxt.ys))
            else:
                same = np.array_equal(tpl.nodes_up, nxt.nodes_lo)
            if not same:
                violations.append(("nonconforming-slices", i))
        if abs(view.t1 - mesh.slice_times[i + 1]) > 1e-12 * (1.0 + abs(view.t1)):
            violations.append(("slice-time-mismatch", i))
        # Positive measures.
        try:
            mlo = mesh.measures(i, "lower")
            mup = mesh.measures(i, "upper")
        except DegenerateFaceError as exc:
            violations.append(("degenerate-face", i, str(exc)))
            continue
        # Stokes cancellation for frozen states.
        if flux.geometry_compatible:
            arr = view.arrays()
            for u in states:
                up_int = form_integral(flux.component_fn, float(u), arr.up_pts,
                                       arr.up_min, arr.w_space)
                lo_int = form_integral(flux.component_fn, float(u), arr.lo_pts,
                                       arr.lo_min, arr.w_space)
                v_int = form_integral(flux.component_fn, float(u), arr.v_pts,
                                      arr.v_min, arr.w_vert)
                residual = up_int - lo_int + np.sum(tpl.elem_signs * v_int[tpl.elem_faces], axis=1)
                bad = np.abs(residual) > 1e-10 * np.maximum(mup, 1e-30)
                if np.any(bad):
                    k = int(np.argmax(np.abs(residual)))
                    violations.append(("stokes-residual", i, k, float(u), float(residual[k])))
    # Diameter bookkeeping.
    h = max(v.template.spacelike_diameter() for v in mesh.slabs)
    if not math.isclose(h, mesh.h, rel_tol=1e-12):
        violations.append(("diameter-mismatch", mesh.h, h))
    return MeshValidationReport(violations=violations, slabs_checked=mesh.num_slabs,
                                elements_checked=elements)


@dataclass
class HyperbolicityReport:
    c_lower: float
    c_upper: float
    max_margin: float
    margins: list
    passed: bool

    def summary(self) -> str:
        return ("hyperbolicity: c in [%.6g, %.6g], max CFL margin %.6g, %s"
                % (self.c_lower, self.c_upper, self.max_margin,
                   "pass" if self.passed else "FAIL"))


def validate_hyperbolicity(mesh: FoliatedMesh, n_samples: int = STATE_GRID_POINTS) -> HyperbolicityReport:
    """Averaged-flux slope bounds and per-element CFL margins over all slabs.

    Slopes are finite-difference secants of the averaged flux on an
    n_samples state grid; margins follow the discrete CFL quotient
    (N_K / |e+|) * sup |vertical du integral| / inf d(phi+)/du.
    """
    flux = mesh.flux
    u_grid = _state_grid(flux, n_samples)
    du_grid = np.diff(u_grid)
    c_lo, c_hi = math.inf, -math.inf
    margins = []
    max_margin = 0.0
    for view in mesh.slabs:
        arr = view.arrays()
        for pts, mins, w, which in ((arr.lo_pts, arr.lo_min, arr.w_space, "lower"),
                                    (arr.up_pts, arr.up_min, arr.w_space, "upper")):
            measures = mesh.measures(view.index, which)
            vals = form_integral(flux.component_fn, u_grid[:, None, None],
                                 pts[None], mins[None], w) / measures[None, :]
            slopes = np.diff(vals, axis=0) / du_grid[:, None]
            c_lo = min(c_lo, float(np.min(slopes)))
            c_hi = max(c_hi, float(np.max(slopes)))
        m = _slab_margins(flux, view, mesh.quad, u_grid)
        margins.append(m)
        max_margin = max(max_margin, float(np.max(m)))
    passed = c_lo > 0.0 and max_margin < 1.0
    return HyperbolicityReport(c_lower=c_lo, c_upper=c_hi, max_margin=max_margin,
                               margins=margins, passed=passed)


# ---------------------------------------------------------------------------
# Refinement sequences

@dataclass(frozen=True)
class MeshRecipe:
    """Reproducible mesh family; cells double at each refinement level."""

    flux: FluxField
    cells: int
    cfl_fraction: float
    T: float
    dim: int = 1
    motion: Callable | None = None
    quad: QuadratureRule | None = None

    def build(self, level: int = 0) -> FoliatedMesh:
        cells = self.cells * (2 ** level)
        if self.dim == 1:
            return build_mesh_1d(self.flux, cells, self.cfl_fraction, self.T,
                                 motion=self.motion, quad=self.quad)
        return build_mesh_2d_torus(self.flux, cells, cells, self.cfl_fraction,
                                   self.T, quad=self.quad)


@dataclass(frozen=True)
class RefinementLevel:
    level: int
    mesh: FoliatedMesh
    h: float
    tau_max: float
    tau_min: float
    ratio_parabolic: float   # (tau_max^2 + h^2) / tau_min
    ratio_timelike: float    # tau_max^2 / h


def refinement_sequence(recipe: MeshRecipe, levels: int) -> list[RefinementLevel]:
    """Meshes with halved spatial diameter per level and their decay ratios."""
    if levels < 1:
        raise ValueError("refinement needs at least one level")
    out = []
    for lvl in range(levels):
        mesh = recipe.build(lvl)
        h, tmax, tmin = mesh.h, mesh.tau_max, mesh.tau_min
        out.append(RefinementLevel(level=lvl, mesh=mesh, h=h, tau_max=tmax,
                                   tau_min=tmin,
                                   ratio_parabolic=(tmax ** 2 + h ** 2) / tmin,
                                   ratio_timelike=tmax ** 2 / h))
    return out


MESH_SUMMARY_HEADER = ["slab", "element", "measure_lower", "measure_upper",
                       "n_vertical", "cfl_margin"]


def mesh_summary_rows(mesh: FoliatedMesh):
    """One row per element: slab, element, measures, vertical count, CFL margin."""
    rows = []
    for i, view in enumerate(mesh.slabs):
        mlo = mesh.measures(i, "lower")
        mup = mesh.measures(i, "upper")
        tpl = view.template
        marg = mesh.margins[i]
        for k in range(tpl.num_elements):
            rows.append([i, k, float(mlo[k]), float(mup[k]),
                         int(tpl.n_vertical[k]), float(marg[k])])
    return rows
