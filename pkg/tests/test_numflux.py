"""Two-state total flux schemes: axioms, frozen values, entropy fluxes."""

import numpy as np
import pytest

from spacetimefv.forms import FacePatch
from spacetimefv.numflux import (
    FLUX_REPORT_HEADER,
    BoundFace,
    GodunovScheme,
    LaxFriedrichsScheme,
    check_flux_properties,
    check_scheme_on_mesh,
    kruzkov_face_flux,
    kruzkov_numerical_flux,
    make_scheme,
    patch_flux_context,
)
from spacetimefv.scenarios import classical_flux_field


@pytest.fixture(scope="module")
def burgers_unit():
    return classical_flux_field(
        1,
        [lambda u, x: u + 0.0 * x[..., 0],
         lambda u, x: 0.5 * u ** 2 + 0.0 * x[..., 0]],
        [lambda u, x: 1.0 + 0.0 * (u + x[..., 0]),
         lambda u, x: u + 0.0 * x[..., 0]],
        u_range=(-1.0, 1.0), geometry_compatible=True)


@pytest.fixture(scope="module")
def segment_face(burgers_unit):
    # Static vertical face at x = 0.3 spanning tau = 0.1, oriented so the
    # total face flux is Phi(u) = 0.05 u^2.
    patch = FacePatch.segment((0.0, 0.3), (0.1, 0.3)).with_orientation(-1)
    ctx = patch_flux_context(burgers_unit, patch)
    return BoundFace(ctx=ctx)


class TestLaxFriedrichs:
    def test_frozen_face_values(self, segment_face):
        scheme = LaxFriedrichsScheme()
        assert abs(scheme.evaluate(segment_face, 1.0, 1.0) - 0.05) < 1e-15
        assert abs(float(scheme.lam(segment_face.ctx)[0]) - 0.11) < 1e-15
        assert abs(scheme.evaluate(segment_face, 1.0, 0.0) - 0.080) < 1e-15

    def test_consistency_is_exact(self, segment_face):
        scheme = LaxFriedrichsScheme()
        rng = np.random.default_rng(3)
        for u in rng.uniform(-1.0, 1.0, 50):
            q = scheme.evaluate(segment_face, float(u), float(u))
            phi = float(np.ravel(segment_face.ctx.phi(float(u)))[0])
            assert q == phi

    def test_rejects_nonpositive_scale(self):
        with pytest.raises(ValueError):
            LaxFriedrichsScheme(lambda_scale=0.0)

    def test_small_lambda_breaks_monotonicity(self, segment_face):
        report = check_flux_properties(LaxFriedrichsScheme(lambda_scale=0.5),
                                       segment_face, n_samples=400, seed=1)
        assert report.consistency_ok
        assert report.conservation_ok
        assert not report.monotonicity_ok
        assert not report.passed
        assert any(w[0] == "monotone-own" for w in report.witnesses)


class TestGodunov:
    def test_frozen_face_values(self, segment_face):
        scheme = GodunovScheme()
        assert abs(scheme.evaluate(segment_face, 1.0, 0.0) - 0.05) < 1e-15
        assert abs(scheme.evaluate(segment_face, -1.0, 1.0)) < 1e-12

    def test_interior_minimum_between_grid_nodes(self, segment_face):
        # The stationary state u = 0 falls midway between grid nodes; the
        # cache must still find it.
        ustar, pstar = segment_face.ctx.stationary_points()
        assert ustar.shape[1] >= 1
        assert np.any(np.isfinite(ustar))
        assert np.nanmin(np.abs(ustar)) <= 1e-6
        q = GodunovScheme().evaluate(segment_face, -0.5, 0.6)
        assert abs(q) <= 1e-12

    def test_matches_interval_extrema_closed_form(self, segment_face):
        scheme = GodunovScheme()
        rng = np.random.default_rng(11)

        def oracle(a, b):
            lo, hi = min(a, b), max(a, b)
            if a <= b:
                usq = 0.0 if lo <= 0.0 <= hi else min(lo * lo, hi * hi)
            else:
                usq = max(lo * lo, hi * hi)
            return 0.05 * usq

        for _ in range(200):
            a, b = rng.uniform(-1.0, 1.0, 2)
            q = scheme.evaluate(segment_face, float(a), float(b))
            assert abs(q - oracle(float(a), float(b))) <= 1e-12


class TestSharedAxioms:
    @pytest.mark.parametrize("name", ["lf", "godunov"])
    def test_flip_conservation_is_exact(self, segment_face, name):
        scheme = make_scheme(name)
        ctx = segment_face.ctx
        rng = np.random.default_rng(7)
        a = rng.uniform(-1.0, 1.0, (100, 1))
        b = rng.uniform(-1.0, 1.0, (100, 1))
        q_plus = scheme.face_flux(ctx, a, b)
        q_minus = scheme.face_flux(ctx.flipped(), b, a)
        assert np.array_equal(q_minus, -q_plus)

    def test_flipped_phi_negates(self, segment_face):
        ctx = segment_face.ctx
        u = np.linspace(-1.0, 1.0, 17)
        assert np.array_equal(ctx.flipped().phi(u[:, None]), -ctx.phi(u[:, None]))

    def test_lf_dominates_godunov_on_decreasing_jumps(self, segment_face):
        lf, god = make_scheme("lf"), make_scheme("godunov")
        rng = np.random.default_rng(13)
        lo = rng.uniform(-1.0, 1.0, 1000)
        hi = rng.uniform(-1.0, 1.0, 1000)
        a = np.maximum(lo, hi)
        b = np.minimum(lo, hi)
        q_lf = lf.evaluate_many(segment_face, a, b)
        q_god = god.evaluate_many(segment_face, a, b)
        assert np.all(q_lf >= q_god - 1e-14 * (1.0 + np.abs(q_god)))

    def test_make_scheme_rejects_unknown(self):
        with pytest.raises(ValueError):
            make_scheme("upwind")


class TestKruzkovFlux:
    @pytest.mark.parametrize("name", ["lf", "godunov"])
    def test_vanishes_at_the_level(self, segment_face, name):
        scheme = make_scheme(name)
        assert kruzkov_numerical_flux(scheme, segment_face, 0.3, 0.3, 0.3) == 0.0

    @pytest.mark.parametrize("name", ["lf", "godunov"])
    def test_reduces_below_the_level(self, segment_face, name):
        # For c below both states the entropy flux is q(u, v) - Phi(c).
        scheme = make_scheme(name)
        rng = np.random.default_rng(17)
        for _ in range(50):
            u, v = rng.uniform(-0.5, 1.0, 2)
            c = float(rng.uniform(-1.0, min(u, v)))
            lhs = kruzkov_numerical_flux(scheme, segment_face, float(u), float(v), c)
            rhs = (scheme.evaluate(segment_face, float(u), float(v))
                   - scheme.evaluate(segment_face, c, c))
            assert lhs == rhs

    @pytest.mark.parametrize("name", ["lf", "godunov"])
    def test_equal_states_give_signed_difference(self, segment_face, name):
        scheme = make_scheme(name)
        rng = np.random.default_rng(19)
        for _ in range(50):
            u, c = rng.uniform(-1.0, 1.0, 2)
            lhs = kruzkov_numerical_flux(scheme, segment_face, float(u), float(u), float(c))
            s = 1.0 if u >= c else -1.0
            rhs = s * (scheme.evaluate(segment_face, float(u), float(u))
                       - scheme.evaluate(segment_face, float(c), float(c)))
            assert lhs == rhs

    def test_vectorized_matches_scalar(self, segment_face):
        scheme = make_scheme("lf")
        ctx = segment_face.ctx
        rng = np.random.default_rng(23)
        a = rng.uniform(-1.0, 1.0, (20, 1))
        b = rng.uniform(-1.0, 1.0, (20, 1))
        c = rng.uniform(-1.0, 1.0, (20, 1))
        batch = kruzkov_face_flux(scheme, ctx, a, b, c)
        for i in range(20):
            one = kruzkov_numerical_flux(scheme, segment_face,
                                         float(a[i, 0]), float(b[i, 0]), float(c[i, 0]))
            assert batch[i, 0] == one


class TestCertification:
    def test_single_face_report_rows(self, segment_face):
        report = check_flux_properties(make_scheme("godunov"), segment_face,
                                       n_samples=300, seed=0)
        assert report.passed
        rows = report.rows()
        assert len(rows) == 4
        assert all(len(r) == len(FLUX_REPORT_HEADER) for r in rows)

    @pytest.mark.parametrize("name", ["lf", "godunov"])
    def test_mesh_certificate_passes(self, mesh_a20, name):
        cert = check_scheme_on_mesh(make_scheme(name), mesh_a20,
                                    n_samples=300, seed=0)
        assert cert.passed
        assert cert.faces_checked == mesh_a20.num_slabs * 20
        assert set(cert.worst) == {"consistency", "conservation",
                                   "monotone-own", "monotone-neighbor"}
        assert all(len(r) == len(FLUX_REPORT_HEADER) for r in cert.rows())

    def test_header_is_pinned(self):
        assert FLUX_REPORT_HEADER == ["property", "face", "u", "v",
                                      "residual", "threshold", "pass"]
