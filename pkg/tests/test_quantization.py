import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from qflat import quantization as qa
from qflat.curvature import ScalarCurvatureField, UnsupportedDimensionError
from qflat.fields import field_from_id

PI2 = math.pi**2


class TestConstants:
    @pytest.mark.parametrize("n,c_coeff,A,vol_coeff", [
        (4, Fraction(4), 1, Fraction(8, 3)),
        (6, Fraction(32), 4, Fraction(16, 15)),
        (8, Fraction(384), 24, Fraction(32, 105)),
    ])
    def test_values(self, n, c_coeff, A, vol_coeff):
        c = qa.dimensional_constants(n)
        assert c["c_n_pi_coeff"] == c_coeff
        assert c["A"] == A
        assert c["vol_Sn_pi_coeff"] == vol_coeff
        assert c["identity_ok"]
        assert c["modulus"] == pytest.approx(2 * float(c_coeff) * math.pi ** (n // 2))

    def test_sphere_volume_matches_gamma_formula(self):
        for n in (4, 6, 8):
            vol = 2 * math.pi ** ((n + 1) / 2) / math.gamma((n + 1) / 2)
            assert qa.dimensional_constants(n)["vol_Sn"] == pytest.approx(vol, rel=1e-14)

    @pytest.mark.parametrize("n", [3, 2, 5])
    def test_rejects(self, n):
        with pytest.raises(ValueError):
            qa.dimensional_constants(n)


class TestReport:
    def test_examples(self):
        r = qa.quantization_report(8 * PI2)
        assert (r.m, r.residual, r.quantized) == (1, 0.0, True)
        assert qa.quantization_report(0.0).m == 0
        cone = qa.quantization_report(PI2)
        assert cone.m == 0 and cone.residual == pytest.approx(PI2) and not cone.quantized

    @given(st.integers(-5, 5), st.floats(-0.4, 0.4))
    def test_nearest_multiple(self, m, frac):
        r = qa.quantization_report((m + frac) * 8 * PI2)
        assert r.m == m
        assert r.residual == pytest.approx(abs(frac) * 8 * PI2, abs=1e-9)
        assert set(r.as_dict()) >= {"total", "modulus", "m", "residual"}


class TestTotals:
    def test_sphere(self):
        res = qa.total_q_integral(field_from_id("sphere"))
        assert res.converged
        assert res.value == pytest.approx(8 * PI2, rel=1e-9)

    @pytest.mark.parametrize("beta", [-0.5, -0.25, 0.5])
    def test_cone(self, beta):
        assert qa.total_q_integral(field_from_id(f"cone:beta={beta}")).value == pytest.approx(-4 * PI2 * beta, rel=1e-7)

    def test_flat_and_dimension_guard(self):
        assert qa.total_q_integral(field_from_id("flat")).value == 0.0
        with pytest.raises(UnsupportedDimensionError):
            qa.total_q_integral(field_from_id("sphere", 6))

    def test_closed_totals_and_gbc(self):
        t = qa.closed_totals(field_from_id("sphere"))
        assert t["q"] == pytest.approx(8 * PI2, rel=1e-9)
        assert abs(t["weyl_sq"]) < 1e-12
        assert t["sigma2"] == pytest.approx(4 * PI2, rel=1e-9)
        assert qa.gbc_check(t["q"], t["weyl_sq"]) == pytest.approx(2.0, abs=1e-8)
        assert qa.gbc_sigma2(t["sigma2"]) == pytest.approx(2.0, abs=1e-8)
        assert qa.gbc_check(0.0) == 0.0


class TestProfile:
    @settings(max_examples=10, deadline=None)
    @given(st.lists(st.floats(0.01, 1e4), min_size=1, max_size=4, unique=True))
    def test_flat_ratio_is_one(self, radii):
        prof = qa.isoperimetric_profile(field_from_id("flat"), sorted(radii))
        assert np.allclose(prof.ratio, 1.0, atol=1e-8)

    def test_cone_shell_volumes(self):
        beta = -0.25
        prof = qa.isoperimetric_profile(field_from_id(f"cone:beta={beta}"), [1.0, 10.0, 1000.0])
        for r, b in zip(prof.radii, prof.vol_boundary):
            assert b == pytest.approx(2 * PI2 * r**3 * (1 + r * r) ** (1.5 * beta), rel=1e-13)
        assert prof.ratio[-1] == pytest.approx(1 + beta, rel=1e-2)
        assert prof.volumes_increasing()

    def test_cone_ball_volume_oracle(self):
        beta = 0.5
        prof = qa.isoperimetric_profile(field_from_id(f"cone:beta={beta}"), [2.0])
        expected = 2 * PI2 * quad(lambda s: s**3 * (1 + s * s) ** (2 * beta), 0, 2.0, epsabs=1e-13)[0]
        assert prof.vol_ball[0] == pytest.approx(expected, rel=1e-11)

    def test_sphere_ratio_decreases(self):
        prof = qa.isoperimetric_profile(field_from_id("sphere"), [1.0, 10.0, 100.0])
        assert prof.ratio[0] > prof.ratio[1] > prof.ratio[2]
        assert prof.vol_ball[-1] < 8 * PI2 / 3
        assert prof.volumes_increasing()

    def test_nonradial_profile(self):
        prof = qa.isoperimetric_profile(field_from_id("expr:0*x0"), [1.0, 2.0])
        assert np.allclose(prof.ratio, 1.0, atol=1e-8)

    def test_bad_radii(self):
        for radii in ([], [2.0, 1.0], [-1.0]):
            with pytest.raises(ValueError):
                qa.isoperimetric_profile(field_from_id("flat"), radii)

    @pytest.mark.parametrize("beta", [-0.5, -0.25, -0.125])
    def test_deficit_consistency(self, beta):
        d = qa.deficit_consistency(field_from_id(f"cone:beta={beta}"))
        assert d["lhs"] == pytest.approx(1 + beta, rel=1e-7)
        assert d["relative_gap"] < 0.02

    def test_profile_serializes(self):
        d = qa.isoperimetric_profile(field_from_id("flat"), [1.0]).as_dict()
        assert set(d) == {"radii", "vol_boundary", "vol_ball", "ratio", "converged"}


class TestCutoff:
    def test_profile_values(self):
        eta = qa.CutoffFamily(3.0)
        r = np.linspace(0, 9, 901)
        v = eta.radial(r)[0]
        assert np.all((v >= 0) & (v <= 1))
        assert np.all(v[r <= 3] == 1) and np.all(v[r >= 6] == 0)
        with pytest.raises(ValueError):
            qa.CutoffFamily(0.0)

    def test_derivative_bounds_are_sharp(self):
        rho = 2.0
        eta = qa.CutoffFamily(rho)
        r = np.linspace(rho, 2 * rho, 200001)
        _, d1, d2 = eta.radial(r)
        assert np.max(np.abs(d1)) * rho == pytest.approx(eta.bounds[1], rel=1e-8)
        assert np.max(np.abs(d2)) * rho**2 == pytest.approx(eta.bounds[2], rel=1e-6)
        h = 1e-4
        d3 = (eta.radial(r + h)[2] - eta.radial(r - h)[2]) / (2 * h)
        assert np.max(np.abs(d3[5:-5])) * rho**3 <= eta.bounds[3] * (1 + 1e-6)

    def test_gradient_and_laplacian_against_fd(self):
        eta = qa.CutoffFamily(1.0)
        x = np.array([0.9, 0.7, 0.3, 0.2])
        h = 1e-5
        grad = np.array([(eta(x + h * e) - eta(x - h * e)) / (2 * h) for e in np.eye(4)])
        assert np.allclose(eta.gradient(x), grad, atol=1e-8)
        lap = sum((eta(x + h * e) - 2 * eta(x) + eta(x - h * e)) / h**2 for e in np.eye(4))
        assert eta.laplacian(x) == pytest.approx(lap, rel=1e-4)

    def test_smoothstep(self):
        assert qa.smoothstep5(np.array([-1.0, 0.0, 0.5, 1.0, 2.0])).tolist() == [0.0, 0.0, 0.5, 1.0, 1.0]


def flux_oracle(w, rho):
    """-|S^3| int e^{2w} R'(r) eta'(r) r^3 dr, the annulus integral after one integration by parts."""
    scal = ScalarCurvatureField(w)
    eta = qa.CutoffFamily(rho)

    def integrand(r):
        x = np.array([r, 0, 0, 0])
        return math.exp(2 * float(w.value(x))) * float(scal.deriv((1, 0, 0, 0), x)) * float(eta.radial(r)[1]) * r**3

    return -2 * PI2 * quad(integrand, rho, 2 * rho, epsabs=1e-13, epsrel=1e-12, limit=200)[0]


class TestFlux:
    def test_flat_is_zero(self):
        assert qa.flux_decay_profile(field_from_id("flat"), [10.0, 20.0]) == [0.0, 0.0]
        assert qa.term_split_I_II(field_from_id("flat"), 10.0) == (0.0, 0.0)

    @pytest.mark.parametrize("mid", ["cone:beta=-0.25", "cone:beta=0.5", "bump:a=1,s=1"])
    @pytest.mark.parametrize("rho", [1.0, 10.0])
    def test_matches_integrated_by_parts_oracle(self, mid, rho):
        w = field_from_id(mid)
        F = qa.flux_decay_profile(w, [rho])[0]
        assert F == pytest.approx(flux_oracle(w, rho), rel=1e-8, abs=1e-12)

    @pytest.mark.parametrize("mid", ["sphere", "cone:beta=-0.25"])
    def test_split_adds_up(self, mid):
        w = field_from_id(mid)
        for rho in (10.0, 80.0):
            one, two = qa.term_split_I_II(w, rho)
            assert one + two == pytest.approx(qa.flux_decay_profile(w, [rho])[0], abs=1e-8)

    def test_cone_tends_to_boundary_limit(self):
        beta = -0.25
        w = field_from_id(f"cone:beta={beta}")
        values = qa.flux_decay_profile(w, [10.0, 20.0, 40.0, 80.0])
        limit = 24 * PI2 * beta * (beta + 2) * (1 + beta)
        assert qa.flux_limit_radial(w, 1e6) == pytest.approx(limit, rel=1e-6)
        gaps = [abs(v - limit) for v in values]
        assert all(b < a for a, b in zip(gaps, gaps[1:]))
        assert gaps[-1] < 1e-3 * abs(limit)

    def test_sphere_flux_is_roundoff(self):
        values = qa.flux_decay_profile(field_from_id("sphere"), [10.0, 20.0, 40.0, 80.0])
        assert max(abs(v) for v in values) < 1e-10

    def test_second_term_cauchy_schwarz(self):
        for mid in ("sphere", "cone:beta=-0.25"):
            out = qa.split_second_term_bound(field_from_id(mid), 10.0)
            assert out["ok"]

    def test_observed_rate(self):
        assert qa.observed_rate([1, 2, 4], [1.0, 0.25, 0.0625]) == pytest.approx([-2.0, -2.0])
        assert math.isnan(qa.observed_rate([1, 2], [0.0, 1.0])[0])

    def test_limit_needs_radial_field(self):
        with pytest.raises(ValueError):
            qa.flux_limit_radial(field_from_id("expr:x0"), 1.0)
