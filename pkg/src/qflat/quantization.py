"""Global checks: total Q-curvature, quantization modulus, isoperimetric ratios, flux decay."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import tensor_core as tc
from .curvature import (UnsupportedDimensionError, ScalarCurvatureField, curvature_bundle,
                        q_curvature_4d)
from .fields import ScalarField
from .quadrature import DEFAULT_SPEC, QuadratureSpec, QuadResult, Region, integrate, integrate_radial

SPHERE3_AREA = 2 * math.pi**2


def dimensional_constants(n: int) -> dict:
    """Constants of the quantization identity in even dimension n >= 4.

    c_n = 2^(n-2) ((n-2)/2)! pi^(n/2), A = 2^(n/2-2) ((n-2)/2)!,
    |S^n| = 2^(n/2+1) pi^(n/2) / (n-1)!!.  Coefficients of pi^(n/2) are kept as
    Fractions so ``identity_ok`` (A (n-1)!! |S^n| = 2 c_n) is decided exactly.
    """
    if n < 4 or n % 2:
        raise ValueError("dimensional constants need an even n >= 4")
    h = n // 2
    fact = math.factorial(h - 1)
    c_coeff = Fraction(2 ** (n - 2) * fact)
    A = Fraction(2 ** (h - 2) * fact)
    dfact = tc.double_factorial(n - 1)
    vol_coeff = Fraction(2 ** (h + 1), dfact)
    identity_ok = A * dfact * vol_coeff == 2 * c_coeff
    pi_h = math.pi**h
    return {
        "n": n,
        "c_n": float(c_coeff) * pi_h,
        "A": int(A),
        "vol_Sn": float(vol_coeff) * pi_h,
        "modulus": float(2 * c_coeff) * pi_h,
        "c_n_pi_coeff": c_coeff,
        "vol_Sn_pi_coeff": vol_coeff,
        "pi_power": h,
        "identity_ok": bool(identity_ok),
    }


@dataclass
class QuantizationReport:
    total: float
    modulus: float
    m: int
    residual: float
    n: int = 4
    euler: int | None = None
    tol: float = 1e-4

    @property
    def relative_residual(self) -> float:
        return self.residual / self.modulus

    @property
    def quantized(self) -> bool:
        return self.relative_residual < self.tol

    def as_dict(self) -> dict:
        return {"total": self.total, "modulus": self.modulus, "m": self.m,
                "residual": self.residual, "relative_residual": self.relative_residual,
                "quantized": self.quantized, "n": self.n, "euler": self.euler}


def quantization_report(total: float, n: int = 4, *, euler: int | None = None,
                        tol: float = 1e-4) -> QuantizationReport:
    modulus = dimensional_constants(n)["modulus"]
    m = int(round(total / modulus))
    return QuantizationReport(float(total), modulus, m, abs(total - m * modulus), n, euler, tol)


def _axis_points(rs, n):
    pts = np.zeros(np.shape(rs) + (n,))
    pts[..., 0] = rs
    return pts


def _require_4d(w: ScalarField):
    if w.n != 4:
        raise UnsupportedDimensionError("this check is implemented for n = 4 only")


def _integrate_over_r4(density, w: ScalarField, spec: QuadratureSpec, r_max: float | None):
    """int_{R^4} density dx: radial path to infinity, else a ball of radius r_max."""
    if w.radial:
        return integrate(density, Region.ball(np.inf if r_max is None else r_max), spec, radial=True)
    return integrate(density, Region.ball(50.0 if r_max is None else r_max), spec)


def total_q_integral(w: ScalarField, spec: QuadratureSpec = DEFAULT_SPEC, *,
                     r_max: float | None = None) -> QuadResult:
    """int Q_def e^{4w} dx over R^4 (truncated at r_max for non-radial fields)."""
    _require_4d(w)

    def density(x):
        return q_curvature_4d(w, x).q_def * np.exp(4 * w.value(x))

    return _integrate_over_r4(density, w, spec, r_max)


def closed_totals(w: ScalarField, spec: QuadratureSpec = DEFAULT_SPEC, *,
                  r_max: float | None = None) -> dict:
    """Totals of Q, |W|^2 and sigma_2(A) over a chart covering a closed 4-manifold up to a null set."""
    _require_4d(w)

    def weyl(x):
        b = curvature_bundle(w, x)
        return tc.weyl_norm_sq(b["Rm"], b["g"]) * np.exp(4 * w.value(x))

    def sig(x):
        b = curvature_bundle(w, x)
        return tc.sigma2(b["A"], b["g"]) * np.exp(4 * w.value(x))

    q = total_q_integral(w, spec, r_max=r_max)
    return {"q": q.value, "weyl_sq": _integrate_over_r4(weyl, w, spec, r_max).value,
            "sigma2": _integrate_over_r4(sig, w, spec, r_max).value, "q_error": q.error}


def gbc_check(total_q: float, total_weyl_sq: float = 0.0) -> float:
    """(1/4 pi^2) int (|W|^2 / 8 + Q) dv_g, the Euler characteristic of a closed 4-manifold."""
    return (total_weyl_sq / 8 + total_q) / (4 * math.pi**2)


def gbc_sigma2(total_sigma2: float) -> float:
    """(1/4 pi^2) int 2 sigma_2(A) dv_g; agrees with gbc_check for closed conformally flat data."""
    return 2 * total_sigma2 / (4 * math.pi**2)


# ---------------------------------------------------------------------------
# Isoperimetric profile

@dataclass
class RadialProfile:
    radii: list[float]
    vol_boundary: list[float]
    vol_ball: list[float]
    ratio: list[float]
    converged: bool = True

    def rows(self):
        return list(zip(self.radii, self.vol_boundary, self.vol_ball, self.ratio))

    def volumes_increasing(self) -> bool:
        return all(b > a for a, b in zip(self.vol_ball, self.vol_ball[1:]))

    def as_dict(self) -> dict:
        return {"radii": self.radii, "vol_boundary": self.vol_boundary,
                "vol_ball": self.vol_ball, "ratio": self.ratio, "converged": self.converged}


def isoperimetric_ratio(vol_boundary: float, vol_ball: float) -> float:
    """vol(dB)^{4/3} / (4 (2 pi^2)^{1/3} vol(B)); equal to 1 for Euclidean balls."""
    return vol_boundary ** (4 / 3) / (4 * SPHERE3_AREA ** (1 / 3) * vol_ball)


def isoperimetric_profile(w: ScalarField, radii, spec: QuadratureSpec = DEFAULT_SPEC) -> RadialProfile:
    """Metric volumes of Euclidean balls B(0, r) and their boundary spheres for each radius."""
    _require_4d(w)
    radii = [float(r) for r in radii]
    if not radii or any(r <= 0 for r in radii) or any(b <= a for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must be positive and strictly increasing")
    e3 = lambda x: np.exp(3 * w.value(x))  # noqa: E731
    e4 = lambda x: np.exp(4 * w.value(x))  # noqa: E731
    bnd, ball, ratio = [], [], []
    acc, lo, ok = 0.0, 0.0, True
    for r in radii:
        if w.radial:
            b = SPHERE3_AREA * r**3 * float(e3(_axis_points(r, 4)))
            piece = integrate_radial(lambda s: e4(_axis_points(s, 4)), lo, r, spec)
        else:
            b = integrate(e3, Region.sphere(r), spec).value
            region = Region.ball(r) if lo == 0 else Region.annulus(lo, r)
            piece = integrate(e4, region, spec)
        ok &= piece.converged
        acc += piece.value
        bnd.append(b)
        ball.append(acc)
        ratio.append(isoperimetric_ratio(b, acc))
        lo = r
    return RadialProfile(radii, bnd, ball, ratio, ok)


def deficit_consistency(w: ScalarField, r_max: float = 1e4,
                        spec: QuadratureSpec = DEFAULT_SPEC) -> dict:
    """Compare 1 - int Q / 4 pi^2 with the isoperimetric ratio at r_max."""
    total = total_q_integral(w, spec).value
    lhs = 1 - total / (4 * math.pi**2)
    rhs = isoperimetric_profile(w, [r_max], spec).ratio[-1]
    gap = abs(lhs - rhs)
    return {"lhs": lhs, "rhs": rhs, "gap": gap, "relative_gap": gap / max(abs(lhs), 1e-300)}


# ---------------------------------------------------------------------------
# Cutoffs and flux

def smoothstep5(t):
    t = np.clip(t, 0.0, 1.0)
    return t**3 * (10 - 15 * t + 6 * t * t)


@dataclass(frozen=True)
class CutoffFamily:
    """eta_rho(x) = 1 - S((|x| - rho) / rho) with S the quintic smoothstep.

    eta is 1 on B(0, rho), 0 outside B(0, 2 rho), and C^2 across both spheres.
    ``bounds[k]`` is the sharp C_k in |d^k eta / dr^k| <= C_k rho^{-k}.
    """

    rho: float
    bounds: dict = field(default_factory=lambda: {1: 15 / 8, 2: 10 / math.sqrt(3), 3: 60.0})

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("rho must be positive")

    def radial(self, r):
        """eta, eta', eta'' as functions of r = |x|."""
        rho = self.rho
        t = np.clip((np.asarray(r, dtype=float) - rho) / rho, 0.0, 1.0)
        s0 = t**3 * (10 - 15 * t + 6 * t * t)
        s1 = 30 * t**2 * (1 - t) ** 2
        s2 = 60 * t * (1 - t) * (1 - 2 * t)
        return 1 - s0, -s1 / rho, -s2 / rho**2

    def __call__(self, x):
        return self.radial(np.linalg.norm(x, axis=-1))[0]

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x, axis=-1)
        d1 = self.radial(r)[1]
        return (d1 / np.where(r > 0, r, 1.0))[..., None] * x

    def laplacian(self, x, n: int = 4):
        r = np.linalg.norm(np.asarray(x, dtype=float), axis=-1)
        _, d1, d2 = self.radial(r)
        return d2 + (n - 1) * d1 / np.where(r > 0, r, 1.0)


def _flux_parts(w: ScalarField, rho: float):
    scal = ScalarCurvatureField(w)
    eta = CutoffFamily(rho)

    def part_one(x):
        return scal.value(x) * np.exp(2 * w.value(x)) * eta.laplacian(x)

    def part_two(x):
        return scal.value(x) * np.exp(2 * w.value(x)) * 2 * np.sum(w.gradient(x) * eta.gradient(x), axis=-1)

    def whole(x):
        # R_g d_i(e^{2w} d_i eta), the flat-coordinate form of R_g Delta_g eta dv_g
        return scal.value(x) * np.exp(2 * w.value(x)) * (
            eta.laplacian(x) + 2 * np.sum(w.gradient(x) * eta.gradient(x), axis=-1))

    return part_one, part_two, whole


# R_g carries ~1e-13 relative cancellation noise at large |x|; atol sits above it
_FLUX_SPEC = QuadratureSpec(rtol=1e-12, atol=1e-11)


def _annulus_integral(f, w, rho, spec):
    return integrate(f, Region.annulus(rho, 2 * rho), spec, radial=w.radial)


def flux_decay_profile(w: ScalarField, scales, spec: QuadratureSpec = _FLUX_SPEC) -> list[float]:
    """F(rho) = int_{rho < |x| < 2 rho} R_g Delta_g eta_rho dv_g for each rho."""
    _require_4d(w)
    out = []
    for rho in scales:
        whole = _flux_parts(w, float(rho))[2]
        out.append(_annulus_integral(whole, w, float(rho), spec).value)
    return out


def term_split_I_II(w: ScalarField, rho: float, spec: QuadratureSpec = _FLUX_SPEC) -> tuple[float, float]:
    """I = int R_g e^{2w} Delta_0 eta dx and II = int R_g d_i(e^{2w}) d_i eta dx over the annulus."""
    _require_4d(w)
    one, two, _ = _flux_parts(w, float(rho))
    return (_annulus_integral(one, w, rho, spec).value, _annulus_integral(two, w, rho, spec).value)


def split_second_term_bound(w: ScalarField, rho: float, spec: QuadratureSpec = _FLUX_SPEC) -> dict:
    """Cauchy-Schwarz control of II.

    |II| <= 2 C_1 (rho^{-2} int |grad w|^2)^{1/2} (int R_g^2 e^{4w})^{1/2}, both over the annulus.
    """
    _, ii = term_split_I_II(w, rho, spec)
    scal = ScalarCurvatureField(w)
    grad_sq = _annulus_integral(lambda x: np.sum(w.gradient(x) ** 2, axis=-1), w, rho, spec).value
    r_sq = _annulus_integral(lambda x: scal.value(x) ** 2 * np.exp(4 * w.value(x)), w, rho, spec).value
    bound = 2 * CutoffFamily(rho).bounds[1] * math.sqrt(grad_sq / rho**2) * math.sqrt(r_sq)
    return {"II": ii, "bound": bound, "ok": abs(ii) <= bound * (1 + 1e-12)}


def flux_limit_radial(w: ScalarField, r: float) -> float:
    """|S^3| r^3 e^{2w} dR/dr at radius r for a radial field.

    F(rho) tends to this quantity's limit as rho -> infinity, i.e. to the total
    int Delta_g R_g dv_g, when that limit exists.
    """
    if not w.radial:
        raise ValueError("needs a radial field")
    x = _axis_points(float(r), w.n)
    dr = ScalarCurvatureField(w).deriv((1, 0, 0, 0), x)
    return float(SPHERE3_AREA * r**3 * np.exp(2 * w.value(x)) * dr)


def observed_rate(scales, values) -> list[float]:
    """Log-log slopes between consecutive scales (NaN where a value is zero)."""
    out = []
    for (r0, v0), (r1, v1) in zip(zip(scales, values), zip(scales[1:], values[1:])):
        if v0 == 0 or v1 == 0:
            out.append(float("nan"))
        else:
            out.append(math.log(abs(v1) / abs(v0)) / math.log(r1 / r0))
    return out


__all__ = [
    "dimensional_constants", "QuantizationReport", "quantization_report", "total_q_integral",
    "closed_totals", "gbc_check", "gbc_sigma2", "RadialProfile", "isoperimetric_ratio",
    "isoperimetric_profile", "deficit_consistency", "CutoffFamily", "smoothstep5",
    "flux_decay_profile", "term_split_I_II", "split_second_term_bound", "flux_limit_radial",
    "observed_rate",
]
