"""Conformal factors given by log-kernel potentials of a Q-curvature density.

A factor is *normal* when w(x) = (1/c_n) int log(|y| / |x - y|) P(y) dy + C with
P = Q e^{nw}.  In R^4 the fundamental solution of the bi-Laplacian carries
the constant 2 c_4 = 8 pi^2, so with the 1/c_4 kernel the factor satisfies
Delta_0^2 w = 2 P, i.e. Q_def e^{4w} = P.
"""

from __future__ import annotations

import itertools
import math
import threading
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
from scipy.special import digamma, hyp2f1

from .curvature import UnsupportedDimensionError, q_density
from .fields import ScalarField, fd_derivative, unit_index
from .quadrature import (QuadratureSpec, Region, adaptive_1d, integrate, integrate_radial,
                         log_distance_integral, polar_integral,
                         support_ray_integral)

SPHERE3_AREA = 2 * math.pi**2
C4 = 4 * math.pi**2
NORMAL_SPEC = QuadratureSpec(rtol=1e-12, atol=1e-14)


# ---------------------------------------------------------------------------
# Densities

@dataclass(frozen=True)
class QDensity:
    """A density P on R^4, with the radius outside which it vanishes (or is negligible).

    ``profile`` is set for radial densities and maps |y| to P.  ``breaks``
    lists radii where the profile is not smooth, used to split quadratures.
    """

    P: Callable[[np.ndarray], np.ndarray]
    support_radius: float
    mass: float
    name: str = "density"
    profile: Callable[[np.ndarray], np.ndarray] | None = None
    breaks: tuple = ()
    n: int = 4

    @property
    def radial(self) -> bool:
        return self.profile is not None

    def __call__(self, y):
        return self.P(np.asarray(y, dtype=float))

    def quadrature_mass(self, spec: QuadratureSpec = NORMAL_SPEC) -> float:
        if self.radial:
            total, lo = 0.0, 0.0
            for hi in (*self.breaks, self.support_radius):
                if hi > lo:
                    total += integrate_radial(self.profile, lo, hi, spec, self.n).value
                    lo = hi
            return total
        return integrate(self.P, Region.ball(self.support_radius, n=self.n), spec).value


def _radial_density(profile, support, mass, name, breaks=()) -> QDensity:
    def P(y):
        return profile(np.linalg.norm(y, axis=-1))

    return QDensity(P, float(support), float(mass), name, profile, tuple(breaks))


def density_zero() -> QDensity:
    return _radial_density(lambda r: np.zeros_like(np.asarray(r, dtype=float)), 1.0, 0.0, "zero")


def density_uniform_ball(mass: float = 4 * math.pi**2, radius: float = 1.0) -> QDensity:
    height = mass / (0.5 * math.pi**2 * radius**4)

    def profile(r):
        return np.where(np.asarray(r) <= radius, height, 0.0)

    return _radial_density(profile, radius, mass, f"uniform-ball:mass={mass:g}", (radius,))


def density_poly(mass: float = 4 * math.pi**2, radius: float = 1.0) -> QDensity:
    """h (1 - |y|^2 / radius^2)^2 on the ball, C^1 across its boundary."""
    height = 12 * mass / (math.pi**2 * radius**4)

    def profile(r):
        t = np.minimum(np.asarray(r, dtype=float) / radius, 1.0)
        return height * (1 - t * t) ** 2

    return _radial_density(profile, radius, mass, f"poly:mass={mass:g}", (radius,))


def density_gaussian(mass: float = 4 * math.pi**2, width: float = 1.0) -> QDensity:
    """mass e^{-|y|^2 / width^2} / (pi^2 width^4); treated as supported in |y| <= 9 width."""

    def profile(r):
        return mass * np.exp(-(np.asarray(r, dtype=float) / width) ** 2) / (math.pi**2 * width**4)

    return _radial_density(profile, 9.0 * width, mass, f"gaussian:mass={mass:g}")


def density_from_id(density_id: str) -> QDensity:
    """Resolve ``density:uniform-ball``, ``density:poly``, ``density:gaussian:mass=...``."""
    body = density_id.removeprefix("density:")
    kind, _, rest = body.partition(":")
    params = {}
    for item in filter(None, rest.split(",")):
        key, _, val = item.partition("=")
        params[key.strip()] = float(val)
    makers = {"uniform-ball": (density_uniform_ball, "radius"), "poly": (density_poly, "radius"),
              "gaussian": (density_gaussian, "width"), "zero": (None, None)}
    if kind not in makers:
        raise KeyError(f"unknown density id {density_id!r}")
    if kind == "zero":
        return density_zero()
    make, size_key = makers[kind]
    kwargs = {}
    if "mass" in params:
        kwargs["mass"] = params["mass"]
    if size_key in params:
        kwargs[size_key] = params[size_key]
    return make(**kwargs)


# ---------------------------------------------------------------------------
# Radial potentials

# u^k d^k/du^k of the spherical mean of log|x - y| over |y| = s inside s < r,
# with u = r^2 / 2 and t = s / r; polynomials in t^2.
_INNER_POLY = {
    1: lambda t: 0.5 - 0.25 * t * t,
    2: lambda t: -0.5 + 0.5 * t * t,
    3: lambda t: 1.0 - 1.5 * t * t,
    4: lambda t: -3.0 + 6.0 * t * t,
}


def _chain_terms(alpha: tuple[int, ...]):
    """Expand d^alpha psi(|x|^2 / 2) as a sum of coeff * x^m * psi^(k)(u)."""
    n = len(alpha)
    terms = {((0,) * n, 0): 1}
    for axis, count in enumerate(alpha):
        for _ in range(count):
            nxt: dict = {}
            for (mono, k), c in terms.items():
                if mono[axis]:
                    m2 = list(mono)
                    m2[axis] -= 1
                    key = (tuple(m2), k)
                    nxt[key] = nxt.get(key, 0) + c * mono[axis]
                m3 = list(mono)
                m3[axis] += 1
                key = (tuple(m3), k + 1)
                nxt[key] = nxt.get(key, 0) + c
            terms = {key: c for key, c in nxt.items() if c}
    return terms


class RadialNormalField(ScalarField):
    """w = (1/c_4) int log(|y| / |x - y|) P(y) dy for a radial density P in R^4.

    The spherical mean of log|x - y| over |y| = s is log max(r, s) +
    min(r, s)^2 / (4 max(r, s)^2), which reduces w to one-dimensional
    integrals.  Writing w(x) = psi(|x|^2 / 2), derivatives psi^(k) up to k = 4
    are integrals against derivatives of that mean; Cartesian derivatives
    follow from the chain rule.  Fifth derivatives are finite differences of
    fourth ones.  The fourth-derivative integrand cancels like 1/|x|^4 near
    the origin, so radii below ``r_floor`` are evaluated at ``r_floor``.
    """

    provenance = "convolution"

    def __init__(self, density: QDensity, spec: QuadratureSpec = NORMAL_SPEC, r_floor: float = 1e-3):
        if not density.radial:
            raise ValueError("RadialNormalField needs a radial density")
        if density.n != 4:
            raise UnsupportedDimensionError("radial reduction is implemented for n = 4")
        super().__init__(4, radial=True, name=f"normal[{density.name}]")
        self.density = density
        self.spec = spec
        self.r_floor = r_floor * density.support_radius
        self._cache: dict[tuple[int, float], float] = {}
        self._terms: dict[tuple[int, ...], dict] = {}
        self._lock = threading.Lock()

    def _split(self, g, lo, hi):
        """Adaptive integral of g over [lo, hi] split at the density's breaks."""
        cuts = [lo] + [b for b in self.density.breaks if lo < b < hi] + [hi]
        return sum(adaptive_1d(g, a, b, self.spec).value for a, b in zip(cuts, cuts[1:]))

    def _inner(self, r, fn):
        """int_0^r s^3 P(s) fn(s / r) ds = r^4 int_0^1 t^3 P(r t) fn(t) dt."""
        prof = self.density.profile
        marks = {*self.density.breaks, self.density.support_radius}
        cuts = [0.0] + sorted(b / r for b in marks if 0 < b < r) + [1.0]
        total = sum(adaptive_1d(lambda t: t**3 * fn(t, prof(r * t)), a, b, self.spec).value
                    for a, b in zip(cuts, cuts[1:]))
        return r**4 * total

    def psi(self, k: int, r: float) -> float:
        key = (k, float(r))
        val = self._cache.get(key)
        if val is None:
            val = self._psi(k, float(r))
            with self._lock:
                self._cache[key] = val
        return val

    def _psi(self, k, r):
        prof, R = self.density.profile, self.density.support_radius
        if r == 0.0 and k == 0:
            return 0.0
        if k > 0:
            r = max(r, self.r_floor)
        u = 0.5 * r * r
        if k == 0:
            inner = self._inner(r, lambda t, p: p * (np.log(np.where(t > 0, t, 1.0)) - 0.25 * t * t))
            outer = -self._split(lambda s: s * prof(s) * 0.25 * r * r, r, R) if R > r else 0.0
            return SPHERE3_AREA * (inner + outer) / C4
        poly = _INNER_POLY[k]
        if k >= 3:
            # the t^3 poly moments vanish for k = 3; for k = 4 they cancel the
            # jump term -8 pi^2 P(r) / r^4 from the moving upper limit
            p_r = float(prof(r))
            inner = self._inner(r, lambda t, p: poly(t) * (p - p_r)) / u**k
        else:
            inner = self._inner(r, lambda t, p: poly(t) * p) / u**k
        outer = self._split(lambda s: 0.5 * s * prof(s), r, R) if (k == 1 and R > r) else 0.0
        return -SPHERE3_AREA * (inner + outer) / C4

    def _chain(self, alpha):
        terms = self._terms.get(alpha)
        if terms is None:
            terms = _chain_terms(alpha)
            with self._lock:
                self._terms[alpha] = terms
        return terms

    def _deriv(self, alpha, x):
        order = sum(alpha)
        if order == 5:
            axis = next(i for i, a in enumerate(alpha) if a)
            lower = list(alpha)
            lower[axis] -= 1
            return fd_derivative(lambda p: self.deriv(tuple(lower), p), unit_index(4, axis), x)
        terms = self._chain(alpha)
        flat = x.reshape(-1, 4)
        out = np.empty(len(flat))
        for idx, pt in enumerate(flat):
            r = float(np.linalg.norm(pt))
            total = 0.0
            for (mono, k), c in terms.items():
                total += c * math.prod(pt[i] ** m for i, m in enumerate(mono) if m) * self.psi(k, r)
            out[idx] = total
        return out.reshape(x.shape[:-1])

    def far_field_constant(self) -> float:
        """(1/c_4) int log|y| P(y) dy, the limit of w + (mass / c_4) log|x|."""
        prof = self.density.profile
        cuts = [0.0, *[b for b in self.density.breaks if b < self.density.support_radius],
                self.density.support_radius]
        total = 0.0
        for a, b in zip(cuts, cuts[1:]):
            total += adaptive_1d(lambda s: s**3 * np.log(np.where(s > 0, s, 1.0)) * prof(s),
                                 a, b, self.spec).value
        return SPHERE3_AREA * total / C4


def _log_kernel_derivative(alpha, z):
    """d^alpha_x log(1 / |x - y|) with z = x - y, for |alpha| <= 3."""
    axes = [i for i, a in enumerate(alpha) for _ in range(a)]
    r2 = np.sum(z * z, axis=-1)
    if len(axes) == 1:
        (i,) = axes
        return -z[..., i] / r2
    if len(axes) == 2:
        i, j = axes
        return -(i == j) / r2 + 2 * z[..., i] * z[..., j] / r2**2
    if len(axes) == 3:
        i, j, k = axes
        return (2 * ((i == j) * z[..., k] + (i == k) * z[..., j] + (j == k) * z[..., i]) / r2**2
                - 8 * z[..., i] * z[..., j] * z[..., k] / r2**3)
    raise ValueError("kernel derivatives implemented for orders 1..3")


class ConvolutionField(ScalarField):
    """General-density log-kernel potential in R^4 by polar quadrature about x.

    Orders 1 to 3 integrate derivatives of the kernel (singular like
    |x - y|^{-k}, integrable against rho^3); orders 4 and 5 are finite
    differences of third derivatives.
    """

    provenance = "convolution"

    def __init__(self, density: QDensity, spec: QuadratureSpec | None = None):
        if density.n != 4:
            raise UnsupportedDimensionError("convolution factors are implemented for n = 4")
        super().__init__(4, radial=density.radial, name=f"conv[{density.name}]")
        self.density = density
        self.spec = spec or QuadratureSpec(rtol=1e-10, atol=1e-13, angular_order=16)

    def _point(self, alpha, pt):
        order = sum(alpha)
        dens = self.density
        R = dens.support_radius
        if order == 0:
            zero = np.zeros(4)
            return (log_distance_integral(dens.P, zero, R, 4, self.spec)
                    - log_distance_integral(dens.P, pt, R, 4, self.spec)) / C4

        return _density_integral(dens, pt, lambda z: _log_kernel_derivative(alpha, z), self.spec) / C4

    def _deriv(self, alpha, x):
        order = sum(alpha)
        if order >= 4:
            axis = next(i for i, a in enumerate(alpha) if a)
            lower = list(alpha)
            lower[axis] -= 1
            return fd_derivative(lambda p: self.deriv(tuple(lower), p), unit_index(4, axis), x, 2e-2)
        flat = x.reshape(-1, 4)
        out = np.array([self._point(alpha, pt) for pt in flat])
        return out.reshape(x.shape[:-1])


def normal_factor_from_density(density: QDensity, spec: QuadratureSpec | None = None) -> ScalarField:
    """w = (1/c_4) int log(|y| / |x - y|) P(y) dy, radial reduction when P is radial."""
    if density.radial:
        return RadialNormalField(density, spec or NORMAL_SPEC)
    return ConvolutionField(density, spec)


# ---------------------------------------------------------------------------
# Checks

def _truncated_q_density(w: ScalarField, r_max: float) -> QDensity:
    def P(y):
        y = np.asarray(y, dtype=float)
        inside = np.linalg.norm(y, axis=-1) <= r_max
        vals = np.zeros(y.shape[:-1])
        if np.any(inside):
            vals[inside] = q_density(w, y[inside])
        return vals

    if w.radial:
        def profile(r):
            r = np.asarray(r, dtype=float)
            pts = np.zeros(r.shape + (4,))
            pts[..., 0] = r
            return np.where(r <= r_max, q_density(w, pts), 0.0)

        return QDensity(P, r_max, float("nan"), f"Qe4w[{w.name}]", profile)
    return QDensity(P, r_max, float("nan"), f"Qe4w[{w.name}]")


def normality_residual(w: ScalarField, probes, r_max: float = 100.0,
                       spec: QuadratureSpec | None = None) -> float:
    """Max over probe pairs of |(w(a) - w(b)) - (conv(a) - conv(b))|.

    conv is the log-kernel potential of the metric's own density Q_def e^{4w},
    truncated to |y| <= r_max.  Differencing removes the free additive constant.
    """
    if w.n != 4:
        raise UnsupportedDimensionError("normality is checked for n = 4")
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    dens = _truncated_q_density(w, r_max)
    if dens.radial:
        field = RadialNormalField(dens, spec or NORMAL_SPEC)
        conv = field.value(probes)
    else:
        sp = spec or QuadratureSpec(rtol=1e-6, atol=1e-6, angular_order=8)
        # the log|y| term is the same for every probe and cancels in differences
        conv = np.array([-log_distance_integral(dens.P, p, r_max, 4, sp) / C4 for p in probes])
    vals = w.value(probes)
    worst = 0.0
    for i, j in itertools.combinations(range(len(probes)), 2):
        worst = max(worst, abs((vals[i] - vals[j]) - (conv[i] - conv[j])))
    return worst


def _density_integral(density: QDensity, x, kernel, spec: QuadratureSpec) -> float:
    """int kernel(x - y) P(y) dy by polar quadrature.

    Points outside the support use polar coordinates about the origin, where
    the kernel is smooth; otherwise rays about x, so a |x - y|^{-k}
    singularity with k <= 3 is absorbed by the Jacobian.
    """
    x = np.asarray(x, dtype=float)
    R = density.support_radius
    if float(np.linalg.norm(x)) > R:
        def term(pts, rs):
            return kernel(x - pts) * density.P(pts) * (rs**3)[:, None]

        return polar_integral(term, np.zeros(4), R, 4, spec).value

    def term_x(pts, rho):
        with np.errstate(divide="ignore", invalid="ignore"):
            vals = np.where(rho > 0, kernel(x - pts) * rho**3, 0.0)
        return vals * density.P(pts)

    return support_ray_integral(term_x, x, R, 4, spec).value


_LOG_CONST = 2 * digamma(1.0) - digamma(1.5) - digamma(0.5)


def _sphere_mean_factor(k: int, z):
    """2F1(k/2, k/2 - 1; 2; z); for k = 3 the log singularity at z = 1 uses its asymptotic form."""
    z = np.asarray(z, dtype=float)
    if k != 3:
        return hyp2f1(k / 2, k / 2 - 1, 2, z)
    gap = np.maximum(1 - z, np.finfo(float).tiny)
    near = gap < 1e-9
    out = np.where(near, (2 / math.pi) * (-np.log(gap) + _LOG_CONST), 0.0)
    return np.where(near, out, hyp2f1(1.5, 0.5, 2, np.where(near, 0.0, z)))


def _kernel_power_integral(density: QDensity, x, power: int, spec: QuadratureSpec) -> float:
    """int |x - y|^{-power} |P(y)| dy over the density's support."""
    x = np.asarray(x, dtype=float)
    if not density.radial:
        absd = QDensity(lambda y: np.abs(density.P(y)), density.support_radius, density.mass)
        return _density_integral(absd, x, lambda z: np.sum(z * z, axis=-1) ** (-power / 2), spec)
    # radial: int |S^3| s^3 |P(s)| <|x - y|^{-power}>_{|y| = s} ds, with the sphere
    # mean max^{-k} 2F1(k/2, k/2 - 1; 2; (min/max)^2) (Gegenbauer generating function)
    r = float(np.linalg.norm(x))
    prof = density.profile
    inner_spec = QuadratureSpec(rtol=spec.rtol, atol=spec.atol)

    def g(ss):
        big, small = np.maximum(ss, r), np.minimum(ss, r)
        avg = big ** (-power) * _sphere_mean_factor(power, (small / big) ** 2)
        return SPHERE3_AREA * ss**3 * np.abs(prof(ss)) * avg

    marks = sorted({0.0, r, *density.breaks, density.support_radius})
    cuts = [m for m in marks if m <= density.support_radius]
    return sum(adaptive_1d(g, a, b, inner_spec).value for a, b in zip(cuts, cuts[1:]) if b > a)


@dataclass
class BoundCheck:
    lhs: float
    rhs: float
    constant: float

    @property
    def ok(self) -> bool:
        return self.lhs <= self.constant * self.rhs * (1 + 1e-6) + 1e-14

    def __iter__(self):
        yield self.lhs
        yield self.constant * self.rhs
        yield self.ok


def derivative_bound_check(w: ScalarField, density: QDensity, alpha: Sequence[int], x, *,
                           constant: float | None = None,
                           spec: QuadratureSpec | None = None) -> BoundCheck:
    """Compare |d^alpha w(x)| with (C / c_4) int |x - y|^{-|alpha|} |P(y)| dy.

    The default C = (|alpha| - 1)! is the sharp pointwise bound on the kernel
    derivative: 1 for orders one and two, 2 for order three.
    """
    alpha = tuple(alpha)
    order = sum(alpha)
    if order < 1:
        raise ValueError("needs |alpha| >= 1")
    if order >= 4:
        raise ValueError("the kernel bound is integrable only for |alpha| <= 3 in R^4")
    if constant is None:
        constant = float(math.factorial(order - 1))
    sp = spec or QuadratureSpec(rtol=1e-10, atol=1e-14, angular_order=16)
    lhs = float(abs(w.deriv(alpha, np.asarray(x, dtype=float))))
    rhs = _kernel_power_integral(density, x, order, sp) / C4
    return BoundCheck(lhs, rhs, constant)


def annulus_gradient_ratio(w: ScalarField, rho: float,
                           spec: QuadratureSpec = NORMAL_SPEC) -> float:
    """rho^{-2} int_{rho < |x| < 2 rho} |grad w|^2 dx."""
    if rho <= 0:
        raise ValueError("rho must be positive")
    val = integrate(lambda x: np.sum(w.gradient(x) ** 2, axis=-1),
                    Region.annulus(rho, 2 * rho, n=w.n), spec, radial=w.radial).value
    return val / rho**2


# ---------------------------------------------------------------------------
# Exponents

@dataclass(frozen=True)
class ExponentSolution:
    q: tuple[Fraction, ...]
    eps: Fraction
    norms: tuple[int, ...]
    n: int
    a: int

    @property
    def threshold(self) -> Fraction:
        return Fraction((self.n - 1) * (self.n - 2), self.n)

    def conditions(self) -> dict[str, bool]:
        T = self.threshold
        return {
            "all_q_above_one": all(q > 1 for q in self.q),
            "reciprocals_sum_to_one": sum(1 / q for q in self.q) == 1,
            "products_below_threshold": all(k * q < T for k, q in zip(self.norms, self.q)),
        }

    @property
    def valid(self) -> bool:
        return all(self.conditions().values())


def holder_exponents(norms: Sequence[int], n: int, a: int, *, max_halvings: int = 200) -> ExponentSolution:
    """Exponents q_k with sum 1/q_k = 1, q_k > 1 and |alpha^k| q_k < (n-1)(n-2)/n.

    q_k = T / |alpha^k| - eps for all but the last index, the last fixed by
    the reciprocal sum; eps is the largest 1/2^m for which all conditions
    hold.  Requires p >= 2 multi-indices (p = 1 forces q_1 = 1).
    """
    norms = tuple(int(k) for k in norms)
    if n < 4 or n % 2:
        raise ValueError("n must be even and at least 4")
    if a < 1:
        raise ValueError("a must be at least 1")
    if not norms or any(k < 1 for k in norms):
        raise ValueError("every multi-index needs |alpha| >= 1")
    if sum(norms) != n - 2 - a:
        raise ValueError(f"orders must sum to n - 2 - a = {n - 2 - a}")
    if len(norms) == 1:
        raise ValueError("a single multi-index forces q = 1; at least two are required")
    T = Fraction((n - 1) * (n - 2), n)
    for m in range(1, max_halvings + 1):
        eps = Fraction(1, 2**m)
        head = [T / k - eps for k in norms[:-1]]
        if any(q <= 0 for q in head):
            continue
        rest = 1 - sum(1 / q for q in head)
        if rest <= 0:
            continue
        sol = ExponentSolution(tuple(head + [1 / rest]), eps, norms, n, a)
        if sol.valid:
            return sol
    raise ValueError("no dyadic epsilon satisfies the conditions")


__all__ = [
    "QDensity", "density_zero", "density_uniform_ball", "density_poly", "density_gaussian",
    "density_from_id", "RadialNormalField", "ConvolutionField", "normal_factor_from_density",
    "normality_residual", "derivative_bound_check", "BoundCheck", "annulus_gradient_ratio",
    "ExponentSolution", "holder_exponents",
]
