"""Deterministic quadrature over balls, annuli, spheres and boxes in R^n.

Everything is built from Gauss-Legendre panels with dyadic bisection; the
error estimate of a panel is the difference between the n-point and the
2n-point rule.  Panels are processed depth first, left to right, so repeated
calls sum in the same order and give bit-identical results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.special import roots_jacobi

from .fields import sphere_area


class IntegrandError(ArithmeticError):
    """The integrand returned a non-finite value."""

    def __init__(self, location):
        self.location = np.asarray(location)
        super().__init__(f"non-finite integrand at {self.location.tolist()}")


class ToleranceNotMet(ArithmeticError):
    pass


@dataclass(frozen=True)
class QuadratureSpec:
    rtol: float = 1e-10
    atol: float = 1e-13
    max_depth: int = 40
    rule: str = "gl8"
    angular_order: int = 12

    def __post_init__(self):
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("tolerances must be positive")
        if self.angular_order < 2:
            raise ValueError("angular order too small")

    @property
    def order(self) -> int:
        return int(self.rule.removeprefix("gl"))


DEFAULT_SPEC = QuadratureSpec()
MAX_PANELS = 4096


@dataclass(frozen=True)
class Region:
    """kind in {"ball", "annulus", "sphere", "box"}; ``radii`` is (r,) or (r1, r2).

    For boxes ``radii`` holds the half-widths per axis.
    """

    kind: str
    center: tuple = field(default=())
    radii: tuple = (1.0,)

    def __post_init__(self):
        if self.kind not in ("ball", "annulus", "sphere", "box"):
            raise ValueError(f"unknown region kind {self.kind!r}")
        if any(not r > 0 for r in self.radii):
            raise ValueError("radii must be positive")
        if self.kind == "annulus" and not (len(self.radii) == 2 and self.radii[0] < self.radii[1]):
            raise ValueError("annulus needs r1 < r2")

    @classmethod
    def ball(cls, r, center=None, n=4):
        return cls("ball", _center(center, n), (float(r),))

    @classmethod
    def annulus(cls, r1, r2, center=None, n=4):
        return cls("annulus", _center(center, n), (float(r1), float(r2)))

    @classmethod
    def sphere(cls, r, center=None, n=4):
        return cls("sphere", _center(center, n), (float(r),))

    @classmethod
    def box(cls, half_widths, center=None):
        hw = tuple(float(h) for h in half_widths)
        return cls("box", _center(center, len(hw)), hw)

    @property
    def n(self) -> int:
        return len(self.center)


def _center(center, n):
    return tuple(float(c) for c in (np.zeros(n) if center is None else center))


@dataclass
class QuadResult:
    value: float
    error: float
    converged: bool = True
    evaluations: int = 0

    def __iter__(self):
        yield self.value
        yield self.error


@lru_cache(maxsize=None)
def _gl(order: int):
    return np.polynomial.legendre.leggauss(order)


def _checked(values, points):
    values = np.asarray(values, dtype=float)
    bad = ~np.isfinite(values)
    if np.any(bad):
        first = np.argwhere(bad)[0]
        loc = np.asarray(points)[tuple(first)] if np.ndim(points) else points
        raise IntegrandError(loc)
    return values


def _panel_pair(f, a, b, q):
    """G_q and G_2q estimates on [a, b] and the G_2q estimate of int |f|, from one call of f."""
    x1, w1 = _gl(q)
    x2, w2 = _gl(2 * q)
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    nodes = mid + half * np.concatenate([x1, x2])
    vals = _checked(f(nodes), nodes)
    lo, hi = vals[:q], vals[q:]
    return half * np.dot(w1, lo), half * np.dot(w2, hi), half * np.dot(w2, np.abs(hi))


def adaptive_1d(f: Callable[[np.ndarray], np.ndarray], a: float, b: float,
                spec: QuadratureSpec = DEFAULT_SPEC) -> QuadResult:
    """Adaptive Gauss-Legendre on [a, b] for a vectorized integrand."""
    if not (np.isfinite(a) and np.isfinite(b)):
        raise ValueError("use integrate_radial for infinite intervals")
    if a == b:
        return QuadResult(0.0, 0.0)
    q = spec.order
    first = _panel_pair(f, a, b, q)
    # roundoff floor: cancellation in an integral of size ~0 cannot beat eps * int |f|
    floor = 64 * np.finfo(float).eps * first[2]
    tol = max(spec.atol, spec.rtol * abs(first[1]), floor)
    total, err, evals, converged = 0.0, 0.0, 0, True
    stack = [(a, b, 0, first)]
    panels = 0
    while stack:
        lo, hi, depth, pair = stack.pop()
        if pair is None:
            pair = _panel_pair(f, lo, hi, q)
        lo_val, hi_val, _ = pair
        evals += 3 * q
        panels += 1
        e = abs(hi_val - lo_val)
        share = tol * (hi - lo) / (b - a)
        if e <= share or depth >= spec.max_depth or panels + len(stack) >= MAX_PANELS:
            if e > share:
                converged = False
            total += hi_val
            err += e
        else:
            mid = 0.5 * (lo + hi)
            # right pushed first so the left half is processed first
            stack.append((mid, hi, depth + 1, None))
            stack.append((lo, mid, depth + 1, None))
    return QuadResult(float(total), float(err), converged, evals)


def _semi_infinite(f, a, spec):
    """Integrate over [a, inf) on geometric shells with a geometric tail estimate."""
    start = max(a, 1.0)
    total, err, evals, converged = 0.0, 0.0, 0, True
    if start > a:
        r = adaptive_1d(f, a, start, spec)
        total, err, evals, converged = r.value, r.error, r.evaluations, r.converged
    lo, prev = start, None
    tail = 0.0
    for _ in range(200):
        hi = 2 * lo
        r = adaptive_1d(f, lo, hi, spec)
        total += r.value
        err += r.error
        evals += r.evaluations
        converged &= r.converged
        if prev is not None and abs(r.value) <= max(spec.atol, spec.rtol * abs(total)):
            ratio = abs(r.value) / abs(prev) if prev else 0.0
            if ratio < 1:
                tail = abs(r.value) * ratio / (1 - ratio)
                break
        prev = r.value
        lo = hi
    else:
        converged = False
    return QuadResult(float(total), float(err + tail), converged, evals)


def integrate_radial(phi: Callable[[np.ndarray], np.ndarray], r1: float, r2: float,
                     spec: QuadratureSpec = DEFAULT_SPEC, n: int = 4) -> QuadResult:
    """|S^{n-1}| * int_{r1}^{r2} phi(r) r^{n-1} dr; r2 may be infinite."""
    area = sphere_area(n)

    def integrand(r):
        return phi(r) * r ** (n - 1)

    if np.isinf(r2):
        res = _semi_infinite(integrand, r1, spec)
    else:
        res = adaptive_1d(integrand, r1, r2, spec)
    return QuadResult(area * res.value, area * res.error, res.converged, res.evaluations)


# ---------------------------------------------------------------------------
# Spheres

@lru_cache(maxsize=None)
def sphere_rule(n: int, order: int):
    """Unit vectors and weights of a product rule on S^{n-1} (weights sum to |S^{n-1}|)."""
    if n == 1:
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    m_az = 2 * order
    az = 2 * np.pi * np.arange(m_az) / m_az
    az_w = np.full(m_az, 2 * np.pi / m_az)
    dirs = np.stack([np.cos(az), np.sin(az)], axis=-1)
    weights = az_w
    t, tw = _gl(order)
    polar = 0.5 * np.pi * (t + 1)
    for k in range(1, n - 1):
        # lift S^{k} -> S^{k+1}: x = (cos p, sin p * old), weight sin^k p
        pw = 0.5 * np.pi * tw * np.sin(polar) ** k
        new_dirs = np.concatenate(
            [np.repeat(np.cos(polar), len(dirs))[:, None],
             (np.sin(polar)[:, None, None] * dirs[None]).reshape(-1, dirs.shape[1])], axis=1)
        weights = (pw[:, None] * weights[None]).reshape(-1)
        dirs = new_dirs
    return dirs, weights


def integrate_sphere(f, r: float, center=None, n: int = 4,
                     spec: QuadratureSpec = DEFAULT_SPEC, *, check: bool = True) -> QuadResult:
    """Integral of f over the Euclidean sphere |x - c| = r with area form dsigma_0."""
    c = np.zeros(n) if center is None else np.asarray(center, dtype=float)
    dirs, wts = sphere_rule(n, spec.angular_order)
    pts = c + r * dirs
    val = r ** (n - 1) * float(np.dot(wts, _checked(f(pts), pts)))
    err = 0.0
    if check:
        dirs2, wts2 = sphere_rule(n, spec.angular_order + spec.angular_order // 2)
        pts2 = c + r * dirs2
        val2 = r ** (n - 1) * float(np.dot(wts2, _checked(f(pts2), pts2)))
        err = abs(val2 - val)
        val = val2
    return QuadResult(val, err, err <= max(spec.atol, 1e3 * spec.rtol * abs(val)))


def _shell_integral(f, r1, r2, center, n, spec):
    """Ball/annulus integral: radial adaptivity over angular product sums."""
    c = np.asarray(center, dtype=float)
    dirs, wts = sphere_rule(n, spec.angular_order)

    def radial(rs):
        pts = c + rs[:, None, None] * dirs[None]
        vals = _checked(f(pts), pts)
        return (vals @ wts) * rs ** (n - 1)

    res = adaptive_1d(radial, r1, r2, spec)
    # angular resolution check at the mid radius
    rm = 0.5 * (r1 + r2)
    coarse = integrate_sphere(f, rm, c, n, spec, check=True)
    ang_rel = coarse.error / max(abs(coarse.value), spec.atol)
    res.error += ang_rel * abs(res.value)
    return res


def _box_integral(f, center, half, spec, depth=0):
    n = len(center)
    q = max(3, spec.order // 2)
    x, w = _gl(q)
    grids = np.meshgrid(*[center[i] + half[i] * x for i in range(n)], indexing="ij")
    pts = np.stack(grids, axis=-1).reshape(-1, n)
    W = np.ones(1)
    for i in range(n):
        W = np.outer(W, w * half[i]).reshape(-1)
    coarse = float(np.dot(W, _checked(f(pts), pts)))
    fine, subs = 0.0, []
    for signs in np.ndindex(*(2,) * n):
        sub_c = center + half * (np.array(signs) - 0.5)
        sub_p = np.stack(np.meshgrid(*[sub_c[i] + 0.5 * half[i] * x for i in range(n)],
                                     indexing="ij"), axis=-1).reshape(-1, n)
        sub_w = W / 2**n
        subs.append(sub_c)
        fine += float(np.dot(sub_w, _checked(f(sub_p), sub_p)))
    err = abs(fine - coarse)
    if err <= max(spec.atol, spec.rtol * abs(fine)) or depth >= min(spec.max_depth, 6):
        return QuadResult(fine, err, err <= max(spec.atol, spec.rtol * abs(fine)))
    total, tot_err, ok = 0.0, 0.0, True
    for sub_c in subs:
        r = _box_integral(f, sub_c, 0.5 * half, spec, depth + 1)
        total += r.value
        tot_err += r.error
        ok &= r.converged
    return QuadResult(total, tot_err, ok)


def integrate(f, region: Region, spec: QuadratureSpec = DEFAULT_SPEC, *, radial: bool = False,
              strict: bool = False) -> QuadResult:
    """Integrate a vectorized point function over a region.

    With ``radial=True`` the integrand is sampled along the first axis only and
    reduced to a one-dimensional integral (the region must be centred at 0).
    An infinite outer radius is allowed for balls and annuli.  With
    ``strict=True`` a missed tolerance raises ToleranceNotMet instead of
    clearing the ``converged`` flag.
    """
    n = region.n
    c = np.asarray(region.center)
    if region.kind == "box":
        res = _box_integral(f, c, np.asarray(region.radii, dtype=float), spec)
    elif region.kind == "sphere":
        r = region.radii[0]
        if radial:
            e = np.zeros(n)
            e[0] = r
            v = float(_checked(f(c + e), e))
            res = QuadResult(v * sphere_area(n) * r ** (n - 1), 0.0)
        else:
            res = integrate_sphere(f, r, c, n, spec)
    else:
        r1, r2 = (0.0, region.radii[0]) if region.kind == "ball" else region.radii
        if radial:
            if np.any(c != 0):
                raise ValueError("radial fast path needs a centred region")

            def phi(rs):
                pts = np.zeros(np.shape(rs) + (n,))
                pts[..., 0] = rs
                return f(pts)

            res = integrate_radial(phi, r1, r2, spec, n)
        else:
            if np.isinf(r2):
                raise ValueError("infinite regions need the radial path")
            res = _shell_integral(f, r1, r2, c, n, spec)
    if strict and not res.converged:
        raise ToleranceNotMet(f"quadrature over {region.kind} did not reach tolerance "
                              f"(error {res.error:.3e})")
    return res


# ---------------------------------------------------------------------------
# Kernels

def _graded_radial(g, R, spec, grading: int = 8):
    """int_0^R g(rho) drho with dyadic panels toward rho = 0 (log/power endpoint)."""
    total, err, ok = 0.0, 0.0, True
    hi = R
    for _ in range(grading):
        lo = hi / 2
        r = adaptive_1d(g, lo, hi, spec)
        total += r.value
        err += r.error
        ok &= r.converged
        hi = lo
    r = adaptive_1d(g, 0.0, hi, spec)
    return QuadResult(total + r.value, err + r.error, ok and r.converged)


def polar_integral(f, center, R, n=4, spec: QuadratureSpec = DEFAULT_SPEC) -> QuadResult:
    """Integral of f over the ball |y - center| < R in polar coordinates about the center.

    The Jacobian rho^{n-1} is applied before sampling, so integrands with an
    integrable point singularity at the center are handled.
    """
    c = np.asarray(center, dtype=float)
    dirs, wts = sphere_rule(n, spec.angular_order)

    def radial(rs):
        pts = c + rs[:, None, None] * dirs[None]
        vals = f(pts, rs)
        return _checked(vals @ wts, rs)

    return _graded_radial(radial, R, spec)


def support_ray_integral(f, x, support_radius: float, n: int = 4,
                         spec: QuadratureSpec = DEFAULT_SPEC) -> QuadResult:
    """Integral over the ball |y| <= support_radius in polar coordinates about an interior x.

    f(pts, rho) must already include the Jacobian rho^{n-1}.  Each ray from x
    is followed to where it leaves the ball and rescaled to [0, 1], so the
    angular integrand stays smooth and the angular rule converges quickly.
    """
    x = np.asarray(x, dtype=float)
    dist = float(np.linalg.norm(x))
    Rs = float(support_radius)
    if dist > Rs:
        raise ValueError("x must lie inside the support ball")
    dirs, wts = sphere_rule(n, spec.angular_order)
    b = dirs @ x
    exit_len = -b + np.sqrt(np.maximum(b * b + Rs * Rs - dist * dist, 0.0))

    def radial(ss):
        rho = ss[:, None] * exit_len[None]
        pts = x + rho[..., None] * dirs[None]
        return _checked((f(pts, rho) * exit_len[None]) @ wts, ss)

    return _graded_radial(radial, 1.0, spec)


def log_distance_integral(P, x, support_radius: float, n: int = 4,
                          spec: QuadratureSpec = DEFAULT_SPEC) -> float:
    """int_{|y| <= support_radius} log|x - y| P(y) dy.

    Outside the support the kernel is smooth there and polar coordinates
    about the origin are used.  Inside, polar coordinates about x let the
    Jacobian rho^{n-1} absorb the logarithm.
    """
    x = np.asarray(x, dtype=float)
    Rs = float(support_radius)
    if float(np.linalg.norm(x)) > Rs:
        def term(pts, rs):
            return np.log(np.linalg.norm(pts - x, axis=-1)) * P(pts) * (rs ** (n - 1))[:, None]

        return polar_integral(term, np.zeros(n), Rs, n, spec).value

    def term_x(pts, rho):
        with np.errstate(divide="ignore", invalid="ignore"):
            jac_log = np.where(rho > 0, np.log(rho) * rho ** (n - 1), 0.0)
        return jac_log * P(pts)

    return support_ray_integral(term_x, x, Rs, n, spec).value


def log_kernel_convolution(P, x, support_radius: float, spec: QuadratureSpec = DEFAULT_SPEC,
                           *, n: int = 4, c_n: float | None = None) -> float:
    """(1/c_n) int log(|y| / |x - y|) P(y) dy for a density supported in |y| <= support_radius."""
    if c_n is None:
        from .quantization import dimensional_constants

        c_n = dimensional_constants(n)["c_n"]
    zero = np.zeros(n)
    return (log_distance_integral(P, zero, support_radius, n, spec)
            - log_distance_integral(P, x, support_radius, n, spec)) / c_n


def kernel_sphere_average(r: float, y, s: float, n: int = 4,
                          spec: QuadratureSpec = DEFAULT_SPEC) -> dict:
    """Average of |x - y|^{-s} over the sphere |x| = r, and its ratio to r^{-s}.

    Uses the law of t = cos(angle(x, y)) on S^{n-1}, density proportional to
    (1 - t^2)^{(n-3)/2}.  When |y| = r the endpoint singularity is absorbed
    into a Gauss-Jacobi weight.
    """
    y = np.asarray(y, dtype=float)
    a = float(np.linalg.norm(y))
    k = (n - 3) / 2
    norm = math.gamma(n / 2) / (math.sqrt(math.pi) * math.gamma((n - 1) / 2))
    if a == 0.0:
        avg = r ** (-s)
    elif abs(a - r) <= 1e-14 * r:
        if s >= n - 1:
            raise ValueError("kernel not integrable on the sphere for s >= n - 1")
        t, w = roots_jacobi(64, k - s / 2, k)
        # (2 r^2 (1 - t))^{-s/2} (1 - t^2)^k = (2 r^2)^{-s/2} (1-t)^{k-s/2} (1+t)^k
        avg = norm * (2 * r * r) ** (-s / 2) * float(np.sum(w))
    else:
        def g(t):
            return (r * r + a * a - 2 * r * a * t) ** (-s / 2) * (1 - t * t) ** k

        if k >= 0:
            # the kernel peaks at t = 1 when |y| is close to r: grade panels toward it
            cuts = [-1.0, 0.0] + [1 - 2.0**-j for j in range(1, 41)] + [1.0]
            avg = norm * sum(adaptive_1d(g, lo, hi, spec).value for lo, hi in zip(cuts, cuts[1:]))
        else:
            # n = 2: endpoint singularities of the arcsine law; substitute t = cos(theta)
            avg = norm * adaptive_1d(lambda th: g(np.cos(th)) * np.sin(th), 0.0, np.pi, spec).value
    return {"average": avg, "ratio": avg * r ** s}
