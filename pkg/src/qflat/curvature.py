"""Pointwise curvature of conformally flat metrics g = exp(2w)|dx|^2.

All functions accept a single point of shape ``(n,)`` or a batch ``(..., n)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor_core as tc
from .fields import DEFAULT_FD_STEP, FDField, ScalarField, fd_derivative, unit_index


class UnsupportedDimensionError(ValueError):
    pass


def _pts(x):
    return np.asarray(x, dtype=float)


def _derivs(w: ScalarField, x, order: int):
    """Value, gradient and (for order >= 2) Hessian of w."""
    out = [w.value(x), w.gradient(x)]
    if order >= 2:
        out.append(w.hessian(x))
    return out


def conformal_metric(w: ScalarField, x) -> np.ndarray:
    x = _pts(x)
    return np.exp(2 * w.value(x))[..., None, None] * np.eye(w.n)


def christoffel_conformal(w: ScalarField, x) -> np.ndarray:
    """Gamma[s, j, k] = w_k delta_sj + w_j delta_sk - w_s delta_jk."""
    x = _pts(x)
    d = w.gradient(x)
    eye = np.eye(w.n)
    return (np.einsum("...k,sj->...sjk", d, eye) + np.einsum("...j,sk->...sjk", d, eye)
            - np.einsum("...s,jk->...sjk", d, eye))


def riemann_conformal(w: ScalarField, x, *, method: str = "closed",
                      h: float = DEFAULT_FD_STEP) -> np.ndarray:
    """Covariant Riemann tensor of exp(2w)|dx|^2.

    ``method="closed"`` uses Rm = -exp(2w) (delta o T) with
    T = Hess w - dw dw + |dw|^2 delta / 2 (o the Kulkarni-Nomizu product).
    ``method="christoffel"`` differentiates the Christoffel symbols by finite
    differences; the two are kept as mutual checks.
    """
    x = _pts(x)
    n = w.n
    if method == "closed":
        val, d, hess = _derivs(w, x, 2)
        eye = np.eye(n)
        T = hess - np.einsum("...i,...j->...ij", d, d) + 0.5 * np.sum(d * d, axis=-1)[..., None, None] * eye
        eye_b = np.broadcast_to(eye, T.shape)
        return -np.exp(2 * val)[..., None, None, None, None] * tc.kulkarni_nomizu(eye_b, T)
    if method == "christoffel":
        gam = christoffel_conformal(w, x)
        # dgam[..., m, s, j, k] = d_m Gamma^s_jk
        dgam = np.stack([_fd_tensor(lambda p: christoffel_conformal(w, p), m, x, h)
                         for m in range(n)], axis=-4)
        # R^l_{s m v} = d_m G^l_{v s} - d_v G^l_{m s} + G^l_{m k} G^k_{v s} - G^l_{v k} G^k_{m s}
        up = (np.einsum("...mlvs->...lsmv", dgam) - np.einsum("...vlms->...lsmv", dgam)
              + np.einsum("...lmk,...kvs->...lsmv", gam, gam)
              - np.einsum("...lvk,...kms->...lsmv", gam, gam))
        g = conformal_metric(w, x)
        return np.einsum("...rl,...lsmv->...rsmv", g, up)
    raise ValueError(f"unknown method {method!r}")


def _fd_tensor(fn, axis, x, h):
    """d/dx_axis of a tensor-valued point function: 4th-order central differences, one Richardson step."""
    e = np.zeros(x.shape[-1])
    e[axis] = 1.0

    def d(step):
        return (8 * (fn(x + step * e) - fn(x - step * e))
                - (fn(x + 2 * step * e) - fn(x - 2 * step * e))) / (12 * step)

    return (16 * d(h / 2) - d(h)) / 15


def curvature_bundle(w: ScalarField, x) -> dict:
    """Rm, Ric, R, Schouten A, traceless Ricci E, and g at x."""
    x = _pts(x)
    g = conformal_metric(w, x)
    rm = riemann_conformal(w, x)
    ric, scal, A, E = tc.ricci_scalar_schouten(rm, g)
    return {"g": g, "Rm": rm, "Ric": ric, "R": scal, "A": A, "E": E}


class ScalarCurvatureField(ScalarField):
    """R_g of exp(2w)|dx|^2 as a field of its own.

    R = -(n-1) exp(-2w) (2 lap w + (n-2)|grad w|^2).  Derivatives up to second
    order come from the chain rule and need w to fourth order; higher orders
    fall back to finite differences of the value.
    """

    def __init__(self, w: ScalarField):
        super().__init__(w.n, radial=w.radial, name=f"R[{w.name}]")
        self.w = w
        self.provenance = w.provenance

    def _pieces(self, x):
        n, w = self.n, self.w
        val = w.value(x)
        d = w.gradient(x)
        hess = w.hessian(x)
        lap = np.trace(hess, axis1=-2, axis2=-1)
        u = 2 * lap + (n - 2) * np.sum(d * d, axis=-1)
        v = np.exp(-2 * val)
        return val, d, hess, u, v

    def _deriv(self, alpha, x):
        n = self.n
        order = sum(alpha)
        c = -(n - 1)
        val, d, hess, u, v = self._pieces(x)
        if order == 0:
            return c * v * u
        if order > 2:
            return fd_derivative(self.value, alpha, x)
        axes = [i for i, a in enumerate(alpha) for _ in range(a)]
        w = self.w

        def du(k):
            s = 0.0
            for i in range(n):
                s = s + 2 * w.deriv(unit_index(n, i, i, k), x) + 2 * (n - 2) * d[..., i] * hess[..., i, k]
            return s

        if order == 1:
            (k,) = axes
            return c * (-2 * d[..., k] * v * u + v * du(k))
        k, l = axes
        duk, dul = du(k), du(l)
        dukl = 0.0
        for i in range(n):
            dukl = dukl + 2 * w.deriv(unit_index(n, i, i, k, l), x) + 2 * (n - 2) * (
                hess[..., i, l] * hess[..., i, k] + d[..., i] * w.deriv(unit_index(n, i, k, l), x))
        vk, vl = -2 * d[..., k] * v, -2 * d[..., l] * v
        vkl = (4 * d[..., k] * d[..., l] - 2 * hess[..., k, l]) * v
        return c * (vkl * u + vk * dul + vl * duk + v * dukl)


def scalar_curvature_field(w: ScalarField, *, mode: str = "analytic", h: float = DEFAULT_FD_STEP) -> ScalarField:
    """R_g as a ScalarField; ``mode="fd"`` differentiates sampled values instead."""
    field = ScalarCurvatureField(w)
    if mode == "analytic":
        return field
    if mode == "fd":
        return FDField(field.value, w.n, h=h, radial=w.radial, name=f"R_fd[{w.name}]")
    raise ValueError(f"unknown mode {mode!r}")


def laplace_beltrami(w: ScalarField, f: ScalarField, x) -> np.ndarray:
    """Delta_g f = exp(-2w) (Delta_0 f + (n-2) grad w . grad f)."""
    x = _pts(x)
    n = w.n
    lap = sum(f.deriv(unit_index(n, i, i), x) for i in range(n))
    return np.exp(-2 * w.value(x)) * (lap + (n - 2) * np.sum(w.gradient(x) * f.gradient(x), axis=-1))


class LaplacianField(ScalarField):
    """x -> Delta_g f(x), differentiated by finite differences."""

    provenance = "finite-difference"

    def __init__(self, w: ScalarField, f: ScalarField, h: float = DEFAULT_FD_STEP):
        super().__init__(w.n, name=f"lap[{f.name}]")
        self.w, self.f, self.h = w, f, h

    def _deriv(self, alpha, x):
        fn = lambda p: laplace_beltrami(self.w, self.f, p)  # noqa: E731
        if sum(alpha) == 0:
            return fn(x)
        return fd_derivative(fn, alpha, x, self.h)


@dataclass
class QReport:
    x: np.ndarray
    q_def: np.ndarray
    q_sigma: np.ndarray
    residual: np.ndarray

    def as_dict(self) -> dict:
        return {k: np.asarray(v).tolist() for k, v in self.__dict__.items()}


def q_curvature_4d(w: ScalarField, x, *, laplacian: str = "analytic") -> QReport:
    """Q-curvature of exp(2w)|dx|^2 in dimension four by two routes.

    q_def   = (-Delta R + R^2/4 - 3|E|^2) / 12
    q_sigma = -Delta R / 12 + 2 sigma_2(A)
    Delta R is the Laplace-Beltrami operator applied to the scalar-curvature
    field (chain rule by default, finite differences with ``laplacian="fd"``).
    """
    if w.n != 4:
        raise UnsupportedDimensionError("Q-curvature is implemented for n = 4 only")
    x = _pts(x)
    b = curvature_bundle(w, x)
    rfield = scalar_curvature_field(w, mode=laplacian)
    lap_r = laplace_beltrami(w, rfield, x)
    scal = b["R"]
    e2 = tc.norm_sq(b["E"], b["g"])
    q_def = (-lap_r + scal**2 / 4 - 3 * e2) / 12
    q_sigma = -lap_r / 12 + 2 * tc.sigma2(b["A"], b["g"])
    return QReport(x, q_def, q_sigma, np.abs(q_def - q_sigma))


def q_density(w: ScalarField, x) -> np.ndarray:
    """Q_def exp(4w), the density of Q dv_g against dx."""
    x = _pts(x)
    return q_curvature_4d(w, x).q_def * np.exp(4 * w.value(x))


def flat_bilaplacian(f: ScalarField, x) -> np.ndarray:
    x = _pts(x)
    n = f.n
    return sum(f.deriv(unit_index(n, i, i, j, j), x) for i in range(n) for j in range(n))


def paneitz_apply(w0: ScalarField, f: ScalarField, x, *, h: float = DEFAULT_FD_STEP) -> np.ndarray:
    """Paneitz operator of g = exp(2 w0)|dx|^2 applied to f, n = 4.

    P f = Delta_g^2 f + delta(((2/3) R g - 2 Ric) df) where delta is the
    codifferential, delta V = -div_g V.  With this sign P is conformally
    covariant, P_{exp(2w)g} = exp(-4w) P_g, and equals Delta^2 - 2 Delta on the
    unit round sphere.
    """
    if w0.n != 4:
        raise UnsupportedDimensionError("Paneitz operator is implemented for n = 4 only")
    x = _pts(x)
    n = w0.n
    lap_f = LaplacianField(w0, f, h)
    bilap = laplace_beltrami(w0, lap_f, x)

    def flux(p):
        # exp((n-2)w) * (T df)_i with T_i^l = (2/3) R delta - 2 Ric_i^l
        b = curvature_bundle(w0, p)
        e = np.exp(-2 * w0.value(p))
        T = (2.0 / 3.0) * b["R"][..., None, None] * np.eye(n) - 2 * e[..., None, None] * b["Ric"]
        v = np.einsum("...il,...l->...i", T, f.gradient(p))
        return np.exp((n - 2) * w0.value(p))[..., None] * v

    div = sum(_fd_tensor(flux, i, x, h)[..., i] for i in range(n))
    return bilap - np.exp(-n * w0.value(x)) * div


def paneitz_law_residual(w: ScalarField, x) -> np.ndarray:
    """|Delta_0^2 w - 2 Q_def exp(4w)| on the flat background."""
    x = _pts(x)
    return np.abs(flat_bilaplacian(w, x) - 2 * q_density(w, x))


def scalar_nonneg_at_infinity(w: ScalarField, r0: float, samples: int = 16,
                              tol: float = -1e-8) -> dict:
    """Minimum of R_g over a deterministic sample of r0 <= |x| <= 10 r0."""
    if r0 <= 0:
        raise ValueError("r0 must be positive")
    from .quadrature import sphere_rule

    dirs, _ = sphere_rule(w.n, 4)
    radii = np.geomspace(r0, 10 * r0, samples)
    pts = radii[:, None, None] * dirs[None]
    rvals = ScalarCurvatureField(w).value(pts)
    mn = float(np.min(rvals))
    return {"min": mn, "nonneg": mn >= tol, "r0": r0, "count": int(rvals.size)}
