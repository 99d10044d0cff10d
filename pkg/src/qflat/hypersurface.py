"""Parametrized hypersurfaces M^n in R^(n+1): fundamental forms, Gauss map, curvature integrals."""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import sympy as sp

from . import tensor_core as tc
from .fields import coordinate_symbols, sphere_area
from .quadrature import DEFAULT_SPEC, QuadratureSpec, Region, integrate, integrate_sphere


class DegenerateImmersionError(ValueError):
    """dF does not have full rank at the requested chart point."""


class Immersion:
    """A chart u -> F(u) in R^(n+1) over the ball |u| < ``domain_radius``.

    ``orientation`` multiplies the cross-product normal.  ``radial`` marks
    charts whose geometric scalars depend on |u| only, enabling the
    one-dimensional quadrature paths.
    """

    def __init__(self, exprs: Sequence, n: int, *, orientation: int = 1, radial: bool = False,
                 domain_radius: float = math.inf, name: str = "chart", symbols=None):
        if orientation not in (1, -1):
            raise ValueError("orientation must be +1 or -1")
        if len(exprs) != n + 1:
            raise ValueError("a hypersurface chart needs n + 1 components")
        self.n = n
        self.symbols = tuple(symbols) if symbols is not None else coordinate_symbols(n)
        self.exprs = [sp.sympify(e) for e in exprs]
        self.orientation = orientation
        self.radial = radial
        self.domain_radius = domain_radius
        self.name = name
        self._lock = threading.Lock()
        self._compiled = None

    def _build(self):
        with self._lock:
            if self._compiled is None:
                u = self.symbols
                jac = [[sp.diff(e, ui) for ui in u] for e in self.exprs]
                hess = [[[sp.diff(e, ui, uj) for uj in u] for ui in u] for e in self.exprs]
                mods = "numpy"
                self._compiled = (
                    [sp.lambdify(u, e, mods) for e in self.exprs],
                    [[sp.lambdify(u, d, mods) for d in row] for row in jac],
                    [[[sp.lambdify(u, d, mods) for d in r2] for r2 in r1] for r1 in hess],
                )
        return self._compiled

    @staticmethod
    def _eval(fn, u):
        out = fn(*np.moveaxis(u, -1, 0))
        return np.broadcast_to(np.asarray(out, dtype=float), u.shape[:-1])

    def value(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        vals, _, _ = self._build()
        return np.stack([self._eval(f, u) for f in vals], axis=-1)

    def jacobian(self, u) -> np.ndarray:
        """dF with shape (..., n + 1, n)."""
        u = np.asarray(u, dtype=float)
        _, jac, _ = self._build()
        return np.stack([np.stack([self._eval(f, u) for f in row], axis=-1) for row in jac], axis=-2)

    def second_derivatives(self, u) -> np.ndarray:
        """d^2 F with shape (..., n + 1, n, n)."""
        u = np.asarray(u, dtype=float)
        _, _, hess = self._build()
        return np.stack([np.stack([np.stack([self._eval(f, u) for f in r2], axis=-1) for r2 in r1], axis=-2)
                         for r1 in hess], axis=-3)

    def reversed(self) -> "Immersion":
        return Immersion(self.exprs, self.n, orientation=-self.orientation, radial=self.radial,
                         domain_radius=self.domain_radius, name=self.name, symbols=self.symbols)

    def __repr__(self) -> str:
        return f"<Immersion {self.name} n={self.n} orientation={self.orientation:+d}>"


@dataclass
class Surface:
    """One chart (an end or a graph) or an atlas of charts covering a closed hypersurface.

    Closed atlases list charts whose domains tile the surface up to a null set;
    each chart's orientation is fixed so the normals agree globally.
    """

    charts: list
    closed: bool
    name: str
    orientation: int = 1

    @property
    def n(self) -> int:
        return self.charts[0].n

    def reversed(self) -> "Surface":
        return Surface([c.reversed() for c in self.charts], self.closed, self.name, -self.orientation)


@dataclass
class FundamentalForms:
    g: np.ndarray
    L: np.ndarray
    normal: np.ndarray
    sqrt_det_g: np.ndarray


def _cross_normal(J: np.ndarray) -> np.ndarray:
    """Generalized cross product of the n columns of J, oriented so det[N | J] = |N|^2 > 0."""
    m = J.shape[-2]
    comps = []
    for k in range(m):
        minor = np.delete(J, k, axis=-2)
        with np.errstate(divide="ignore", invalid="ignore"):
            comps.append((-1) ** k * np.linalg.det(minor))
    return np.stack(comps, axis=-1)


def fundamental_forms(F: Immersion, u) -> FundamentalForms:
    """First form g = dF^T dF, unit normal, and L_ij = d_ij F . normal at chart points u."""
    u = np.asarray(u, dtype=float)
    J = F.jacobian(u)
    g = np.einsum("...ai,...aj->...ij", J, J)
    N = _cross_normal(J)
    norm = np.linalg.norm(N, axis=-1)
    scale = np.max(np.abs(J), axis=(-2, -1)) ** F.n
    if np.any(norm <= 1e-12 * np.maximum(scale, 1e-300)):
        bad = np.argwhere(np.atleast_1d(norm <= 1e-12 * np.maximum(scale, 1e-300)))[0]
        loc = u.reshape(-1, F.n)[bad[0]] if u.ndim > 1 else u
        raise DegenerateImmersionError(f"dF is rank deficient at u = {np.asarray(loc).tolist()}")
    normal = F.orientation * N / norm[..., None]
    H = F.second_derivatives(u)
    L = np.einsum("...aij,...a->...ij", H, normal)
    return FundamentalForms(g, L, normal, norm)


def shape_operator(ff: FundamentalForms) -> np.ndarray:
    return np.linalg.solve(ff.g, ff.L)


def gauss_jacobian_det(F: Immersion, u) -> np.ndarray:
    """det(g^{-1} L): Jacobian of the Gauss map relative to the induced volume."""
    ff = fundamental_forms(F, u)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.linalg.det(shape_operator(ff))


def L_norm_sq(ff: FundamentalForms) -> np.ndarray:
    return tc.norm_sq(ff.L, ff.g)


def intrinsic_curvature(ff: FundamentalForms) -> dict:
    """Curvature of the induced metric from the Gauss equation."""
    rm = tc.riemann_from_L(ff.L)
    ric, scal, A, E = tc.ricci_scalar_schouten(rm, ff.g)
    return {"Rm": rm, "Ric": ric, "R": scal, "A": A, "E": E}


def det_sigma2_gap(F: Immersion, u) -> np.ndarray:
    """|det(g^{-1} L) - (2/3) sigma_2(A)| for n = 4, A from the Gauss-equation curvature."""
    if F.n != 4:
        raise ValueError("the identity is specific to n = 4")
    ff = fundamental_forms(F, u)
    curv = intrinsic_curvature(ff)
    return np.abs(np.linalg.det(shape_operator(ff)) - (2.0 / 3.0) * tc.sigma2(curv["A"], ff.g))


def gauss_bound_check(F: Immersion, u, constant: float | None = None) -> dict:
    """Check |R_g| <= C |L|_g^2; the sharp constant from the Gauss equation is n - 1."""
    ff = fundamental_forms(F, u)
    C = float(F.n - 1) if constant is None else float(constant)
    scal = np.atleast_1d(intrinsic_curvature(ff)["R"])
    l2 = np.atleast_1d(L_norm_sq(ff))
    worst = float(np.max(np.abs(scal) - C * l2))
    return {"constant": C, "max_excess": worst, "ok": worst <= 1e-9 * (1 + float(np.max(np.abs(scal))))}


# ---------------------------------------------------------------------------
# Integrals

def _chart_integral(F: Immersion, density, radius: float, spec: QuadratureSpec) -> float:
    """int_{|u| < radius} density(u) du, on the radial path when the chart allows it."""
    R = min(radius, F.domain_radius)
    return integrate(density, Region.ball(R, n=F.n), spec, radial=F.radial and not math.isinf(R)).value


def _graph_extent(F: Immersion) -> float:
    return F.domain_radius if not math.isinf(F.domain_radius) else 40.0


def total_L_norm(surface: Surface | Immersion, p: float = 4.0, radius: float | None = None,
                 spec: QuadratureSpec = DEFAULT_SPEC) -> float:
    """int |L|_g^p dv_g over the chart balls |u| < radius (default: each chart's domain)."""
    if p < 1:
        raise ValueError("p must be at least 1")
    surface = _as_surface(surface)
    total = 0.0
    for F in surface.charts:
        def dens(u, F=F):
            ff = fundamental_forms(F, u)
            return L_norm_sq(ff) ** (p / 2) * ff.sqrt_det_g

        total += _chart_integral(F, dens, radius if radius is not None else _graph_extent(F), spec)
    return total


def boundary_L_integral(F: Immersion, r: float, power: float | None = None,
                        spec: QuadratureSpec = DEFAULT_SPEC) -> float:
    """int over the image of |u| = r of |L|_g^power dsigma_g (power defaults to n - 1).

    The induced boundary measure is sqrt(det g) |nu|_{g^{-1}} dsigma_0 with nu
    the Euclidean unit conormal of the coordinate sphere.
    """
    if r <= 0 or r > F.domain_radius:
        raise ValueError("radius must lie inside the chart")
    k = F.n - 1 if power is None else power

    def dens(u):
        ff = fundamental_forms(F, u)
        nu = u / np.linalg.norm(u, axis=-1, keepdims=True)
        ginv = np.linalg.inv(ff.g)
        conormal = np.sqrt(np.einsum("...i,...ij,...j->...", nu, ginv, nu))
        return L_norm_sq(ff) ** (k / 2) * ff.sqrt_det_g * conormal

    if F.radial:
        e = np.zeros(F.n)
        e[0] = r
        return float(dens(e[None])[0]) * sphere_area(F.n) * r ** (F.n - 1)
    return integrate_sphere(dens, r, None, F.n, spec).value


def boundary_area(F: Immersion, r: float, spec: QuadratureSpec = DEFAULT_SPEC) -> float:
    return boundary_L_integral(F, r, power=0, spec=spec)


@dataclass
class DecayReport:
    radii: list
    values: list
    found: bool
    holder_lhs: list
    holder_rhs: list
    holder_ok: bool
    message: str = ""

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def decay_sequence(F: Immersion, r_min: float, r_max: float, k: int = 5, *, factor: float = 1.0,
                   grid: int = 64, spec: QuadratureSpec = DEFAULT_SPEC) -> DecayReport:
    """Pick k radii from a geometric grid along which int_{|u|=r} |L|^{n-1} dsigma_g decreases.

    Each pick must be at most 1/factor of the previous value (factor 1: strict
    decrease; exact zeros count as ties resolved by radius).  For every pick
    the Holder step r^{-1} (int |L|^{n-1})^{n/(n-1)} <= C int |L|^n with
    C = vol_g(boundary)^{1/(n-1)} / r is evaluated.
    """
    if not 0 < r_min < r_max:
        raise ValueError("need 0 < r_min < r_max")
    n = F.n
    radii = np.geomspace(r_min, min(r_max, F.domain_radius), grid)
    vals = [boundary_L_integral(F, float(r), spec=spec) for r in radii]
    picked_r, picked_v = [], []
    for r, v in zip(radii, vals):
        if not picked_v:
            picked_r.append(float(r))
            picked_v.append(v)
        elif (v == 0.0 and picked_v[-1] == 0.0) or (v < picked_v[-1] and v * factor <= picked_v[-1]):
            picked_r.append(float(r))
            picked_v.append(v)
        if len(picked_r) == k:
            break
    found = len(picked_r) == k
    lhs, rhs, ok = [], [], True
    for r, v in zip(picked_r, picked_v):
        area = boundary_area(F, r, spec)
        left = v ** (n / (n - 1)) / r
        right = area ** (1 / (n - 1)) / r * boundary_L_integral(F, r, power=n, spec=spec)
        lhs.append(left)
        rhs.append(right)
        ok &= left <= right * (1 + 1e-9) + 1e-300
    msg = "" if found else f"only {len(picked_r)} of {k} radii found on the grid"
    return DecayReport(picked_r, picked_v, found, lhs, rhs, ok, msg)


@dataclass
class DegreeReport:
    m: int
    raw: float
    residual: float
    ok: bool

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def gauss_map_degree(surface: Surface | Immersion, spec: QuadratureSpec = DEFAULT_SPEC,
                     *, radius: float | None = None, snap: float = 0.1) -> DegreeReport:
    """Degree of the Gauss map, (orientation / |S^n|) sum_charts int det(g^{-1} L) dv_g.

    For even n, det(g^{-1} L) does not see the sign of the normal; reversing
    the orientation composes the Gauss map with the antipodal map, of degree
    -1, which is the ``orientation`` factor.  Graph charts are integrated over
    |u| < radius (default 40).
    """
    surface = _as_surface(surface)
    n = surface.n
    if n % 2:
        raise ValueError("the degree formula is implemented for even n")
    total = 0.0
    for F in surface.charts:
        def dens(u, F=F):
            ff = fundamental_forms(F, u)
            # numpy's LU-based det warns on exactly singular (flat) shape operators
            with np.errstate(divide="ignore", invalid="ignore"):
                return np.linalg.det(shape_operator(ff)) * ff.sqrt_det_g

        total += _chart_integral(F, dens, radius if radius is not None else _graph_extent(F), spec)
    raw = surface.orientation * total / sphere_area(n + 1)
    m = int(round(raw))
    residual = abs(raw - m)
    return DegreeReport(m, raw, residual, residual <= snap)


def _as_surface(s) -> Surface:
    if isinstance(s, Surface):
        return s
    return Surface([s], closed=False, name=s.name, orientation=s.orientation)


# ---------------------------------------------------------------------------
# Catalog

def sphere_surface(n: int = 4) -> Surface:
    """Unit S^n from two stereographic charts, each over the unit ball (one hemisphere each).

    The normals are the inward ones, so L = g on both charts.
    """
    u = coordinate_symbols(n)
    r2 = sum(s**2 for s in u)
    south = [2 * s / (1 + r2) for s in u] + [(r2 - 1) / (1 + r2)]
    north = [2 * s / (1 + r2) for s in u] + [(1 - r2) / (1 + r2)]
    charts = []
    for exprs, label in ((south, "south"), (north, "north")):
        F = Immersion(exprs, n, radial=True, domain_radius=1.0, name=f"sphere:{label}", symbols=u)
        ff = fundamental_forms(F, np.zeros(n))
        # inward normal at u = 0 points against F(0)
        if float(np.dot(ff.normal, F.value(np.zeros(n)))) > 0:
            F = F.reversed()
        charts.append(F)
    return Surface(charts, closed=True, name="sphere")


def sphere_chart(n: int = 4) -> Immersion:
    """The southern stereographic chart, extended over all of R^n."""
    F = sphere_surface(n).charts[0]
    return Immersion(F.exprs, n, orientation=F.orientation, radial=True, name="sphere:chart",
                     symbols=F.symbols)


def graph_immersion(height, n: int = 4, *, radial: bool = False, name: str = "graph",
                    symbols=None) -> Immersion:
    u = tuple(symbols) if symbols is not None else coordinate_symbols(n)
    return Immersion(list(u) + [height], n, radial=radial, name=name, symbols=u)


def graph_flat(n: int = 4) -> Immersion:
    return graph_immersion(sp.Integer(0), n, radial=True, name="flat")


def graph_paraboloid(n: int = 4) -> Immersion:
    u = coordinate_symbols(n)
    return graph_immersion(sum(s**2 for s in u) / 2, n, radial=True, name="paraboloid", symbols=u)


def graph_bump(amplitude: float = 1.0, width: float = 1.0, n: int = 4) -> Immersion:
    if width <= 0:
        raise ValueError("bump width must be positive")
    u = coordinate_symbols(n)
    r2 = sum(s**2 for s in u)
    h = sp.nsimplify(amplitude) * sp.exp(-r2 / sp.nsimplify(width) ** 2)
    return graph_immersion(h, n, radial=True, name=f"graph:bump:a={amplitude:g},s={width:g}", symbols=u)


def graph_radial_power(p: float, n: int = 4) -> Immersion:
    """Graph of (1 + |u|^2)^{(1-p)/2}: second fundamental form of size |u|^{-1-p} at infinity."""
    if not 0 < p < 1:
        raise ValueError("p must lie in (0, 1)")
    u = coordinate_symbols(n)
    r2 = sum(s**2 for s in u)
    h = (1 + r2) ** ((1 - sp.nsimplify(p)) / 2)
    return graph_immersion(h, n, radial=True, name=f"graph:radial:p={p:g}", symbols=u)


def surface_from_id(surface_id: str, n: int = 4) -> Surface:
    """Resolve sphere, flat, paraboloid, graph:bump[:a=..,s=..], graph:radial:p=..."""
    parts = surface_id.split(":")
    if parts[0] == "sphere":
        return sphere_surface(n)
    if parts[0] == "flat":
        return _as_surface(graph_flat(n))
    if parts[0] == "paraboloid":
        return _as_surface(graph_paraboloid(n))
    if parts[0] == "graph" and len(parts) >= 2:
        params = {}
        for item in ",".join(parts[2:]).split(","):
            if item:
                key, _, val = item.partition("=")
                params[key.strip()] = float(val)
        if parts[1] == "bump":
            return _as_surface(graph_bump(params.get("a", 1.0), params.get("s", 1.0), n))
        if parts[1] == "radial":
            if "p" not in params:
                raise ValueError("graph:radial needs p=..., e.g. graph:radial:p=0.5")
            return _as_surface(graph_radial_power(params["p"], n))
    raise KeyError(f"unknown surface id {surface_id!r}")


__all__ = [
    "DegenerateImmersionError", "Immersion", "Surface", "FundamentalForms", "fundamental_forms",
    "shape_operator", "gauss_jacobian_det", "L_norm_sq", "intrinsic_curvature", "det_sigma2_gap",
    "gauss_bound_check", "total_L_norm", "boundary_L_integral", "boundary_area", "DecayReport",
    "decay_sequence", "DegreeReport", "gauss_map_degree", "sphere_surface", "sphere_chart",
    "graph_immersion", "graph_flat", "graph_paraboloid", "graph_bump", "graph_radial_power",
    "surface_from_id",
]
