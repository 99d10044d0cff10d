"""Conformal factors w on R^n with derivative oracles, and the test-metric catalog.

A field is evaluated on arrays of points with shape ``(..., n)`` and returns
arrays of shape ``(...)``.  Multi-index derivatives are requested with an
exponent tuple ``alpha`` of length ``n``.
"""

from __future__ import annotations

import itertools
import math
import threading
from typing import Callable, Sequence

import numpy as np
import sympy as sp

MAX_ORDER = 5
DEFAULT_FD_STEP = 1e-2


class UnsupportedOrderError(ValueError):
    pass


def multi_indices(n: int, order: int):
    """All exponent tuples of length ``n`` with total degree ``order``."""
    for combo in itertools.combinations_with_replacement(range(n), order):
        alpha = [0] * n
        for axis in combo:
            alpha[axis] += 1
        yield tuple(alpha)


def unit_index(n: int, *axes: int) -> tuple[int, ...]:
    """Exponent tuple for the mixed partial along the listed axes."""
    alpha = [0] * n
    for axis in axes:
        alpha[axis] += 1
    return tuple(alpha)


def _check_alpha(alpha: Sequence[int], n: int, max_order: int = MAX_ORDER) -> tuple[int, ...]:
    alpha = tuple(int(a) for a in alpha)
    if len(alpha) != n or any(a < 0 for a in alpha):
        raise ValueError(f"bad multi-index {alpha} for dimension {n}")
    if sum(alpha) > max_order:
        raise UnsupportedOrderError(f"derivative order {sum(alpha)} exceeds {max_order}")
    return alpha


class ScalarField:
    """Base class: a real function on R^n with a multi-index derivative oracle.

    Subclasses implement ``_deriv``.  ``radial`` marks fields depending on |x|
    only, which lets integrators use one-dimensional fast paths.
    """

    provenance = "analytic"

    def __init__(self, n: int, *, radial: bool = False, name: str = "field"):
        if n < 1:
            raise ValueError("dimension must be positive")
        self.n = n
        self.radial = radial
        self.name = name

    def __call__(self, x) -> np.ndarray:
        return self.deriv((0,) * self.n, x)

    def value(self, x) -> np.ndarray:
        return self(x)

    def deriv(self, alpha: Sequence[int], x) -> np.ndarray:
        alpha = _check_alpha(alpha, self.n)
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n:
            raise ValueError(f"points must have trailing dimension {self.n}")
        return self._deriv(alpha, x)

    def _deriv(self, alpha, x):  # pragma: no cover - abstract
        raise NotImplementedError

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.stack([self.deriv(unit_index(self.n, i), x) for i in range(self.n)], axis=-1)

    def hessian(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        n = self.n
        out = np.empty(x.shape[:-1] + (n, n))
        for i in range(n):
            for j in range(i, n):
                out[..., i, j] = out[..., j, i] = self.deriv(unit_index(n, i, j), x)
        return out

    def __add__(self, other: "ScalarField") -> "ScalarField":
        return SumField([self, other])

    def __repr__(self) -> str:
        return f"<{type(self).__name__} {self.name} n={self.n}>"


class SymbolicField(ScalarField):
    """Closed-form field backed by a sympy expression.

    Derivatives are differentiated symbolically on first request and cached as
    vectorized numpy callables.
    """

    def __init__(self, expr, n: int, *, radial: bool = False, name: str = "symbolic",
                 symbols: Sequence[sp.Symbol] | None = None):
        super().__init__(n, radial=radial, name=name)
        self.symbols = tuple(symbols) if symbols is not None else coordinate_symbols(n)
        self.expr = sp.sympify(expr)
        self._cache: dict[tuple[int, ...], Callable] = {}
        self._lock = threading.Lock()

    def _compiled(self, alpha):
        fn = self._cache.get(alpha)
        if fn is not None:
            return fn
        with self._lock:
            fn = self._cache.get(alpha)
            if fn is None:
                expr = self.expr
                for sym, k in zip(self.symbols, alpha):
                    if k:
                        expr = sp.diff(expr, sym, k)
                fn = sp.lambdify(self.symbols, expr, modules="numpy")
                self._cache[alpha] = fn
        return fn

    def _deriv(self, alpha, x):
        fn = self._compiled(alpha)
        out = fn(*np.moveaxis(x, -1, 0))
        return np.broadcast_to(np.asarray(out, dtype=float), x.shape[:-1]).copy()


class SumField(ScalarField):
    def __init__(self, parts: Sequence[ScalarField]):
        n = parts[0].n
        if any(p.n != n for p in parts):
            raise ValueError("summands must share a dimension")
        super().__init__(n, radial=all(p.radial for p in parts),
                         name="+".join(p.name for p in parts))
        self.parts = list(parts)
        provs = {p.provenance for p in parts}
        self.provenance = provs.pop() if len(provs) == 1 else "finite-difference"

    def _deriv(self, alpha, x):
        total = self.parts[0].deriv(alpha, x)
        for p in self.parts[1:]:
            total = total + p.deriv(alpha, x)
        return total


class FDField(ScalarField):
    """Field known only through an evaluator; derivatives by finite differences."""

    provenance = "finite-difference"

    def __init__(self, evaluator: Callable[[np.ndarray], np.ndarray], n: int, *,
                 h: float = DEFAULT_FD_STEP, radial: bool = False, name: str = "fd"):
        super().__init__(n, radial=radial, name=name)
        self.evaluator = evaluator
        self.h = h

    def _deriv(self, alpha, x):
        if sum(alpha) == 0:
            return np.asarray(self.evaluator(x), dtype=float)
        return fd_derivative(self.evaluator, alpha, x, self.h)


def coordinate_symbols(n: int):
    return sp.symbols(f"x0:{n}", real=True)


# ---------------------------------------------------------------------------
# Finite differences

# Second-order central stencils (offsets, weights) for derivative orders 1..5.
_STENCILS = {
    1: ((-1, 1), (-0.5, 0.5)),
    2: ((-1, 0, 1), (1.0, -2.0, 1.0)),
    3: ((-2, -1, 1, 2), (-0.5, 1.0, -1.0, 0.5)),
    4: ((-2, -1, 0, 1, 2), (1.0, -4.0, 6.0, -4.0, 1.0)),
    5: ((-3, -2, -1, 1, 2, 3), (-0.5, 2.0, -2.5, 2.5, -2.0, 0.5)),
}

# Base step grows with the order to keep roundoff below truncation error.
_ORDER_STEP_SCALE = {1: 1.0, 2: 2.0, 3: 4.0, 4: 6.0, 5: 8.0}


def _tensor_stencil(alpha):
    axes = [(axis, _STENCILS[k]) for axis, k in enumerate(alpha) if k]
    offsets, weights = [], []
    for combo in itertools.product(*[list(zip(*st)) for _, st in axes]):
        off = [0] * len(alpha)
        wt = 1.0
        for (axis, _), (o, c) in zip(axes, combo):
            off[axis] = o
            wt *= c
        offsets.append(off)
        weights.append(wt)
    return np.array(offsets, dtype=float), np.array(weights)


def fd_derivative(field, alpha: Sequence[int], x, h: float = DEFAULT_FD_STEP) -> np.ndarray:
    """Central-difference estimate of d^alpha field at x with Richardson extrapolation.

    Tensor-product second-order stencils are evaluated at steps s, s/2, s/4
    (s = h scaled by the derivative order) and the h^2 and h^4 error terms
    are eliminated.  ``field`` is a ScalarField or any callable on point arrays.
    """
    if h <= 0:
        raise ValueError("step must be positive")
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    alpha = _check_alpha(alpha, n)
    order = sum(alpha)
    evaluate = field.value if isinstance(field, ScalarField) else field
    if order == 0:
        return np.asarray(evaluate(x), dtype=float)
    offsets, weights = _tensor_stencil(alpha)
    base = h * _ORDER_STEP_SCALE[order]
    levels = []
    for step in (base, base / 2, base / 4):
        pts = x[..., None, :] + step * offsets
        vals = np.asarray(evaluate(pts), dtype=float)
        levels.append(vals @ weights / step**order)
    d1a = (4 * levels[1] - levels[0]) / 3
    d1b = (4 * levels[2] - levels[1]) / 3
    return (16 * d1b - d1a) / 15


# ---------------------------------------------------------------------------
# Catalog

def field_flat(n: int = 4) -> SymbolicField:
    return SymbolicField(sp.Integer(0), n, radial=True, name="flat")


def field_sphere_stereographic(n: int = 4) -> SymbolicField:
    """Pull-back of the unit round sphere: w = log 2 - log(1 + |x|^2)."""
    if n % 2:
        raise ValueError("sphere field is provided for even n")
    xs = coordinate_symbols(n)
    r2 = sum(s**2 for s in xs)
    return SymbolicField(sp.log(2) - sp.log(1 + r2), n, radial=True, name="sphere", symbols=xs)


def field_smoothed_cone(beta: float, n: int = 4) -> SymbolicField:
    """Cone end with angle parameter beta, smoothed at the origin: (beta/2) log(1+|x|^2)."""
    if beta <= -1:
        raise ValueError("cone parameter must satisfy beta > -1")
    xs = coordinate_symbols(n)
    r2 = sum(s**2 for s in xs)
    b = sp.nsimplify(beta)
    return SymbolicField(b / 2 * sp.log(1 + r2), n, radial=True,
                         name=f"cone:beta={beta:g}", symbols=xs)


def field_bump(center: Sequence[float] | None = None, amplitude: float = 1.0,
               width: float = 1.0, n: int = 4) -> SymbolicField:
    if width <= 0:
        raise ValueError("bump width must be positive")
    center = np.zeros(n) if center is None else np.asarray(center, dtype=float)
    if center.shape != (n,):
        raise ValueError("center has wrong dimension")
    xs = coordinate_symbols(n)
    d2 = sum((s - sp.nsimplify(float(c))) ** 2 for s, c in zip(xs, center))
    expr = sp.nsimplify(amplitude) * sp.exp(-d2 / sp.nsimplify(width) ** 2)
    return SymbolicField(expr, n, radial=bool(np.all(center == 0)),
                         name=f"bump:a={amplitude:g},s={width:g}", symbols=xs)


def field_expression(text: str, n: int = 4) -> SymbolicField:
    """Field from a sympy expression in x0..x{n-1}, e.g. ``"x0*x1"``."""
    xs = coordinate_symbols(n)
    expr = sp.sympify(text, locals={str(s): s for s in xs})
    return SymbolicField(expr, n, name=f"expr:{text}", symbols=xs)


def _parse_params(spec: str) -> dict[str, str]:
    params = {}
    for item in filter(None, spec.split(",")):
        key, _, val = item.partition("=")
        params[key.strip()] = val.strip()
    return params


def field_from_id(field_id: str, n: int = 4) -> ScalarField:
    """Resolve a catalog id: flat, sphere, cone:beta=-0.25, bump:a=..,s=.., expr:<sympy>."""
    kind, _, rest = field_id.partition(":")
    if kind == "flat":
        return field_flat(n)
    if kind == "sphere":
        return field_sphere_stereographic(n)
    if kind == "cone":
        params = _parse_params(rest)
        if "beta" not in params:
            raise ValueError("cone id needs beta=..., e.g. cone:beta=-0.25")
        return field_smoothed_cone(float(params["beta"]), n)
    if kind == "bump":
        params = _parse_params(rest)
        return field_bump(None, float(params.get("a", 1.0)), float(params.get("s", 1.0)), n)
    if kind == "expr":
        return field_expression(rest, n)
    raise KeyError(f"unknown metric id {field_id!r}")


def sphere_area(n: int) -> float:
    """Euclidean area of the unit sphere S^{n-1} in R^n."""
    return 2 * math.pi ** (n / 2) / math.gamma(n / 2)
