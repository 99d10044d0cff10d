"""Dense curvature-tensor algebra in dimensions up to 8.

Conventions: Riemann tensors are fully covariant arrays ``R[i, j, k, l]``
with the sign fixed by the Gauss equation ``R_ijkl = L_ik L_jl - L_il L_jk``,
so the round unit sphere has ``R_1212 = +1``.  All functions broadcast over
leading axes, i.e. a batch of tensors has shape ``(..., n, n, n, n)``.
"""

from __future__ import annotations

import itertools
import math
from functools import lru_cache
from typing import Sequence

import numpy as np

MAX_DIM = 8


def _permutation_sign(perm: Sequence[int]) -> int:
    perm = list(perm)
    sign = 1
    for i in range(len(perm)):
        while perm[i] != i:
            j = perm[i]
            perm[i], perm[j] = perm[j], perm[i]
            sign = -sign
    return sign


def gen_kronecker(upper: Sequence[int], lower: Sequence[int], n: int | None = None) -> int:
    """Generalized Kronecker delta with 1-based indices.

    Returns the sign of the permutation taking ``lower`` to ``upper`` when both
    list the same distinct indices, and 0 otherwise.
    """
    upper, lower = list(upper), list(lower)
    if len(upper) != len(lower):
        raise ValueError("upper and lower index lists must have equal length")
    bound = n if n is not None else MAX_DIM
    for idx in upper + lower:
        if not 1 <= idx <= bound:
            raise ValueError(f"index {idx} out of range 1..{bound}")
    if len(set(upper)) != len(upper) or set(upper) != set(lower):
        return 0
    pos = {v: i for i, v in enumerate(lower)}
    return _permutation_sign([pos[v] for v in upper])


def is_symmetric(t: np.ndarray, tol: float = 1e-12) -> bool:
    t = np.asarray(t)
    return bool(np.all(np.abs(t - np.swapaxes(t, -1, -2)) <= tol * (1 + np.abs(t))))


def riemann_symmetry_defects(rm: np.ndarray) -> dict[str, float]:
    """Max violations of the algebraic Riemann symmetries."""
    rm = np.asarray(rm)
    anti_ij = rm + np.swapaxes(rm, -4, -3)
    anti_kl = rm + np.swapaxes(rm, -2, -1)
    pair = rm - np.moveaxis(rm, (-4, -3), (-2, -1))
    bianchi = rm + np.einsum("...iklj->...ijkl", rm) + np.einsum("...iljk->...ijkl", rm)
    return {
        "antisym_ij": float(np.max(np.abs(anti_ij))),
        "antisym_kl": float(np.max(np.abs(anti_kl))),
        "pair": float(np.max(np.abs(pair))),
        "bianchi": float(np.max(np.abs(bianchi))),
    }


def riemann_from_L(L: np.ndarray) -> np.ndarray:
    """Gauss equation: R_ijkl = L_ik L_jl - L_il L_jk."""
    L = np.asarray(L, dtype=float)
    if not is_symmetric(L, 1e-10):
        raise ValueError("second fundamental form must be symmetric")
    return np.einsum("...ik,...jl->...ijkl", L, L) - np.einsum("...il,...jk->...ijkl", L, L)


def kulkarni_nomizu(h: np.ndarray, k: np.ndarray) -> np.ndarray:
    """(h o k)_ijkl = h_ik k_jl + h_jl k_ik - h_il k_jk - h_jk k_il."""
    return (np.einsum("...ik,...jl->...ijkl", h, k) + np.einsum("...jl,...ik->...ijkl", h, k)
            - np.einsum("...il,...jk->...ijkl", h, k) - np.einsum("...jk,...il->...ijkl", h, k))


def _inverse_metric(g: np.ndarray) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    det = np.linalg.det(g)
    if np.any(np.abs(det) < 1e-300) or not np.all(np.isfinite(det)):
        raise ValueError("metric is singular")
    return np.linalg.inv(g)


def ricci_scalar_schouten(rm: np.ndarray, g: np.ndarray):
    """Contract a covariant Riemann tensor.

    Returns ``(Ric, R, A, E)`` with Ric_jl = g^ik R_ijkl, R = g^jl Ric_jl,
    Schouten A = (Ric - R g / 6) / 2 (the four-dimensional normalization, used
    in every dimension here) and traceless Ricci E = Ric - R g / n.
    """
    rm = np.asarray(rm, dtype=float)
    g = np.asarray(g, dtype=float)
    n = g.shape[-1]
    ginv = _inverse_metric(g)
    ric = np.einsum("...ik,...ijkl->...jl", ginv, rm)
    scal = np.einsum("...jl,...jl->...", ginv, ric)
    A = 0.5 * (ric - scal[..., None, None] / 6.0 * g)
    E = ric - scal[..., None, None] / n * g
    return ric, scal, A, E


def norm_sq(t: np.ndarray, g: np.ndarray) -> np.ndarray:
    """|T|_g^2 = T_ij T_kl g^ik g^jl for a 2-tensor."""
    ginv = _inverse_metric(g)
    return np.einsum("...ij,...kl,...ik,...jl->...", t, t, ginv, ginv)


def sigma2(A: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Second elementary symmetric function of the eigenvalues of g^{-1} A."""
    ginv = _inverse_metric(g)
    tr = np.einsum("...ij,...ij->...", ginv, A)
    return 0.5 * (tr**2 - norm_sq(A, g))


def weyl_tensor(rm: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Trace-free part of Rm via the Ricci decomposition (n >= 3)."""
    g = np.asarray(g, dtype=float)
    n = g.shape[-1]
    if n < 3:
        raise ValueError("Weyl tensor needs n >= 3")
    ric, scal, _, _ = ricci_scalar_schouten(rm, g)
    P = (ric - scal[..., None, None] / (2 * (n - 1)) * g) / (n - 2)
    return rm - kulkarni_nomizu(P, g)


def weyl_norm_sq(rm: np.ndarray, g: np.ndarray) -> np.ndarray:
    W = weyl_tensor(rm, g)
    ginv = _inverse_metric(g)
    return np.einsum("...abcd,...efgh,...ae,...bf,...cg,...dh->...", W, W, ginv, ginv, ginv, ginv)


def double_factorial(k: int) -> int:
    return math.prod(range(k, 0, -2)) if k > 0 else 1


@lru_cache(maxsize=None)
def _pfaffian_terms(n: int):
    """Index arrays and signs for every (upper, lower) permutation pair."""
    perms = list(itertools.permutations(range(n)))
    signs = np.array([_permutation_sign(p) for p in perms], dtype=float)
    P = np.array(perms, dtype=np.intp)
    m = len(perms)
    up = np.repeat(P, m, axis=0)
    lo = np.tile(P, (m, 1))
    sign = np.repeat(signs, m) * np.tile(signs, m)
    flat = []
    for a in range(0, n, 2):
        flat.append(((up[:, a] * n + up[:, a + 1]) * n + lo[:, a]) * n + lo[:, a + 1])
    return np.stack(flat), sign


def _pfaffian_dp(rm: np.ndarray) -> float:
    """Same contraction as the brute force, summed by dynamic programming over used index sets."""
    n = rm.shape[0]
    states = {(0, 0): 1.0}
    for _ in range(n // 2):
        nxt: dict[tuple[int, int], float] = {}
        for (su, sl), acc in states.items():
            free_u = [i for i in range(n) if not su >> i & 1]
            free_l = [i for i in range(n) if not sl >> i & 1]
            for a, b in itertools.permutations(free_u, 2):
                # sign of appending a then b after the already used indices
                su_a = su | 1 << a
                sgn_u = (-1) ** (bin(su >> a).count("1") + bin(su_a >> b).count("1"))
                for c, d in itertools.permutations(free_l, 2):
                    sl_c = sl | 1 << c
                    sgn_l = (-1) ** (bin(sl >> c).count("1") + bin(sl_c >> d).count("1"))
                    val = rm[a, b, c, d]
                    if val == 0.0:
                        continue
                    key = (su_a | 1 << b, sl_c | 1 << d)
                    nxt[key] = nxt.get(key, 0.0) + acc * sgn_u * sgn_l * val
        states = nxt
    return sum(states.values())


def pfaffian_from_riemann(rm: np.ndarray, g: np.ndarray | None = None, *, method: str = "auto") -> float:
    """Pfaffian of the curvature form, (2 pi)^{n/2} K.

    K = delta^{i1..in}_{j1..jn} R_{i1 i2 j1 j2} ... R_{i(n-1) in j(n-1) jn}
    / (2^n (2 pi)^{n/2} (n/2)!), contracted in an orthonormal frame.  When
    ``g`` is given, ``rm`` is first expressed in a g-orthonormal frame.
    ``method`` is "brute" (all permutation pairs, n <= 6), "dp", or "auto".
    """
    rm = np.asarray(rm, dtype=float)
    n = rm.shape[-1]
    if n % 2:
        raise ValueError("Pfaffian needs even dimension")
    if n > MAX_DIM:
        raise ValueError(f"dimension above {MAX_DIM} not supported")
    if g is not None:
        # rows of frame are g-orthonormal vectors e_a = frame[a, :]
        chol = np.linalg.cholesky(np.asarray(g, dtype=float))
        frame = np.linalg.inv(chol)
        rm = np.einsum("ai,bj,ck,dl,ijkl->abcd", frame, frame, frame, frame, rm)
    if method == "auto":
        method = "brute" if n <= 6 else "dp"
    if method == "brute":
        if n > 6:
            raise ValueError("brute-force Pfaffian limited to n <= 6")
        idx, sign = _pfaffian_terms(n)
        flat = rm.reshape(-1)
        total = float(np.sum(sign * np.prod(flat[idx], axis=0)))
    elif method == "dp":
        total = _pfaffian_dp(rm)
    else:
        raise ValueError(f"unknown method {method!r}")
    return total / (2**n * math.factorial(n // 2))


def det_cofactor(M: np.ndarray) -> float:
    """Determinant by cofactor expansion (independent of LAPACK)."""
    M = np.asarray(M, dtype=float)
    k = M.shape[0]
    if k == 1:
        return float(M[0, 0])
    if k == 2:
        return float(M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0])
    total = 0.0
    for j in range(k):
        if M[0, j] == 0.0:
            continue
        minor = np.delete(np.delete(M, 0, axis=0), j, axis=1)
        total += (-1) ** j * M[0, j] * det_cofactor(minor)
    return total
