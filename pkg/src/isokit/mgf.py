"""Determinant and resolvent forms of the moment generating functionals.

A load is a per-state weight vector ``lam`` (or a ``{state: weight}`` mapping
when the kernel is a :class:`Kernel`); ``Lam = diag(lam)``. Every functional
requires the spectral radius of ``C Lam`` to stay below ``1 - 1e-6``.
"""

from __future__ import annotations

import itertools
import math
from collections.abc import Mapping

import numpy as np

from . import moments
from .kernels import Kernel

RADIUS_MARGIN = 1e-6
SERIES_TOL = 1e-13
MAX_TERMS = 100_000


class LoadError(ValueError):
    """Load too large: I - C Lam is not safely invertible / the series diverges."""


def _load_vector(C, lam) -> tuple[np.ndarray, np.ndarray]:
    mat = C.entries if isinstance(C, Kernel) else np.asarray(C, dtype=float)
    n = mat.shape[0]
    if isinstance(lam, Mapping):
        if not isinstance(C, Kernel):
            raise TypeError("a state mapping needs a Kernel")
        vec = np.zeros(n)
        for s, w in lam.items():
            vec[C.idx(s)] = float(w)
    else:
        vec = np.asarray(lam, dtype=float).reshape(-1)
        if vec.shape != (n,):
            raise ValueError(f"load has length {vec.size}, kernel has {n} states")
    if not np.all(np.isfinite(vec)):
        raise ValueError("load must be finite")
    return mat, vec


def spectral_radius(C, lam) -> float:
    mat, vec = _load_vector(C, lam)
    return float(np.max(np.abs(np.linalg.eigvals(mat * vec[None, :]))))


def check_load(C, lam) -> tuple[np.ndarray, np.ndarray]:
    """Return (C, lam) after checking rho(C Lam) < 1 - margin."""
    mat, vec = _load_vector(C, lam)
    rho = float(np.max(np.abs(np.linalg.eigvals(mat * vec[None, :])))) if len(vec) else 0.0
    if not rho < 1 - RADIUS_MARGIN:
        raise LoadError(f"load not small enough: spectral radius {rho:.6g}")
    return mat, vec


def _idx(C, x) -> int:
    return C.idx(x) if isinstance(C, Kernel) else int(x)


def _shift_vector(u, n) -> np.ndarray:
    if u is None:
        return np.zeros(n)
    arr = np.asarray(u, dtype=float)
    return np.full(n, float(arr)) if arr.ndim == 0 else arr.reshape(n)


# ------------------------------------------------------------------ series


def _power_norm_constant(M: np.ndarray) -> float:
    """c with sum_{j>=K} ||M^j|| <= c ||M^K|| for every K (2-norms)."""
    n = M.shape[0]
    P = np.eye(n)
    head = 0.0
    for _ in range(4096):
        head += np.linalg.norm(P, 2)
        P = P @ M
        r = np.linalg.norm(P, 2)
        if r < 1:
            return head / (1 - r)
    raise LoadError("power series does not contract")


def power_series(M, left, right, tol: float = SERIES_TOL, start: int = 0):
    """Terms left^T M^k right for k >= start, truncated by a geometric tail bound.

    Returns (terms, bound) with bound >= |sum of the omitted terms|.
    """
    M = np.asarray(M, dtype=float)
    left = np.asarray(left, dtype=float)
    right = np.asarray(right, dtype=float)
    scale = np.linalg.norm(left) * np.linalg.norm(right) * _power_norm_constant(M)
    w = np.linalg.matrix_power(M, start) @ right if start else right.copy()
    Pk = np.linalg.matrix_power(M, start) if start else np.eye(M.shape[0])
    terms = []
    for _ in range(MAX_TERMS):
        bound = scale * np.linalg.norm(Pk, 2)
        if bound < tol:
            return terms, bound
        terms.append(float(left @ w))
        w = M @ w
        Pk = Pk @ M
    raise LoadError("series did not reach tolerance")


# -------------------------------------------------------------- Gaussian


def cbar(C, lam) -> np.ndarray:
    """(I - C Lam)^{-1} C."""
    mat, vec = check_load(C, lam)
    return np.linalg.solve(np.eye(len(vec)) - mat * vec[None, :], mat)


def cbar_series(C, lam) -> np.ndarray:
    """sum_k (C Lam)^k C, truncated at the series tolerance."""
    mat, vec = check_load(C, lam)
    M = mat * vec[None, :]
    c0 = _power_norm_constant(M)
    out = np.zeros_like(mat)
    term = mat.copy()
    Pk = np.eye(len(vec))
    for _ in range(MAX_TERMS):
        if c0 * np.linalg.norm(Pk, 2) * np.linalg.norm(mat, 2) < SERIES_TOL:
            return out
        out += term
        term = M @ term
        Pk = Pk @ M
    raise LoadError("series did not reach tolerance")


def gauss_square_mgf(C, lam, u=None) -> float:
    """E exp(sum_j lam_j u_j G_j + lam_j G_j^2 / 2) for G with covariance C."""
    mat, vec = check_load(C, lam)
    n = len(vec)
    A = np.eye(n) - vec[:, None] * mat
    det = float(np.linalg.det(A))
    if not det > 0:
        raise LoadError(f"determinant |I - Lam C| = {det:.3e} is not positive")
    val = det**-0.5
    uu = _shift_vector(u, n)
    if np.any(uu):
        cb = np.linalg.solve(np.eye(n) - mat * vec[None, :], mat)
        lu = vec * uu
        val *= math.exp(0.5 * float(lu @ cb @ lu))
    return val


def shifted_square_mgf(C, lam, shift) -> float:
    """E exp(sum_j lam_j (G_j + s_j)^2 / 2)."""
    mat, vec = check_load(C, lam)
    s = _shift_vector(shift, len(vec))
    return gauss_square_mgf(mat, vec, s) * math.exp(0.5 * float(vec @ (s * s)))


def log_det_series(C, lam) -> float:
    """(1/2) sum_{k>=1} tr((C Lam)^k) / k, the loop-trace expansion of -log det / 2."""
    mat, vec = check_load(C, lam)
    M = mat * vec[None, :]
    c0 = _power_norm_constant(M) * math.sqrt(len(vec))
    terms = []
    Pk = M.copy()
    for k in range(1, MAX_TERMS):
        if c0 * np.linalg.norm(Pk, 2) * math.sqrt(len(vec)) / k < SERIES_TOL:
            return 0.5 * math.fsum(terms)
        terms.append(np.trace(Pk) / k)
        Pk = Pk @ M
    raise LoadError("series did not reach tolerance")


def square_mgf_taylor(C, lam, degree: int = 8) -> float:
    """Truncated Taylor series of E exp(sum lam_j G_j^2 / 2) in the load.

    sum over multi-indices a with |a| <= degree of prod lam^a / a! times the
    moment of prod (G_j^2/2)^{a_j}.
    """
    mat, vec = _load_vector(C, lam)
    n = len(vec)
    support = [j for j in range(n) if vec[j] != 0.0]
    terms = [1.0]
    for total in range(1, degree + 1):
        for combo in itertools.combinations_with_replacement(support, total):
            coef = 1.0
            for j in set(combo):
                a = combo.count(j)
                coef *= vec[j] ** a / math.factorial(a)
            terms.append(coef * moments.gauss_square_moment(mat, combo))
    return math.fsum(terms)


# --------------------------------------------------------- local times


def bridge_mgf(C, lam, x1, x2) -> float:
    """Bridge-measure transform Q^{x1,x2}(exp sum lam L): an entry of (I - C Lam)^{-1} C."""
    return float(cbar(C, lam)[_idx(C, x1), _idx(C, x2)])


def bridge_mgf_series(C, lam, x1, x2) -> float:
    mat, vec = check_load(C, lam)
    i, j = _idx(C, x1), _idx(C, x2)
    e = np.zeros(len(vec))
    e[i] = 1.0
    terms, _ = power_series(mat * vec[None, :], e, mat[:, j])
    return math.fsum(terms)


def bridge_mgf_precision(C, lam, x1, x2) -> float:
    """Covariance of the tilted Gaussian, (C^{-1} - Lam)^{-1}, at (x1, x2)."""
    mat, vec = check_load(C, lam)
    prec = np.linalg.inv(mat) - np.diag(vec)
    return float(np.linalg.inv(prec)[_idx(C, x1), _idx(C, x2)])


def start_mgf(C, lam, x1) -> float:
    """P^{x1}(exp sum lam L): row sum of (I - C Lam)^{-1}."""
    mat, vec = check_load(C, lam)
    n = len(vec)
    w = np.linalg.solve(np.eye(n) - mat * vec[None, :], np.ones(n))
    return float(w[_idx(C, x1)])


def start_mgf_series(C, lam, x1) -> float:
    mat, vec = check_load(C, lam)
    e = np.zeros(len(vec))
    e[_idx(C, x1)] = 1.0
    terms, _ = power_series(mat * vec[None, :], e, np.ones(len(vec)))
    return math.fsum(terms)


def start_mgf_moment_series(C, lam, x1, degree: int) -> float:
    """Truncated expansion in lam of P^{x1}(exp sum lam L) from the chain moments."""
    mat, vec = _load_vector(C, lam)
    i = _idx(C, x1)
    support = [j for j in range(len(vec)) if vec[j] != 0.0]
    terms = [1.0]
    for total in range(1, degree + 1):
        for combo in itertools.combinations_with_replacement(support, total):
            coef = 1.0
            for j in set(combo):
                a = combo.count(j)
                coef *= vec[j] ** a / math.factorial(a)
            terms.append(coef * moments.lt_moment_start(mat, i, combo))
    return math.fsum(terms)


# ------------------------------------------------------------- Ray-Knight


def h_sequence(uT0, lam, tol: float = SERIES_TOL) -> list[float]:
    """h(k) = (1, Lam (C0 Lam)^{k-1} 1) for k = 1, 2, ... up to the tail bound."""
    mat, vec = check_load(uT0, lam)
    terms, _ = power_series(mat * vec[None, :], vec, np.ones(len(vec)), tol)
    return terms


def rayknight_mgf(uT0, lam, t: float) -> float:
    """E^{z0} exp(sum lam L_{tau(t)}) = exp(t (1, Lam (I - C0 Lam)^{-1} 1))."""
    if t < 0:
        raise ValueError("level t must be nonnegative")
    mat, vec = check_load(uT0, lam)
    n = len(vec)
    w = np.linalg.solve(np.eye(n) - mat * vec[None, :], np.ones(n))
    return math.exp(t * float(vec @ w))


def rayknight_mgf_series(uT0, lam, t: float) -> float:
    """exp(t sum_j h(j))."""
    if t < 0:
        raise ValueError("level t must be nonnegative")
    return math.exp(t * math.fsum(h_sequence(uT0, lam)))


def rayknight_gaussian_ratio(uT0, lam, t: float) -> float:
    """E exp(sum lam (eta + sqrt(2t))^2 / 2) / E exp(sum lam eta^2 / 2), eta ~ N(0, C0)."""
    if t < 0:
        raise ValueError("level t must be nonnegative")
    s = math.sqrt(2 * t)
    return shifted_square_mgf(uT0, lam, s) / gauss_square_mgf(uT0, lam)


def excursion_mgf_exponent(uT0, lam, delta: float = 1.0) -> float:
    """Excursion-measure transform sum_{n>=1} delta^n h(n) at load lam."""
    _, vec = _load_vector(uT0, lam)
    if delta == 0:
        return 0.0
    return math.fsum(h_sequence(uT0, delta * vec))


# ---------------------------------------------------------- interlacements


def interlacement_mgf_check(u, nu, t: float, delta: float) -> tuple[float, float]:
    """Gaussian ratio side and chain-series side of the interlacement transform.

    lhs = E exp(delta (:G^2:(nu)/2 + sqrt(2t) G_nu + t|nu|)) / E exp(delta :G^2:(nu)/2)
    rhs = exp(t sum_{n>=1} delta^n (1, D (C D)^{n-1} 1)),  D = diag(nu)
    """
    if t < 0:
        raise ValueError("level t must be nonnegative")
    mat, vec = _load_vector(u, nu)
    load = delta * vec
    check_load(mat, load)
    centre = math.exp(-0.5 * float(load @ np.diag(mat)))
    num = shifted_square_mgf(mat, load, math.sqrt(2 * t)) * centre
    den = gauss_square_mgf(mat, load) * centre
    lhs = num / den
    if delta == 0:
        return lhs, 1.0
    terms, _ = power_series(mat * load[None, :], load, np.ones(len(vec)))
    rhs = math.exp(t * math.fsum(terms))
    return lhs, rhs


__all__ = [
    "LoadError",
    "spectral_radius",
    "check_load",
    "power_series",
    "cbar",
    "cbar_series",
    "gauss_square_mgf",
    "shifted_square_mgf",
    "log_det_series",
    "square_mgf_taylor",
    "bridge_mgf",
    "bridge_mgf_series",
    "bridge_mgf_precision",
    "start_mgf",
    "start_mgf_series",
    "start_mgf_moment_series",
    "h_sequence",
    "rayknight_mgf",
    "rayknight_mgf_series",
    "rayknight_gaussian_ratio",
    "excursion_mgf_exponent",
    "interlacement_mgf_check",
]
