"""Closed-form moment engines.

Every formula is evaluated at the index level: a point list may repeat
states, and each occurrence is its own index in the partition/permutation
sums. Kernels may be :class:`~isokit.kernels.Kernel` objects (points are
state identifiers) or bare matrices (points are integer indices).

The Gaussian engines are checked against :func:`gauss_poly_expectation`, a
brute-force oracle that expands a product of polynomials in the field and
applies the pairing formula term by term.
"""

from __future__ import annotations

import itertools
import math
from collections import defaultdict

import numpy as np

from . import combinat
from .combinat import (
    CapExceeded,
    chain_sum,
    cycle_sum,
    enum_partitions,
    free_chain_sum,
    pairing_array,
    permutation_array,
    resolve,
)
from .kernels import Kernel


class _BlockCache:
    """Memoise block functionals by the multiset of states in the block.

    Cycle and chain sums run over all orderings of a block, so they only
    depend on which states occur and how often.
    """

    def __init__(self, mat, fn):
        self.mat = mat
        self.fn = fn
        self.store = {}

    def __call__(self, states):
        key = tuple(sorted(states))
        val = self.store.get(key)
        if val is None:
            val = self.fn(self.mat, np.asarray(key, dtype=np.intp))
            self.store[key] = val
        return val


def _partition_sum(idx, block_weight, min_block=1):
    """Sum over set partitions of the index list of the product of block weights."""
    idx = list(idx)
    if not idx:
        return 1.0
    terms = []
    for part in enum_partitions(range(len(idx)), min_block):
        prod = 1.0
        for block in part:
            prod *= block_weight([idx[i] for i in block])
            if prod == 0.0:
                break
        terms.append(prod)
    return math.fsum(terms)


# ------------------------------------------------------------------ Gaussian


def gauss_moment(C, points) -> float:
    """E prod G_{x_i}: sum over pairings of covariance products (0 for odd n)."""
    mat, idx = resolve(C, points)
    n = len(idx)
    if n == 0:
        return 1.0
    if n % 2:
        return 0.0
    pairs = idx[pairing_array(n)]
    return math.fsum(mat[pairs[..., 0], pairs[..., 1]].prod(axis=1))


def gauss_square_moment(C, points) -> float:
    """E prod G_{x_i}^2 / 2 as a sum over partitions of half-cycle products."""
    mat, idx = resolve(C, points)
    cy = _BlockCache(mat, cycle_sum)
    return _partition_sum(idx, lambda b: 0.5 * cy(b))


def gauss_pair_square_moment(C, a, b, points) -> float:
    """E G_a G_b prod G_{x_i}^2 / 2: one open chain from a to b, cycles elsewhere."""
    mat, ends = resolve(C, [a, b])
    _, idx = resolve(C, points)
    a_i, b_i = int(ends[0]), int(ends[1])
    cy = _BlockCache(mat, cycle_sum)
    n = len(idx)
    terms = []
    for mask in range(1 << n):
        inside = [idx[i] for i in range(n) if mask >> i & 1]
        outside = [idx[i] for i in range(n) if not mask >> i & 1]
        ch = chain_sum(mat, a_i, b_i, np.asarray(inside, dtype=np.intp))
        terms.append(ch * _partition_sum(outside, lambda blk: 0.5 * cy(blk)))
    return math.fsum(terms)


def shifted_square_moment(C, s: float, points) -> float:
    """E prod (G_{x_i} + s)^2 / 2.

    Each block of a partition is either a cycle (weight cy / 2) or an
    oriented free chain (weight s^2 ch / 2, with ch = 1 on singletons).
    """
    mat, idx = resolve(C, points)
    cy = _BlockCache(mat, cycle_sum)
    ch = _BlockCache(mat, free_chain_sum)
    half_s2 = 0.5 * s * s
    return _partition_sum(idx, lambda b: 0.5 * cy(b) + half_s2 * ch(b))


def gauss_poly_expectation(C, factors) -> float:
    """Brute-force E prod_f P_f(G) for polynomials P_f in the field.

    Each factor is a list of ``(coef, monomial)`` terms where ``monomial`` is a
    tuple of integer state indices. The product is expanded and each monomial
    is evaluated with the pairing formula.
    """
    mat = C.entries if isinstance(C, Kernel) else np.asarray(C, dtype=float)
    acc = defaultdict(float)
    acc[()] = 1.0
    for factor in factors:
        nxt = defaultdict(float)
        for mono, c0 in acc.items():
            for coef, m in factor:
                if coef == 0.0:
                    continue
                nxt[tuple(sorted(mono + tuple(m)))] += c0 * coef
        acc = nxt
    terms = []
    for mono, coef in acc.items():
        if len(mono) % 2 or coef == 0.0:
            continue
        terms.append(coef * gauss_moment(mat, mono))
    return math.fsum(terms)


def square_factor(x: int, shift: float = 0.0):
    """Polynomial (G_x + shift)^2 / 2 as oracle terms."""
    return [(0.5, (x, x)), (shift, (x,)), (0.5 * shift * shift, ())]


def wick_factor(mat, nu, shift: float = 0.0, t: float = 0.0):
    """:G^2:(nu)/2 + shift * G_nu + t |nu| as oracle terms."""
    nu = np.asarray(nu, dtype=float)
    terms = [(t * nu.sum() - 0.5 * float(nu @ np.diag(mat)), ())]
    for x in np.flatnonzero(nu):
        terms.append((0.5 * nu[x], (int(x), int(x))))
        terms.append((shift * nu[x], (int(x),)))
    return terms


# -------------------------------------------------------------- local times


def lt_moment_start(u, x, points) -> float:
    """E^x prod L^{x_i}_infinity: chains started at x with a free end."""
    mat, start = resolve(u, [x])
    _, idx = resolve(u, points)
    k = len(idx)
    combinat._check_cap(k, combinat.MAX_PERMUTATION_N, "lt_moment_start")
    if k == 0:
        return 1.0
    pts = idx[permutation_array(k)]
    prods = mat[int(start[0]), pts[:, 0]]
    if k > 1:
        prods = prods * mat[pts[:, :-1], pts[:, 1:]].prod(axis=1)
    return math.fsum(prods)


def lt_moment_bridge(u, x, y, points) -> float:
    """Bridge-measure moment: oriented chain from x through the points to y."""
    return combinat.chain_value(u, x, y, points)


# --------------------------------------------------------- loops and soups


def loop_measure_moment(u, points) -> float:
    """Loop-measure moment of total local times: the cycle function of the points."""
    return combinat.cycle_value(u, points)


def poisson_moment(points, alpha: float, single_moment) -> float:
    """Moment of a Poisson soup with intensity ``alpha`` times a base measure.

    ``single_moment(block)`` returns the base-measure moment of one block.
    """
    return _partition_sum(list(points), lambda b: alpha * single_moment(b))


def soup_field_moment(u, alpha: float, points, route: str = "partition") -> float:
    """Joint moment of the soup occupation field at intensity ``alpha``.

    ``route="partition"`` sums cycle functions over partitions;
    ``route="permanent"`` evaluates the alpha-permanent of the point matrix.
    """
    if route == "permanent":
        return combinat.alpha_permanent(u, points, alpha)
    if route != "partition":
        raise ValueError(f"unknown route {route!r}")
    mat, idx = resolve(u, points)
    cy = _BlockCache(mat, cycle_sum)
    return poisson_moment(idx, alpha, cy)


# --------------------------------------------------------------- Ray-Knight


def rayknight_polynomial(uT0, points) -> np.ndarray:
    """Coefficients c_m with E^0 prod L^{x_i}_{tau(t)} = sum_m c_m t^m.

    c_m sums, over partitions into m blocks, the product of free chains.
    """
    mat, idx = resolve(uT0, points)
    ch = _BlockCache(mat, free_chain_sum)
    k = len(idx)
    coeffs = np.zeros(k + 1)
    if k == 0:
        coeffs[0] = 1.0
        return coeffs
    buckets = [[] for _ in range(k + 1)]
    for part in enum_partitions(range(k)):
        prod = 1.0
        for block in part:
            prod *= ch([idx[i] for i in block])
        buckets[len(part)].append(prod)
    for m, vals in enumerate(buckets):
        coeffs[m] = math.fsum(vals)
    return coeffs


def rayknight_lhs_moment(uT0, t: float, points) -> float:
    coeffs = rayknight_polynomial(uT0, points)
    return math.fsum(c * t**m for m, c in enumerate(coeffs))


def rayknight_exponential_average(coeffs, alpha_mean: float) -> float:
    """Average of sum_m c_m t^m over an exponential level of mean alpha_mean."""
    return math.fsum(c * alpha_mean**m * math.factorial(m) for m, c in enumerate(coeffs))


def _killed_state(uT0):
    if isinstance(uT0, Kernel) and uT0.kind == "killed_at":
        return uT0.idx(uT0.param)
    return None


def excursion_moment(uT0, points) -> float:
    """Excursion-measure moment of total local times away from the base state.

    A single point has moment 1; otherwise the sum over orderings of the
    killed-kernel products along the chain.
    """
    mat, idx = resolve(uT0, points)
    z0 = _killed_state(uT0)
    if z0 is not None and np.any(idx == z0):
        raise ValueError("excursion moments are taken away from the killed state")
    if len(idx) == 0:
        raise ValueError("excursion moment needs at least one point")
    return free_chain_sum(mat, idx)


def rayknight_excursion_moment(uT0, t: float, points) -> float:
    """Poisson assembly of excursion moments at intensity t."""
    mat, idx = resolve(uT0, points)
    z0 = _killed_state(uT0)
    # local time at the base state is the level itself
    base = int(np.sum(idx == z0)) if z0 is not None else 0
    rest = idx[idx != z0] if z0 is not None else idx
    ex = _BlockCache(mat, free_chain_sum)
    return t**base * poisson_moment(rest, t, ex)


# ------------------------------------------------------------ interlacements


def interlacement_moment(u, measures) -> float:
    """Quasi-process moment of additive functionals: measure-valued free chain."""
    return combinat.chain_value_measures(u, measures)


def interlacement_field_moment(u, t: float, measures) -> float:
    """Moment of the interlacement functionals at level t (Poisson assembly)."""
    nus = list(measures)
    return poisson_moment(
        range(len(nus)), t, lambda b: interlacement_moment(u, [nus[i] for i in b])
    )


def wick_square_moment(u, measures) -> float:
    """E prod :G^2:(nu_i)/2: partitions with every block of size >= 2."""
    nus = list(measures)
    if not nus:
        return 1.0
    return _partition_sum(
        range(len(nus)),
        lambda b: 0.5 * combinat.cycle_value_measures(u, [nus[i] for i in b]),
        min_block=2,
    )


def interlacement_gaussian_moment(u, t: float, measures) -> float:
    """E prod (:G^2:(nu_i)/2 + sqrt(2t) G_{nu_i} + t |nu_i|).

    Blocks are cycles (size >= 2, weight cy/2) or chains (weight t ch).
    """
    nus = list(measures)

    def weight(b):
        sub = [nus[i] for i in b]
        w = t * combinat.chain_value_measures(u, sub)
        if len(b) >= 2:
            w += 0.5 * combinat.cycle_value_measures(u, sub)
        return w

    return _partition_sum(range(len(nus)), weight)


# --------------------------------------------------------------- utilities


def multisets(states, max_order: int, min_order: int = 0):
    """All multisets of ``states`` with sizes in [min_order, max_order]."""
    for k in range(min_order, max_order + 1):
        yield from itertools.combinations_with_replacement(states, k)


__all__ = [
    "CapExceeded",
    "gauss_moment",
    "gauss_square_moment",
    "gauss_pair_square_moment",
    "shifted_square_moment",
    "gauss_poly_expectation",
    "square_factor",
    "wick_factor",
    "lt_moment_start",
    "lt_moment_bridge",
    "loop_measure_moment",
    "poisson_moment",
    "soup_field_moment",
    "rayknight_polynomial",
    "rayknight_lhs_moment",
    "rayknight_exponential_average",
    "excursion_moment",
    "rayknight_excursion_moment",
    "interlacement_moment",
    "interlacement_field_moment",
    "wick_square_moment",
    "interlacement_gaussian_moment",
    "multisets",
]
