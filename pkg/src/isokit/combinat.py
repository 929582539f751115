"""Pairings, set partitions and permutation sums over a kernel.

Points are given as state identifiers when the kernel is a :class:`Kernel`
and as integer indices when it is a bare matrix. Repeated points are allowed:
every occurrence is a distinct index, so e.g. ``cycle_value(K, [x, x])``
is ``K[x, x]**2`` (one cyclic class on two indices).
"""

from __future__ import annotations

import itertools
import math
from functools import lru_cache

import numpy as np

from .kernels import Kernel

MAX_PAIRING_N = 12
MAX_PARTITION_N = 10
MAX_PERMUTATION_N = 9
MAX_MEASURE_CHAIN_K = 8


class CapExceeded(ValueError):
    """Raised when an enumeration would exceed its size cap."""


def _check_cap(n, cap, what):
    if n < 0:
        raise ValueError(f"{what}: negative size")
    if n > cap:
        raise CapExceeded(f"{what}: size {n} exceeds cap {cap}")


def resolve(K, points=()):
    """Return (matrix, index array) for a Kernel/matrix and a point list."""
    if isinstance(K, Kernel):
        return K.entries, np.asarray(K.indices(points), dtype=np.intp)
    mat = np.asarray(K, dtype=float)
    idx = np.asarray(list(points), dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= mat.shape[0]):
        raise ValueError("point index out of range")
    return mat, idx


# ---------------------------------------------------------------- enumeration


@lru_cache(maxsize=None)
def _pairings(n: int) -> tuple:
    if n == 0:
        return ((),)
    if n % 2:
        return ()
    out = []

    def rec(items, acc):
        if not items:
            out.append(tuple(acc))
            return
        first, rest = items[0], items[1:]
        for i, other in enumerate(rest):
            rec(rest[:i] + rest[i + 1 :], acc + [(first, other)])

    rec(tuple(range(n)), [])
    return tuple(out)


def enum_pairings(n: int) -> list[tuple[tuple[int, int], ...]]:
    """All perfect matchings of ``range(n)``; empty for odd ``n``."""
    _check_cap(n, MAX_PAIRING_N, "enum_pairings")
    return list(_pairings(n))


@lru_cache(maxsize=None)
def pairing_array(n: int) -> np.ndarray:
    """Pairings of ``range(n)`` as an int array of shape (count, n // 2, 2)."""
    _check_cap(n, MAX_PAIRING_N, "pairing_array")
    p = _pairings(n)
    arr = np.array(p, dtype=np.intp).reshape(len(p), n // 2, 2)
    arr.setflags(write=False)
    return arr


@lru_cache(maxsize=None)
def _partitions(n: int) -> tuple:
    # restricted growth strings give blocks ordered by least element
    out = []

    def rec(i, blocks):
        if i == n:
            out.append(tuple(tuple(b) for b in blocks))
            return
        for b in blocks:
            b.append(i)
            rec(i + 1, blocks)
            b.pop()
        blocks.append([i])
        rec(i + 1, blocks)
        blocks.pop()

    rec(0, [])
    return tuple(out)


def enum_partitions(indices, min_block: int = 1) -> list[tuple[tuple, ...]]:
    """Unordered set partitions of ``indices`` in canonical form.

    Blocks keep the input order of their elements and are sorted by their
    first element's position in ``indices``.
    """
    items = list(indices)
    _check_cap(len(items), MAX_PARTITION_N, "enum_partitions")
    out = []
    for part in _partitions(len(items)):
        if min_block > 1 and any(len(b) < min_block for b in part):
            continue
        out.append(tuple(tuple(items[i] for i in b) for b in part))
    return out


@lru_cache(maxsize=None)
def permutation_array(k: int) -> np.ndarray:
    _check_cap(k, MAX_PERMUTATION_N, "permutations")
    perms = list(itertools.permutations(range(k)))
    arr = np.array(perms, dtype=np.intp).reshape(len(perms), k)
    arr.setflags(write=False)
    return arr


@lru_cache(maxsize=None)
def cyclic_array(k: int) -> np.ndarray:
    """One representative per cyclic class of arrangements of ``range(k)``.

    Representatives start at 0, the least element, so the k rotations of an
    arrangement collapse to a single row.
    """
    _check_cap(k, MAX_PERMUTATION_N + 1, "cyclic arrangements")
    if k == 0:
        return np.zeros((1, 0), dtype=np.intp)
    rest = permutation_array(k - 1) + 1
    arr = np.hstack([np.zeros((len(rest), 1), dtype=np.intp), rest])
    arr.setflags(write=False)
    return arr


def canonical_cycle(arrangement) -> tuple:
    """Rotate a cyclic arrangement so that its least element comes first."""
    a = list(arrangement)
    if not a:
        return ()
    i = a.index(min(a))
    return tuple(a[i:] + a[:i])


@lru_cache(maxsize=None)
def cycle_counts(k: int) -> np.ndarray:
    perms = permutation_array(k)
    rows = np.arange(len(perms))[:, None]
    # an element starts a cycle iff it is the least element of its orbit
    cur = np.tile(np.arange(k), (len(perms), 1))
    orbit_min = cur.copy()
    for _ in range(k - 1):
        cur = perms[rows, cur]
        np.minimum(orbit_min, cur, out=orbit_min)
    counts = (orbit_min == np.arange(k)).sum(axis=1)
    counts.setflags(write=False)
    return counts


# ---------------------------------------------------------------- functionals


def cycle_sum(mat: np.ndarray, idx: np.ndarray) -> float:
    """Sum over cyclic arrangements of the wrap-around product of ``mat``."""
    k = len(idx)
    if k == 0:
        raise ValueError("cycle of an empty block")
    if k == 1:
        return float(mat[idx[0], idx[0]])
    pts = idx[cyclic_array(k)]
    prods = mat[pts, np.roll(pts, -1, axis=1)].prod(axis=1)
    return math.fsum(prods)


def chain_sum(mat: np.ndarray, a: int, b: int, idx: np.ndarray) -> float:
    """Sum over orderings of ``mat[a, x1] mat[x1, x2] ... mat[xk, b]``."""
    k = len(idx)
    if k == 0:
        return float(mat[a, b])
    pts = idx[permutation_array(k)]
    prods = mat[a, pts[:, 0]] * mat[pts[:, -1], b]
    if k > 1:
        prods = prods * mat[pts[:, :-1], pts[:, 1:]].prod(axis=1)
    return math.fsum(prods)


def free_chain_sum(mat: np.ndarray, idx: np.ndarray) -> float:
    """Sum over orderings of ``mat[x1, x2] ... mat[x(k-1), xk]``; 1 for a singleton."""
    k = len(idx)
    if k == 0:
        raise ValueError("chain of an empty block")
    if k == 1:
        return 1.0
    pts = idx[permutation_array(k)]
    return math.fsum(mat[pts[:, :-1], pts[:, 1:]].prod(axis=1))


def cycle_value(K, block) -> float:
    mat, idx = resolve(K, block)
    return cycle_sum(mat, idx)


def chain_value(K, a, b, interior=()) -> float:
    mat, ends = resolve(K, [a, b])
    _, idx = resolve(K, interior)
    return chain_sum(mat, int(ends[0]), int(ends[1]), idx)


def free_chain_value(K, block) -> float:
    mat, idx = resolve(K, block)
    return free_chain_sum(mat, idx)


def alpha_permanent(K, points, alpha: float) -> float:
    """Sum over permutations of alpha**cycles * prod K[x_i, x_pi(i)]."""
    mat, idx = resolve(K, points)
    n = len(idx)
    _check_cap(n, MAX_PERMUTATION_N, "alpha_permanent")
    if n == 0:
        return 1.0
    perms = permutation_array(n)
    prods = mat[idx[None, :], idx[perms]].prod(axis=1)
    weights = float(alpha) ** cycle_counts(n)
    return math.fsum(weights * prods)


# ---------------------------------------------------- measure-valued points


def _measures(K, measures):
    mat = K.entries if isinstance(K, Kernel) else np.asarray(K, dtype=float)
    nus = [np.asarray(v, dtype=float) for v in measures]
    for v in nus:
        if v.shape != (mat.shape[0],):
            raise ValueError("measure length does not match the kernel")
    return mat, nus


def cycle_value_measures(K, measures) -> float:
    """Cycle function with each index integrated against its own measure.

    For one arrangement (b1..bk) the term is tr(D_b1 U D_b2 U ... D_bk U)
    with D = diag(nu).
    """
    mat, nus = _measures(K, measures)
    k = len(nus)
    _check_cap(k, MAX_MEASURE_CHAIN_K, "cycle_value_measures")
    if k == 0:
        raise ValueError("cycle of an empty block")
    mats = [v[:, None] * mat for v in nus]
    total = []
    for arr in cyclic_array(k):
        prod = mats[arr[0]]
        for j in arr[1:]:
            prod = prod @ mats[j]
        total.append(np.trace(prod))
    return math.fsum(total)


def chain_value_measures(K, measures) -> float:
    """Free chain with measure-valued points; |nu| for a single index."""
    mat, nus = _measures(K, measures)
    k = len(nus)
    _check_cap(k, MAX_MEASURE_CHAIN_K, "chain_value_measures")
    if k == 0:
        raise ValueError("chain of an empty block")
    if k == 1:
        return float(nus[0].sum())
    total = []
    for perm in permutation_array(k):
        v = nus[perm[-1]]
        for j in perm[-2::-1]:
            v = nus[j] * (mat @ v)
        total.append(v.sum())
    return math.fsum(total)

