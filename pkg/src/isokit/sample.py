"""Seeded Monte Carlo samplers.

Randomness comes from :class:`RngStream`, a (seed, stream) pair mapped onto
numpy's counter-based Philox generator. Batched samplers split the trials into
fixed-size chunks, each with its own child stream, so results do not depend on
how many worker threads run them.
"""

from __future__ import annotations

import csv
import io
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .kernels import Kernel, potential
from .model import ChainModel

CHUNK = 16_384
PSD_TOL = 1e-10
MAX_STEPS = 10_000_000


class SamplerError(ValueError):
    pass


def _tag(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag)
    return zlib.crc32(str(tag).encode())


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream: identical (seed, stream) give identical draws."""

    seed: int
    stream: tuple = ()

    def child(self, *tags) -> "RngStream":
        return RngStream(self.seed, self.stream + tuple(_tag(t) for t in tags))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=self.stream)
        return np.random.Generator(np.random.Philox(ss))


def _gen(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError("rng must be an RngStream or numpy Generator")


def _chunked(fn, count: int, rng: RngStream, threads: int = 1):
    """Run ``fn(n, generator)`` over fixed chunks and stack the results in order."""
    if count < 0:
        raise SamplerError("count must be nonnegative")
    if not isinstance(rng, RngStream):
        return fn(count, _gen(rng))
    sizes = [min(CHUNK, count - i) for i in range(0, count, CHUNK)]
    jobs = [(n, rng.child("chunk", i)) for i, n in enumerate(sizes)]
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda j: fn(j[0], j[1].generator()), jobs))
    else:
        parts = [fn(n, r.generator()) for n, r in jobs]
    if not parts:
        return fn(0, rng.generator())
    if isinstance(parts[0], tuple):
        return tuple(np.concatenate(p) for p in zip(*parts))
    return np.concatenate(parts)


# ---------------------------------------------------------------- Gaussian


def sqrt_psd(C) -> np.ndarray:
    """Symmetric square root, clamping eigenvalues in [-1e-10, 0) to zero."""
    mat = C.entries if isinstance(C, Kernel) else np.asarray(C, dtype=float)
    if not np.allclose(mat, mat.T, atol=PSD_TOL, rtol=0):
        raise SamplerError("covariance is not symmetric")
    w, v = np.linalg.eigh((mat + mat.T) / 2)
    if w.size and w.min() < -PSD_TOL:
        raise SamplerError(f"covariance is not PSD (eigenvalue {w.min():.3e})")
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.T


def sample_gaussian(C, count: int, rng, threads: int = 1) -> np.ndarray:
    """``count`` draws of the centred field with covariance C, shape (count, n)."""
    a = sqrt_psd(C)
    n = a.shape[0]
    return _chunked(lambda k, g: g.standard_normal((k, n)) @ a, count, rng, threads)


def sample_halfint_soup_field(u, half_units: int, count: int, rng, threads: int = 1):
    """Occupation field at intensity half_units/2: sum of independent G^2/2 copies."""
    if half_units < 1:
        raise SamplerError("half_units must be >= 1")
    a = sqrt_psd(u)
    n = a.shape[0]

    def draw(k, g):
        z = g.standard_normal((half_units, k, n)) @ a
        return 0.5 * (z * z).sum(axis=0)

    return _chunked(draw, count, rng, threads)


# ------------------------------------------------------------------ paths


@dataclass(frozen=True)
class SamplePath:
    steps: tuple  # ((state, holding time), ...)
    cause: str  # "killed" | "stopped"
    lifetime: float


def _jump_table(rates: np.ndarray, kill: np.ndarray):
    total = rates.sum(axis=1) + kill
    if np.any(total <= 0):
        raise SamplerError("a state has no exit; the path would never end")
    probs = np.hstack([rates, kill[:, None]]) / total[:, None]
    cum = np.cumsum(probs, axis=1)
    cum[:, -1] = 1.0
    return total, cum


def _run(rates, kill, m, start, count, g, level_state=None, level=None):
    """Simulate ``count`` chains from ``start``.

    Returns (fields, lifetimes, last_states). With ``level`` set, each chain
    is stopped when its local time at ``level_state`` reaches ``level``.
    """
    n = len(m)
    total, cum = _jump_table(rates, kill)
    state = np.full(count, start, dtype=np.intp)
    alive = np.ones(count, dtype=bool)
    occ = np.zeros((count, n))
    life = np.zeros(count)
    if level is not None and level == 0:
        return occ, life, state
    for _ in range(MAX_STEPS):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        z = state[idx]
        hold = g.exponential(1.0, idx.size) / total[z]
        stop = np.zeros(idx.size, dtype=bool)
        if level is not None:
            at = z == level_state
            remaining = level * m[level_state] - occ[idx, level_state]
            stop = at & (hold >= remaining)
            hold = np.where(stop, remaining, hold)
        occ[idx, z] += hold
        life[idx] += hold
        nxt = (cum[z] < g.random(idx.size)[:, None]).sum(axis=1)
        dead = stop | (nxt == n)
        alive[idx[dead]] = False
        go = ~dead
        state[idx[go]] = nxt[go]
    else:
        raise SamplerError("step limit reached")
    fields = occ / m[None, :]
    if level is not None:
        # the stopping time is the hitting time of the level: pin it exactly
        fields[:, level_state] = level
    return fields, life, state


def sample_path(model: ChainModel, x0, rng) -> tuple[SamplePath, np.ndarray]:
    """One path from ``x0`` until it is killed, with its local-time field."""
    if model.recurrent:
        raise SamplerError("recurrent model: a path never dies without a stopping rule")
    g = _gen(rng)
    total, cum = _jump_table(model.rates, model.kill)
    z = model.idx(x0)
    steps = []
    field = np.zeros(model.n)
    for _ in range(MAX_STEPS):
        hold = g.exponential(1.0) / total[z]
        steps.append((model.states[z], float(hold)))
        field[z] += hold / model.m[z]
        nxt = int((cum[z] < g.random()).sum())
        if nxt == model.n:
            break
        z = nxt
    else:
        raise SamplerError("step limit reached")
    return SamplePath(tuple(steps), "killed", float(sum(h for _, h in steps))), field


def sample_local_times(model: ChainModel, x0, count: int, rng, threads: int = 1):
    """Total local-time fields of ``count`` paths from ``x0``, shape (count, n)."""
    if model.recurrent:
        raise SamplerError("recurrent model: a path never dies without a stopping rule")
    start = model.idx(x0)

    def draw(k, g):
        return _run(model.rates, model.kill, model.m, start, k, g)[0]

    return _chunked(draw, count, rng, threads)


def bridge_dynamics(model: ChainModel, y) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(h, rates, kill) of the chain conditioned to die at ``y``, with h = u(., y)."""
    if model.recurrent:
        raise SamplerError("bridge needs a transient model")
    j = model.idx(y)
    h = potential(model).entries[:, j]
    live = h > 0
    ratio = np.zeros_like(model.rates)
    ratio[np.ix_(live, live)] = h[None, live] / h[live, None]
    rates = model.rates * ratio
    kill = np.zeros(model.n)
    kill[j] = 1.0 / (model.m[j] * h[j])
    return h, rates, kill


def sample_bridge_local_times(model: ChainModel, x, y, count: int, rng, threads: int = 1):
    """Local-time fields under the normalised bridge measure from x to y."""
    h, rates, kill = bridge_dynamics(model, y)
    i, j = model.idx(x), model.idx(y)
    if not h[i] > 0:
        raise SamplerError(f"u({x},{y}) = 0: {y} is unreachable from {x}")

    def draw(k, g):
        fields, _, last = _run(rates, kill, model.m, i, k, g)
        if np.any(last != j):
            raise SamplerError("bridge path ended away from its target")
        return fields

    return _chunked(draw, count, rng, threads)


def sample_bridge(model: ChainModel, x, y, rng) -> np.ndarray:
    """One bridge local-time field."""
    return sample_bridge_local_times(model, x, y, 1, _gen(rng))[0]


def sample_inverse_lt_fields(model: ChainModel, z0, t: float, count: int, rng, threads: int = 1):
    """Fields L_{tau(t)} and lifetimes tau(t) of ``count`` chains started at z0."""
    if not model.recurrent:
        raise SamplerError("inverse local time sampling needs a recurrent model")
    if t < 0:
        raise SamplerError("level t must be nonnegative")
    k0 = model.idx(z0)

    def draw(k, g):
        fields, life, _ = _run(model.rates, model.kill, model.m, k0, k, g, k0, float(t))
        return fields, life

    return _chunked(draw, count, rng, threads)


def sample_inverse_lt_field(model: ChainModel, z0, t: float, rng) -> np.ndarray:
    """One field L_{tau(t)}; its entry at z0 equals t."""
    return sample_inverse_lt_fields(model, z0, t, 1, _gen(rng))[0][0]


# ----------------------------------------------------------------- Poisson


def sample_poisson_functional(weights, intensity: float, count: int, rng) -> np.ndarray:
    """Atom counts of a Poisson process with intensity ``intensity * weights``.

    Returns an integer array of shape (count, number of atoms).
    """
    w = np.asarray(weights, dtype=float).reshape(-1)
    if not np.isfinite(intensity) or intensity < 0 or np.any(w < 0) or not np.all(np.isfinite(w)):
        raise SamplerError("intensity must be finite and nonnegative")
    lam = intensity * w
    return _chunked(lambda k, g: g.poisson(lam, size=(k, len(w))), count, rng)


# ------------------------------------------------------------------- dumps


def fields_to_csv(states, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["trial", *states])
    for i, row in enumerate(np.asarray(rows)):
        w.writerow([i, *(repr(float(v)) for v in row)])
    return buf.getvalue()


def mean_and_se(values) -> tuple[float, float]:
    """Sample mean and its standard error."""
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        raise ValueError("need at least two samples")
    return float(v.mean()), float(v.std(ddof=1) / np.sqrt(v.size))


__all__ = [
    "RngStream",
    "SamplerError",
    "SamplePath",
    "sqrt_psd",
    "sample_gaussian",
    "sample_halfint_soup_field",
    "sample_path",
    "sample_local_times",
    "bridge_dynamics",
    "sample_bridge",
    "sample_bridge_local_times",
    "sample_inverse_lt_field",
    "sample_inverse_lt_fields",
    "sample_poisson_functional",
    "fields_to_csv",
    "mean_and_se",
]
