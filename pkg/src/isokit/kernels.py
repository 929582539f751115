"""Transition densities and potential kernels of a finite chain.

All kernels are densities with respect to the reference measure ``m``:
``u(x, y) = E^x(L^y)`` where ``L^y`` is occupation time at ``y`` divided by
``m(y)``. Matrix-wise that is ``u = (alpha I - Q)^{-1} diag(1/m)``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .model import ChainModel, ModelError

ABS_TOL = 1e-10
REL_TOL = 1e-8


class KernelError(ValueError):
    pass


@dataclass(frozen=True)
class Kernel:
    """Square matrix of potential densities indexed by the model's states.

    ``kind`` is one of ``"alpha_potential"``, ``"potential"``, ``"killed_at"``
    or ``"tau_potential"``; ``param`` carries alpha, the killed state, or
    ``(z0, alpha_mean)`` respectively.
    """

    entries: np.ndarray
    kind: str
    states: tuple[str, ...]
    param: object = None
    symmetric: bool = False

    def __post_init__(self):
        e = np.array(self.entries, dtype=float)
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)

    def __getitem__(self, key):
        return self.entries[key]

    @property
    def n(self) -> int:
        return len(self.states)

    def idx(self, state) -> int:
        try:
            return self.states.index(str(state))
        except ValueError:
            raise KernelError(f"unknown state {state!r}") from None

    def indices(self, states) -> list[int]:
        return [self.idx(s) for s in states]

    def value(self, x, y) -> float:
        return float(self.entries[self.idx(x), self.idx(y)])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["state", *self.states])
        for s, row in zip(self.states, self.entries):
            w.writerow([s, *(repr(float(v)) for v in row)])
        return buf.getvalue()


def from_matrix(entries, states=None, kind="matrix", symmetric=None) -> Kernel:
    """Wrap a bare matrix as a Kernel (states default to "0".."n-1")."""
    e = np.asarray(entries, dtype=float)
    if states is None:
        states = tuple(str(i) for i in range(e.shape[0]))
    if symmetric is None:
        symmetric = bool(np.allclose(e, e.T, atol=ABS_TOL, rtol=0))
    return Kernel(e, kind, tuple(states), None, symmetric)


def _symmetrized(model: ChainModel):
    """Return (S, d) with S symmetric and Q = diag(1/d) S diag(d).

    Only valid for reversible models; d = sqrt(m).
    """
    d = np.sqrt(model.m)
    s = (d[:, None] * model.generator()) / d[None, :]
    return (s + s.T) / 2, d


def transition_density(model: ChainModel, t: float) -> np.ndarray:
    """p_t(x, y) = exp(tQ)[x, y] / m(y)."""
    if t < 0:
        raise KernelError("time must be nonnegative")
    if model.symmetric:
        s, d = _symmetrized(model)
        w, v = np.linalg.eigh(s)
        e = (v * np.exp(t * w)) @ v.T
        p = e / d[:, None] * d[None, :]
    else:
        p = scipy.linalg.expm(t * model.generator())
    p = np.clip(p, 0.0, None)
    return p / model.m[None, :]


def alpha_potential(model: ChainModel, alpha: float) -> Kernel:
    if alpha < 0:
        raise KernelError("alpha must be nonnegative")
    if alpha == 0 and model.recurrent:
        raise KernelError("0-potential is infinite for a recurrent model")
    a = alpha * np.eye(model.n) - model.generator()
    u = np.linalg.solve(a, np.diag(1.0 / model.m))
    if model.symmetric:
        u = (u + u.T) / 2
    kind = "potential" if alpha == 0 else "alpha_potential"
    return Kernel(u, kind, model.states, alpha, model.symmetric)


def potential(model: ChainModel) -> Kernel:
    return alpha_potential(model, 0.0)


def killed_potential(model: ChainModel, z0) -> Kernel:
    """Green function of the chain killed on first hitting ``z0``, zero-padded at z0."""
    k = model.idx(z0)
    keep = [i for i in range(model.n) if i != k]
    q = model.generator()[np.ix_(keep, keep)]
    if keep and np.max(np.linalg.eigvals(q).real) >= -1e-10:
        raise KernelError(f"some state cannot reach {z0!r}")
    u = np.zeros((model.n, model.n))
    if keep:
        sub = np.linalg.solve(-q, np.diag(1.0 / model.m[keep]))
        if model.symmetric:
            sub = (sub + sub.T) / 2
        u[np.ix_(keep, keep)] = sub
    return Kernel(u, "killed_at", model.states, model.states[k], model.symmetric)


def killed_potential_limit(model: ChainModel, z0, alpha: float = 1e-8) -> np.ndarray:
    """u^a(x,y) - u^a(x,z0) u^a(z0,y) / u^a(z0,z0) at small ``alpha``.

    Independent route to the killed kernel, used only as a cross-check.
    """
    k = model.idx(z0)
    u = alpha_potential(model, alpha).entries
    return u - np.outer(u[:, k], u[k, :]) / u[k, k]


def tau_potential(uT0: Kernel, alpha_mean: float) -> Kernel:
    """Kernel of the chain killed at the inverse local time of an exponential level.

    Adds the mean of the exponential level to every entry, z0 row and column
    included.
    """
    if uT0.kind != "killed_at":
        raise KernelError("tau_potential needs a killed_at kernel")
    if not alpha_mean > 0:
        raise KernelError("alpha_mean must be positive")
    return Kernel(
        uT0.entries + alpha_mean,
        "tau_potential",
        uT0.states,
        (uT0.param, alpha_mean),
        uT0.symmetric,
    )


def inverse_lt_laplace(model: ChainModel, z0, beta: float, t: float) -> float:
    """E^{z0} exp(-beta tau(t)) = exp(-t / u^beta(z0, z0))."""
    if not beta > 0:
        raise KernelError("beta must be positive")
    if t < 0:
        raise KernelError("level t must be nonnegative")
    k = model.idx(z0)
    return math.exp(-t / alpha_potential(model, beta).entries[k, k])


@dataclass(frozen=True)
class BrownianOracles:
    alpha_potential: float
    killed_potential: float
    inverse_lt_laplace: float


def bm_alpha_potential(alpha: float, x: float, y: float) -> float:
    if not alpha > 0:
        raise KernelError("alpha must be positive")
    r = math.sqrt(2 * alpha)
    return math.exp(-r * abs(x - y)) / r


def bm_killed_potential(x: float, y: float) -> float:
    """Two-sided Brownian motion killed at 0: (|x| + |y|) - |x - y|."""
    return (abs(x) + abs(y)) - abs(x - y)


def bm_inverse_lt_laplace(beta: float, t: float) -> float:
    if not beta > 0 or t < 0:
        raise KernelError("need beta > 0 and t >= 0")
    return math.exp(-t * math.sqrt(2 * beta))


def bm_oracles(alpha: float, x: float, y: float, t: float, beta: float) -> BrownianOracles:
    return BrownianOracles(
        bm_alpha_potential(alpha, x, y),
        bm_killed_potential(x, y),
        bm_inverse_lt_laplace(beta, t),
    )


def kernel_from_spec(model: ChainModel, kind: str) -> Kernel:
    """Parse the CLI kernel selector: potential, alpha:A, killed:Z0, tau:Z0:A."""
    head, _, rest = kind.partition(":")
    try:
        if head == "potential" and not rest:
            return potential(model)
        if head == "alpha":
            return alpha_potential(model, float(rest))
        if head == "killed" and rest:
            return killed_potential(model, rest)
        if head == "tau":
            z0, _, a = rest.rpartition(":")
            return tau_potential(killed_potential(model, z0), float(a))
    except ModelError as exc:
        raise KernelError(str(exc)) from exc
    except ValueError as exc:
        if isinstance(exc, KernelError):
            raise
        raise KernelError(f"invalid kernel kind {kind!r}: {exc}") from exc
    raise KernelError(f"invalid kernel kind {kind!r}")
