"""Finite-state continuous-time Markov chains with killing.

A chain is described by a reference measure ``m`` on the states, off-diagonal
jump rates and per-state killing rates. Local times are occupation times
divided by ``m``, so every kernel in :mod:`isokit.kernels` is a density with
respect to ``m``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MODEL_SCHEMA = "isokit-model/1"
SYMMETRY_TOL = 1e-12
TRANSIENCE_TOL = 1e-10

_MODEL_KEYS = {"states", "m", "jump_rates", "kill_rates", "symmetric", "recurrent"}
_OPTIONAL_KEYS = {"schema"}


class ModelError(ValueError):
    """Raised when a model file cannot be parsed or violates an invariant."""


@dataclass(frozen=True)
class ChainModel:
    states: tuple[str, ...]
    m: np.ndarray
    rates: np.ndarray  # rates[x, y] for x != y; diagonal is zero
    kill: np.ndarray
    symmetric: bool = False
    recurrent: bool = False
    index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        m = np.array(self.m, dtype=float)
        rates = np.array(self.rates, dtype=float)
        kill = np.array(self.kill, dtype=float)
        n = len(self.states)
        if m.shape != (n,) or rates.shape != (n, n) or kill.shape != (n,):
            raise ModelError("shape mismatch between states, m, rates and kill")
        if len(set(self.states)) != n:
            raise ModelError("duplicate state identifiers")
        if not np.all(np.isfinite(m)) or np.any(m <= 0):
            raise ModelError("reference measure m must be strictly positive")
        off = rates[~np.eye(n, dtype=bool)]
        if not np.all(np.isfinite(rates)) or np.any(off < 0):
            raise ModelError("jump rates must be nonnegative")
        if not np.all(np.isfinite(kill)) or np.any(kill < 0):
            raise ModelError("kill rates must be nonnegative")
        np.fill_diagonal(rates, 0.0)
        for arr in (m, rates, kill):
            arr.setflags(write=False)
        object.__setattr__(self, "states", tuple(str(s) for s in self.states))
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "kill", kill)
        object.__setattr__(self, "index", {s: i for i, s in enumerate(self.states)})

        if self.symmetric:
            report = check_symmetry(self)
            if not report.passed:
                raise ModelError(
                    f"declared symmetric but detailed balance fails "
                    f"(max deviation {report.max_deviation:.3e})"
                )
        abscissa = spectral_abscissa(self)
        if self.recurrent:
            if abs(abscissa) > TRANSIENCE_TOL:
                raise ModelError(
                    f"declared recurrent but spectral abscissa is {abscissa:.3e}"
                )
        elif abscissa >= -TRANSIENCE_TOL:
            raise ModelError(
                "model is not transient (spectral abscissa "
                f"{abscissa:.3e}); set recurrent=true if intended"
            )

    @property
    def n(self) -> int:
        return len(self.states)

    @property
    def transient(self) -> bool:
        return not self.recurrent

    def generator(self) -> np.ndarray:
        """Q with Q[x, y] = jump rate and Q[x, x] = -(total jump rate + kill rate)."""
        q = self.rates.copy()
        np.fill_diagonal(q, -(self.rates.sum(axis=1) + self.kill))
        return q

    def idx(self, state) -> int:
        try:
            return self.index[str(state)]
        except KeyError:
            raise ModelError(f"unknown state {state!r}") from None

    def indices(self, states) -> list[int]:
        return [self.idx(s) for s in states]


@dataclass(frozen=True)
class SymmetryReport:
    max_deviation: float
    tolerance: float
    passed: bool


def check_symmetry(model: ChainModel) -> SymmetryReport:
    flux = model.m[:, None] * model.rates
    dev = float(np.max(np.abs(flux - flux.T))) if model.n else 0.0
    return SymmetryReport(dev, SYMMETRY_TOL, dev <= SYMMETRY_TOL)


def spectral_abscissa(model: ChainModel) -> float:
    return float(np.max(np.linalg.eigvals(model.generator()).real))


def _parse(obj) -> ChainModel:
    if not isinstance(obj, dict):
        raise ModelError("model file must contain a JSON object")
    unknown = set(obj) - _MODEL_KEYS - _OPTIONAL_KEYS
    if unknown:
        raise ModelError(f"unknown keys: {sorted(unknown)}")
    missing = {"states", "m", "jump_rates"} - set(obj)
    if missing:
        raise ModelError(f"missing keys: {sorted(missing)}")
    if "schema" in obj and obj["schema"] != MODEL_SCHEMA:
        raise ModelError(f"unsupported schema {obj['schema']!r}")

    states = [str(s) for s in obj["states"]]
    index = {s: i for i, s in enumerate(states)}
    n = len(states)

    def lookup(s):
        if str(s) not in index:
            raise ModelError(f"unknown state {s!r}")
        return index[str(s)]

    m = np.zeros(n)
    if not isinstance(obj["m"], dict) or set(map(str, obj["m"])) != set(states):
        raise ModelError("m must give a weight for every state")
    for s, w in obj["m"].items():
        m[lookup(s)] = float(w)

    rates = np.zeros((n, n))
    for entry in obj["jump_rates"]:
        if not isinstance(entry, dict) or set(entry) != {"from", "to", "rate"}:
            raise ModelError(f"malformed jump rate entry {entry!r}")
        i, j = lookup(entry["from"]), lookup(entry["to"])
        if i == j:
            raise ModelError(f"self jump at state {entry['from']!r}")
        rates[i, j] += float(entry["rate"])

    kill = np.zeros(n)
    for s, r in obj.get("kill_rates", {}).items():
        kill[lookup(s)] = float(r)

    symmetric = obj.get("symmetric", False)
    recurrent = obj.get("recurrent", False)
    if not isinstance(symmetric, bool) or not isinstance(recurrent, bool):
        raise ModelError("symmetric and recurrent must be booleans")
    return ChainModel(tuple(states), m, rates, kill, symmetric, recurrent)


def loads_model(text: str) -> ChainModel:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(f"parse error: {exc}") from exc
    try:
        return _parse(obj)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ModelError):
            raise
        raise ModelError(f"parse error: {exc}") from exc


def load_model(path) -> ChainModel:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ModelError(f"cannot read model file: {exc}") from exc
    return loads_model(text)


def model_to_dict(model: ChainModel) -> dict:
    s = model.states
    jumps = [
        {"from": s[i], "to": s[j], "rate": float(model.rates[i, j])}
        for i in range(model.n)
        for j in range(model.n)
        if i != j and model.rates[i, j] > 0
    ]
    return {
        "states": list(s),
        "m": {x: float(w) for x, w in zip(s, model.m)},
        "jump_rates": jumps,
        "kill_rates": {x: float(k) for x, k in zip(s, model.kill) if k > 0},
        "symmetric": model.symmetric,
        "recurrent": model.recurrent,
    }


def dumps_model(model: ChainModel) -> str:
    return json.dumps(model_to_dict(model), indent=2) + "\n"


def save_model(model: ChainModel, path) -> None:
    Path(path).write_text(dumps_model(model))


def random_reversible_model(
    n: int,
    rng: np.random.Generator,
    rate_range=(0.1, 2.0),
    kill_range=(0.2, 1.0),
    recurrent: bool = False,
    cycle: bool = False,
    m_range=(0.5, 2.0),
) -> ChainModel:
    """Random reversible chain on states ``"0".."n-1"``.

    Rates are symmetric conductances divided by a random ``m`` drawn from
    ``m_range``, so detailed balance holds up to rounding. With ``cycle`` the
    jump graph is a ring, otherwise complete. Every state is killed at a rate
    drawn from ``kill_range`` unless ``recurrent``.
    """
    states = tuple(str(i) for i in range(n))
    c = np.zeros((n, n))
    if cycle:
        for i in range(n):
            j = (i + 1) % n
            c[i, j] = c[j, i] = rng.uniform(*rate_range)
    else:
        iu = np.triu_indices(n, 1)
        c[iu] = rng.uniform(*rate_range, size=len(iu[0]))
        c = c + c.T
    m = rng.uniform(*m_range, size=n)
    kill = np.zeros(n) if recurrent else rng.uniform(*kill_range, size=n)
    return ChainModel(states, m, c / m[:, None], kill, symmetric=True, recurrent=recurrent)
