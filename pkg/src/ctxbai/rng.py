"""Counter-based random streams.

Every draw is a pure function of ``(key, counter)`` through the SplitMix64
output function, so a trial's draw sequence does not depend on how many other
trials run alongside it, on chunking, or on thread scheduling.  The same
arithmetic serves a single trial (:class:`RngStream`) and a batch of trials
advancing in lockstep (:class:`BatchStream`).
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0  # 2**-53


def _as_u64(values) -> np.ndarray:
    if isinstance(values, np.ndarray):
        if values.dtype == np.uint64:
            return np.atleast_1d(values)
        if values.dtype.kind not in "iu":
            raise TypeError("stream keys must be integers")
        values = values.tolist()
    if isinstance(values, (int, np.integer)):
        values = [values]
    # Python ints: a mixed list of large and small values must not pass through float.
    return np.array([int(v) & _MASK64 for v in values], dtype=np.uint64)


def mix64(z: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer applied elementwise (wrapping uint64 arithmetic)."""
    z = np.asarray(z, dtype=np.uint64)
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def _fold(key: np.ndarray, ids: np.ndarray, position: int) -> np.ndarray:
    # The multiply and the position offset keep equal seed/id values from cancelling.
    offset = np.uint64((int(_GOLDEN) * (position + 2)) & _MASK64)
    return mix64((key * _M1) ^ mix64(ids + offset))


def stream_key(seed: int, *ids: int) -> int:
    """Fold a seed and any number of integer ids into one 64-bit stream key."""
    key = mix64(_as_u64([seed]) + _GOLDEN)
    for j, i in enumerate(ids):
        key = _fold(key, _as_u64([i]), j)
    return int(key[0])


def trial_key(seed: int, budget: int, trial: int) -> int:
    """Key for one Monte Carlo trial; distinct budgets get independent streams."""
    return stream_key(seed, budget, trial)


def trial_keys(seed: int, budget: int, trials, *extra: int) -> np.ndarray:
    """Vectorised ``stream_key(seed, budget, trial, *extra)`` over trial indices."""
    key = mix64(_as_u64([seed]) + _GOLDEN)
    key = _fold(key, _as_u64([budget]), 0)
    keys = _fold(key, _as_u64(np.asarray(trials, dtype=np.int64)), 1)
    for j, i in enumerate(extra):
        keys = _fold(keys, _as_u64([i]), 2 + j)
    return keys


def uniforms_at(keys: np.ndarray, counters: np.ndarray) -> np.ndarray:
    """Uniform [0, 1) doubles with 53 random bits for each ``(key, counter)``."""
    state = keys + (counters + np.uint64(1)) * _GOLDEN
    bits = mix64(state) >> _S11
    return bits.astype(np.float64) * _INV53


class RngStream:
    """Sequential view of one counter-based stream.

    Identical ``(seed, stream)`` pairs give identical sequences on every
    platform; the algorithm and constants are fixed.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        self.key = stream_key(self.seed, self.stream)
        self.counter = 0

    @classmethod
    def from_key(cls, key: int) -> "RngStream":
        obj = cls.__new__(cls)
        obj.seed = None
        obj.stream = None
        obj.key = int(key) & _MASK64
        obj.counter = 0
        return obj

    def uniform(self) -> float:
        u = uniforms_at(_as_u64([self.key]), _as_u64([self.counter]))
        self.counter += 1
        return float(u[0])

    def uniforms(self, n: int) -> np.ndarray:
        counters = np.arange(self.counter, self.counter + n, dtype=np.uint64)
        keys = np.full(n, self.key, dtype=np.uint64)
        self.counter += n
        return uniforms_at(keys, counters)


class BatchStream:
    """One independent stream per trial, advanced together.

    ``uniform(advance)`` returns one draw per trial; trials whose entry in
    ``advance`` is False keep their counter (the value returned for them is
    the draw they would consume next and must be ignored by the caller).
    """

    def __init__(self, keys):
        self.keys = _as_u64(keys).copy()
        self.counters = np.zeros(self.keys.shape, dtype=np.uint64)

    def __len__(self) -> int:
        return self.keys.shape[0]

    def skip(self) -> None:
        """Consume one draw per trial without computing it."""
        self.counters += np.uint64(1)

    def uniform(self, advance: np.ndarray | None = None) -> np.ndarray:
        u = uniforms_at(self.keys, self.counters)
        if advance is None:
            self.counters += np.uint64(1)
        else:
            self.counters += np.asarray(advance, dtype=np.uint64)
        return u
