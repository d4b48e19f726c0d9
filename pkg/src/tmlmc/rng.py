"""Counter-based random streams.

Every stream is identified by a 64-bit key derived from a seed and a path of
integer labels (iteration, state, action, term, ...). The ``i``-th uniform of a
stream is a pure function of ``(key, i)``: it is the SplitMix64 output for that
counter. Any subset of draws can therefore be produced in any order, in one
vectorised call or one at a time, with bit-identical results.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_LABEL = np.uint64(0xD1B54A32D192ED03)
_S30, _S27, _S31, _S11 = (np.uint64(k) for k in (30, 27, 31, 11))
_INV53 = 1.0 / 9007199254740992.0


def mix64(x):
    """SplitMix64 finaliser, elementwise on uint64 arrays."""
    x = np.asarray(x, dtype=np.uint64)
    with np.errstate(over="ignore"):
        x = (x ^ (x >> _S30)) * _M1
        x = (x ^ (x >> _S27)) * _M2
    return x ^ (x >> _S31)


def _as_u64(v):
    # negative labels wrap like C unsigned conversion
    return np.asarray(v).astype(np.int64).astype(np.uint64)


def root_key(seed: int) -> np.uint64:
    return mix64(_as_u64(seed) ^ _GOLDEN)[()]


def child_key(key, label):
    """Key of the sub-stream ``label`` of ``key``; broadcasts over arrays."""
    with np.errstate(over="ignore"):
        return mix64(np.asarray(key, dtype=np.uint64) ^ mix64(_as_u64(label) * _LABEL + _GOLDEN))


def derive_key(seed: int, *labels) -> np.uint64:
    key = root_key(seed)
    for label in labels:
        key = child_key(key, label)
    return key


def uniforms(keys, counters) -> np.ndarray:
    """Uniforms in [0, 1) for (key, counter) pairs, with 53 random bits each."""
    keys = np.asarray(keys, dtype=np.uint64)
    counters = np.asarray(counters, dtype=np.uint64)
    with np.errstate(over="ignore"):
        x = mix64(keys + (counters + np.uint64(1)) * _GOLDEN)
    return (x >> _S11).astype(np.float64) * _INV53


class CounterStream:
    """Sequential view of one counter-based stream.

    Quacks like ``numpy.random.Generator`` for ``random(size)``, which is the
    only method the estimators use.
    """

    def __init__(self, key, position: int = 0):
        self.key = np.uint64(key)
        self.position = int(position)

    @classmethod
    def from_seed(cls, seed: int, *labels) -> "CounterStream":
        return cls(derive_key(seed, *labels))

    def child(self, label) -> "CounterStream":
        return CounterStream(child_key(self.key, label)[()])

    def random(self, size=None):
        n = 1 if size is None else int(np.prod(size))
        out = uniforms(self.key, np.arange(self.position, self.position + n, dtype=np.uint64))
        self.position += n
        if size is None:
            return float(out[0])
        return out.reshape(size)

    def __repr__(self):
        return f"CounterStream(key={int(self.key):#018x}, position={self.position})"
