"""Deterministic counter-based random number generator.

Every draw is a pure function of ``(seed, stream_id, counter)``, so sequences
are identical on every platform and independent of how draws are chunked or
which compute backend produced them.  Construction, per 64-bit output:

1. a 64-bit stream key is derived from ``(seed, stream_id)`` with the
   splitmix64 finalizer,
2. the four xoshiro256** state words are expanded from the key with
   splitmix64 evaluated at counter positions ``4c .. 4c+3``,
3. the state is advanced one xoshiro256** step and the ``**`` output
   scrambler is applied.

xoshiro256** is natively sequential; evaluating a freshly splitmix64-seeded
state per counter keeps the generator counter-addressable, which the event
simulator relies on (per-pixel, per-event jitter draws that do not depend on
emission order).  The same integer formulas are mirrored in the numba
kernels (``_kernels/jitted.py``) and must stay in sync.
"""

from __future__ import annotations

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_STREAM_SALT = np.uint64(0x1F123BB5851F42D5)

_U64 = np.uint64
_MASK53 = float(2**-53)


def _mix64(z: np.ndarray) -> np.ndarray:
    """splitmix64 output finalizer (vectorized over uint64 arrays)."""
    with np.errstate(over="ignore"):  # uint64 wraparound is the algorithm
        z = (z ^ (z >> _U64(30))) * _U64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> _U64(27))) * _U64(0x94D049BB133111EB)
        return z ^ (z >> _U64(31))


def _rotl(x: np.ndarray, k: int) -> np.ndarray:
    return (x << _U64(k)) | (x >> _U64(64 - k))


def stream_key(seed: int, stream_id: int) -> int:
    """64-bit key identifying one (seed, stream) draw sequence."""
    s = np.asarray(np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
    t = np.asarray(np.uint64(stream_id & 0xFFFFFFFFFFFFFFFF))
    return int(_mix64(_mix64(s) ^ _mix64(t ^ _STREAM_SALT)))


def raw64(key: int, counters: np.ndarray) -> np.ndarray:
    """64-bit outputs for the given draw counters under one stream key."""
    c = counters.astype(np.uint64, copy=False)
    k = _U64(key)
    with np.errstate(over="ignore"):  # uint64 wraparound is the algorithm
        base = c * _U64(4)
        s0 = _mix64(k + (base + _U64(1)) * GOLDEN)
        s1 = _mix64(k + (base + _U64(2)) * GOLDEN)
        s2 = _mix64(k + (base + _U64(3)) * GOLDEN)
        s3 = _mix64(k + (base + _U64(4)) * GOLDEN)
        # one xoshiro256** step, then the ** output scrambler
        t = s1 << _U64(17)
        s2 = s2 ^ s0
        s3 = s3 ^ s1
        s1 = s1 ^ s2
        # s0, s3 updates not needed for the output word
        s2 = s2 ^ t
        del s2
        return _rotl(s1 * _U64(5), 7) * _U64(9)


def uniform_from_raw(bits: np.ndarray) -> np.ndarray:
    """Map raw 64-bit outputs to float64 uniforms in [0, 1)."""
    return (bits >> _U64(11)).astype(np.float64) * _MASK53


def normal_from_raw(bits_a: np.ndarray, bits_b: np.ndarray) -> np.ndarray:
    """Box-Muller cosine branch; one normal per pair of raw draws."""
    u1 = uniform_from_raw(bits_a)
    u2 = uniform_from_raw(bits_b)
    r = np.sqrt(-2.0 * np.log1p(-u1))
    return r * np.cos(2.0 * np.pi * u2)


class Rng:
    """Stateful view over the counter-based stream: draws advance a counter.

    Identical (seed, stream_id) and an identical call sequence reproduce the
    same values everywhere.  ``substream`` derives an independent stream for
    a child task without consuming draws from the parent.
    """

    ALGORITHM = "ctr-splitmix64-xoshiro256stst-v1"

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream_id = int(stream_id) & 0xFFFFFFFFFFFFFFFF
        self._key = stream_key(self.seed, self.stream_id)
        self._counter = 0

    def substream(self, k: int) -> "Rng":
        with np.errstate(over="ignore"):  # uint64 wraparound is the algorithm
            child = int(_mix64(np.asarray(
                _U64(self.stream_id) + GOLDEN * _U64((k & 0xFFFFFFFFFFFFFFFF) + 1))))
        return Rng(self.seed, child)

    def _take(self, n: int) -> np.ndarray:
        counters = np.arange(self._counter, self._counter + n, dtype=np.uint64)
        self._counter += n
        return raw64(self._key, counters)

    def random_u64(self, n: int) -> np.ndarray:
        return self._take(n)

    def uniform(self, n: int) -> np.ndarray:
        """n float64 uniforms in [0, 1)."""
        return uniform_from_raw(self._take(n))

    def normal(self, n: int) -> np.ndarray:
        """n standard normals; consumes 2n counters."""
        bits = self._take(2 * n)
        return normal_from_raw(bits[0::2], bits[1::2])

    def shuffled(self, n: int) -> np.ndarray:
        """Deterministic permutation of range(n)."""
        keys = self.uniform(n)
        return np.argsort(keys, kind="stable")
