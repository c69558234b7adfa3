"""Deterministic counter-based pseudo-random streams.

Every stochastic step in the pipeline (bootstrap draws, per-node feature
subsets, negative-pixel sampling, scene synthesis) derives its values from
64-bit counters mixed through the SplitMix64 finalizer.  A value therefore
depends only on (seed, counter), never on call order, thread schedule,
platform or numpy version, which is what makes retraining and re-rendering
bit-reproducible.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX_A = 0xBF58476D1CE4E5B9
_MIX_B = 0x94D049BB133111EB


def mix64(z: int) -> int:
    """SplitMix64 finalizer: a bijective avalanche mix of a 64-bit value."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * _MIX_A) & _MASK
    z = ((z ^ (z >> 27)) * _MIX_B) & _MASK
    return z ^ (z >> 31)


def counter_u64(seed: int, counter: int) -> int:
    """The counter-th 64-bit word of the stream rooted at seed."""
    return mix64((seed + (counter + 1) * _GOLDEN) & _MASK)


def _counter_u64_array(seed: int, start: int, count: int) -> np.ndarray:
    """Vectorized counter_u64 for counters start..start+count-1."""
    idx = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    z = (np.uint64(seed & _MASK) + idx * np.uint64(_GOLDEN))
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX_A)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX_B)
    return z ^ (z >> np.uint64(31))


class Stream:
    """Sequential view over a counter-based stream.

    Instances are cheap; independent substreams come from spawn(), so two
    consumers never share counters.
    """

    def __init__(self, seed: int):
        self.seed = seed & _MASK
        self._counter = 0

    def spawn(self, tag: int) -> "Stream":
        """Independent child stream; identical (seed, tag) gives an identical child."""
        return Stream(mix64(self.seed ^ counter_u64(self.seed, (tag + 1) << 32)))

    def next_u64(self) -> int:
        value = counter_u64(self.seed, self._counter)
        self._counter += 1
        return value

    def next_below(self, n: int) -> int:
        """Uniform integer in [0, n).  Modulo bias is < n / 2**64."""
        if n <= 0:
            raise ValueError("n must be positive")
        return self.next_u64() % n

    def u64_array(self, count: int) -> np.ndarray:
        out = _counter_u64_array(self.seed, self._counter, count)
        self._counter += count
        return out

    def integers(self, n: int, count: int) -> np.ndarray:
        """count uniform integers in [0, n) as int64."""
        if n <= 0:
            raise ValueError("n must be positive")
        return (self.u64_array(count) % np.uint64(n)).astype(np.int64)

    def uniforms(self, count: int) -> np.ndarray:
        """count uniform float64 values in [0, 1)."""
        return self.u64_array(count).astype(np.float64) * (2.0 ** -64)

    def normals(self, count: int) -> np.ndarray:
        """count standard-normal float64 values via Box-Muller."""
        n_pairs = (count + 1) // 2
        u1 = self.uniforms(n_pairs)
        u2 = self.uniforms(n_pairs)
        r = np.sqrt(-2.0 * np.log(1.0 - u1))  # 1-u1 in (0,1], log finite
        theta = 2.0 * np.pi * u2
        out = np.empty(2 * n_pairs)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:count]

    def sample_without_replacement(self, n: int, k: int) -> np.ndarray:
        """k distinct integers from [0, n), by partial Fisher-Yates.

        Output order is the draw order, deterministic for a given stream
        position.
        """
        if not 0 <= k <= n:
            raise ValueError(f"cannot draw {k} distinct values from {n}")
        pool = np.arange(n, dtype=np.int64)
        draws = self.u64_array(k)
        for j in range(k):
            swap = j + int(draws[j] % np.uint64(n - j))
            pool[j], pool[swap] = pool[swap], pool[j]
        return pool[:k]
