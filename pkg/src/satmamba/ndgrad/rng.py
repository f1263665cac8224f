"""Counter-based splitmix64 random generator with named substreams.

Every draw is a pure function of (seed, counter), so streams can be
re-derived at any point of a run (no mutable state to checkpoint beyond
the seed and the counter). All integer arithmetic is done on uint64
arrays, which wrap modulo 2**64.
"""

from __future__ import annotations

import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)

_U64 = np.uint64
_TWO53 = float(1 << 53)


def _mix(z: np.ndarray) -> np.ndarray:
    """Stafford mix13 finalizer, vectorized over uint64 arrays."""
    z = (z ^ (z >> _U64(30))) * _MIX1
    z = (z ^ (z >> _U64(27))) * _MIX2
    return z ^ (z >> _U64(31))


def _hash_label(label: str) -> np.uint64:
    """FNV-1a over the UTF-8 bytes of ``label`` (platform independent)."""
    h = 0xCBF29CE484222325
    for b in label.encode("utf-8"):
        h = ((h ^ b) * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return _U64(h)


class Rng:
    """Deterministic generator: identical seed gives an identical stream.

    ``stream(label, index)`` derives an independent child generator; the
    derivation is stateless, making per-(epoch, sample) streams cheap.
    """

    def __init__(self, seed: int):
        self.seed = _U64(seed & 0xFFFFFFFFFFFFFFFF)
        self._counter = 0

    def stream(self, label: str, index: int = 0) -> "Rng":
        mask = 0xFFFFFFFFFFFFFFFF
        mixed = (int(self.seed) + 0x9E3779B97F4A7C15 * (index & mask)) & mask
        child = _mix(np.array([mixed ^ int(_hash_label(label))], dtype=np.uint64))[0]
        return Rng(int(child))

    # -- raw draws ------------------------------------------------------

    def u64(self, n: int = None):
        """Next ``n`` raw 64-bit values (or a single int when n is None)."""
        count = 1 if n is None else int(n)
        idx = np.arange(self._counter, self._counter + count, dtype=np.uint64)
        self._counter += count
        out = _mix(self.seed + _GAMMA * (idx + _U64(1)))
        return int(out[0]) if n is None else out

    def below(self, bound: int) -> int:
        """Uniform int in [0, bound). Modulo bias is < bound / 2**64."""
        if bound <= 0:
            raise ValueError(f"below() requires a positive bound, got {bound}")
        return self.u64() % bound

    # -- float draws ----------------------------------------------------

    def uniform(self, shape=(), dtype=np.float64) -> np.ndarray:
        """Uniform floats in [0, 1) with 53-bit resolution."""
        n = int(np.prod(shape)) if shape else 1
        vals = (self.u64(n) >> _U64(11)).astype(np.float64) / _TWO53
        out = vals.astype(dtype).reshape(shape)
        return out if shape else out.reshape(())

    def normal(self, shape=(), std=1.0, dtype=np.float64) -> np.ndarray:
        """Standard normals via Box-Muller on paired uniform draws."""
        n = int(np.prod(shape)) if shape else 1
        m = (n + 1) // 2
        # u1 in (0, 1] so log(u1) is finite
        u1 = ((self.u64(m) >> _U64(11)).astype(np.float64) + 1.0) / _TWO53
        u2 = (self.u64(m) >> _U64(11)).astype(np.float64) / _TWO53
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        vals = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        out = (vals * std).astype(dtype).reshape(shape)
        return out if shape else out.reshape(())

    def trunc_normal(self, shape, std=1.0, clip=2.0, dtype=np.float64) -> np.ndarray:
        """Normals redrawn until within ``clip`` standard deviations."""
        vals = self.normal(shape, dtype=np.float64)
        for _ in range(64):
            bad = np.abs(vals) > clip
            k = int(bad.sum())
            if k == 0:
                break
            vals[bad] = self.normal((k,), dtype=np.float64)
        return (vals * std).astype(dtype)

    # -- integer helpers -------------------------------------------------

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        """Uniform ints in [low, high)."""
        if high <= low:
            raise ValueError(f"integers() requires high > low, got [{low}, {high})")
        n = int(np.prod(shape)) if shape else 1
        span = _U64(high - low)
        vals = (self.u64(n) % span).astype(np.int64) + low
        out = vals.reshape(shape)
        return out if shape else int(out.reshape(())[()])

    def shuffled(self, n: int) -> np.ndarray:
        """A uniformly random permutation of range(n) (Fisher-Yates)."""
        arr = np.arange(n, dtype=np.int64)
        for i in range(n - 1):
            j = i + self.below(n - i)
            arr[i], arr[j] = arr[j], arr[i]
        return arr

    def partial_shuffle(self, n: int, k: int) -> np.ndarray:
        """First k draws of a Fisher-Yates pass: a uniform k-subset of
        range(n), in draw order (exact sampling without replacement)."""
        if not 0 <= k <= n:
            raise ValueError(f"partial_shuffle() requires 0 <= k <= n, got k={k}, n={n}")
        arr = np.arange(n, dtype=np.int64)
        for i in range(k):
            j = i + self.below(n - i)
            arr[i], arr[j] = arr[j], arr[i]
        return arr[:k].copy()
