"""Counter-based random streams.

Every stream is a Philox generator keyed by ``SeedSequence([seed, *path])``.
The path lets callers derive independent, reproducible sub-streams (per call,
per candidate) regardless of execution order. Uniforms are built from the top
53 bits of raw 64-bit Philox outputs, offset by half an ulp so they lie in the
open interval (0, 1).
"""

from __future__ import annotations

import numpy as np

_SCALE = 2.0**-53


class RandomStream:
    def __init__(self, seed: int, *path: int):
        if seed < 0 or any(p < 0 for p in path):
            raise ValueError("seed and path components must be non-negative")
        self.seed = int(seed)
        self.path = tuple(int(p) for p in path)
        self._gen = None

    @property
    def _bitgen(self) -> np.random.Philox:
        # built on first draw; streams used only to derive children never pay for it
        if self._gen is None:
            self._gen = np.random.Philox(np.random.SeedSequence([self.seed, *self.path]))
        return self._gen

    def __repr__(self):
        return f"RandomStream(seed={self.seed}, path={self.path})"

    def child(self, *keys: int) -> "RandomStream":
        """Independent stream derived from this one's seed and path."""
        return RandomStream(self.seed, *self.path, *keys)

    def uniform(self) -> float:
        raw = int(self._bitgen.random_raw())
        return ((raw >> 11) + 0.5) * _SCALE

    def uniforms(self, n: int) -> np.ndarray:
        raw = self._bitgen.random_raw(n)
        return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _SCALE


class FixedUniform:
    """Stand-in stream that always returns the same uniform.

    ``FixedUniform(0.5)`` makes every Laplace draw exactly zero, which is how
    tests force noiseless runs.
    """

    def __init__(self, u: float = 0.5):
        if not (0.0 < u < 1.0):
            raise ValueError("u must be in (0, 1)")
        self.u = u

    def child(self, *keys: int) -> "FixedUniform":
        return self

    def uniform(self) -> float:
        return self.u

    def uniforms(self, n: int) -> np.ndarray:
        return np.full(n, self.u)
