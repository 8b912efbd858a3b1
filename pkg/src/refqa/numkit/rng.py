"""Seeded, counter-based random streams.

Backed by numpy's Philox bit generator, whose output stream is fixed by the
seed and independent of platform. Sub-streams are derived by key, so two
components never share draws by accident.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


class Rng:
    def __init__(self, seed: int, key: tuple = ()):
        self.seed = int(seed) & _MASK64
        self.key = tuple(int(k) & _MASK64 for k in key)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.key)
        self._gen = np.random.Generator(np.random.Philox(ss))

    def __repr__(self):
        return f"Rng(seed={self.seed}, key={self.key})"

    def child(self, *key: int) -> "Rng":
        """Independent stream identified by ``key`` under the same seed."""
        return Rng(self.seed, self.key + tuple(key))

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def choice(self, n, size, replace=False):
        return self._gen.choice(n, size=size, replace=replace)
