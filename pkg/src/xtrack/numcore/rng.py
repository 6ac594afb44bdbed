"""Seeded random streams.

All randomness in the package flows through :class:`SeededRng`, which wraps
numpy's counter-based Philox4x64-10 bit generator. Child streams are derived
from (seed, name) so adding a consumer does not shift the others.
"""
from __future__ import annotations

import zlib

import numpy as np

ALGORITHM = "philox4x64-10"


class SeededRng:
    def __init__(self, seed: int = 0, _key=None):
        if seed < 0 or seed >= 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = int(seed)
        self.algorithm = ALGORITHM
        self._key = tuple(_key) if _key is not None else (self.seed,)
        self._gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(list(self._key))))

    def child(self, name: str) -> "SeededRng":
        """Independent stream keyed by ``name``."""
        return SeededRng(self.seed, _key=self._key + (zlib.crc32(name.encode("utf-8")),))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

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

    def __repr__(self):
        return f"SeededRng(seed={self.seed}, algorithm={self.algorithm!r})"
