"""Seeded, counter-based random streams.

Streams are Philox generators keyed by ``(seed, *path)``, so a per-window or
per-sample stream depends only on its key path and never on how work was
scheduled across threads.
"""
from __future__ import annotations

import numpy as np


class Rng:
    def __init__(self, seed: int, *path: int):
        self.seed = int(seed)
        self.path = tuple(int(p) for p in path)
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
        self.generator = np.random.Generator(np.random.Philox(seq))

    def child(self, *keys: int) -> "Rng":
        return Rng(self.seed, *self.path, *keys)

    def normal(self, size=None, scale: float = 1.0) -> np.ndarray:
        return self.generator.normal(0.0, scale, size)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None) -> np.ndarray:
        return self.generator.uniform(low, high, size)

    def integers(self, low: int, high: int | None = None, size=None):
        return self.generator.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, path={self.path})"
