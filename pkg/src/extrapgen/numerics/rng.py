"""Seedable, splittable random source.

Backed by numpy's Philox counter-based bit generator. Child streams are keyed
by hashing ``(parent seed, name)`` so adding a new consumer never shifts the
draws seen by existing ones.
"""

from __future__ import annotations

import hashlib

import numpy as np

from ..errors import ContractError


def derive_seed(seed: int, *names) -> int:
    text = "/".join([str(int(seed))] + [str(n) for n in names])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")


class Rng:
    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.gen = np.random.Generator(np.random.Philox(key=self.seed))

    def spawn(self, *names) -> "Rng":
        return Rng(derive_seed(self.seed, *names))

    def uniform(self, lo: float, hi: float, size) -> np.ndarray:
        if not lo < hi:
            raise ContractError(f"uniform requires lo < hi, got [{lo}, {hi})")
        return self.gen.uniform(lo, hi, size)

    def normal(self, size) -> np.ndarray:
        return self.gen.standard_normal(size)

    def integers(self, lo: int, hi: int, size=None) -> np.ndarray:
        return self.gen.integers(lo, hi, size)

    def permutation(self, n: int) -> np.ndarray:
        return self.gen.permutation(n)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed})"


def rng_uniform(rng: Rng, lo: float, hi: float, n: int) -> np.ndarray:
    if n < 1:
        raise ContractError(f"n must be >= 1, got {n}")
    return rng.uniform(lo, hi, n)


def rng_normal(rng: Rng, n: int) -> np.ndarray:
    if n < 1:
        raise ContractError(f"n must be >= 1, got {n}")
    return rng.normal(n)
