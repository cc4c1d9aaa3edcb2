"""Deterministic, splittable random streams.

Philox is counter-based, so the stream for a given key is identical on every
platform and numpy build. `split` derives an independent child key by hashing
the parent seed with a label; parameter initialization uses one child per
parameter name, which makes init order-independent.
"""

from __future__ import annotations

import hashlib

import numpy as np
from scipy.special import ndtri


class Rng:
    """Counter-based RNG keyed by a 64-bit seed."""

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.Philox(key=self.seed))

    def split(self, label: str) -> "Rng":
        """Independent child stream; same (seed, label) always yields the same child."""
        digest = hashlib.sha256(f"{self.seed}\x1f{label}".encode()).digest()
        return Rng(int.from_bytes(digest[:8], "little"))

    def uniform(self, shape: tuple[int, ...] = (), lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        return self._gen.random(shape, dtype=np.float64) * (hi - lo) + lo

    def normal(self, shape: tuple[int, ...] = ()) -> np.ndarray:
        return self._gen.standard_normal(shape, dtype=np.float64)

    def integers(self, n: int, shape: tuple[int, ...] = ()) -> np.ndarray:
        """Uniform integers in [0, n)."""
        return self._gen.integers(0, n, size=shape)

    def truncated_normal(self, shape: tuple[int, ...], std: float, clip_sigmas: float = 2.0) -> np.ndarray:
        """Normal(0, std) conditioned on |x| <= clip_sigmas*std, via inverse CDF.

        Sampling through the CDF (rather than rejection) keeps the draw count
        fixed, so streams stay aligned across shapes.
        """
        from scipy.special import ndtr

        lo = ndtr(-clip_sigmas)
        hi = ndtr(clip_sigmas)
        u = self._gen.random(shape, dtype=np.float64) * (hi - lo) + lo
        return ndtri(u) * std
