"""Seeded, splittable random state.

Every source of randomness in the package flows through :class:`RngState`.
A state is an immutable (seed, path) pair; ``substream`` extends the path,
and ``generator`` materializes a numpy PCG64 generator from it.  Because
PCG64 and SeedSequence are platform-stable, identical (seed, path) pairs
yield bit-identical draw sequences everywhere.

Convention: a leaf substream is consumed by exactly one logical unit of
work (one parameter init, one augmentation, one epoch shuffle), so results
never depend on the order in which unrelated units run.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

_U64 = (1 << 64) - 1


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & _U64
    if isinstance(key, str):
        digest = hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little")
    raise TypeError(f"substream keys must be str or int, got {type(key).__name__}")


@dataclass(frozen=True)
class RngState:
    """Immutable handle on a deterministic random stream."""

    seed: int
    path: tuple = ()

    def substream(self, *keys) -> "RngState":
        """Derive a child state; distinct key paths give independent streams."""
        return RngState(self.seed, self.path + tuple(_key_to_int(k) for k in keys))

    def generator(self) -> np.random.Generator:
        """Fresh generator for this (seed, path). Same state => same draws."""
        entropy = [self.seed & _U64] + list(self.path)
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
