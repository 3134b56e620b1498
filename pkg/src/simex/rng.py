"""Seeded random streams.

Everything random in the package (weight init, shuffling, synthetic data,
pair subsampling) draws from numpy's PCG64 bit generator. PCG64 is
platform-independent: the same seed yields the same stream everywhere.
Sub-streams for named jobs are derived with :class:`numpy.random.SeedSequence`
so that, for example, a fleet member's stream depends only on the run seed and
the member's reference id.
"""
from __future__ import annotations

import zlib

import numpy as np

ALGORITHM = "PCG64"


class RngStream(np.random.Generator):
    """A ``numpy.random.Generator`` over PCG64 that remembers its seed."""

    def __init__(self, seed: int, *spawn_key: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.spawn_key = tuple(int(k) for k in spawn_key)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.spawn_key)
        super().__init__(np.random.PCG64(ss))

    def child(self, name: str | int) -> "RngStream":
        """Independent stream keyed by ``name``; does not advance this stream."""
        return RngStream(self.seed, *self.spawn_key, _key(name))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, spawn_key={self.spawn_key})"


def _key(name: str | int) -> int:
    if isinstance(name, int):
        return name
    return zlib.crc32(name.encode("utf-8"))


def stream(seed: int, *names: str | int) -> RngStream:
    return RngStream(seed, *(_key(n) for n in names))
