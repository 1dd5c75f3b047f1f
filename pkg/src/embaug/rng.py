"""Seeded random streams.

Every stream is a Philox-4x64 counter-based generator (Salmon et al. 2011,
10 rounds, multipliers 0xD2E7470EE14C6C93 / 0xCA5A826395121157, Weyl key
increments 0x9E3779B97F4A7C15 / 0xBB67AE8584CAA73B as shipped by numpy).  A
stream is named by a root seed plus a path of purpose labels; a child's key
depends only on that name, never on how much the parent has been consumed.
Gaussian draws use the Box-Muller transform on Philox uniforms.
"""

from __future__ import annotations

import zlib

import numpy as np


def _label_key(label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label)
    return zlib.crc32(str(label).encode("utf-8"))


class Stream:
    def __init__(self, seed: int, path: tuple = ()):
        self.seed = int(seed)
        self.path = tuple(path)
        ss = np.random.SeedSequence(self.seed, spawn_key=tuple(_label_key(p) for p in self.path))
        self._gen = np.random.Generator(np.random.Philox(ss))

    def child(self, *labels) -> "Stream":
        return Stream(self.seed, self.path + tuple(labels))

    def __repr__(self) -> str:
        return f"Stream(seed={self.seed}, path={self.path!r})"

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, size=None, loc: float = 0.0, scale: float = 1.0):
        """Standard normal draws via Box-Muller."""
        shape = () if size is None else (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(shape, dtype=np.int64))
        half = (n + 1) // 2
        u1 = 1.0 - self._gen.random(half)  # (0, 1], keeps log finite
        u2 = self._gen.random(half)
        r = np.sqrt(-2.0 * np.log(u1))
        t = 2.0 * np.pi * u2
        z = np.concatenate([r * np.cos(t), r * np.sin(t)])[:n]
        out = loc + scale * z.reshape(shape)
        return float(out) if size is None else out

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def choice(self, n: int, size=None, p=None):
        return self._gen.choice(n, size=size, p=p)

    def permutation(self, n):
        return self._gen.permutation(n)

    def poisson(self, lam, size=None):
        return self._gen.poisson(lam, size)


def as_stream(rng) -> Stream:
    if isinstance(rng, Stream):
        return rng
    return Stream(int(rng))
