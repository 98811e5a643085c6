"""Counter-based random substreams.

Every path owns a generator derived from ``(seed, stream key, path index)``
so ensembles are identical however they are chunked or parallelised.
"""
import zlib

import numpy as np


def _key(name):
    if isinstance(name, (int, np.integer)):
        return int(name)
    return zlib.crc32(str(name).encode())


class RandomStreams:
    """A named node in a tree of independent random streams."""

    def __init__(self, seed, key=()):
        self.seed = int(seed)
        self.key = tuple(key)

    def child(self, name):
        return RandomStreams(self.seed, self.key + (_key(name),))

    def generator(self):
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=self.key))

    def path_generator(self, index):
        ss = np.random.SeedSequence(self.seed, spawn_key=self.key + (0x9A7E, int(index)))
        return np.random.default_rng(ss)

    def __repr__(self):
        return f"RandomStreams(seed={self.seed}, key={self.key})"


def as_streams(rng):
    if isinstance(rng, RandomStreams):
        return rng
    if rng is None:
        return RandomStreams(0)
    if isinstance(rng, (int, np.integer)):
        return RandomStreams(int(rng))
    raise TypeError(f"expected RandomStreams or int seed, got {type(rng).__name__}")


def as_generator(rng):
    """Accept a Generator, RandomStreams or int seed and return a Generator."""
    if isinstance(rng, np.random.Generator):
        return rng
    return as_streams(rng).generator()
