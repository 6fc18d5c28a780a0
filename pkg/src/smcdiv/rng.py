"""Deterministic splittable random-number streams.

A stream is a value: a root seed plus a path of split indices.  Splitting
never touches a bit generator, so streams can be derived eagerly, passed
across threads, and materialized lazily.  Two streams with the same
(seed, path) always produce the same draws; streams with distinct paths
are independent for statistical purposes.  Engine results are therefore a
pure function of (config, root seed) regardless of evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MAX_INDEX = 2**32


@dataclass(frozen=True)
class RngStream:
    seed: int
    path: tuple[int, ...] = ()

    def split(self, *indices: int) -> "RngStream":
        """Derive the child stream reached by appending `indices` to the path."""
        for ix in indices:
            if not 0 <= ix < _MAX_INDEX:
                raise ValueError(f"split index out of range: {ix!r}")
        return RngStream(self.seed, self.path + indices)

    def generator(self) -> np.random.Generator:
        """Materialize a fresh generator positioned at the start of the stream."""
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
        return np.random.Generator(np.random.PCG64(ss))


def split(stream: RngStream, index: int) -> RngStream:
    """Functional form of :meth:`RngStream.split` for a single index."""
    return stream.split(index)
