"""Exact finite distributions used by models and enumeration oracles."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Any, Callable

from .rng import RngStream

_NORM_TOL = 1e-12


@dataclass(frozen=True)
class DistTable:
    """A finite distribution as an explicit point -> probability map."""

    probs: dict[Any, float]

    def __post_init__(self):
        if any(p < 0.0 for p in self.probs.values()):
            raise ValueError("probabilities must be non-negative")
        total = math.fsum(self.probs.values())
        if abs(total - 1.0) > _NORM_TOL:
            raise ValueError(f"probabilities sum to {total!r}, not 1")

    @classmethod
    def from_weights(cls, weights: dict[Any, float]) -> "DistTable":
        total = math.fsum(weights.values())
        if total <= 0.0:
            raise ValueError("weights must have a positive sum")
        return cls({z: w / total for z, w in weights.items()})

    def prob(self, z: Any) -> float:
        return self.probs.get(z, 0.0)

    def support(self) -> set[Any]:
        return {z for z, p in self.probs.items() if p > 0.0}

    def sampler(self) -> Callable[[RngStream], Any]:
        points = list(self.probs)
        cumulative = list(itertools.accumulate(self.probs[z] for z in points))

        def sample(rng: RngStream) -> Any:
            u = rng.generator().random() * cumulative[-1]
            for z, acc in zip(points, cumulative):
                if u < acc:
                    return z
            return points[-1]

        return sample
