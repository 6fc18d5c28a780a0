"""Log-domain arithmetic helpers used by the sampler engine and estimators.

All probability arithmetic in the package happens on the log scale:
products of per-step weights over long runs underflow in linear space.
Entries of -inf (zero probability) are legal everywhere here; NaN is not
and is the caller's responsibility to reject.
"""

from __future__ import annotations

import math
from collections.abc import Sequence


def logsumexp(values: Sequence[float]) -> float:
    """Max-shifted log of the sum of exponentials.

    Returns -inf when every entry is -inf.
    """
    if len(values) == 0:
        raise ValueError("logsumexp of an empty collection")
    m = max(values)
    if m == -math.inf:
        return -math.inf
    return m + math.log(math.fsum(math.exp(v - m) for v in values))


def logmeanexp(values: Sequence[float]) -> float:
    """Log of the arithmetic mean of exponentials."""
    return logsumexp(values) - math.log(len(values))
