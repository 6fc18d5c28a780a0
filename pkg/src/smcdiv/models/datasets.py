"""Plain-text dataset files: one real-valued observation per line."""

from __future__ import annotations

import math
from pathlib import Path


def load_observations(path: str | Path) -> tuple[float, ...]:
    """Read observations, one per line; blank lines are skipped."""
    values = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        text = line.strip()
        if not text:
            continue
        try:
            v = float(text)
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: not a number: {text!r}") from exc
        if not math.isfinite(v):
            raise ValueError(f"{path}:{lineno}: observation must be finite, got {v}")
        values.append(v)
    return tuple(values)
