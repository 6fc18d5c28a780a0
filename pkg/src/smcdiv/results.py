"""Result rows and their delimited serializations.

The CSV column order is exactly the field order of :class:`ResultRow`,
with a versioned schema comment as the first line.  JSON-lines output
carries the schema version in each record and can optionally include the
per-sample log-ratios behind each row.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable

SCHEMA_VERSION = "smcdiv.results.v1"


@dataclass(frozen=True)
class ResultRow:
    model: str
    n_particles: int
    rejuvenation: int
    elbo: float
    elbo_stderr: float
    eubo: float
    eubo_stderr: float
    kl_bound: float
    wall_time_s: float
    seed: int
    reference_mode: str

    def __post_init__(self):
        if self.kl_bound != self.eubo - self.elbo:
            raise ValueError("kl_bound must equal eubo - elbo exactly")

    @property
    def kl_stderr(self) -> float:
        """Pooled standard error of the bound (independent halves)."""
        return math.hypot(self.eubo_stderr, self.elbo_stderr)


_FIELDS = [f.name for f in fields(ResultRow)]


def write_csv(rows: Iterable[ResultRow], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema={SCHEMA_VERSION}\n")
        writer = csv.writer(fh)
        writer.writerow(_FIELDS)
        for row in rows:
            writer.writerow([getattr(row, name) for name in _FIELDS])
    return path


def write_jsonl(
    rows: Iterable[ResultRow],
    path: str | Path,
    per_sample: dict[int, dict[str, list[float]]] | None = None,
) -> Path:
    """Write one JSON object per row; ``per_sample`` is keyed by row index."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for index, row in enumerate(rows):
            record = {"schema_version": SCHEMA_VERSION}
            record.update({name: getattr(row, name) for name in _FIELDS})
            if per_sample and index in per_sample:
                record.update(per_sample[index])
            fh.write(json.dumps(record) + "\n")
    return path


def read_csv(path: str | Path) -> list[dict]:
    """Read rows back (values as strings); skips the schema comment."""
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith("# schema="):
            raise ValueError(f"{path}: missing schema header")
        return list(csv.DictReader(fh))
