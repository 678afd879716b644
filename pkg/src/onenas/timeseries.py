"""CSV ingestion and subsequence selection.

A stream is cut into fixed-length subsequences. Within a subsequence the input
columns at step ``i`` predict the output columns at step ``i + 1``.
"""

from __future__ import annotations

import csv
import json
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class DataError(ValueError):
    """Malformed or insufficient input data."""


class OrderingError(ValueError):
    """A subsequence was appended out of stream order."""


@dataclass(frozen=True)
class SeriesSchema:
    column_names: tuple[str, ...]
    input_columns: tuple[int, ...]
    output_columns: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "column_names", tuple(self.column_names))
        object.__setattr__(self, "input_columns", tuple(int(c) for c in self.input_columns))
        object.__setattr__(self, "output_columns", tuple(int(c) for c in self.output_columns))
        n = len(self.column_names)
        if not self.input_columns or not self.output_columns:
            raise ValueError("input and output column sets must be non-empty")
        for label, cols in (("input", self.input_columns), ("output", self.output_columns)):
            if len(set(cols)) != len(cols):
                raise ValueError(f"duplicate {label} column index")
            bad = [c for c in cols if not 0 <= c < n]
            if bad:
                raise ValueError(f"{label} column index out of range: {bad}")

    @classmethod
    def from_names(cls, column_names: Sequence[str], inputs: Sequence[str] | None,
                   outputs: Sequence[str]) -> "SeriesSchema":
        names = list(column_names)
        missing = [c for c in list(inputs or []) + list(outputs) if c not in names]
        if missing:
            raise ValueError(f"columns not in header: {missing}")
        ins = [names.index(c) for c in inputs] if inputs else list(range(len(names)))
        return cls(tuple(names), tuple(ins), tuple(names.index(c) for c in outputs))

    @classmethod
    def univariate(cls, name: str = "value") -> "SeriesSchema":
        return cls((name,), (0,), (0,))

    def to_dict(self) -> dict:
        return {"column_names": list(self.column_names),
                "input_columns": list(self.input_columns),
                "output_columns": list(self.output_columns)}


@dataclass(frozen=True)
class Subsequence:
    index: int
    values: np.ndarray  # [p, num_columns]

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass
class SubsequencePool:
    """Append-only store of equal-length subsequences."""

    p: int
    schema: SeriesSchema
    num_training_sets: int = 600
    num_validation_sets: int = 100
    subsequences: list[Subsequence] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self.subsequences)

    def __getitem__(self, i):
        return self.subsequences[i]

    def __iter__(self):
        return iter(list(self.subsequences))

    def empty_copy(self) -> "SubsequencePool":
        return SubsequencePool(self.p, self.schema, self.num_training_sets,
                               self.num_validation_sets, [], dict(self.metadata))

    def append_next(self, nxt: Subsequence) -> None:
        with self._lock:
            if nxt.index != len(self.subsequences):
                raise OrderingError(
                    f"expected subsequence {len(self.subsequences)}, got {nxt.index}")
            if nxt.values.shape[0] != self.p:
                raise DataError(f"subsequence has {nxt.values.shape[0]} rows, pool uses {self.p}")
            self.subsequences.append(nxt)

    def get_training_data(self, t: int, rng: np.random.Generator) -> list[Subsequence]:
        """Uniform sample without replacement from ``[0, t - num_validation_sets)``."""
        hi = min(t - self.num_validation_sets, len(self.subsequences))
        if hi <= 0:
            return []
        k = min(self.num_training_sets, hi)
        idx = rng.choice(hi, size=k, replace=False)
        return [self.subsequences[i] for i in idx]

    def get_validation_data(self, t: int) -> list[Subsequence]:
        """The most recent ``min(num_validation_sets, t)`` subsequences before ``t``."""
        if t <= 0:
            return []
        hi = min(t, len(self.subsequences))
        return self.subsequences[max(0, t - self.num_validation_sets):hi]

    def get_online_test_data(self, t: int) -> Subsequence:
        return self.subsequences[t]

    def to_metadata(self) -> dict:
        return {"p": self.p, "count": len(self), "num_training_sets": self.num_training_sets,
                "num_validation_sets": self.num_validation_sets, "schema": self.schema.to_dict(),
                **self.metadata}

    def write_sidecar(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_metadata(), indent=2))


def stack(subsequences: Sequence[Subsequence]) -> np.ndarray:
    """[n, p, num_columns] array view of a subsequence list."""
    if not subsequences:
        return np.zeros((0, 0, 0))
    return np.stack([s.values for s in subsequences])


def read_header(path: str | Path) -> list[str]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such data file: {path}")
    with path.open(newline="") as fh:
        try:
            return [h.strip() for h in next(csv.reader(fh))]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None


def read_csv(path: str | Path, columns: Sequence[str] | None = None
             ) -> tuple[list[str], np.ndarray]:
    """Parse a headed, comma-separated file of decimal floats.

    Returns the header and a [rows, columns] array. Only ``columns`` (default
    all) must parse; a bad value raises ``DataError`` naming the line.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such data file: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        wanted = list(columns) if columns is not None else header
        missing = [c for c in wanted if c not in header]
        if missing:
            raise DataError(f"{path}: columns not in header: {missing}")
        pos = [header.index(c) for c in wanted]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                vals = [float(row[i]) for i in pos]
            except (ValueError, IndexError):
                raise DataError(f"{path}: line {lineno}: cannot parse row {row!r}") from None
            if not all(math.isfinite(v) for v in vals):
                raise DataError(f"{path}: line {lineno}: non-finite value in {row!r}")
            rows.append(vals)
    data = np.array(rows, dtype=np.float64).reshape(len(rows), len(wanted))
    return wanted, data


def normalize(data: np.ndarray, mode: str = "minmax") -> tuple[np.ndarray, dict]:
    """Scale columns into [0, 1].

    ``minmax`` uses statistics of the whole array. ``running`` only uses rows
    seen so far, so it never looks ahead; early rows are coarse as a result.
    Constant columns map to 0.
    """
    if mode == "none":
        return data.copy(), {"normalization": "none"}
    if mode == "minmax":
        lo, hi = data.min(axis=0), data.max(axis=0)
        span = np.where(hi > lo, hi - lo, 1.0)
        return (data - lo) / span, {"normalization": "minmax", "min": lo.tolist(),
                                    "max": hi.tolist()}
    if mode == "running":
        lo = np.minimum.accumulate(data, axis=0)
        hi = np.maximum.accumulate(data, axis=0)
        span = np.where(hi > lo, hi - lo, 1.0)
        return (data - lo) / span, {"normalization": "running", "min": lo[-1].tolist(),
                                    "max": hi[-1].tolist()}
    raise ValueError(f"unknown normalization {mode!r}")


def slice_pool(data: np.ndarray, schema: SeriesSchema, p: int, num_training_sets: int = 600,
               num_validation_sets: int = 100, metadata: dict | None = None) -> SubsequencePool:
    if p < 2:
        raise ValueError("subsequence length must be at least 2")
    if data.shape[0] < p:
        raise DataError(f"only {data.shape[0]} rows, need at least p={p}")
    n = data.shape[0] // p
    pool = SubsequencePool(p, schema, num_training_sets, num_validation_sets,
                           metadata=dict(metadata or {}))
    for i in range(n):
        pool.append_next(Subsequence(i, np.ascontiguousarray(data[i * p:(i + 1) * p])))
    pool.metadata.update({"rows": int(data.shape[0]), "discarded_rows": int(data.shape[0] - n * p)})
    return pool


def ingest_csv(path: str | Path, schema: SeriesSchema, normalization: str = "minmax",
               p: int = 25, num_training_sets: int = 600,
               num_validation_sets: int = 100) -> SubsequencePool:
    """Read ``path`` into a pool of ``floor(rows / p)`` subsequences."""
    _, data = read_csv(path, schema.column_names)
    if data.shape[0] < p:
        raise DataError(f"{path}: only {data.shape[0]} rows, need at least p={p}")
    data, stats = normalize(data, normalization)
    return slice_pool(data, schema, p, num_training_sets, num_validation_sets,
                      {**stats, "source": str(path)})
