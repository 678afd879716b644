"""Online error metrics computed from raw prediction logs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


class AlignmentError(ValueError):
    pass


def _squared_step_errors(pred, realized) -> np.ndarray:
    d = np.asarray(pred, dtype=float) - np.asarray(realized, dtype=float)
    return d * d if d.ndim == 1 else (d * d).sum(axis=tuple(range(1, d.ndim)))


def percent_better_than_naive(onenas_preds, naive_preds, realized, per: int) -> np.ndarray:
    """Per block of ``per`` steps, the share of steps where the evolved
    forecast's error is strictly smaller than the naive one. Ties go to naive."""
    a, b, r = (np.asarray(v, dtype=float) for v in (onenas_preds, naive_preds, realized))
    if not (a.shape == b.shape == r.shape):
        raise AlignmentError(f"series shapes differ: {a.shape}, {b.shape}, {r.shape}")
    if per < 1 or len(a) % per:
        raise AlignmentError(f"{len(a)} steps do not split into blocks of {per}")
    wins = _squared_step_errors(a, r) < _squared_step_errors(b, r)
    return 100.0 * wins.reshape(-1, per).mean(axis=1)


def cumulative_rmse(errors) -> np.ndarray:
    """Element ``t`` is the RMSE of errors ``0..t``."""
    e = np.asarray(errors, dtype=float)
    if e.size == 0:
        raise ValueError("need at least one error")
    return np.sqrt(np.cumsum(e * e) / np.arange(1, len(e) + 1))


def cumulative_mse(errors) -> np.ndarray:
    e = np.asarray(errors, dtype=float)
    return np.cumsum(e * e) / np.arange(1, len(e) + 1)


def timing_stats(reports) -> tuple[float, float]:
    """(average, longest) wall time per generation."""
    times = [r.wall_time_seconds if hasattr(r, "wall_time_seconds") else float(r)
             for r in reports]
    if not times:
        raise ValueError("need at least one report")
    return float(np.mean(times)), float(np.max(times))


def moving_average(series, window: int) -> np.ndarray:
    """Trailing mean; the first ``window - 1`` entries average what is available."""
    s = np.asarray(series, dtype=float)
    c = np.cumsum(np.insert(s, 0, 0.0))
    idx = np.arange(1, len(s) + 1)
    lo = np.maximum(0, idx - window)
    return (c[idx] - c[lo]) / (idx - lo)


def stays_above(series, level: float, start: int) -> bool:
    s = np.asarray(series, dtype=float)[start:]
    return bool(len(s)) and bool(np.all(s > level))


def halves_rmse(errors: Sequence[float]) -> tuple[float, float]:
    e = np.asarray(errors, dtype=float)
    h = len(e) // 2
    return float(np.sqrt(np.mean(e[:h] ** 2))), float(np.sqrt(np.mean(e[h:] ** 2)))


@dataclass
class ComparisonReport:
    """Aggregates over one shared step axis, recomputable from raw logs."""

    steps: np.ndarray
    cumulative_rmse: dict[str, np.ndarray]
    percent_better: np.ndarray | None = None  # per generation, evolved vs naive
    timing: tuple[float, float] | None = None  # (average, longest) seconds per generation

    def __post_init__(self):
        for name, series in self.cumulative_rmse.items():
            if len(series) != len(self.steps):
                raise AlignmentError(f"{name}: {len(series)} values for {len(self.steps)} steps")
        if self.percent_better is not None and len(self.percent_better):
            pb = np.asarray(self.percent_better)
            if pb.min() < 0 or pb.max() > 100:
                raise ValueError("percentages must lie in [0, 100]")

    def final(self) -> dict[str, float]:
        return {k: float(v[-1]) for k, v in self.cumulative_rmse.items() if len(v)}

    def to_dict(self) -> dict:
        out = {"steps": int(len(self.steps)), "final_cumulative_rmse": self.final()}
        if self.percent_better is not None:
            out["percent_better_mean"] = float(np.mean(self.percent_better)) \
                if len(self.percent_better) else None
        if self.timing is not None:
            out["average_generation_seconds"], out["longest_generation_seconds"] = self.timing
        return out
