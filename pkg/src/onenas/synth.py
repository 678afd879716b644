"""Synthetic streams for experiments without external data."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import numpy as np


def ar_series(coefficients: Sequence[float], n: int, noise_std: float = 1.0, seed: int = 0,
              burn_in: int = 200, intercept: float = 0.0) -> np.ndarray:
    """``x_t = intercept + sum_i a_i x_{t-i} + e_t`` with Gaussian ``e_t``."""
    return drifting_ar_series([coefficients], n, noise_std, seed, burn_in, intercept)


def drifting_ar_series(segments: Sequence[Sequence[float]], n: int, noise_std: float = 1.0,
                       seed: int = 0, burn_in: int = 200, intercept: float = 0.0,
                       switch_points: Sequence[int] | None = None) -> np.ndarray:
    """Piecewise AR process whose coefficients switch between segments.

    Segments have equal length unless ``switch_points`` (indices into the
    returned series) are given. The state carries across switches.
    """
    if not segments:
        raise ValueError("need at least one coefficient segment")
    k = max(len(c) for c in segments)
    coefs = np.zeros((len(segments), k))
    for i, c in enumerate(segments):
        coefs[i, :len(c)] = c
    if switch_points is None:
        switch_points = [round(n * i / len(segments)) for i in range(1, len(segments))]
    if len(switch_points) != len(segments) - 1:
        raise ValueError("need one switch point between consecutive segments")
    rng = np.random.default_rng(seed)
    total = n + burn_in
    x = np.zeros(total + k)
    eps = rng.normal(0.0, noise_std, total)
    bounds = np.searchsorted(np.asarray(switch_points) + burn_in, np.arange(total), side="right")
    for t in range(total):
        lags = x[t:t + k][::-1]
        x[t + k] = intercept + coefs[bounds[t]] @ lags + eps[t]
    return x[k + burn_in:]


def write_csv(path: str | Path, columns: dict[str, np.ndarray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(columns)
    rows = np.column_stack([np.asarray(columns[c], dtype=float) for c in names])
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for r in rows:
            w.writerow([repr(float(v)) for v in r])
    return path


def generate(config: dict) -> dict[str, np.ndarray]:
    """Build columns from a generator config.

    ``{"kind": "ar" | "drifting_ar", "coefficients": [...] or "segments": [[...], ...],
    "length": n, "noise_std": s, "seed": k, "column": "value"}``
    """
    kind = config.get("kind", "drifting_ar")
    n = int(config["length"])
    kw = dict(noise_std=float(config.get("noise_std", 1.0)), seed=int(config.get("seed", 0)),
              burn_in=int(config.get("burn_in", 200)),
              intercept=float(config.get("intercept", 0.0)))
    if kind == "ar":
        x = ar_series(config["coefficients"], n, **kw)
    elif kind == "drifting_ar":
        x = drifting_ar_series(config["segments"], n, switch_points=config.get("switch_points"),
                               **kw)
    else:
        raise ValueError(f"unknown generator kind {kind!r}")
    return {config.get("column", "value"): x}
