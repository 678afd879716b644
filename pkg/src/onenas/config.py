"""Run configuration: a JSON document describing the dataset, the mode and
every module's settings.

Relative paths in a config resolve against the config file's directory
(dataset) or the output root (output directory). The output root defaults to
the working directory and can be moved with ``ONENAS_OUTPUT_ROOT``.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from .baselines import make_predictor
from .evolution import EvolutionRates
from .network import TrainingPlan
from .online import GenerationConfig

MODES = ("onenas", "onenas_single_population", "baseline", "compare")
OUTPUT_ROOT_ENV = "ONENAS_OUTPUT_ROOT"
DEFAULT_BASELINES = ("naive", "ma3", "exp0.2", "arima_ogd", "arima_ons")


class ConfigError(ValueError):
    """Invalid run configuration; ``problems`` lists one message per field."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV) or ".")


@dataclass
class DatasetConfig:
    path: str
    output_columns: list[str]
    input_columns: list[str] | None = None  # default: every column in the file
    normalization: str = "minmax"

    def columns(self, header: list[str]) -> list[str]:
        """Columns to read, in file order; raises ConfigError for unknown names."""
        wanted = list(self.output_columns) + list(self.input_columns or header)
        missing = [c for c in dict.fromkeys(wanted) if c not in header]
        if missing:
            raise ConfigError([f"dataset: columns not in {self.path}: {missing}"])
        return [c for c in header if c in wanted]


@dataclass
class RunConfig:
    mode: str
    dataset: DatasetConfig
    output_dir: str
    seed: int = 0
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    training: TrainingPlan = field(default_factory=TrainingPlan)
    evolution: EvolutionRates = field(default_factory=EvolutionRates)
    baselines: list[str] = field(default_factory=lambda: list(DEFAULT_BASELINES))
    checkpoint_every: int = 50
    base_dir: str = field(default=".", repr=False)

    @property
    def dataset_path(self) -> Path:
        p = Path(self.dataset.path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    @property
    def output_path(self) -> Path:
        p = Path(self.output_dir)
        return p if p.is_absolute() else output_root() / p

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d


_SECTIONS = {"generation": GenerationConfig, "training": TrainingPlan,
             "evolution": EvolutionRates}


def _build(cls, raw: Any, where: str, problems: list[str]):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        problems.append(f"{where}: expected an object")
        return None
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        problems.append(f"{where}: unknown fields {unknown}")
        return None
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        problems.append(f"{where}: {exc}")
        return None


def parse_config(raw: dict, base_dir: str | Path = ".") -> RunConfig:
    """Validate a decoded config document; raises ``ConfigError``."""
    problems: list[str] = []
    if not isinstance(raw, dict):
        raise ConfigError(["config: expected a JSON object"])
    allowed = {f.name for f in fields(RunConfig)} - {"base_dir"}
    unknown = sorted(set(raw) - allowed)
    if unknown:
        problems.append(f"config: unknown fields {unknown}")
    mode = raw.get("mode")
    if mode not in MODES:
        problems.append(f"mode: must be one of {list(MODES)}, got {mode!r}")
    if not raw.get("output_dir"):
        problems.append("output_dir: required")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        problems.append("seed: must be a non-negative integer")
    every = raw.get("checkpoint_every", 50)
    if not isinstance(every, int) or every < 1:
        problems.append("checkpoint_every: must be a positive integer")

    ds = raw.get("dataset")
    dataset = None
    if not isinstance(ds, dict):
        problems.append("dataset: required object with path and output_columns")
    else:
        dataset = _build(DatasetConfig, ds, "dataset", problems) if "path" in ds and \
            "output_columns" in ds else None
        if dataset is None and not any(p.startswith("dataset") for p in problems):
            problems.append("dataset: needs path and output_columns")
        if dataset is not None:
            if not dataset.output_columns:
                problems.append("dataset.output_columns: must be non-empty")
            if dataset.normalization not in ("minmax", "none", "running"):
                problems.append("dataset.normalization: must be minmax, none or running")

    sections = {k: _build(cls, raw.get(k), k, problems) for k, cls in _SECTIONS.items()}
    if mode == "onenas_single_population" and sections["generation"] is not None:
        # one island of 50 elites and 100 offspring unless overridden
        try:
            sections["generation"] = GenerationConfig.single_population(
                **(raw.get("generation") or {}))
        except (TypeError, ValueError) as exc:
            problems.append(f"generation: {exc}")

    names = raw.get("baselines", list(DEFAULT_BASELINES))
    if not isinstance(names, list):
        problems.append("baselines: expected a list of predictor names")
        names = []
    for name in names:
        try:
            make_predictor(name)
        except (ValueError, KeyError):
            problems.append(f"baselines: unknown predictor {name!r}")
    if mode == "baseline" and not names:
        problems.append("baselines: baseline mode needs at least one predictor")

    if problems:
        raise ConfigError(problems)
    return RunConfig(mode=mode, dataset=dataset, output_dir=raw["output_dir"], seed=seed,
                     baselines=list(names), checkpoint_every=every, base_dir=str(base_dir),
                     **sections)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError([f"config: no such file {path}"]) from None
    except json.JSONDecodeError as exc:
        raise ConfigError([f"config: invalid JSON ({exc})"]) from None
    return parse_config(raw, path.parent)
