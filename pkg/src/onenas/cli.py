"""Command-line entry points.

    onenas run <config.json>
    onenas synth <generator-config.json>
    onenas report <run-dir>

Relative output locations resolve against ``$ONENAS_OUTPUT_ROOT`` (default:
the working directory).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import synth
from .baselines import FixedRNN, make_predictor, run_prequential
from .config import ConfigError, RunConfig, load_config, output_root
from .genome import export_dot
from .metrics import ComparisonReport, percent_better_than_naive, timing_stats
from .online import GenerationReport, OnlineEvolution
from .timeseries import DataError, SeriesSchema, ingest_csv, read_header

log = logging.getLogger("onenas")

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2


def _fmt(v: float) -> str:
    return repr(float(v))


class RunWriter:
    """Writes per-generation records in the order the coordinator produces them."""

    def __init__(self, out: Path, cfg: RunConfig, output_names: list[str]):
        self.out = out
        self.cfg = cfg
        self.output_names = output_names
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
        self._pred = (out / "predictions.csv").open("w", newline="")
        self._pred_csv = csv.writer(self._pred)
        self._pred_csv.writerow(["step", "generation", "column", "prediction", "naive",
                                 "realized"])
        self._gen = (out / "generations.csv").open("w", newline="")
        self._gen_csv = None

    def __call__(self, engine: OnlineEvolution, r: GenerationReport) -> None:
        p = len(r.realized)
        for i in range(p):
            for j, name in enumerate(self.output_names):
                self._pred_csv.writerow([r.t * p + i, r.t, name, _fmt(r.online_predictions[i, j]),
                                         _fmt(r.naive_predictions[i, j]), _fmt(r.realized[i, j])])
        row = r.to_row()
        row["percent_better"] = float(percent_better_than_naive(
            r.online_predictions, r.naive_predictions, r.realized, p)[0])
        if self._gen_csv is None:
            self._gen_csv = csv.DictWriter(self._gen, fieldnames=list(row))
            self._gen_csv.writeheader()
        self._gen_csv.writerow(row)
        if (r.t + 1) % self.cfg.checkpoint_every == 0:
            self.checkpoint(engine, f"genome_{r.t:06d}.json")

    def checkpoint(self, engine: OnlineEvolution, name: str) -> None:
        (self.out / "checkpoints" / name).write_text(engine.global_best.to_json())

    def close(self) -> None:
        self._pred.close()
        self._gen.close()


def _predictor_csv(path: Path, steps, preds, realized, names: list[str]) -> None:
    """step, prediction(s), realized value(s), squared error, cumulative RMSE."""
    err = (preds - realized) ** 2
    sq = err.mean(axis=1)
    crmse = np.sqrt(np.cumsum(sq) / np.arange(1, len(sq) + 1))
    single = len(names) == 1
    head = ["step"] + (["prediction", "realized"] if single else
                       [f"prediction:{n}" for n in names] + [f"realized:{n}" for n in names])
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(head + ["sq_error", "cumulative_rmse"])
        for k, s in enumerate(steps):
            w.writerow([int(s)] + [_fmt(v) for v in preds[k]] + [_fmt(v) for v in realized[k]]
                       + [_fmt(sq[k]), _fmt(crmse[k])])


def _baseline_forecasts(name: str, data: np.ndarray, schema: SeriesSchema, col: int,
                        seed: int) -> np.ndarray:
    model = make_predictor(name)
    if isinstance(model, FixedRNN):
        model = make_predictor(name, input_columns=list(schema.input_columns),
                               output_column=col, seed=seed)
        return run_prequential(model, data)
    return run_prequential(model, data[:, col])


def _run_onenas(cfg: RunConfig, pool, out: Path, names: list[str]) -> dict:
    gen = cfg.generation
    engine = OnlineEvolution(pool.schema, gen, cfg.evolution, cfg.training, seed=cfg.seed)
    writer = RunWriter(out, cfg, names)
    try:
        reports = engine.run(iter(pool), writer)
    finally:
        writer.close()
    writer.checkpoint(engine, "final.json")
    (out / "best.dot").write_text(export_dot(engine.global_best, "global_best"))
    avg, longest = timing_stats(reports) if reports else (float("nan"),) * 2
    violations = engine.prequential_violations()
    summary = engine.summary()
    summary.update({"average_generation_seconds": avg, "longest_generation_seconds": longest,
                    "prequential_violations": len(violations),
                    "repopulation": engine.events})
    steps = len(reports) * pool.p
    if reports:
        preds = np.concatenate([r.online_predictions for r in reports])
        naive = np.concatenate([r.naive_predictions for r in reports])
        real = np.concatenate([r.realized for r in reports])
        idx = np.arange(steps)
        _predictor_csv(out / "predictors" / "onenas.csv", idx[1:], preds[1:], real[1:], names)
        summary["online_mse"] = float(np.mean((preds[1:] - real[1:]) ** 2))
        summary["naive_mse"] = float(np.mean((naive[1:] - real[1:]) ** 2))
    summary["steps"] = steps
    return summary


def _run_baselines(cfg: RunConfig, pool, out: Path, names: list[str], steps: int) -> dict:
    data = np.concatenate([s.values for s in pool])[:steps]
    cols = list(pool.schema.output_columns)
    result = {}
    for name in cfg.baselines:
        start = time.perf_counter()
        preds = np.column_stack([_baseline_forecasts(name, data, pool.schema, c, cfg.seed)
                                 for c in cols])
        real = data[:, cols]
        _predictor_csv(out / "predictors" / f"{name.replace('.', '_')}.csv",
                       np.arange(1, steps), preds[1:], real[1:], names)
        result[name] = {"mse": float(np.mean((preds[1:] - real[1:]) ** 2)),
                        "seconds": time.perf_counter() - start}
    return result


def cmd_run(config_path: str) -> int:
    try:
        cfg = load_config(config_path)
        path = cfg.dataset_path
        if not path.is_file():
            raise ConfigError([f"dataset.path: no such file {path}"])
        columns = cfg.dataset.columns(read_header(path))
        schema = SeriesSchema.from_names(columns, cfg.dataset.input_columns,
                                         cfg.dataset.output_columns)
        gen = cfg.generation
        pool = ingest_csv(path, schema, cfg.dataset.normalization, gen.p, gen.num_training_sets,
                          gen.num_validation_sets)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    out = cfg.output_path
    (out / "predictors").mkdir(parents=True, exist_ok=True)
    (out / "config.input.json").write_bytes(Path(config_path).read_bytes())
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2))
    pool.write_sidecar(out / "pool.json")
    names = [schema.column_names[c] for c in schema.output_columns]
    summary: dict = {"mode": cfg.mode, "seed": cfg.seed, "status": "running"}
    code = EXIT_OK
    start = time.perf_counter()
    try:
        steps = min(len(pool), gen.generations) * pool.p
        if cfg.mode in ("onenas", "onenas_single_population", "compare"):
            summary["onenas"] = _run_onenas(cfg, pool, out, names)
            steps = summary["onenas"]["steps"]
        if cfg.mode in ("baseline", "compare"):
            summary["baselines"] = _run_baselines(cfg, pool, out, names, steps)
        summary["status"] = "ok"
    except Exception as exc:  # leave partial artifacts behind and report
        log.exception("run failed")
        summary.update(status="failed", error=repr(exc))
        code = EXIT_FAILED
    summary["wall_seconds"] = time.perf_counter() - start
    (out / "summary.json").write_text(json.dumps(summary, indent=2, default=_json_default))
    if code == EXIT_OK and cfg.mode == "compare":
        write_report(out)
    print(out)
    return code


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def cmd_synth(config_path: str) -> int:
    try:
        conf = json.loads(Path(config_path).read_text())
        columns = synth.generate(conf)
    except (OSError, json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
        print(f"generator config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    dest = Path(conf.get("output", "synthetic.csv"))
    if not dest.is_absolute():
        dest = output_root() / dest
    print(synth.write_csv(dest, columns))
    return EXIT_OK


# ---------------------------------------------------------------------------
# reports from raw logs


def _read_predictor(path: Path) -> tuple[np.ndarray, np.ndarray]:
    """(steps, squared errors) from a per-predictor log."""
    with path.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    return (np.array([int(r["step"]) for r in rows]),
            np.array([float(r["sq_error"]) for r in rows]))


def build_report(run_dir: str | Path) -> ComparisonReport:
    run_dir = Path(run_dir)
    logs = sorted((run_dir / "predictors").glob("*.csv"))
    if not logs:
        raise FileNotFoundError(f"{run_dir}: no predictor logs")
    series, steps = {}, None
    for path in logs:
        s, sq = _read_predictor(path)
        if steps is None:
            steps = s
        elif not np.array_equal(s, steps):
            raise ValueError(f"{path.name}: step axis differs from the other predictors")
        series[path.stem] = np.sqrt(np.cumsum(sq) / np.arange(1, len(sq) + 1))
    pb = timing = None
    pred_log = run_dir / "predictions.csv"
    if pred_log.is_file():
        with pred_log.open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        gens = np.array([int(r["generation"]) for r in rows])
        per = int(np.sum(gens == gens[0])) if len(gens) else 1
        cols = len({r["column"] for r in rows}) or 1
        shape = (-1, cols)
        a = np.array([float(r["prediction"]) for r in rows]).reshape(shape)
        b = np.array([float(r["naive"]) for r in rows]).reshape(shape)
        y = np.array([float(r["realized"]) for r in rows]).reshape(shape)
        pb = percent_better_than_naive(a, b, y, per // cols)
    gen_log = run_dir / "generations.csv"
    if gen_log.is_file():
        with gen_log.open(newline="") as fh:
            times = [float(r["wall_time_seconds"]) for r in csv.DictReader(fh)]
        if times:
            timing = timing_stats(times)
    return ComparisonReport(steps, series, pb, timing)


def write_report(run_dir: str | Path) -> ComparisonReport:
    run_dir = Path(run_dir)
    rep = build_report(run_dir)
    (run_dir / "report.json").write_text(json.dumps(rep.to_dict(), indent=2))
    names = list(rep.cumulative_rmse)
    with (run_dir / "cumulative_rmse.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step"] + names)
        for k, s in enumerate(rep.steps):
            w.writerow([int(s)] + [_fmt(rep.cumulative_rmse[n][k]) for n in names])
    if rep.percent_better is not None:
        with (run_dir / "percent_better.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["generation", "percent_better"])
            for g, v in enumerate(rep.percent_better):
                w.writerow([g, _fmt(v)])
    return rep


def cmd_report(run_dir: str) -> int:
    try:
        rep = write_report(run_dir)
    except (OSError, ValueError, KeyError) as exc:
        print(f"report error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    for name, value in sorted(rep.final().items(), key=lambda kv: kv[1]):
        print(f"{name:>12}  {value:.6g}")
    if rep.percent_better is not None and len(rep.percent_better):
        print(f"{'better%':>12}  {np.mean(rep.percent_better):.1f}")
    if rep.timing is not None:
        print(f"{'avg/max s':>12}  {rep.timing[0]:.3f} / {rep.timing[1]:.3f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="onenas", description="Online neuroevolution forecasting")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run a configured experiment")
    p.add_argument("config")
    p = sub.add_parser("synth", help="write a synthetic stream CSV")
    p.add_argument("config")
    p = sub.add_parser("report", help="recompute metrics from a run directory's logs")
    p.add_argument("run_dir")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    if args.command == "run":
        return cmd_run(args.config)
    if args.command == "synth":
        return cmd_synth(args.config)
    return cmd_report(args.run_dir)


if __name__ == "__main__":
    sys.exit(main())
