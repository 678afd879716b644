import csv
import json

import numpy as np
import pytest

from onenas.cli import build_report, main
from onenas.config import ConfigError, load_config, parse_config
from onenas.synth import ar_series, write_csv

SMALL = {"p": 10, "generations": 12, "num_training_sets": 4, "num_validation_sets": 3,
         "islands": 2, "elite_capacity": 2, "generated_per_island": 2,
         "extinction_frequency": 5}


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.setenv("ONENAS_OUTPUT_ROOT", str(tmp_path / "out"))
    x = ar_series([0.5, -0.3], 150, seed=0)
    write_csv(tmp_path / "data.csv", {"value": x, "other": np.roll(x, 1)})
    return tmp_path


def _write_config(path, **over):
    raw = {"mode": "compare", "output_dir": "run", "seed": 1,
           "dataset": {"path": "data.csv", "output_columns": ["value"]},
           "generation": dict(SMALL), "training": {"epochs": 2, "clean_epochs": 1},
           "baselines": ["naive", "ma3", "arima_ons", "lstm1"], "checkpoint_every": 5}
    raw.update(over)
    path.write_text(json.dumps(raw))
    return path


def test_parse_config_collects_field_diagnostics(tmp_path):
    with pytest.raises(ConfigError) as err:
        parse_config({"mode": "fast", "seed": -1, "generation": {"islands": 0, "colour": 1},
                      "baselines": ["prophet"]}, tmp_path)
    text = " | ".join(err.value.problems)
    for needle in ("mode:", "seed:", "output_dir:", "dataset:", "generation:", "prophet"):
        assert needle in text


def test_single_population_defaults(tmp_path):
    cfg = parse_config({"mode": "onenas_single_population", "output_dir": "x",
                        "dataset": {"path": "d.csv", "output_columns": ["v"]}}, tmp_path)
    assert cfg.generation.islands == 1 and cfg.generation.elite_capacity == 50
    assert cfg.generation.generated_per_island == 100


def test_relative_paths(workdir):
    cfg = load_config(_write_config(workdir / "c.json"))
    assert cfg.dataset_path == workdir / "data.csv"
    assert cfg.output_path == workdir / "out" / "run"


def test_missing_dataset_exits_nonzero_without_artifacts(workdir, capsys):
    cfg = _write_config(workdir / "c.json", dataset={"path": "nope.csv",
                                                     "output_columns": ["value"]})
    assert main(["run", str(cfg)]) == 2
    assert "nope.csv" in capsys.readouterr().err
    assert not (workdir / "out").exists()


def test_invalid_config_exits_nonzero(workdir, capsys):
    cfg = _write_config(workdir / "c.json", mode="turbo")
    assert main(["run", str(cfg)]) == 2
    assert "mode:" in capsys.readouterr().err
    assert not (workdir / "out").exists()


def test_unknown_column_exits_nonzero(workdir):
    cfg = _write_config(workdir / "c.json", dataset={"path": "data.csv",
                                                     "output_columns": ["speed"]})
    assert main(["run", str(cfg)]) == 2
    assert not (workdir / "out").exists()


@pytest.fixture
def compare_run(workdir):
    cfg = _write_config(workdir / "c.json")
    assert main(["run", str(cfg)]) == 0
    return workdir / "out" / "run"


def test_compare_run_artifacts(compare_run):
    for name in ("predictions.csv", "generations.csv", "summary.json", "config.json",
                 "config.input.json", "pool.json", "report.json", "cumulative_rmse.csv",
                 "percent_better.csv", "checkpoints/final.json", "best.dot"):
        assert (compare_run / name).is_file(), name
    # one checkpoint after every 5 completed generations
    assert sorted(p.name for p in (compare_run / "checkpoints").glob("genome_*.json")) == \
        ["genome_000004.json", "genome_000009.json"]
    logs = sorted(p.stem for p in (compare_run / "predictors").glob("*.csv"))
    assert logs == ["arima_ons", "lstm1", "ma3", "naive", "onenas"]
    summary = json.loads((compare_run / "summary.json").read_text())
    assert summary["status"] == "ok"
    assert summary["onenas"]["prequential_violations"] == 0
    assert summary["onenas"]["repopulation_events"] == 2


def test_prediction_log_layout(compare_run):
    with (compare_run / "predictions.csv").open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 12 * 10
    assert [int(r["step"]) for r in rows] == list(range(120))
    data = np.genfromtxt(compare_run.parent.parent / "data.csv", delimiter=",", names=True)
    v = data["value"]
    norm = (v - v.min()) / (v.max() - v.min())
    assert np.allclose([float(r["realized"]) for r in rows], norm[:120])
    assert np.allclose([float(r["naive"]) for r in rows[1:]], norm[:119])


def test_report_recomputes_from_logs(compare_run, capsys):
    before = json.loads((compare_run / "report.json").read_text())
    (compare_run / "report.json").unlink()
    assert main(["report", str(compare_run)]) == 0
    assert json.loads((compare_run / "report.json").read_text()) == before
    assert "naive" in capsys.readouterr().out
    rep = build_report(compare_run)
    assert set(rep.cumulative_rmse) == {"arima_ons", "lstm1", "ma3", "naive", "onenas"}
    assert len(rep.percent_better) == 12


def test_report_on_empty_directory(tmp_path):
    assert main(["report", str(tmp_path)]) == 2


def test_synth_command(workdir):
    gen = workdir / "g.json"
    gen.write_text(json.dumps({"kind": "ar", "coefficients": [0.3], "length": 40,
                               "output": "s.csv"}))
    assert main(["synth", str(gen)]) == 0
    assert (workdir / "out" / "s.csv").read_text().startswith("value\n")
    gen.write_text("{}")
    assert main(["synth", str(gen)]) == 2
