"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that the terminal summary prints at the
end of the session. Criteria 6 to 8 share ten long synthetic runs; their
results are cached under ``.acceptance_cache/`` keyed by a hash of the engine
sources and the run settings, so only identical code reuses them. Delete the
directory to force fresh runs (about 15 minutes per seed on one core).
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from pathlib import Path

import numpy as np
import pytest

import onenas
from onenas import online as online_mod
from onenas.baselines import FixedRNN, OnlineArima, make_predictor, run_prequential
from onenas.cells import CELL_TYPES, CellState, cell_backward, param_count
from onenas.cli import main as cli_main
from onenas.evolution import (MUTATION_OPS, EvolutionContext, EvolutionRates, better_first,
                              crossover, mutate)
from onenas.genome import minimal_seed, validate
from onenas.islands import Archipelago, rank_islands, select_elites
from onenas.metrics import moving_average, percent_better_than_naive, stays_above
from onenas.network import TrainingPlan, forward, loss_and_gradient
from onenas.online import GenerationConfig, OnlineEvolution
from onenas.synth import ar_series, drifting_ar_series, write_csv
from onenas.timeseries import SeriesSchema, normalize, slice_pool

from conftest import random_genome
from reference import central_difference, half_sse, interpret, ref_cell

RESULTS: dict[int, tuple[bool, str]] = {}

ROOT = Path(__file__).resolve().parent.parent
CACHE = ROOT / ".acceptance_cache"
SEEDS = range(10)

# the drifting stream and island settings shared by criteria 6 to 8
DRIFT_SEGMENTS = [[-0.5, 0.3], [0.3, -0.6]]
DRIFT = dict(p=25, generations=400, islands=10, elite_capacity=5, generated_per_island=10,
             extinction_frequency=100, num_training_sets=50)
CLASSICAL = ("naive", "ma3", "exp0.2")
RNNS = ("lstm1", "gru1", "lstm2", "gru2")


def record(n: int, ok: bool, detail: str) -> None:
    RESULTS[n] = (bool(ok), detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'} ({detail})")


def summary_lines() -> list[str]:
    return [f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
            for n, (ok, detail) in sorted(RESULTS.items())]


def _vec_rel(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-8))


# ---------------------------------------------------------------------------
# 1: gradients


def test_criterion_01_gradients_match_finite_differences():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst, cases = 0.0, 0
    for cell in CELL_TYPES:
        for _ in range(10):
            params = rng.uniform(-1.5, 1.5, param_count(cell))
            x, hp, cp = rng.uniform(-2, 2, 3)
            dh, dc = rng.normal(), rng.normal() if cell == "lstm" else 0.0
            dx, grad, prev = cell_backward(cell, params, (x, CellState(hp, np.array([cp]))), dh,
                                           CellState(0.0, np.array([dc])))

            def f(v):
                h, c = ref_cell(cell, v[:-3], v[-3], v[-2], v[-1])
                return dh * h + dc * c
            fd = central_difference(f, np.concatenate([params, [x, hp, cp]]))
            analytic = np.concatenate([grad, [dx, prev.hidden, prev.memory]])
            worst = max(worst, _vec_rel(analytic, fd))
            cases += 1
    for _ in range(40):
        g = random_genome(rng, steps=int(rng.integers(2, 14)))
        values = rng.uniform(0, 1, (int(rng.integers(4, 12)), 3))
        _, grad = loss_and_gradient(g, values)
        fd = central_difference(lambda th: half_sse(g.with_parameters(th), values),
                                g.parameter_vector())
        worst = max(worst, _vec_rel(grad, fd))
        cases += 1
    for k in range(20):
        cell, layers = ("lstm", "gru")[k % 2], 1 + (k // 2) % 2
        window = int(rng.integers(3, 8))
        model = FixedRNN(cell, layers, window=window, learning_rate=1e-3, seed=k)
        for v in rng.uniform(0, 1, window + 3):
            model.observe(v)
        rows = np.stack(model.rows)
        g = model.genome.with_parameters(model.theta)
        _, grad = loss_and_gradient(g, rows)
        fd = central_difference(lambda th: half_sse(model.genome.with_parameters(th), rows),
                                model.theta)
        worst = max(worst, _vec_rel(grad, fd))
        cases += 1
    elapsed = time.perf_counter() - start
    ok = cases >= 120 and worst < 1e-4 and elapsed < 120
    record(1, ok, f"{cases} cases, worst relative error {worst:.2e}, {elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------------------
# 2: oracles


def test_criterion_02_oracle_equivalence():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(50):
        g = random_genome(rng, steps=int(rng.integers(0, 20)))
        x = rng.uniform(0, 1, (15, 3))
        worst = max(worst, float(np.abs(forward(g, x) - interpret(g, x)).max()))
    seed = minimal_seed(SeriesSchema.univariate(), rng)
    select_bad = rank_bad = 0
    for trial in range(1000):
        n = int(rng.integers(2, 30))
        fits = rng.uniform(0, 1, n)
        fits[rng.random(n) < 0.1] = np.nan
        edges = rng.integers(1, 4, n)
        pop = [seed.with_(fitness=float(f), genome_id=i + 1,
                          edges=seed.edges * int(e)) for i, (f, e) in enumerate(zip(fits, edges))]
        cap = int(rng.integers(1, 8))
        got = [g.genome_id for g in select_elites(pop[:n // 2], pop[n // 2:], cap)]
        oracle = sorted(((f, int(e), i + 1) for i, (f, e) in enumerate(zip(fits, edges))
                         if np.isfinite(f)))
        expect = [gid for _, _, gid in oracle[:cap]] or [g.genome_id for g in pop[:n // 2]]
        select_bad += got != expect
        arch = Archipelago.create(n, 1, 1, 10)
        for isl, g in zip(arch.islands, pop):
            isl.elites = [g]
        best = [f if np.isfinite(f) else np.inf for f in fits]
        rank_bad += rank_islands(arch) != sorted(range(n), key=lambda i: (best[i], i))
    ok = worst <= 1e-12 and select_bad == 0 and rank_bad == 0
    record(2, ok, f"forward max diff {worst:.1e}; selection mismatches {select_bad}/1000; "
                  f"ranking mismatches {rank_bad}/1000")
    assert ok


# ---------------------------------------------------------------------------
# 3: evolution validity


def _inherits(child, parents) -> bool:
    """Every gene the child shares with a parent carries that parent's values."""
    weights = [{e.id: e.weight for e in p.edges} for p in parents]
    params = [{n.id: n.cell_parameters for n in p.nodes} for p in parents]
    for e in child.edges:
        seen = [w[e.id] for w in weights if e.id in w]
        if seen and e.weight not in seen:
            return False
    for n in child.nodes:
        seen = [p[n.id] for p in params if n.id in p]
        if seen and n.cell_parameters not in seen:
            return False
    return True


def test_criterion_03_evolution_validity():
    rng = np.random.default_rng(3)
    ctx = EvolutionContext()
    schema = SeriesSchema(("a", "b", "c"), (0, 1, 2), (0, 2))
    pool = [minimal_seed(schema, rng, ctx.innovations)]
    violations = lamarck = 0
    for k in range(10000):
        if len(pool) >= 2 and rng.random() < 0.5:
            i, j = rng.choice(len(pool), 2, replace=False)
            a, b = better_first(pool[int(i)], pool[int(j)])
            child = crossover(a, b, rng, ctx)
            parents = [a, b] if len(child.parents) == 2 else [a]
        else:
            parent = pool[int(rng.integers(len(pool)))]
            child = mutate(parent, rng, ctx, op=MUTATION_OPS[k % len(MUTATION_OPS)])
            parents = [parent]
        violations += len(validate(child))
        lamarck += not _inherits(child, parents)
        if len(pool) < 40:
            pool.append(child)
        else:
            pool[int(rng.integers(len(pool)))] = child
    ok = violations == 0 and lamarck == 0
    record(3, ok, f"10000 operations, {violations} violations, {lamarck} inheritance failures")
    assert ok


# ---------------------------------------------------------------------------
# 4: prequential audit


def test_criterion_04_prequential_audit():
    x, _ = normalize(ar_series([0.5, -0.2], 140 * 25, seed=4)[:, None])
    pool = slice_pool(x, SeriesSchema.univariate(), 25)
    cfg = GenerationConfig(generations=140, islands=4, elite_capacity=3, generated_per_island=4,
                           extinction_frequency=30, num_training_sets=10)
    eng = OnlineEvolution(pool.schema, cfg, EvolutionRates(), TrainingPlan(), seed=4)
    eng.run(pool)
    violations = eng.prequential_violations()
    trained = sum(kind == "train" for rec in eng.lineage.values() for _, kind, _ in rec.uses)
    ok = not violations and trained > 0 and len(eng.reports) == 140
    record(4, ok, f"140 generations, {trained} training uses audited, "
                  f"{len(violations)} violations")
    assert ok


# ---------------------------------------------------------------------------
# 5: repopulation


def test_criterion_05_repopulation(monkeypatch):
    snapshots = []
    original = online_mod.repopulate_worst

    def spy(arch, best, rng, ctx):
        island = original(arch, best, rng, ctx)
        snapshots.append((best, list(arch.islands[island].elites)))
        return island

    monkeypatch.setattr(online_mod, "repopulate_worst", spy)
    g, f, e = 23, 5, 3
    x, _ = normalize(ar_series([0.5], g * 10, seed=5)[:, None])
    pool = slice_pool(x, SeriesSchema.univariate(), 10)
    cfg = GenerationConfig(p=10, generations=g, islands=3, elite_capacity=e,
                           generated_per_island=3, extinction_frequency=f, num_training_sets=4,
                           num_validation_sets=3)
    eng = OnlineEvolution(pool.schema, cfg, EvolutionRates(),
                          TrainingPlan(epochs=2, clean_epochs=1), seed=5)
    eng.run(pool)
    bad = 0
    for best, elites in snapshots:
        bad += len(elites) != e
        for child in elites:
            one_step = (child.parents == (best.genome_id,) and child.origin in MUTATION_OPS
                        and {n.id for n in best.nodes} <= {n.id for n in child.nodes}
                        and {e_.id for e_ in best.edges} <= {e_.id for e_ in child.edges}
                        and _inherits(child, [best]) and not validate(child))
            bad += not one_step
    expected = (g - 1) // f
    ok = len(eng.events) == expected == len(snapshots) and bad == 0
    record(5, ok, f"{len(eng.events)} events (expected {expected}), {bad} malformed islands "
                  "or genomes")
    assert ok


# ---------------------------------------------------------------------------
# 6 to 8: long runs on a drifting stream


def _source_hash() -> str:
    h = hashlib.sha256()
    for path in sorted(Path(onenas.__file__).parent.glob("*.py")):
        if path.name not in ("cli.py", "config.py", "__main__.py"):
            h.update(path.read_bytes())
    h.update(json.dumps([DRIFT_SEGMENTS, DRIFT, CLASSICAL, RNNS]).encode())
    return h.hexdigest()[:16]


def drift_run(seed: int) -> dict:
    """Final cumulative errors and percent-better series for one seed, cached."""
    path = CACHE / f"drift_{_source_hash()}_seed{seed}.json"
    if path.is_file():
        return json.loads(path.read_text())
    n = DRIFT["generations"] * DRIFT["p"]
    raw = drifting_ar_series(DRIFT_SEGMENTS, n, 1.0, seed=seed)
    x, _ = normalize(raw[:, None])
    pool = slice_pool(x, SeriesSchema.univariate(), DRIFT["p"])
    cfg = GenerationConfig(**DRIFT)
    eng = OnlineEvolution(pool.schema, cfg, EvolutionRates(), TrainingPlan(), seed=seed)
    start = time.perf_counter()
    eng.run(pool)
    runtime = time.perf_counter() - start
    pred = np.concatenate([r.online_predictions for r in eng.reports])[:, 0]
    naive = np.concatenate([r.naive_predictions for r in eng.reports])[:, 0]
    real = np.concatenate([r.realized for r in eng.reports])[:, 0]
    mse = {"onenas": float(np.mean((pred[1:] - real[1:]) ** 2))}
    s = x[:, 0]
    for name in CLASSICAL + RNNS:
        kw = {"seed": seed} if name in RNNS else {}
        p = run_prequential(make_predictor(name, **kw), s)
        mse[name] = float(np.mean((p[1:] - s[1:]) ** 2))
    pb = percent_better_than_naive(pred, naive, real, DRIFT["p"])
    out = {"seed": seed, "runtime_seconds": runtime, "final_mse": mse,
           "percent_better": pb.tolist(),
           "prequential_violations": len(eng.prequential_violations()),
           "repopulation_events": len(eng.events)}
    CACHE.mkdir(exist_ok=True)
    path.write_text(json.dumps(out, indent=1))
    return out


@pytest.fixture(scope="module")
def drift_runs():
    logging.getLogger("onenas").setLevel(logging.ERROR)
    return [drift_run(s) for s in SEEDS]


def test_criterion_06_beats_classical_methods(drift_runs):
    wins = [all(r["final_mse"]["onenas"] < r["final_mse"][b] for b in CLASSICAL)
            for r in drift_runs]
    longest = max(r["runtime_seconds"] for r in drift_runs)
    cores = os.cpu_count()
    ok = sum(wins) >= 8 and longest < 30 * 60
    per_seed = " ".join(f"{r['final_mse']['onenas']:.4f}/"
                        f"{min(r['final_mse'][b] for b in CLASSICAL):.4f}" for r in drift_runs)
    record(6, ok, f"{sum(wins)}/10 seeds beat naive, MA(3) and EXP(0.2); longest run "
                  f"{longest / 60:.1f} min on {cores} core(s); onenas/best-classical MSE "
                  f"{per_seed}")
    assert ok


def test_criterion_07_percent_better_second_half(drift_runs):
    half = DRIFT["generations"] // 2
    ok_seeds, lows = 0, []
    for r in drift_runs:
        ma = moving_average(r["percent_better"], 50)
        lows.append(float(ma[half:].min()))
        ok_seeds += stays_above(ma, 50.0, half)
    ok = ok_seeds >= 8
    record(7, ok, f"{ok_seeds}/10 seeds keep the 50-generation average above 50% for the "
                  f"whole second half; second-half minima "
                  + " ".join(f"{v:.1f}" for v in lows))
    assert ok


def test_criterion_08_beats_fixed_rnns(drift_runs):
    wins = [all(r["final_mse"]["onenas"] < r["final_mse"][b] for b in RNNS) for r in drift_runs]
    ok = sum(wins) >= 8
    per_seed = " ".join(f"{np.sqrt(r['final_mse']['onenas']):.4f}/"
                        f"{np.sqrt(min(r['final_mse'][b] for b in RNNS)):.4f}"
                        for r in drift_runs)
    record(8, ok, f"{sum(wins)}/10 seeds beat all four fixed RNNs; onenas/best-RNN RMSE "
                  f"{per_seed}")
    assert ok


# ---------------------------------------------------------------------------
# 9: online ARIMA


def test_criterion_09_arima_sanity():
    improve = {"ogd": 0, "ons": 0}
    ons_wins = 0
    for seed in SEEDS:
        x = ar_series([0.6, -0.3, 0.2], 1000, 1.0, seed=seed)
        total = {}
        for method in ("ogd", "ons"):
            p = run_prequential(OnlineArima(method), x)
            e = (p - x)[1:] ** 2
            h = len(e) // 2
            improve[method] += np.sqrt(e[h:].mean()) < np.sqrt(e[:h].mean())
            total[method] = np.sqrt(e.mean())
        ons_wins += total["ons"] <= total["ogd"]
    ok = improve["ogd"] == 10 and improve["ons"] == 10 and ons_wins >= 7
    record(9, ok, f"second half better: OGD {improve['ogd']}/10, ONS {improve['ons']}/10; "
                  f"ONS <= OGD at 1000 steps {ons_wins}/10")
    assert ok


# ---------------------------------------------------------------------------
# 10: scaling


def _training_seconds(workers: int) -> float:
    x, _ = normalize(ar_series([0.5, -0.2], 30 * 25, seed=10)[:, None])
    pool = slice_pool(x, SeriesSchema.univariate(), 25)
    cfg = GenerationConfig(generations=30, islands=10, elite_capacity=5, generated_per_island=8,
                           extinction_frequency=1000, num_training_sets=20,
                           num_validation_sets=10, worker_count=workers)
    eng = OnlineEvolution(pool.schema, cfg, EvolutionRates(), TrainingPlan(), seed=10)
    eng.run(pool)
    # the last 20 generations all train 80 offspring
    return float(np.mean([r.training_seconds for r in eng.reports[10:]]))


def test_criterion_10_scaling():
    serial = _training_seconds(1)
    parallel = _training_seconds(8)
    ratio = parallel / serial
    ok = ratio <= 0.35
    record(10, ok, f"8 workers / 1 worker training time {ratio:.2f} "
                   f"({parallel:.2f}s vs {serial:.2f}s per generation, {os.cpu_count()} "
                   "core(s) available)")
    assert ok


# ---------------------------------------------------------------------------
# 11: determinism


def test_criterion_11_determinism(tmp_path, monkeypatch):
    monkeypatch.setenv("ONENAS_OUTPUT_ROOT", str(tmp_path))
    x = ar_series([0.5, -0.3], 40 * 10, seed=11)
    write_csv(tmp_path / "data.csv", {"value": x})
    logs = []
    for k in range(2):
        cfg = {"mode": "onenas", "output_dir": f"run{k}", "seed": 11,
               "dataset": {"path": str(tmp_path / "data.csv"), "output_columns": ["value"]},
               "generation": {"p": 10, "generations": 40, "islands": 3, "elite_capacity": 3,
                              "generated_per_island": 4, "extinction_frequency": 10,
                              "num_training_sets": 8, "num_validation_sets": 5}}
        path = tmp_path / f"c{k}.json"
        path.write_text(json.dumps(cfg))
        assert cli_main(["run", str(path)]) == 0
        logs.append((tmp_path / f"run{k}" / "predictions.csv").read_bytes())
    ok = logs[0] == logs[1] and len(logs[0]) > 0
    record(11, ok, f"prediction logs {'identical' if ok else 'differ'} "
                   f"({len(logs[0])} bytes)")
    assert ok
