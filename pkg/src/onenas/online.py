"""The online generation loop.

Each generation the current global best forecasts the incoming subsequence on
a side thread while the coordinator breeds offspring, farms training and
evaluation out to a worker pool, waits for all of it, selects the next elites
and only then appends the incoming subsequence to the history.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .evolution import EvolutionContext, EvolutionRates, generate_offspring
from .genome import Genome, minimal_seed, validate
from .islands import Archipelago, is_valid, rank_islands, repopulate_worst, select_elites
from .network import TrainingPlan, compile_genome, evaluate_program, forward_program, train
from .timeseries import Subsequence, SubsequencePool, stack

log = logging.getLogger(__name__)

_COORDINATOR_KEY = 2**31 - 1


@dataclass
class GenerationConfig:
    p: int = 25
    generations: int = 2000
    num_training_sets: int = 600
    num_validation_sets: int = 100
    worker_count: int = 1
    repopulation_enabled: bool = True
    islands: int = 10
    elite_capacity: int = 5
    generated_per_island: int = 10
    extinction_frequency: int = 200
    max_recurrent_depth: int = 10
    warmup_subsequences: int = 1

    def __post_init__(self):
        for name in ("p", "generations", "num_training_sets", "num_validation_sets",
                     "worker_count", "islands", "elite_capacity", "generated_per_island",
                     "extinction_frequency", "max_recurrent_depth"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.warmup_subsequences < 0:
            raise ValueError("warmup_subsequences must be >= 0")

    @classmethod
    def single_population(cls, **kw) -> "GenerationConfig":
        base = dict(islands=1, elite_capacity=50, generated_per_island=100,
                    repopulation_enabled=False)
        base.update(kw)
        return cls(**base)


@dataclass
class GenerationReport:
    t: int
    online_predictions: np.ndarray  # [p, n_outputs]
    realized: np.ndarray  # [p, n_outputs]
    naive_predictions: np.ndarray  # [p, n_outputs]
    online_mse: float
    global_best_id: int  # genome that made this generation's forecast
    next_best_id: int  # global best after this generation's selection
    best_fitness: float
    wall_time_seconds: float
    training_seconds: float
    island_summaries: list[dict]
    fallback: bool = False
    repopulated_island: int | None = None

    def to_row(self) -> dict:
        return {"t": self.t, "online_mse": self.online_mse, "global_best_id": self.global_best_id,
                "next_best_id": self.next_best_id, "best_fitness": self.best_fitness,
                "wall_time_seconds": self.wall_time_seconds,
                "training_seconds": self.training_seconds, "fallback": int(self.fallback),
                "repopulated_island": "" if self.repopulated_island is None
                else self.repopulated_island}


@dataclass
class LineageRecord:
    genome_id: int
    parents: tuple[int, ...]
    origin: str
    generation_born: int
    island: int
    # (generation, "train" | "validate", largest subsequence index touched)
    uses: list[tuple[int, str, int]] = field(default_factory=list)


@dataclass
class PredictionResult:
    predictions: np.ndarray
    mse: float
    fallback: bool
    naive: np.ndarray


def naive_forecast(incoming: np.ndarray, previous_row: np.ndarray | None,
                   out_cols: Sequence[int]) -> np.ndarray:
    prev = np.zeros(incoming.shape[1]) if previous_row is None else previous_row
    rows = np.vstack([prev[None], incoming[:-1]])
    return rows[:, list(out_cols)]


def online_predict(g: Genome, incoming: Subsequence | np.ndarray,
                   warmup: Sequence[Subsequence] | np.ndarray = ()) -> PredictionResult:
    """Forecast each row of ``incoming`` one step ahead.

    Recurrent state is primed on ``warmup`` (realized history, oldest first);
    the first incoming row is forecast from the last warmup row. Without
    warmup a zero row stands in for the unseen past. An invalid genome or a
    non-finite forecast falls back to the naive forecast.
    """
    inc = incoming.values if isinstance(incoming, Subsequence) else np.asarray(incoming)
    if isinstance(warmup, np.ndarray):
        hist = warmup
    else:
        hist = np.vstack([s.values for s in warmup]) if len(warmup) else \
            np.zeros((0, inc.shape[1]))
    prime = hist if len(hist) else np.zeros((1, inc.shape[1]))
    out_cols = sorted(n.column for n in g.nodes if n.kind == "output")
    naive = naive_forecast(inc, hist[-1] if len(hist) else None, out_cols)
    target = inc[:, out_cols]
    preds = None
    if not validate(g):
        values = np.vstack([prime, inc])
        out, ok = forward_program(compile_genome(g, check=False), values)
        preds = out[len(prime) - 1:len(values) - 1]
        if not ok or not np.all(np.isfinite(preds)):
            preds = None
    fallback = preds is None
    if fallback:
        preds = naive
    return PredictionResult(preds, float(np.mean((preds - target) ** 2)), fallback, naive)


def _task_rng(seed: int, t: int, k: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(t, k)))


def _train_and_evaluate(g: Genome, history: SubsequencePool, t: int, val: np.ndarray,
                        plan: TrainingPlan, seed: int, k: int, do_train: bool) -> Genome:
    rng = _task_rng(seed, t, k)
    if do_train:
        train_set = history.get_training_data(t, rng)
        if train_set:
            g = train(g, train_set, plan, rng)
            g = g.with_(metadata={**g.metadata, "trained_at": t})
        if g.fitness is not None and math.isnan(g.fitness):
            return g
    if val.shape[0] == 0:
        return g.with_(fitness=None)
    res = evaluate_program(compile_genome(g, check=False), val)
    return g.with_(fitness=res.mse if res.valid else float("nan"))


class OnlineEvolution:
    """Coordinator state for one run."""

    def __init__(self, schema, cfg: GenerationConfig, rates: EvolutionRates,
                 plan: TrainingPlan, seed: int = 0, seed_genome: Genome | None = None):
        self.schema = schema
        self.cfg = cfg
        self.rates = rates if cfg.islands > 1 else rates.single_population()
        self.plan = plan
        self.seed = seed
        self.ctx = EvolutionContext(rates=self.rates, max_recurrent_depth=cfg.max_recurrent_depth)
        self.archipelago = Archipelago.create(cfg.islands, cfg.elite_capacity,
                                              cfg.generated_per_island, cfg.extinction_frequency)
        init_rng = _task_rng(seed, 0, _COORDINATOR_KEY - 1)
        if seed_genome is None:
            seed_genome = minimal_seed(schema, init_rng, self.ctx.innovations, genome_id=0)
        else:
            self.ctx.innovations.advance_past(max(
                [n.id for n in seed_genome.nodes] + [e.id for e in seed_genome.edges]))
        for isl in self.archipelago.islands:
            isl.elites = [seed_genome]
        self.global_best: Genome = seed_genome
        self.lineage: dict[int, LineageRecord] = {}
        self._record(seed_genome)
        self.events: list[dict] = []
        self.reports: list[GenerationReport] = []
        self.history: SubsequencePool | None = None

    # -- lineage -------------------------------------------------------------
    def _record(self, g: Genome) -> LineageRecord:
        rec = self.lineage.get(g.genome_id)
        if rec is None:
            rec = LineageRecord(g.genome_id, g.parents, g.origin, g.generation_born,
                                g.island_of_origin)
            self.lineage[g.genome_id] = rec
        return rec

    # -- main loop -----------------------------------------------------------
    def run(self, source: Iterable[Subsequence],
            on_generation: Callable[["OnlineEvolution", GenerationReport], None] | None = None
            ) -> list[GenerationReport]:
        cfg = self.cfg
        stream = iter(source)
        history = None
        workers = ThreadPoolExecutor(cfg.worker_count) if cfg.worker_count > 1 else None
        predictor = ThreadPoolExecutor(1)
        try:
            for t in range(cfg.generations):
                try:
                    incoming = next(stream)
                except StopIteration:
                    log.warning("stream exhausted after %d generations", t)
                    break
                if history is None:
                    history = SubsequencePool(len(incoming), self.schema, cfg.num_training_sets,
                                              cfg.num_validation_sets)
                    self.history = history
                report = self._generation(t, incoming, history, workers, predictor)
                self.reports.append(report)
                if on_generation is not None:
                    on_generation(self, report)
        finally:
            predictor.shutdown()
            if workers is not None:
                workers.shutdown()
        return self.reports

    def _generation(self, t, incoming, history, workers, predictor) -> GenerationReport:
        cfg = self.cfg
        start = time.perf_counter()
        if incoming.index != t:
            raise ValueError(f"stream delivered subsequence {incoming.index} at generation {t}")
        best = self.global_best
        warm = history.subsequences[max(0, t - cfg.warmup_subsequences):t] \
            if cfg.warmup_subsequences else []
        pending: Future = predictor.submit(online_predict, best, incoming, list(warm))

        rng = _task_rng(self.seed, t, _COORDINATOR_KEY)
        repopulated = None
        if cfg.repopulation_enabled and t > 0 and t % cfg.extinction_frequency == 0:
            repopulated = repopulate_worst(self.archipelago, best, rng, self.ctx)
            isl = self.archipelago.islands[repopulated]
            self.events.append({"t": t, "island": repopulated, "global_best_id": best.genome_id,
                                "genome_ids": [g.genome_id for g in isl.elites]})
            for g in isl.elites:
                self._record(g)

        self.ctx.generation = t
        offspring: list[list[Genome]] = []
        for isl in self.archipelago.islands:
            kids = generate_offspring(isl.elites, self.archipelago.elites_except(isl.id),
                                      cfg.generated_per_island, self.rates, rng, self.ctx, isl.id)
            offspring.append(kids)
            for g in kids:
                self._record(g)

        validation = history.get_validation_data(t)
        val = np.ascontiguousarray(stack(validation)) if validation else np.zeros((0, 0, 0))
        jobs = []
        for isl, kids in zip(self.archipelago.islands, offspring):
            jobs += [(g, True) for g in kids]
            jobs += [(g, False) for g in isl.elites]
        train_start = time.perf_counter()
        results = self._dispatch(jobs, history, t, val, workers)
        training_seconds = time.perf_counter() - train_start  # barrier passed

        pos = 0
        for isl, kids in zip(self.archipelago.islands, offspring):
            trained = results[pos:pos + len(kids)]
            pos += len(kids)
            elites = results[pos:pos + len(isl.elites)]
            pos += len(isl.elites)
            for g in trained:
                if g.metadata.get("trained_at") == t:
                    self._record(g).uses.append((t, "train", g.trained_through))
            for g in trained + elites:
                if len(val):
                    self._record(g).uses.append((t, "validate", validation[-1].index))
            isl.generated = trained
            isl.elites = select_elites(elites, trained, isl.elite_capacity)
        self.global_best = self.archipelago.global_best

        pred = pending.result()
        out_cols = [n.column for n in best.output_nodes]
        history.append_next(incoming)
        return GenerationReport(
            t=t, online_predictions=pred.predictions, realized=incoming.values[:, out_cols],
            naive_predictions=pred.naive, online_mse=pred.mse, global_best_id=best.genome_id,
            next_best_id=self.global_best.genome_id,
            best_fitness=self.global_best.fitness if is_valid(self.global_best) else math.nan,
            wall_time_seconds=time.perf_counter() - start, training_seconds=training_seconds,
            island_summaries=[isl.summary() for isl in self.archipelago.islands],
            fallback=pred.fallback, repopulated_island=repopulated)

    def _dispatch(self, jobs, history, t, val, workers) -> list[Genome]:
        def task(k):
            g, do_train = jobs[k]
            try:
                return _train_and_evaluate(g, history, t, val, self.plan, self.seed, k, do_train)
            except Exception:  # worker failure invalidates only this genome
                log.exception("worker task %d failed at generation %d", k, t)
                return g.with_(fitness=float("nan"))

        if workers is None:
            return [task(k) for k in range(len(jobs))]
        return list(workers.map(task, range(len(jobs))))

    # -- audits --------------------------------------------------------------
    def data_horizon(self, genome_id: int, as_of: int) -> int:
        """Largest subsequence index that shaped ``genome_id`` by generation
        ``as_of``: its own training/validation uses up to then, plus each
        parent's horizon as of the child's birth. Recomputed from the lineage
        log only."""
        memo: dict[tuple[int, int], int] = {}
        todo = [(genome_id, as_of)]
        while todo:
            gid, when = todo[-1]
            if (gid, when) in memo:
                todo.pop()
                continue
            rec = self.lineage[gid]
            keys = [(p, rec.generation_born) for p in rec.parents]
            missing = [k for k in keys if k not in memo]
            if missing:
                todo.extend(missing)
                continue
            own = [idx for gen, _, idx in rec.uses if gen <= when]
            memo[(gid, when)] = max([-1] + own + [memo[k] for k in keys])
            todo.pop()
        return memo[(genome_id, as_of)]

    def prequential_violations(self) -> list[str]:
        out = []
        for r in self.reports:
            h = self.data_horizon(r.global_best_id, r.t)
            if h >= r.t:
                out.append(f"generation {r.t}: genome {r.global_best_id} saw subsequence {h}")
        return out

    def summary(self) -> dict:
        return {"generations": len(self.reports), "global_best_id": self.global_best.genome_id,
                "global_best_fitness": self.global_best.fitness,
                "repopulation_events": len(self.events), "config": asdict(self.cfg),
                "ranking": rank_islands(self.archipelago)}


def run(pool_source: Iterable[Subsequence], cfg: GenerationConfig, evo: EvolutionRates,
        plan: TrainingPlan, seed: int = 0, schema=None) -> list[GenerationReport]:
    """Run the online loop over ``pool_source`` and return one report per generation."""
    if schema is None:
        schema = getattr(pool_source, "schema")
    return OnlineEvolution(schema, cfg, evo, plan, seed).run(pool_source)
