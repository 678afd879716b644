"""Island populations: elite selection, ranking and repopulation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .evolution import EvolutionContext, mutate
from .genome import Genome


def is_valid(g: Genome) -> bool:
    return g.fitness is not None and math.isfinite(g.fitness)


@dataclass
class Island:
    id: int
    elite_capacity: int = 5
    generated_capacity: int = 10
    elites: list[Genome] = field(default_factory=list)
    generated: list[Genome] = field(default_factory=list)

    @property
    def best_fitness(self) -> float:
        valid = [g.fitness for g in self.elites if is_valid(g)]
        return min(valid) if valid else math.inf

    @property
    def best(self) -> Genome | None:
        return min(self.elites, key=Genome.rank_key) if self.elites else None

    def summary(self) -> dict:
        return {"island": self.id, "best_fitness": self.best_fitness,
                "elites": len(self.elites), "generated": len(self.generated)}


@dataclass
class Archipelago:
    islands: list[Island]
    extinction_frequency: int = 200

    def __post_init__(self):
        if not self.islands:
            raise ValueError("need at least one island")

    @classmethod
    def create(cls, n: int, elite_capacity: int, generated_capacity: int,
               extinction_frequency: int) -> "Archipelago":
        return cls([Island(i, elite_capacity, generated_capacity) for i in range(n)],
                   extinction_frequency)

    @property
    def global_best(self) -> Genome | None:
        elites = [g for isl in self.islands for g in isl.elites]
        return min(elites, key=Genome.rank_key) if elites else None

    def elites_except(self, island_id: int) -> list[Genome]:
        return [g for isl in self.islands if isl.id != island_id for g in isl.elites]


def select_elites(prev_elites: Sequence[Genome], trained_offspring: Sequence[Genome],
                  capacity: int) -> list[Genome]:
    """The ``capacity`` best valid genomes of the union.

    Candidates must already carry fitness from the same validation set. Ties go
    to fewer enabled edges, then the older genome. If nothing is valid, the
    previous elites are kept unchanged.
    """
    pool = [g for g in list(prev_elites) + list(trained_offspring) if is_valid(g)]
    if not pool:
        return list(prev_elites)
    return sorted(pool, key=Genome.rank_key)[:capacity]


def rank_islands(a: Archipelago) -> list[int]:
    """Island ids from best to worst; islands without valid elites come last."""
    return [isl.id for isl in sorted(a.islands, key=lambda isl: (isl.best_fitness, isl.id))]


def repopulate_worst(a: Archipelago, global_best: Genome, rng: np.random.Generator,
                     ctx: EvolutionContext) -> int:
    """Erase the worst island and refill it with single mutations of ``global_best``.

    Returns the id of the repopulated island.
    """
    worst_id = rank_islands(a)[-1]
    worst = next(isl for isl in a.islands if isl.id == worst_id)
    worst.generated = []
    worst.elites = [mutate(global_best, rng, ctx, island=worst.id)
                    for _ in range(worst.elite_capacity)]
    return worst.id
