"""Mutation, crossover and offspring generation.

Children keep every weight they share with a parent verbatim (Lamarckian
inheritance); only brand-new genes are drawn from the initializer. Node depths
are fixed per innovation id, so genes carried between genomes keep their
position in the feedforward order and crossover cannot create cycles.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .cells import HIDDEN_CELL_TYPES
from .genome import (Counter, EdgeGene, Genome, NodeGene, init_cell_parameters, init_weight,
                     validate)

log = logging.getLogger(__name__)

MUTATION_OPS = ("clone", "add_edge", "add_recurrent_edge", "enable_edge", "disable_edge",
                "split_edge", "add_node", "split_node", "merge_node")
MAX_RESAMPLES = 10


@dataclass
class EvolutionRates:
    mutation_rate: float = 0.3
    intra_crossover_rate: float = 0.3
    inter_crossover_rate: float = 0.4
    mutation_op_weights: dict[str, float] = field(
        default_factory=lambda: {op: 1.0 for op in MUTATION_OPS})

    def __post_init__(self):
        rates = (self.mutation_rate, self.intra_crossover_rate, self.inter_crossover_rate)
        if min(rates) < 0:
            raise ValueError("rates must be non-negative")
        if abs(sum(rates) - 1.0) > 1e-9:
            raise ValueError(f"mutation + crossover rates must sum to 1, got {sum(rates)}")
        unknown = set(self.mutation_op_weights) - set(MUTATION_OPS)
        if unknown:
            raise ValueError(f"unknown mutation operations: {sorted(unknown)}")
        if any(w < 0 for w in self.mutation_op_weights.values()) or \
                sum(self.mutation_op_weights.values()) <= 0:
            raise ValueError("mutation op weights must be non-negative with a positive sum")

    def single_population(self) -> "EvolutionRates":
        """Fold inter-island crossover into intra-island crossover."""
        return replace(self, intra_crossover_rate=self.intra_crossover_rate
                       + self.inter_crossover_rate, inter_crossover_rate=0.0)


@dataclass
class EvolutionContext:
    """Run-wide state the operators share: id counters and structural knobs."""

    innovations: Counter = field(default_factory=Counter)
    genome_ids: Counter = field(default_factory=lambda: Counter(1))
    rates: EvolutionRates = field(default_factory=EvolutionRates)
    cell_types: tuple[str, ...] = HIDDEN_CELL_TYPES
    max_recurrent_depth: int = 10
    generation: int = 0


class Inapplicable(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers


def _hidden_depth(rng: np.random.Generator, lo: float = 0.0, hi: float = 1.0) -> float:
    while True:
        d = float(rng.uniform(lo, hi))
        if lo < d < hi:
            return d


def _new_node(ctx: EvolutionContext, rng, depth: float, cell_type: str | None = None) -> NodeGene:
    ct = cell_type or ctx.cell_types[rng.integers(len(ctx.cell_types))]
    return NodeGene(ctx.innovations.next(), "hidden", ct, depth, init_cell_parameters(ct, rng))


def _new_edge(ctx, rng, source: int, target: int, rd: int = 0) -> EdgeGene:
    return EdgeGene(ctx.innovations.next(), source, target, init_weight(rng), rd, True)


def _existing(g: Genome) -> set[tuple[int, int, int]]:
    return {(e.source, e.target, e.recurrent_depth) for e in g.edges}


def _pick(rng, seq):
    return seq[int(rng.integers(len(seq)))]


# ---------------------------------------------------------------------------
# structural operations; each returns (nodes, edges) or raises Inapplicable


def _op_clone(g, ctx, rng):
    return list(g.nodes), list(g.edges)


def _op_add_edge(g, ctx, rng):
    nodes = g.node_map()
    have = _existing(g)
    cands = [(a.id, b.id) for a in g.nodes for b in g.nodes
             if a.depth < b.depth and b.kind != "input" and (a.id, b.id, 0) not in have]
    if not cands:
        raise Inapplicable
    s, t = _pick(rng, cands)
    assert nodes[s].depth < nodes[t].depth
    return list(g.nodes), list(g.edges) + [_new_edge(ctx, rng, s, t)]


def _op_add_recurrent_edge(g, ctx, rng):
    have = _existing(g)
    srcs = list(g.nodes)
    tgts = [n for n in g.nodes if n.kind != "input"]
    for _ in range(20):
        s, t = _pick(rng, srcs), _pick(rng, tgts)
        rd = int(rng.integers(1, ctx.max_recurrent_depth + 1))
        if (s.id, t.id, rd) not in have:
            return list(g.nodes), list(g.edges) + [_new_edge(ctx, rng, s.id, t.id, rd)]
    raise Inapplicable


def _op_enable_edge(g, ctx, rng):
    idx = [i for i, e in enumerate(g.edges) if not e.enabled]
    if not idx:
        raise Inapplicable
    i = _pick(rng, idx)
    edges = list(g.edges)
    edges[i] = replace(edges[i], enabled=True)
    return list(g.nodes), edges


def _op_disable_edge(g, ctx, rng):
    idx = [i for i, e in enumerate(g.edges) if e.enabled]
    if not idx:
        raise Inapplicable
    i = _pick(rng, idx)
    edges = list(g.edges)
    edges[i] = replace(edges[i], enabled=False)
    return list(g.nodes), edges


def _op_split_edge(g, ctx, rng):
    nodes = g.node_map()
    idx = [i for i, e in enumerate(g.edges) if e.enabled]
    if not idx:
        raise Inapplicable
    i = _pick(rng, idx)
    e = g.edges[i]
    s, t = nodes[e.source], nodes[e.target]
    edges = list(g.edges)
    edges[i] = replace(e, enabled=False)
    if e.recurrent_depth == 0:
        mid = _new_node(ctx, rng, _hidden_depth(rng, s.depth, t.depth))
        new = [_new_edge(ctx, rng, s.id, mid.id), _new_edge(ctx, rng, mid.id, t.id)]
    else:
        mid = _new_node(ctx, rng, _hidden_depth(rng))
        rd_out = 0 if mid.depth < t.depth else 1
        new = [_new_edge(ctx, rng, s.id, mid.id, e.recurrent_depth),
               _new_edge(ctx, rng, mid.id, t.id, rd_out)]
    return list(g.nodes) + [mid], edges + new


def _op_add_node(g, ctx, rng):
    mid = _new_node(ctx, rng, _hidden_depth(rng))
    below = [n for n in g.nodes if n.depth < mid.depth]
    above = [n for n in g.nodes if n.depth > mid.depth]
    new = [_new_edge(ctx, rng, _pick(rng, below).id, mid.id),
           _new_edge(ctx, rng, mid.id, _pick(rng, above).id)]
    if rng.random() < 0.5:
        new.append(_new_edge(ctx, rng, mid.id, mid.id, int(rng.integers(
            1, ctx.max_recurrent_depth + 1))))
    return list(g.nodes) + [mid], list(g.edges) + new


def _op_split_node(g, ctx, rng):
    """Replace a hidden node by two nodes sharing its connections."""
    hidden = [n for n in g.nodes if n.kind == "hidden"]
    if not hidden:
        raise Inapplicable
    old = _pick(rng, hidden)
    ins = [e for e in g.edges if e.enabled and e.target == old.id and e.source != old.id]
    outs = [e for e in g.edges if e.enabled and e.source == old.id and e.target != old.id]
    if not ins or not outs:
        raise Inapplicable
    a = _new_node(ctx, rng, old.depth, old.cell_type)
    b = _new_node(ctx, rng, old.depth, old.cell_type)
    new = []
    for group in (ins, outs):
        if len(group) == 1:
            assign = [(group[0], (a, b))]
        else:
            perm = rng.permutation(len(group))
            assign = [(group[j], (a,) if k % 2 == 0 else (b,)) for k, j in enumerate(perm)]
        for e, owners in assign:
            for nn in owners:
                src = nn.id if e.source == old.id else e.source
                tgt = nn.id if e.target == old.id else e.target
                new.append(_new_edge(ctx, rng, src, tgt, e.recurrent_depth))
    edges = [replace(e, enabled=False) if old.id in (e.source, e.target) else e for e in g.edges]
    return list(g.nodes) + [a, b], edges + new


def _op_merge_node(g, ctx, rng):
    """Fold two hidden nodes into one new node at their mean depth."""
    hidden = [n for n in g.nodes if n.kind == "hidden"]
    if len(hidden) < 2:
        raise Inapplicable
    i, j = rng.choice(len(hidden), size=2, replace=False)
    x, y = hidden[int(i)], hidden[int(j)]
    depth = 0.5 * (x.depth + y.depth)
    mid = _new_node(ctx, rng, depth, x.cell_type if rng.random() < 0.5 else y.cell_type)
    nodes = g.node_map()
    merged = {x.id, y.id}
    new, have = [], set()
    for e in g.edges:
        if not e.enabled or not ({e.source, e.target} & merged):
            continue
        src = mid.id if e.source in merged else e.source
        tgt = mid.id if e.target in merged else e.target
        rd = e.recurrent_depth
        if rd == 0:
            sd = depth if src == mid.id else nodes[src].depth
            td = depth if tgt == mid.id else nodes[tgt].depth
            if not sd < td:
                continue
        if (src, tgt, rd) in have:
            continue
        have.add((src, tgt, rd))
        new.append(_new_edge(ctx, rng, src, tgt, rd))
    if not any(e.target == mid.id for e in new) or not any(e.source == mid.id for e in new):
        raise Inapplicable
    edges = [replace(e, enabled=False) if {e.source, e.target} & merged else e for e in g.edges]
    return list(g.nodes) + [mid], edges + new


_OPS = {
    "clone": _op_clone,
    "add_edge": _op_add_edge,
    "add_recurrent_edge": _op_add_recurrent_edge,
    "enable_edge": _op_enable_edge,
    "disable_edge": _op_disable_edge,
    "split_edge": _op_split_edge,
    "add_node": _op_add_node,
    "split_node": _op_split_node,
    "merge_node": _op_merge_node,
}


def _child(ctx: EvolutionContext, nodes, edges, parents: Sequence[Genome], origin: str,
           island: int) -> Genome:
    return Genome(nodes=tuple(nodes), edges=tuple(edges), genome_id=ctx.genome_ids.next(),
                  fitness=None, generation_born=ctx.generation, island_of_origin=island,
                  parents=tuple(p.genome_id for p in parents), origin=origin)


def mutate(parent: Genome, rng: np.random.Generator, ctx: EvolutionContext,
           op: str | None = None, island: int | None = None) -> Genome:
    """Apply one mutation operation chosen by the configured op weights.

    Inapplicable draws are resampled; after ``MAX_RESAMPLES`` failures the
    child is a clone.
    """
    weights = ctx.rates.mutation_op_weights
    names = [o for o in MUTATION_OPS if weights.get(o, 0) > 0]
    probs = np.array([weights[o] for o in names], dtype=float)
    probs /= probs.sum()
    island = parent.island_of_origin if island is None else island
    for _ in range(MAX_RESAMPLES):
        name = op or names[int(rng.choice(len(names), p=probs))]
        try:
            nodes, edges = _OPS[name](parent, ctx, rng)
        except Inapplicable:
            if op is not None:
                break
            continue
        return _child(ctx, nodes, edges, [parent], name, island)
    nodes, edges = _op_clone(parent, ctx, rng)
    return _child(ctx, nodes, edges, [parent], "clone", island)


def better_first(a: Genome, b: Genome) -> tuple[Genome, Genome]:
    return (a, b) if a.rank_key() <= b.rank_key() else (b, a)


def crossover(better_parent: Genome, worse_parent: Genome, rng: np.random.Generator,
              ctx: EvolutionContext, island: int | None = None,
              origin: str = "intra_crossover") -> Genome:
    """Child with every gene of ``better_parent``.

    Genes present in both parents take their weights from a uniformly chosen
    parent. Edges only the worse parent has are each included with
    probability 0.5 when both endpoints already exist in the child; the
    child never gains nodes the better parent lacks, which keeps repeated
    crossover from accumulating the union of both architectures.
    """
    island = better_parent.island_of_origin if island is None else island
    worse_nodes = worse_parent.node_map()
    worse_edges = {e.id: e for e in worse_parent.edges}
    nodes: dict[int, NodeGene] = {}
    for n in better_parent.nodes:
        other = worse_nodes.get(n.id)
        if other is not None and rng.random() < 0.5:
            n = replace(n, cell_parameters=other.cell_parameters)
        nodes[n.id] = n
    edges: dict[int, EdgeGene] = {}
    for e in better_parent.edges:
        other = worse_edges.get(e.id)
        if other is not None and rng.random() < 0.5:
            e = replace(e, weight=other.weight)
        edges[e.id] = e
    have = {(e.source, e.target, e.recurrent_depth) for e in edges.values()}
    for e in worse_parent.edges:
        if e.id in edges or rng.random() >= 0.5:
            continue
        key = (e.source, e.target, e.recurrent_depth)
        if key in have:
            continue
        if e.source not in nodes or e.target not in nodes:
            continue
        if e.recurrent_depth == 0 and not nodes[e.source].depth < nodes[e.target].depth:
            continue
        edges[e.id] = e
        have.add(key)
    child = _child(ctx, nodes.values(), edges.values(), [better_parent, worse_parent], origin,
                   island)
    if validate(child):
        log.warning("crossover produced an invalid child; falling back to a copy")
        return _child(ctx, better_parent.nodes, better_parent.edges, [better_parent], "clone",
                      island)
    return child


def generate_offspring(elites: Sequence[Genome], other_islands_elites: Sequence[Genome], m: int,
                       rates: EvolutionRates, rng: np.random.Generator, ctx: EvolutionContext,
                       island: int = 0) -> list[Genome]:
    """``m`` children from an island's elites.

    Each child independently draws mutation, intra-island crossover (needs two
    elites) or inter-island crossover (needs foreign elites); an unavailable
    crossover falls back to mutation.
    """
    if not elites:
        raise ValueError("cannot generate offspring without elites")
    probs = np.array([rates.mutation_rate, rates.intra_crossover_rate,
                      rates.inter_crossover_rate])
    children = []
    for _ in range(m):
        kind = int(rng.choice(3, p=probs / probs.sum()))
        if kind == 1 and len(elites) >= 2:
            i, j = rng.choice(len(elites), size=2, replace=False)
            a, b = better_first(elites[int(i)], elites[int(j)])
            children.append(crossover(a, b, rng, ctx, island, "intra_crossover"))
        elif kind == 2 and other_islands_elites:
            a, b = better_first(_pick(rng, elites), _pick(rng, other_islands_elites))
            children.append(crossover(a, b, rng, ctx, island, "inter_crossover"))
        else:
            children.append(mutate(_pick(rng, elites), rng, ctx, island=island))
    return children
