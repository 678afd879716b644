"""Genotype of an unlayered recurrent network.

Nodes are ordered by a real-valued depth: inputs sit at 0, outputs at 1, hidden
nodes strictly between. Feedforward edges always point to a deeper node, which
makes the feedforward subgraph acyclic by construction. Recurrent edges carry a
source activation from ``recurrent_depth`` steps back and may connect any pair,
self-loops included.
"""

from __future__ import annotations

import itertools
import json
import threading
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .cells import CELL_TYPES, param_count
from .timeseries import SeriesSchema

INIT_LOW, INIT_HIGH = -0.5, 0.5


class InvalidGenomeError(ValueError):
    def __init__(self, violations: Sequence[str]):
        super().__init__("; ".join(violations))
        self.violations = list(violations)


class Counter:
    """Thread-safe monotone id source."""

    def __init__(self, start: int = 0):
        self._it = itertools.count(start)
        self._lock = threading.Lock()
        self.last = start - 1

    def next(self) -> int:
        with self._lock:
            self.last = next(self._it)
            return self.last

    def advance_past(self, value: int) -> None:
        with self._lock:
            while self.last < value:
                self.last = next(self._it)


@dataclass(frozen=True)
class NodeGene:
    id: int
    kind: str  # input | output | hidden
    cell_type: str
    depth: float
    cell_parameters: tuple[float, ...] = ()
    column: int = -1  # data column for input/output nodes


@dataclass(frozen=True)
class EdgeGene:
    id: int
    source: int
    target: int
    weight: float
    recurrent_depth: int = 0
    enabled: bool = True

    @property
    def recurrent(self) -> bool:
        return self.recurrent_depth > 0


@dataclass(frozen=True)
class Genome:
    nodes: tuple[NodeGene, ...]
    edges: tuple[EdgeGene, ...]
    genome_id: int = 0
    fitness: float | None = None
    generation_born: int = 0
    island_of_origin: int = 0
    parents: tuple[int, ...] = ()
    origin: str = "seed"
    # Largest subsequence index this genome (not its ancestors) was trained on.
    trained_through: int = -1
    metadata: dict = field(default_factory=dict, compare=False, hash=False)

    # -- lookups -----------------------------------------------------------
    def node_map(self) -> dict[int, NodeGene]:
        return {n.id: n for n in self.nodes}

    @property
    def input_nodes(self) -> list[NodeGene]:
        return sorted((n for n in self.nodes if n.kind == "input"), key=lambda n: n.column)

    @property
    def output_nodes(self) -> list[NodeGene]:
        return sorted((n for n in self.nodes if n.kind == "output"), key=lambda n: n.column)

    @property
    def hidden_nodes(self) -> list[NodeGene]:
        return [n for n in self.nodes if n.kind == "hidden"]

    @property
    def enabled_edges(self) -> list[EdgeGene]:
        return [e for e in self.edges if e.enabled]

    @property
    def n_enabled_edges(self) -> int:
        return sum(1 for e in self.edges if e.enabled)

    @property
    def sort_fitness(self) -> float:
        return float("inf") if self.fitness is None or not np.isfinite(self.fitness) else self.fitness

    def rank_key(self) -> tuple:
        """Lower is better: fitness, then fewer enabled edges, then older."""
        return (self.sort_fitness, self.n_enabled_edges, self.generation_born, self.genome_id)

    def structure_key(self) -> tuple:
        nodes = tuple(sorted((n.id, n.kind, n.cell_type, n.depth, n.column) for n in self.nodes))
        edges = tuple(sorted((e.id, e.source, e.target, e.recurrent_depth, e.enabled)
                             for e in self.edges))
        return nodes, edges

    def with_(self, **changes) -> "Genome":
        return replace(self, **changes)

    # -- parameters --------------------------------------------------------
    def parameter_vector(self) -> np.ndarray:
        """All weights then all cell parameters, in gene order."""
        parts = [np.array([e.weight for e in self.edges], dtype=np.float64)]
        parts += [np.asarray(n.cell_parameters, dtype=np.float64) for n in self.nodes]
        return np.concatenate(parts) if parts else np.zeros(0)

    def with_parameters(self, theta: np.ndarray, **changes) -> "Genome":
        theta = np.asarray(theta, dtype=np.float64)
        ne = len(self.edges)
        edges = tuple(replace(e, weight=float(theta[i])) for i, e in enumerate(self.edges))
        nodes = []
        off = ne
        for n in self.nodes:
            k = len(n.cell_parameters)
            nodes.append(replace(n, cell_parameters=tuple(float(v) for v in theta[off:off + k])))
            off += k
        if off != len(theta):
            raise ValueError(f"parameter vector has {len(theta)} entries, genome needs {off}")
        return replace(self, nodes=tuple(nodes), edges=edges, **changes)

    # -- serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "genome_id": self.genome_id,
            "fitness": self.fitness,
            "generation_born": self.generation_born,
            "island_of_origin": self.island_of_origin,
            "parents": list(self.parents),
            "origin": self.origin,
            "trained_through": self.trained_through,
            "nodes": [
                {"id": n.id, "kind": n.kind, "cell_type": n.cell_type, "depth": n.depth,
                 "column": n.column, "cell_parameters": list(n.cell_parameters)}
                for n in self.nodes
            ],
            "edges": [
                {"id": e.id, "source": e.source, "target": e.target, "weight": e.weight,
                 "recurrent_depth": e.recurrent_depth, "enabled": e.enabled}
                for e in self.edges
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Genome":
        nodes = tuple(NodeGene(id=n["id"], kind=n["kind"], cell_type=n["cell_type"],
                               depth=n["depth"], column=n.get("column", -1),
                               cell_parameters=tuple(n["cell_parameters"])) for n in d["nodes"])
        edges = tuple(EdgeGene(id=e["id"], source=e["source"], target=e["target"],
                               weight=e["weight"], recurrent_depth=e["recurrent_depth"],
                               enabled=e["enabled"]) for e in d["edges"])
        return cls(nodes=nodes, edges=edges, genome_id=d.get("genome_id", 0),
                   fitness=d.get("fitness"), generation_born=d.get("generation_born", 0),
                   island_of_origin=d.get("island_of_origin", 0),
                   parents=tuple(d.get("parents", ())), origin=d.get("origin", "seed"),
                   trained_through=d.get("trained_through", -1))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "Genome":
        return cls.from_dict(json.loads(text))


def init_weight(rng: np.random.Generator) -> float:
    return float(rng.uniform(INIT_LOW, INIT_HIGH))


def init_cell_parameters(cell_type: str, rng: np.random.Generator) -> tuple[float, ...]:
    return tuple(float(v) for v in rng.uniform(INIT_LOW, INIT_HIGH, param_count(cell_type)))


def minimal_seed(schema: SeriesSchema, rng: np.random.Generator,
                 innovations: Counter | None = None, genome_id: int = 0) -> Genome:
    """Inputs fully connected to outputs, no hidden nodes."""
    innovations = innovations or Counter()
    inputs = [NodeGene(innovations.next(), "input", "simple", 0.0, (), col)
              for col in schema.input_columns]
    outputs = [NodeGene(innovations.next(), "output", "simple", 1.0,
                        init_cell_parameters("simple", rng), col)
               for col in schema.output_columns]
    edges = [EdgeGene(innovations.next(), i.id, o.id, init_weight(rng))
             for o in outputs for i in inputs]
    return Genome(nodes=tuple(inputs + outputs), edges=tuple(edges), genome_id=genome_id)


def validate(g: Genome) -> list[str]:
    """Return every violated structural invariant; empty list means ok."""
    out: list[str] = []
    ids = [n.id for n in g.nodes] + [e.id for e in g.edges]
    seen: set[int] = set()
    for i in ids:
        if i in seen:
            out.append(f"duplicate innovation id {i}")
        seen.add(i)
    nodes = g.node_map()
    for n in g.nodes:
        if n.kind == "input":
            if n.depth != 0.0:
                out.append(f"input node {n.id} has depth {n.depth}")
            if n.cell_parameters:
                out.append(f"input node {n.id} carries cell parameters")
        elif n.kind == "output":
            if n.depth != 1.0:
                out.append(f"output node {n.id} has depth {n.depth}")
        elif n.kind == "hidden":
            if not 0.0 < n.depth < 1.0:
                out.append(f"hidden node {n.id} depth {n.depth} outside (0, 1)")
        else:
            out.append(f"node {n.id} has unknown kind {n.kind!r}")
        if n.kind != "hidden" and n.cell_type != "simple":
            out.append(f"{n.kind} node {n.id} must be simple, not {n.cell_type}")
        if n.cell_type not in CELL_TYPES:
            out.append(f"node {n.id} has unknown cell type {n.cell_type!r}")
        elif n.kind != "input" and len(n.cell_parameters) != param_count(n.cell_type):
            out.append(f"node {n.id} has {len(n.cell_parameters)} parameters, "
                       f"{n.cell_type} needs {param_count(n.cell_type)}")
        if not all(np.isfinite(n.cell_parameters)):
            out.append(f"node {n.id} has non-finite parameters")
    for e in g.edges:
        src, tgt = nodes.get(e.source), nodes.get(e.target)
        if src is None or tgt is None:
            out.append(f"dangling edge {e.id} ({e.source}->{e.target})")
            continue
        if tgt.kind == "input":
            out.append(f"edge {e.id} targets input node {tgt.id}")
        if e.recurrent_depth < 0:
            out.append(f"edge {e.id} has negative recurrent depth")
        elif e.recurrent_depth == 0 and not src.depth < tgt.depth:
            out.append(f"depth violation: feedforward edge {e.id} from depth {src.depth} "
                       f"to depth {tgt.depth}")
        if not np.isfinite(e.weight):
            out.append(f"edge {e.id} has non-finite weight")
    for kind in ("input", "output"):
        cols = [n.column for n in g.nodes if n.kind == kind]
        if len(set(cols)) != len(cols):
            out.append(f"several {kind} nodes share a column")
        if any(c < 0 for c in cols):
            out.append(f"{kind} node without a column")
    if g.fitness is not None and g.fitness < 0:
        out.append(f"negative fitness {g.fitness}")
    out.extend(_cycle_violations(g))
    return out


def _cycle_violations(g: Genome) -> list[str]:
    # Independent of depths: Kahn's algorithm over feedforward edges.
    nodes = {n.id for n in g.nodes}
    ff = [(e.source, e.target) for e in g.edges
          if e.recurrent_depth == 0 and e.source in nodes and e.target in nodes]
    indeg = {n: 0 for n in nodes}
    succ: dict[int, list[int]] = {n: [] for n in nodes}
    for s, t in ff:
        indeg[t] += 1
        succ[s].append(t)
    stack = [n for n, d in indeg.items() if d == 0]
    visited = 0
    while stack:
        n = stack.pop()
        visited += 1
        for m in succ[n]:
            indeg[m] -= 1
            if indeg[m] == 0:
                stack.append(m)
    return [] if visited == len(nodes) else ["cycle in feedforward subgraph"]


def active_nodes(g: Genome) -> set[int]:
    """Nodes that take part in execution.

    Inputs and outputs always run. A hidden node runs only if some enabled
    path (feedforward or recurrent) reaches it from an input and continues to
    an output; other hidden nodes are dormant.
    """
    fwd: dict[int, list[int]] = {n.id: [] for n in g.nodes}
    bwd: dict[int, list[int]] = {n.id: [] for n in g.nodes}
    for e in g.edges:
        if e.enabled and e.source in fwd and e.target in fwd:
            fwd[e.source].append(e.target)
            bwd[e.target].append(e.source)
    reach_in = _reach([n.id for n in g.nodes if n.kind == "input"], fwd)
    reach_out = _reach([n.id for n in g.nodes if n.kind == "output"], bwd)
    return {n.id for n in g.nodes
            if n.kind != "hidden" or (n.id in reach_in and n.id in reach_out)}


def dormant_nodes(g: Genome) -> set[int]:
    return {n.id for n in g.nodes} - active_nodes(g)


def _reach(starts: Iterable[int], adj: dict[int, list[int]]) -> set[int]:
    seen = set(starts)
    stack = list(seen)
    while stack:
        for m in adj[stack.pop()]:
            if m not in seen:
                seen.add(m)
                stack.append(m)
    return seen


def export_dot(g: Genome, name: str = "genome") -> str:
    """Graphviz rendering: blue positive / red negative weights, dotted
    recurrent edges. Disabled edges are not drawn."""
    violations = validate(g)
    if violations:
        raise InvalidGenomeError(violations)
    dormant = dormant_nodes(g)
    lines = [f"digraph {name} {{", "  rankdir=LR;", "  node [shape=circle, fontsize=10];"]
    for kind, rank in (("input", "source"), ("output", "sink")):
        ids = " ".join(f"n{n.id};" for n in g.nodes if n.kind == kind)
        lines.append(f"  {{ rank={rank}; {ids} }}")
    for n in sorted(g.nodes, key=lambda n: (n.depth, n.id)):
        label = f"{n.kind} {n.id}" if n.kind != "hidden" else f"{n.cell_type}\\n{n.id}"
        if n.kind != "hidden":
            label += f"\\ncol {n.column}"
        attrs = [f'label="{label}"']
        if n.kind == "input":
            attrs.append("shape=box")
        elif n.kind == "output":
            attrs.append("shape=doublecircle")
        if n.id in dormant:
            attrs.append('style=dashed, fontcolor="gray"')
        lines.append(f"  n{n.id} [{', '.join(attrs)}];")
    for e in g.edges:
        if not e.enabled:
            continue
        color = "blue" if e.weight > 0 else "red" if e.weight < 0 else "black"
        style = "dotted" if e.recurrent else "solid"
        label = f'label="{e.recurrent_depth}", ' if e.recurrent else ""
        lines.append(f'  n{e.source} -> n{e.target} [{label}color="{color}", style={style}];')
    lines.append("}")
    return "\n".join(lines) + "\n"
