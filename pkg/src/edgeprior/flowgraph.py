"""Control-flow graph construction and entry-to-terminal path enumeration."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

from .mermaid import FlowchartAst

__all__ = [
    "FlowGraph",
    "Path",
    "PathExplosionError",
    "MAX_PATHS",
    "MAX_NODE_VISITS",
    "to_graph",
    "entries_and_terminals",
    "enumerate_paths",
]

MAX_PATHS = 100_000
# a node may appear at most twice on a path: each loop body is unrolled once
MAX_NODE_VISITS = 2


class PathExplosionError(RuntimeError):
    pass


@dataclass
class FlowGraph:
    nodes: List[Tuple[str, str]] = field(default_factory=list)
    adjacency: Dict[str, List[Tuple[str, str]]] = field(default_factory=dict)

    def label(self, node_id: str) -> str:
        return self._labels[node_id]

    @property
    def _labels(self) -> Dict[str, str]:
        return dict(self.nodes)

    def node_ids(self) -> List[str]:
        return [nid for nid, _ in self.nodes]

    def arcs(self) -> List[Tuple[str, str, str]]:
        return [(s, t, lbl) for s in self.node_ids() for t, lbl in self.adjacency.get(s, [])]

    def add_arc(self, source: str, target: str, label: str = "") -> None:
        out = self.adjacency.setdefault(source, [])
        if (target, label) not in out:
            out.append((target, label))

    def to_json(self) -> dict:
        return {
            "nodes": [{"id": nid, "label": lbl} for nid, lbl in self.nodes],
            "edges": [{"source": s, "target": t, "label": lbl} for s, t, lbl in self.arcs()],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), ensure_ascii=False, indent=2)

    @classmethod
    def from_json(cls, doc: dict) -> "FlowGraph":
        g = cls(nodes=[(n["id"], n["label"]) for n in doc["nodes"]])
        g.adjacency = {nid: [] for nid, _ in g.nodes}
        for e in doc["edges"]:
            g.add_arc(e["source"], e["target"], e.get("label", ""))
        return g


@dataclass(frozen=True)
class Path:
    node_labels: Tuple[str, ...]
    node_ids: Tuple[str, ...] = ()

    def __len__(self):
        return len(self.node_labels)


def to_graph(ast: FlowchartAst) -> FlowGraph:
    g = FlowGraph(nodes=[(n.id, n.label) for n in ast.nodes])
    g.adjacency = {n.id: [] for n in ast.nodes}
    for e in ast.edges:
        g.add_arc(e.source, e.target, e.label)
    return g


def entries_and_terminals(g: FlowGraph):
    indeg = {nid: 0 for nid in g.node_ids()}
    for _, t, _ in g.arcs():
        indeg[t] += 1
    entries = [nid for nid in g.node_ids() if indeg[nid] == 0]
    terminals = [nid for nid in g.node_ids() if not g.adjacency.get(nid)]
    return entries, terminals


def enumerate_paths(g: FlowGraph, max_paths: int = MAX_PATHS) -> List[Path]:
    """All entry-to-terminal paths with each node visited at most twice.

    Results are deduplicated and sorted by their node-id sequence.
    """
    entries, terminals = entries_and_terminals(g)
    terminal_set = set(terminals)
    if not entries or not terminal_set:
        return []
    # parallel arcs with different labels lead to the same node sequence
    succ = {nid: list(dict.fromkeys(t for t, _ in g.adjacency.get(nid, []))) for nid in g.node_ids()}
    found = set()

    for entry in entries:
        counts = {entry: 1}
        stack = [entry]
        iters = [iter(succ[entry])]
        if entry in terminal_set:
            found.add((entry,))
        while iters:
            nxt = next(iters[-1], None)
            if nxt is None:
                iters.pop()
                node = stack.pop()
                counts[node] -= 1
                continue
            if counts.get(nxt, 0) >= MAX_NODE_VISITS:
                continue
            stack.append(nxt)
            counts[nxt] = counts.get(nxt, 0) + 1
            if nxt in terminal_set:
                found.add(tuple(stack))
                if len(found) > max_paths:
                    raise PathExplosionError(f"more than {max_paths} paths; refusing to enumerate further")
                stack.pop()
                counts[nxt] -= 1
                continue
            iters.append(iter(succ[nxt]))

    labels = g._labels
    return [Path(tuple(labels[n] for n in ids), ids) for ids in sorted(found)]
