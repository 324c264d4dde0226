"""Node, edge and path matching with micro and per-flowchart aggregation.

Matching is exact (case-sensitive, no normalization) and one-to-one: each
ground-truth item can be claimed by at most one prediction.
"""
from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import dataclass
from typing import Dict, Hashable, Iterable, List, Mapping, Sequence, Tuple

from .flowgraph import enumerate_paths, to_graph
from .mermaid import FlowchartAst

__all__ = [
    "LEVELS",
    "MatchCounts",
    "Score",
    "ScoreCard",
    "match_multiset",
    "score",
    "micro_aggregate",
    "per_flowchart_aggregate",
    "node_keys",
    "edge_keys",
    "path_keys",
    "level_keys",
    "compare_asts",
    "empty_prediction_counts",
    "records_to_csv",
    "counts_to_row",
]

LEVELS = ("node", "edge", "path")


@dataclass(frozen=True)
class MatchCounts:
    tp: int = 0
    fp: int = 0
    fn_: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn_) < 0:
            raise ValueError("counts must be non-negative")

    def __add__(self, other: "MatchCounts") -> "MatchCounts":
        return MatchCounts(self.tp + other.tp, self.fp + other.fp, self.fn_ + other.fn_)


@dataclass(frozen=True)
class Score:
    precision: float
    recall: float
    f1: float


ScoreCard = Dict[str, Score]


def match_multiset(pred: Iterable[Hashable], truth: Iterable[Hashable]) -> MatchCounts:
    p, t = Counter(pred), Counter(truth)
    tp = sum(min(c, t[k]) for k, c in p.items())
    return MatchCounts(tp, sum(p.values()) - tp, sum(t.values()) - tp)


def score(counts: MatchCounts) -> Score:
    tp, fp, fn = counts.tp, counts.fp, counts.fn_
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return Score(p, r, f1)


def _pool(records: Sequence[Mapping[str, MatchCounts]]) -> Dict[str, MatchCounts]:
    pooled = {}
    for rec in records:
        for level, c in rec.items():
            pooled[level] = pooled.get(level, MatchCounts()) + c
    return pooled


def micro_aggregate(records: Sequence[Mapping[str, MatchCounts]]) -> ScoreCard:
    """Sum TP/FP/FN over every flowchart-run record, then score once per level."""
    if not records:
        raise ValueError("nothing to aggregate")
    return {level: score(c) for level, c in _pool(records).items()}


def per_flowchart_aggregate(runs: Sequence[Mapping[str, MatchCounts]]) -> ScoreCard:
    """Pool one flowchart's runs; the result is that flowchart's paired observation."""
    if not runs:
        raise ValueError("a flowchart needs at least one run")
    return {level: score(c) for level, c in _pool(runs).items()}


def node_keys(ast: FlowchartAst) -> List[str]:
    return [n.label for n in ast.nodes]


def edge_keys(ast: FlowchartAst) -> List[Tuple[str, str, str]]:
    g = to_graph(ast)
    return [(g.label(s), g.label(t), lbl) for s, t, lbl in g.arcs()]


def path_keys(ast: FlowchartAst) -> List[Tuple[str, ...]]:
    return [p.node_labels for p in enumerate_paths(to_graph(ast))]


def level_keys(ast: FlowchartAst) -> Dict[str, list]:
    return {"node": node_keys(ast), "edge": edge_keys(ast), "path": path_keys(ast)}


def compare_asts(pred: FlowchartAst, truth: FlowchartAst) -> Dict[str, MatchCounts]:
    pk, tk = level_keys(pred), level_keys(truth)
    return {level: match_multiset(pk[level], tk[level]) for level in LEVELS}


def empty_prediction_counts(truth: FlowchartAst) -> Dict[str, MatchCounts]:
    """Counts for an unusable prediction: everything in the truth is missed."""
    return {level: MatchCounts(0, 0, len(keys)) for level, keys in level_keys(truth).items()}


_CSV_FIELDS = ("flowchart_id", "condition", "level", "tp", "fp", "fn", "p", "r", "f1")


def records_to_csv(rows: Iterable[Mapping]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=_CSV_FIELDS, extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


def counts_to_row(flowchart_id: str, condition: str, level: str, c: MatchCounts) -> dict:
    s = score(c)
    return {"flowchart_id": flowchart_id, "condition": condition, "level": level,
            "tp": c.tp, "fp": c.fp, "fn": c.fn_, "p": s.precision, "r": s.recall, "f1": s.f1}
