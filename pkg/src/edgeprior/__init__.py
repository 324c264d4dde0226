"""Flowchart images to validated Mermaid code, with Canny edge maps as a structural prior."""
from .estimators import CannyEdgeDetector, FlowchartConverter, FlowchartPreprocessor, NoiseProfiler
from .flowgraph import FlowGraph, Path, entries_and_terminals, enumerate_paths, to_graph
from .imaging import (CANNY_CONFIGS, CannyParams, EdgeMap, RasterImage, adaptive_rescale, canny,
                      normalize_alpha, preprocess)
from .mermaid import FlowchartAst, ParseDiagnostics, emit, parse, sanitize, validate
from .metrics import MatchCounts, match_multiset, micro_aggregate, per_flowchart_aggregate, score
from .repair import RepairOutcome, repair_loop
from .stats import PairedSample, StatsReport, classify_magnitude, cliffs_delta, win_tie_loss, wilcoxon_one_sided

__version__ = "0.1.0"

__all__ = [
    "CannyEdgeDetector", "FlowchartConverter", "FlowchartPreprocessor", "NoiseProfiler",
    "FlowGraph", "Path", "entries_and_terminals", "enumerate_paths", "to_graph",
    "CANNY_CONFIGS", "CannyParams", "EdgeMap", "RasterImage", "adaptive_rescale", "canny",
    "normalize_alpha", "preprocess",
    "FlowchartAst", "ParseDiagnostics", "emit", "parse", "sanitize", "validate",
    "MatchCounts", "match_multiset", "micro_aggregate", "per_flowchart_aggregate", "score",
    "RepairOutcome", "repair_loop",
    "PairedSample", "StatsReport", "classify_magnitude", "cliffs_delta", "win_tie_loss",
    "wilcoxon_one_sided",
]
