"""Paired comparison statistics: one-sided Wilcoxon signed-rank, Cliff's delta, win/tie/loss."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Dict, Mapping, Optional, Tuple

import numpy as np
from scipy.stats import rankdata

__all__ = [
    "PairedSample",
    "StatsReport",
    "NoNonzeroDifferences",
    "EXACT_MAX_N",
    "MAGNITUDE_CUTOFFS",
    "wilcoxon_one_sided",
    "signed_rank_statistic",
    "cliffs_delta",
    "classify_magnitude",
    "win_tie_loss",
    "analyze",
    "format_table",
]

EXACT_MAX_N = 25
# scores derived from different count pairs can differ in the last ulp
ZERO_TOL = 1e-12
MAGNITUDE_CUTOFFS = ((0.147, "negligible"), (0.33, "small"), (0.474, "medium"))
_SUPERSCRIPT = {"negligible": "N", "small": "S", "medium": "M", "large": "L"}


class NoNonzeroDifferences(ValueError):
    effective_n = 0


@dataclass(frozen=True)
class PairedSample:
    labels: Tuple[str, ...]
    a: Tuple[float, ...]
    b: Tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "a", tuple(float(x) for x in self.a))
        object.__setattr__(self, "b", tuple(float(x) for x in self.b))
        if not (len(self.a) == len(self.b) == len(self.labels)):
            raise ValueError("labels, a and b must have equal length")
        if not self.a:
            raise ValueError("a paired sample needs at least one pair")

    @classmethod
    def from_lists(cls, a, b, labels=None) -> "PairedSample":
        labels = labels if labels is not None else [str(i) for i in range(len(a))]
        return cls(tuple(labels), tuple(a), tuple(b))

    @property
    def n(self) -> int:
        return len(self.a)


@dataclass
class StatsReport:
    n: int
    p_value: Optional[float]
    effective_n: int
    w_plus: Optional[float]
    delta: float
    magnitude: str
    wins: int
    ties: int
    losses: int
    method: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def _nonzero_differences(s: PairedSample) -> np.ndarray:
    d = np.asarray(s.a) - np.asarray(s.b)
    return d[np.abs(d) > ZERO_TOL]


def _ranks(abs_d: np.ndarray) -> np.ndarray:
    # round before ranking so ulp-level noise does not split genuine ties
    return rankdata(np.round(abs_d, 12), method="average")


def signed_rank_statistic(s: PairedSample) -> Tuple[float, int]:
    """W+ (sum of ranks of positive differences) and the effective n."""
    d = _nonzero_differences(s)
    if d.size == 0:
        return 0.0, 0
    ranks = _ranks(np.abs(d))
    return float(ranks[d > 0].sum()), int(d.size)


def _exact_upper_tail(ranks: np.ndarray, w_plus: float) -> float:
    # doubled average ranks are integers; DP over achievable rank sums
    doubled = np.rint(ranks * 2).astype(np.int64)
    total = int(doubled.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    reach = 0
    for r in doubled:
        counts[r:reach + r + 1] += counts[:reach + 1].copy()
        reach += r
    threshold = int(round(w_plus * 2))
    return float(counts[threshold:].sum() / 2.0 ** len(doubled))


def _normal_upper_tail(ranks: np.ndarray, w_plus: float) -> float:
    n = len(ranks)
    mean = n * (n + 1) / 4.0
    _, tie_sizes = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(tie_sizes ** 3 - tie_sizes)) / 48.0
    z = (w_plus - mean - 0.5) / math.sqrt(var)
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def wilcoxon_one_sided(s: PairedSample, exact_max_n: int = EXACT_MAX_N) -> Tuple[float, int]:
    """One-sided p-value for H1: a > b, and the count of nonzero differences.

    Zero differences are dropped. Exact null distribution for up to
    ``exact_max_n`` nonzero pairs, normal approximation with continuity and
    tie correction beyond that.
    """
    d = _nonzero_differences(s)
    if d.size == 0:
        raise NoNonzeroDifferences("no nonzero differences: the signed-rank test is undefined")
    ranks = _ranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    if d.size <= exact_max_n:
        p = _exact_upper_tail(ranks, w_plus)
    else:
        p = _normal_upper_tail(ranks, w_plus)
    return min(1.0, p), int(d.size)


def cliffs_delta(s: PairedSample, paired: bool = False) -> float:
    """Dominance of a over b across all N*N cross pairs.

    ``paired=True`` gives the within-pair variant, (#a_i>b_i - #a_i<b_i) / N.
    """
    a, b = np.asarray(s.a), np.asarray(s.b)
    if paired:
        return float(np.sign(a - b).sum() / len(a))
    dom = np.sign(a[:, None] - b[None, :])
    return float(dom.sum() / (len(a) * len(b)))


def classify_magnitude(delta: float) -> str:
    ad = abs(delta)
    for cutoff, name in MAGNITUDE_CUTOFFS:
        if ad < cutoff:
            return name
    return "large"


def win_tie_loss(s: PairedSample) -> Tuple[int, int, int]:
    w = t = l = 0
    for x, y in zip(s.a, s.b):
        if abs(x - y) <= ZERO_TOL:
            t += 1
        elif x > y:
            w += 1
        else:
            l += 1
    return w, t, l


def analyze(s: PairedSample, paired_delta: bool = False) -> StatsReport:
    delta = cliffs_delta(s, paired=paired_delta)
    w, t, l = win_tie_loss(s)
    w_plus, eff_n = signed_rank_statistic(s)
    if eff_n == 0:
        p, method = None, "undefined (no nonzero differences)"
    else:
        p, _ = wilcoxon_one_sided(s)
        method = "exact" if eff_n <= EXACT_MAX_N else "normal approximation"
    return StatsReport(s.n, p, eff_n, w_plus if eff_n else None, delta,
                       classify_magnitude(delta), w, t, l, method)


def format_table(reports: Mapping[str, StatsReport], title: str = "") -> str:
    """Plain-text table, one row per metric level: p, delta^magnitude, W/T/L."""
    header = f"{'Level':<8}{'p (one-sided)':>16}{'eff. n':>8}{'delta':>10}  {'W/T/L':<12}"
    lines = [title] if title else []
    lines += [header, "-" * len(header)]
    for level, r in reports.items():
        if r.p_value is None:
            p = "n/a"
        else:
            mark = "*" if r.p_value < 0.05 else "ns"
            p = f"{r.p_value:.4g}{mark}"
        delta = f"{r.delta:.2f}{_SUPERSCRIPT[r.magnitude]}"
        lines.append(f"{level:<8}{p:>16}{r.effective_n:>8}{delta:>10}  "
                     f"({r.wins}/{r.ties}/{r.losses})")
    lines.append("")
    lines.append("Effect size: L large (|d| >= 0.474), M medium (>= 0.33), S small (>= 0.147), "
                 "N negligible (< 0.147). * p < 0.05, ns not significant.")
    return "\n".join(lines) + "\n"


def stats_reports_to_json(reports: Mapping[str, StatsReport]) -> Dict[str, dict]:
    return {level: r.to_dict() for level, r in reports.items()}
