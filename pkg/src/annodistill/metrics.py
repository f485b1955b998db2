"""Annotation-quality statistics for single and candidate annotations.

Three statistics describe how well a batch of candidate sets prunes the label
space: the gold-inclusion rate (fraction of sets containing the gold label),
the coverage (average fraction of labels pruned away, per-sample
(C - |s|) / (C - 1)), and their harmonic-style F1 combination.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from annodistill.core import CandidateSet


def gold_inclusion_rate(candidates: Sequence[CandidateSet], gold: Sequence[int]) -> float:
    """Fraction of candidate sets containing the gold label (the complement of the miss rate)."""
    if len(candidates) != len(gold):
        raise ValueError(f"length mismatch: {len(candidates)} candidate sets vs {len(gold)} gold labels")
    if not candidates:
        raise ValueError("need at least one sample")
    hits = sum(1 for s, y in zip(candidates, gold) if int(y) in s)
    return hits / len(candidates)


def beta_coverage(candidates: Sequence[CandidateSet], C: int) -> float:
    """Average per-sample search-space pruning (C - |s|) / (C - 1); 1 for singletons, 0 for full sets."""
    if C < 2:
        raise ValueError("C must be >= 2")
    if not candidates:
        raise ValueError("need at least one sample")
    total = 0.0
    for s in candidates:
        if len(s) > C:
            raise ValueError(f"candidate set size {len(s)} exceeds C={C}")
        total += (C - len(s)) / (C - 1)
    return total / len(candidates)


def f1_score(one_minus_alpha: float, beta: float) -> float:
    """Harmonic-style combination 2*(1-alpha)*beta / ((1-alpha) + beta); 0 when both are 0."""
    denom = one_minus_alpha + beta
    if denom <= 0.0:
        return 0.0
    return 2.0 * one_minus_alpha * beta / denom


@dataclass(frozen=True)
class AssessmentReport:
    """Aggregate annotation quality for one batch of candidate sets."""

    one_minus_alpha: float
    beta: float
    f1: float
    mean_set_size: float
    n: int
    accuracy: float | None = None  # defined only when every set is a singleton

    def csv_row(self, dataset: str = "-", strategy: str = "-") -> str:
        return (
            f"{dataset},{strategy},{self.n},{self.one_minus_alpha:.6f},"
            f"{self.mean_set_size:.6f},{self.beta:.6f},{self.f1:.6f}"
        )

    CSV_HEADER = "dataset,strategy,n,one_minus_alpha,mean_set_size,beta,f1"


def assess(candidates: Sequence[CandidateSet], gold: Sequence[int], C: int) -> AssessmentReport:
    """Full quality report; singleton-only inputs additionally report accuracy.

    Accuracy for non-singleton candidate sets is undefined and omitted rather
    than approximated.
    """
    if not candidates:
        raise ValueError("cannot assess an empty batch")
    oma = gold_inclusion_rate(candidates, gold)
    beta = beta_coverage(candidates, C)
    mean_size = sum(len(s) for s in candidates) / len(candidates)
    accuracy = oma if all(len(s) == 1 for s in candidates) else None
    return AssessmentReport(
        one_minus_alpha=oma,
        beta=beta,
        f1=f1_score(oma, beta),
        mean_set_size=mean_size,
        n=len(candidates),
        accuracy=accuracy,
    )
