"""Candidate-annotation distillation engine.

Elicits multi-label (candidate) annotations from a chat-completion endpoint,
measures their quality, distills them into a single-label classifier through
an iteratively refined soft-target pipeline, and numerically verifies the
noise-tolerance behaviour of teacher/student distillation with closed-form
and brute-force oracles.
"""

from annodistill.core import (
    CandidateNoiseSpec,
    CandidateSet,
    Dataset,
    DatasetFormatError,
    LabelSpace,
    Sample,
    gen_synthetic,
    load_dataset,
    save_dataset,
)
from annodistill.metrics import AssessmentReport, assess, beta_coverage, f1_score, gold_inclusion_rate

__version__ = "0.1.0"

__all__ = [
    "AssessmentReport",
    "CandidateNoiseSpec",
    "CandidateSet",
    "Dataset",
    "DatasetFormatError",
    "LabelSpace",
    "Sample",
    "assess",
    "beta_coverage",
    "f1_score",
    "gen_synthetic",
    "gold_inclusion_rate",
    "load_dataset",
    "save_dataset",
    "__version__",
]
