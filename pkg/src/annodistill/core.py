"""Data model, dataset IO, and synthetic data generation.

All types are immutable after construction and safe to share across threads.
Label indices are 0-based everywhere; prompt-facing names live in LabelSpace.
Feature vectors are caller-supplied (precomputed embeddings); nothing in this
package ever tokenizes text.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

PROB_ATOL = 1e-9


class DatasetFormatError(ValueError):
    """Malformed dataset file; carries the offending line number when known."""

    def __init__(self, message: str, *, path: str | os.PathLike | None = None, line: int | None = None):
        loc = ""
        if path is not None:
            loc += f"{path}"
        if line is not None:
            loc += f":{line}"
        super().__init__(f"{loc}: {message}" if loc else message)
        self.line = line


def is_prob_vector(values: np.ndarray, *, atol: float = PROB_ATOL) -> bool:
    """True when `values` is a valid probability vector (entries >= 0, sum == 1)."""
    v = np.asarray(values, dtype=float)
    return v.ndim == 1 and bool(np.all(v >= -atol)) and abs(float(v.sum()) - 1.0) <= atol


def check_prob_vector(values: np.ndarray, *, what: str = "probability vector") -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if not is_prob_vector(v):
        raise ValueError(f"invalid {what}: entries must be >= 0 and sum to 1 (got sum={v.sum()!r})")
    return v


def _frozen_array(values, *, dtype=float) -> np.ndarray:
    arr = np.asarray(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class LabelSpace:
    """Ordered category names, optionally with per-category descriptions for prompts."""

    names: tuple[str, ...]
    descriptions: tuple[str, ...] | None = None

    def __post_init__(self):
        names = tuple(self.names)
        object.__setattr__(self, "names", names)
        if len(names) < 2:
            raise ValueError("label space needs at least 2 categories")
        folded = [n.strip().casefold() for n in names]
        if len(set(folded)) != len(folded):
            raise ValueError("category names must be unique after case-folding and trimming")
        if self.descriptions is not None:
            descriptions = tuple(self.descriptions)
            object.__setattr__(self, "descriptions", descriptions)
            if len(descriptions) != len(names):
                raise ValueError("descriptions must match names one-to-one")

    @property
    def n_classes(self) -> int:
        return len(self.names)

    def to_dict(self) -> dict:
        out: dict = {"names": list(self.names)}
        if self.descriptions is not None:
            out["descriptions"] = list(self.descriptions)
        return out

    @classmethod
    def from_dict(cls, d: Mapping) -> "LabelSpace":
        desc = d.get("descriptions")
        return cls(names=tuple(d["names"]), descriptions=tuple(desc) if desc is not None else None)


@dataclass(frozen=True)
class CandidateSet:
    """Nonempty, sorted, deduplicated set of label indices attached to one sample."""

    labels: tuple[int, ...]

    def __post_init__(self):
        labels = tuple(sorted({int(c) for c in self.labels}))
        object.__setattr__(self, "labels", labels)
        if not labels:
            raise ValueError("candidate set must be nonempty")
        if labels[0] < 0:
            raise ValueError(f"negative label index {labels[0]}")

    @classmethod
    def of(cls, *labels: int) -> "CandidateSet":
        return cls(tuple(labels))

    def __contains__(self, label: int) -> bool:
        return label in self.labels

    def __len__(self) -> int:
        return len(self.labels)

    def __iter__(self):
        return iter(self.labels)

    def check_range(self, n_classes: int) -> "CandidateSet":
        if self.labels[-1] >= n_classes:
            raise ValueError(f"label out of range: {self.labels[-1]} >= C={n_classes}")
        return self


@dataclass(frozen=True)
class Sample:
    """One data point: id, feature vector, and optional text / views / gold label."""

    id: str
    features: np.ndarray
    text: str | None = None
    aug_features: tuple[np.ndarray, ...] | None = None
    gold: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "features", _frozen_array(self.features))
        if self.features.ndim != 1:
            raise ValueError(f"sample {self.id!r}: features must be a 1-D vector")
        if self.aug_features is not None:
            aug = tuple(_frozen_array(a) for a in self.aug_features)
            object.__setattr__(self, "aug_features", aug)
            for a in aug:
                if a.shape != self.features.shape:
                    raise ValueError(f"sample {self.id!r}: augmented view dimension mismatch")
        if self.gold is not None:
            object.__setattr__(self, "gold", int(self.gold))
            if self.gold < 0:
                raise ValueError(f"sample {self.id!r}: negative gold label")


@dataclass(frozen=True)
class Dataset:
    """A label space, samples, and an optional map sample-id -> CandidateSet.

    Balance across classes is not required; only the theory module assumes it.
    """

    label_space: LabelSpace
    samples: tuple[Sample, ...]
    candidates: Mapping[str, CandidateSet] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        object.__setattr__(self, "candidates", dict(self.candidates))
        C = self.label_space.n_classes
        seen: set[str] = set()
        dim: int | None = None
        for s in self.samples:
            if s.id in seen:
                raise ValueError(f"duplicate id {s.id!r}")
            seen.add(s.id)
            if dim is None:
                dim = s.features.shape[0]
            elif s.features.shape[0] != dim:
                raise ValueError(f"sample {s.id!r}: feature dimension {s.features.shape[0]} != {dim}")
            if s.gold is not None and not (0 <= s.gold < C):
                raise ValueError(f"sample {s.id!r}: gold label {s.gold} out of range for C={C}")
        for sid, cs in self.candidates.items():
            if sid not in seen:
                raise ValueError(f"candidate set for unknown sample id {sid!r}")
            cs.check_range(C)

    @property
    def n_classes(self) -> int:
        return self.label_space.n_classes

    @property
    def feature_dim(self) -> int:
        if not self.samples:
            raise ValueError("empty dataset has no feature dimension")
        return self.samples[0].features.shape[0]

    def __len__(self) -> int:
        return len(self.samples)

    def feature_matrix(self) -> np.ndarray:
        return np.stack([s.features for s in self.samples])

    def gold_labels(self) -> np.ndarray | None:
        """Gold labels as an int array, or None when any sample lacks one."""
        if any(s.gold is None for s in self.samples):
            return None
        return np.array([s.gold for s in self.samples], dtype=int)

    def with_candidates(self, candidates: Mapping[str, CandidateSet]) -> "Dataset":
        return Dataset(self.label_space, self.samples, candidates)


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    """Write text to `path` via a temp file + rename so partial files never survive."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _sample_to_record(s: Sample, candidates: Mapping[str, CandidateSet]) -> dict:
    rec: dict = {"id": s.id}
    if s.text is not None:
        rec["text"] = s.text
    rec["features"] = [float(x) for x in s.features]
    if s.aug_features is not None:
        rec["aug_features"] = [[float(x) for x in a] for a in s.aug_features]
    if s.gold is not None:
        rec["gold"] = s.gold
    if s.id in candidates:
        rec["candidates"] = list(candidates[s.id].labels)
    return rec


def save_dataset(dataset: Dataset, path: str | os.PathLike) -> None:
    """Write one JSON record per line, preceded by a label-space header line."""
    lines = [json.dumps({"label_space": dataset.label_space.to_dict()})]
    lines.extend(json.dumps(_sample_to_record(s, dataset.candidates)) for s in dataset.samples)
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_dataset(path: str | os.PathLike, label_space: LabelSpace | None = None) -> Dataset:
    """Parse a JSONL dataset file.

    The first line may be a header object {"label_space": {...}}; when absent,
    `label_space` must be supplied by the caller. Every record is validated
    (dimensions, id uniqueness, gold and candidate ranges) and errors report
    the 1-based line number.
    """
    path = Path(path)
    samples: list[Sample] = []
    candidates: dict[str, CandidateSet] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as e:
                raise DatasetFormatError(f"malformed JSON ({e.msg})", path=path, line=lineno) from e
            if not isinstance(rec, dict):
                raise DatasetFormatError("record must be an object", path=path, line=lineno)
            if "label_space" in rec:
                if lineno != 1:
                    raise DatasetFormatError("label_space header only allowed on line 1", path=path, line=lineno)
                label_space = LabelSpace.from_dict(rec["label_space"])
                continue
            if "id" not in rec or "features" not in rec:
                raise DatasetFormatError("record needs 'id' and 'features'", path=path, line=lineno)
            try:
                sample = Sample(
                    id=str(rec["id"]),
                    features=np.asarray(rec["features"], dtype=float),
                    text=rec.get("text"),
                    aug_features=tuple(np.asarray(a, dtype=float) for a in rec["aug_features"])
                    if rec.get("aug_features")
                    else None,
                    gold=rec.get("gold"),
                )
            except (TypeError, ValueError) as e:
                raise DatasetFormatError(str(e), path=path, line=lineno) from e
            if sample.id in {s.id for s in samples}:
                raise DatasetFormatError(f"duplicate id {sample.id!r}", path=path, line=lineno)
            samples.append(sample)
            if rec.get("candidates") is not None:
                try:
                    candidates[sample.id] = CandidateSet(tuple(rec["candidates"]))
                except (TypeError, ValueError) as e:
                    raise DatasetFormatError(str(e), path=path, line=lineno) from e
    if label_space is None:
        raise DatasetFormatError("no label_space header and none supplied", path=path)
    try:
        return Dataset(label_space, tuple(samples), candidates)
    except ValueError as e:
        raise DatasetFormatError(str(e), path=path) from e


@dataclass(frozen=True)
class CandidateNoiseSpec:
    """Target statistics for synthetic candidate sets.

    inclusion: probability that a set contains the gold label.
    mean_size: expected set size; distractors are drawn uniformly without
    replacement until this is met in expectation.
    """

    inclusion: float
    mean_size: float

    def __post_init__(self):
        if not 0.0 <= self.inclusion <= 1.0:
            raise ValueError(f"inclusion rate must be in [0, 1], got {self.inclusion}")
        if self.mean_size < 1.0:
            raise ValueError(f"mean set size must be >= 1, got {self.mean_size}")

    def check_feasible(self, n_classes: int) -> None:
        # sets lacking gold can hold at most C-1 labels
        max_mean = self.inclusion * n_classes + (1.0 - self.inclusion) * (n_classes - 1)
        if self.mean_size > max_mean + 1e-12:
            raise ValueError(
                f"mean set size {self.mean_size} infeasible for C={n_classes} at inclusion {self.inclusion}"
            )


def _class_means(C: int, d: int, sep: float, rng: np.random.Generator) -> np.ndarray:
    """Class means with pairwise distance `sep` (exact when C <= d)."""
    if C <= d:
        g = rng.standard_normal((d, C))
        q, _ = np.linalg.qr(g)
        # orthonormal columns scaled so ||mu_i - mu_j|| == sep
        return (sep / math.sqrt(2.0)) * q[:, :C].T
    means = rng.standard_normal((C, d))
    dists = np.linalg.norm(means[:, None, :] - means[None, :, :], axis=-1)
    avg = dists[np.triu_indices(C, k=1)].mean()
    return means * (sep / avg)


def _draw_candidate_set(gold: int, C: int, spec: CandidateNoiseSpec, rng: np.random.Generator) -> CandidateSet:
    include_gold = rng.random() < spec.inclusion
    others = [c for c in range(C) if c != gold]
    if include_gold:
        chosen = {gold}
    else:
        chosen = {int(rng.choice(others))}
    # extra distractors so that E[|s|] == mean_size; each set already holds one
    # seed element; gold never enters through the distractor pool, keeping the
    # inclusion rate exact
    extra_mean = spec.mean_size - 1.0
    k = int(math.floor(extra_mean))
    if rng.random() < (extra_mean - k):
        k += 1
    pool = [c for c in others if c not in chosen]
    k = min(k, len(pool))
    if k > 0:
        chosen.update(int(c) for c in rng.choice(pool, size=k, replace=False))
    return CandidateSet(tuple(chosen))


def gen_synthetic(
    C: int,
    per_class: int,
    d: int,
    sep: float,
    noise_spec: CandidateNoiseSpec,
    seed: int,
) -> Dataset:
    """Gaussian-cluster dataset with candidate sets matching `noise_spec`.

    Pure function of its arguments including `seed`: identical inputs produce
    byte-identical datasets. Gold labels are retained for evaluation.
    """
    if C < 2:
        raise ValueError("C must be >= 2")
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    if sep <= 0:
        raise ValueError("sep must be > 0")
    noise_spec.check_feasible(C)
    rng = np.random.default_rng(seed)
    means = _class_means(C, d, sep, rng)
    samples: list[Sample] = []
    candidates: dict[str, CandidateSet] = {}
    for cls in range(C):
        cluster = means[cls] + rng.standard_normal((per_class, d))
        for j in range(per_class):
            sid = f"s{cls:02d}-{j:05d}"
            samples.append(Sample(id=sid, features=cluster[j], gold=cls))
            candidates[sid] = _draw_candidate_set(cls, C, noise_spec, rng)
    space = LabelSpace(names=tuple(f"class_{c}" for c in range(C)))
    return Dataset(space, tuple(samples), candidates)
