"""Prompt construction, chat-completion clients, response parsing, and
aggregation of repeated candidate annotations.

Every live request/response pair can be appended to a replay log whose format
doubles as the offline fixture format, so any run is reproducible without the
endpoint. Tie-breaking everywhere favors the lower label index.
"""

from __future__ import annotations

import json
import logging
import os
import re
import threading
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Literal, Mapping, Sequence

import numpy as np

from annodistill.core import CandidateSet, Dataset, LabelSpace, Sample, atomic_write_text

logger = logging.getLogger(__name__)

ANNOTATE_TEMPERATURE = 0.3
SELF_CONSISTENCY_TEMPERATURE = 0.5


class NoLabelFound(ValueError):
    """A response matched no category name or alias."""


class FixtureMiss(KeyError):
    """Replay fixture has no entry for the requested sample."""


class TransportError(RuntimeError):
    """Endpoint unreachable after the configured retries."""


# ---------------------------------------------------------------------------
# strategies and prompts

SA_CLAUSE = "into one"
CA_ADD_CLAUSE = "If you are unsure about your answer, please include other potential choices."
CA_ALL_CLAUSE = "with all possible choices"
SELECT_CLAUSE = "Please select the correct answer from them."


class StrategyKind(str, Enum):
    SA = "sa"
    CA_ADD = "ca_add"
    CA_ALL = "ca_all"
    SELECT_FROM_CANDIDATES = "select"


_DEFAULT_TEMPLATES = {
    StrategyKind.SA: (
        "{preamble}{few_shot}Given the text: {text}\n"
        "What is it about? Please identify it into one of the following types: {category_list}."
    ),
    StrategyKind.CA_ADD: (
        "{preamble}{few_shot}Given the text: {text}\n"
        "What is it about? Please identify it into one of the following types: {category_list}. "
        + CA_ADD_CLAUSE
    ),
    StrategyKind.CA_ALL: (
        "{preamble}{few_shot}Given the text: {text}\n"
        "What is it about? Please identify it with all possible choices of the following types: {category_list}."
    ),
    StrategyKind.SELECT_FROM_CANDIDATES: (
        "{preamble}{few_shot}Given the text: {text}\n"
        "What is it about? It is known that the answer belongs to one of the following classes: "
        "{candidate_list}. " + SELECT_CLAUSE
    ),
}

_REQUIRED_CLAUSE = {
    StrategyKind.SA: SA_CLAUSE,
    StrategyKind.CA_ADD: CA_ADD_CLAUSE,
    StrategyKind.CA_ALL: CA_ALL_CLAUSE,
    StrategyKind.SELECT_FROM_CANDIDATES: SELECT_CLAUSE,
}


@dataclass(frozen=True)
class PromptStrategy:
    """A prompting strategy plus its render template.

    Templates use the slots {preamble}, {few_shot}, {text}, {category_list}
    and, for select-from-candidates, {candidate_list}.
    """

    kind: StrategyKind
    template: str = ""

    def __post_init__(self):
        kind = StrategyKind(self.kind)
        object.__setattr__(self, "kind", kind)
        template = self.template or _DEFAULT_TEMPLATES[kind]
        object.__setattr__(self, "template", template)
        clause = _REQUIRED_CLAUSE[kind]
        if clause not in template:
            raise ValueError(f"{kind.value} template must contain the clause {clause!r}")
        slot = "{candidate_list}" if kind is StrategyKind.SELECT_FROM_CANDIDATES else "{category_list}"
        if slot not in template:
            raise ValueError(f"{kind.value} template must contain the {slot} slot")
        if "{text}" not in template:
            raise ValueError("template must contain the {text} slot")


def render_category_list(label_space: LabelSpace) -> str:
    return "; ".join(label_space.names)


def render_few_shot_block(entries: Sequence["PoolEntry"], label_space: LabelSpace) -> str:
    """Demonstrations in the given order (callers pass them sorted by
    descending similarity)."""
    if not entries:
        return ""
    lines = []
    for e in entries:
        names = "; ".join(label_space.names[c] for c in e.labels)
        lines.append(f"Text: {e.text}\nAnswer: {names}")
    return "\n".join(lines) + "\n"


def build_prompt(
    sample: Sample,
    strategy: PromptStrategy,
    label_space: LabelSpace,
    few_shot: Sequence["PoolEntry"] = (),
    *,
    preamble: str = "",
    candidates: CandidateSet | None = None,
) -> str:
    """Deterministic prompt rendering; identical inputs give identical strings."""
    if sample.text is None:
        raise ValueError(f"sample {sample.id!r} has no text")
    values = {
        "preamble": preamble,
        "few_shot": render_few_shot_block(few_shot, label_space),
        "text": sample.text,
        "category_list": render_category_list(label_space),
    }
    if strategy.kind is StrategyKind.SELECT_FROM_CANDIDATES:
        if candidates is None:
            raise ValueError("select-from-candidates prompts need a candidate set")
        values["candidate_list"] = "; ".join(label_space.names[c] for c in candidates.labels)
    try:
        return strategy.template.format(**values)
    except (KeyError, IndexError) as e:
        raise ValueError(f"template slot unresolved: {e}") from e


# ---------------------------------------------------------------------------
# reference label space (question-topic classification, 6 coarse classes)

TREC_LABEL_SPACE = LabelSpace(
    names=(
        "Abbreviation",
        "Description and abstract concepts",
        "Entities",
        "Human beings",
        "Locations",
        "Numeric values",
    )
)

TREC_CODES = ("ABBR", "DESC", "ENTY", "HUM", "LOC", "NUM")

TREC_ALIASES: dict[str, int] = {
    "abbr": 0,
    "abbreviation": 0,
    "abbreviations": 0,
    "desc": 1,
    "description": 1,
    "descriptions": 1,
    "description and abstract concept": 1,
    "abstract concept": 1,
    "abstract concepts": 1,
    "enty": 2,
    "entity": 2,
    "entities": 2,
    "hum": 3,
    "human": 3,
    "humans": 3,
    "human being": 3,
    "person": 3,
    "people": 3,
    "loc": 4,
    "location": 4,
    "locations": 4,
    "place": 4,
    "num": 5,
    "number": 5,
    "numbers": 5,
    "numeric": 5,
    "numeric value": 5,
}


# ---------------------------------------------------------------------------
# response parsing

_SPLIT_RE = re.compile(r"[;,\n]|\bor\b", re.IGNORECASE)
_STRIP_CHARS = " \t\"'`.()[]{}!?:*-"


def _alias_table(label_space: LabelSpace, aliases: Mapping[str, int] | None) -> dict[str, int]:
    table: dict[str, int] = {}
    for i, name in enumerate(label_space.names):
        table[name.strip().casefold()] = i
    if label_space.descriptions:
        for i, desc in enumerate(label_space.descriptions):
            table.setdefault(desc.strip().casefold(), i)
    for alias, idx in (aliases or {}).items():
        if not 0 <= idx < label_space.n_classes:
            raise ValueError(f"alias {alias!r} points outside the label space")
        table.setdefault(alias.strip().casefold(), idx)
    return table


def parse_candidates(
    response: str,
    label_space: LabelSpace,
    aliases: Mapping[str, int] | None = None,
    *,
    first_only: bool = False,
) -> CandidateSet:
    """Match category names (case-insensitive, plus configured aliases) in a
    response; splits on commas/semicolons/newlines/'or'. Raises NoLabelFound
    when nothing matches, so empty parses are never silently dropped.

    first_only keeps only the earliest-mentioned label (the single-annotation
    contract)."""
    table = _alias_table(label_space, aliases)
    ordered: list[int] = []
    for chunk in _SPLIT_RE.split(response):
        key = chunk.strip(_STRIP_CHARS).casefold()
        key = re.sub(r"\s+", " ", key)
        if key in table and table[key] not in ordered:
            ordered.append(table[key])
    if not ordered:
        # fall back to scanning for names anywhere in the text; earliest match
        # first, longer aliases shadowing their prefixes
        normalized = re.sub(r"\s+", " ", response.casefold())
        hits: list[tuple[int, int, int]] = []
        for alias in sorted(table, key=len, reverse=True):
            m = re.search(rf"(?<![a-z0-9]){re.escape(alias)}(?![a-z0-9])", normalized)
            if m and table[alias] not in {h[2] for h in hits}:
                hits.append((m.start(), -len(alias), table[alias]))
        ordered = [label for _, _, label in sorted(hits)]
    if not ordered:
        raise NoLabelFound(f"no category name found in response: {response[:120]!r}")
    if first_only:
        ordered = ordered[:1]
    return CandidateSet(tuple(ordered))


# ---------------------------------------------------------------------------
# few-shot retrieval

@dataclass(frozen=True)
class PoolEntry:
    text: str
    labels: tuple[int, ...]
    embedding: np.ndarray | None = None
    id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(int(c) for c in self.labels))
        if self.embedding is not None:
            emb = np.asarray(self.embedding, dtype=float)
            emb.setflags(write=False)
            object.__setattr__(self, "embedding", emb)


@dataclass(frozen=True)
class ExamplePool:
    entries: tuple[PoolEntry, ...]

    def __post_init__(self):
        entries = tuple(
            e if e.id else PoolEntry(e.text, e.labels, e.embedding, id=str(i))
            for i, e in enumerate(self.entries)
        )
        object.__setattr__(self, "entries", entries)
        dims = {e.embedding.shape[0] for e in entries if e.embedding is not None}
        if len(dims) > 1:
            raise ValueError("pool embeddings must share one dimension")

    def __len__(self) -> int:
        return len(self.entries)


def load_pool(path) -> ExamplePool:
    entries: list[PoolEntry] = []
    with open(path, encoding="utf-8") as fh:
        for i, raw in enumerate(fh):
            raw = raw.strip()
            if not raw:
                continue
            rec = json.loads(raw)
            labels = rec.get("candidates") if rec.get("candidates") is not None else [rec["label"]]
            entries.append(
                PoolEntry(
                    text=rec["text"],
                    labels=tuple(labels),
                    embedding=np.asarray(rec["embedding"], dtype=float) if rec.get("embedding") else None,
                    id=str(rec.get("id", i)),
                )
            )
    return ExamplePool(tuple(entries))


def retrieve_few_shot(query_embedding: np.ndarray, pool: ExamplePool, k: int) -> list[PoolEntry]:
    """Top-k pool entries by cosine similarity, ties by pool index ascending."""
    if k > len(pool):
        raise ValueError(f"k={k} exceeds pool size {len(pool)}")
    if k <= 0:
        return []
    q = np.asarray(query_embedding, dtype=float)
    qn = np.linalg.norm(q)
    if qn == 0.0:
        raise ValueError("query embedding must be nonzero")
    sims = np.empty(len(pool))
    for i, e in enumerate(pool.entries):
        if e.embedding is None:
            raise ValueError(f"pool entry {e.id!r} has no embedding")
        if e.embedding.shape != q.shape:
            raise ValueError(f"embedding dimension mismatch at pool entry {e.id!r}")
        en = np.linalg.norm(e.embedding)
        if en == 0.0:
            raise ValueError(f"pool entry {e.id!r} has a zero embedding")
        sims[i] = float(q @ e.embedding) / (qn * en)
    order = np.argsort(-sims, kind="stable")  # stable keeps lower index first on ties
    return [pool.entries[i] for i in order[:k]]


# ---------------------------------------------------------------------------
# clients

@dataclass
class LlmClientConfig:
    endpoint: str = ""
    model: str = ""
    temperature: float = ANNOTATE_TEMPERATURE
    n_samples: int = 1
    max_concurrency: int = 4
    timeout: float = 30.0
    retry: int = 2
    token_env: str = "ANNODISTILL_API_TOKEN"

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")


class HttpChatClient:
    """Minimal chat-completion client (OpenAI-style POST body). The bearer
    token is read from the configured environment variable, never from flags."""

    def __init__(self, config: LlmClientConfig):
        if not config.endpoint:
            raise ValueError("endpoint required for HTTP client")
        self.config = config

    def complete(self, prompt: str, *, sample_id: str, n: int, temperature: float) -> list[str]:
        import httpx

        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.config.token_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        payload = {
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": temperature,
            "n": n,
        }
        resp = httpx.post(self.config.endpoint, json=payload, headers=headers, timeout=self.config.timeout)
        resp.raise_for_status()
        data = resp.json()
        return [choice["message"]["content"] for choice in data["choices"]]


class ScriptedClient:
    """Deterministic test double driven by a callable or canned responses."""

    def __init__(self, script: Callable[[str, str, int], list[str]] | Sequence[str] | str):
        if callable(script):
            self._fn = script
        elif isinstance(script, str):
            self._fn = lambda prompt, sid, n: [script] * n
        else:
            canned = list(script)
            # stable across processes (hash() is salted)
            self._fn = lambda prompt, sid, n: [canned[zlib.crc32(sid.encode()) % len(canned)]] * n
        self.calls: list[tuple[str, str, int]] = []

    def complete(self, prompt: str, *, sample_id: str, n: int, temperature: float) -> list[str]:
        self.calls.append((sample_id, prompt, n))
        return self._fn(prompt, sample_id, n)


class ReplayClient:
    """Serves responses from a replay log keyed by sample id."""

    def __init__(self, path):
        self.by_id: dict[str, list[str]] = {}
        with open(path, encoding="utf-8") as fh:
            for raw in fh:
                raw = raw.strip()
                if raw:
                    rec = json.loads(raw)
                    self.by_id[rec["sample_id"]] = list(rec["responses"])

    def complete(self, prompt: str, *, sample_id: str, n: int, temperature: float) -> list[str]:
        if sample_id not in self.by_id:
            raise FixtureMiss(sample_id)
        return self.by_id[sample_id]


class ReplayLogWriter:
    """Appends request/response records under a lock; one JSON object per line."""

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self.path.write_text("", encoding="utf-8")

    def append(self, sample_id: str, prompt: str, responses: Sequence[str]) -> None:
        line = json.dumps({"sample_id": sample_id, "prompt": prompt, "responses": list(responses)})
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")


# ---------------------------------------------------------------------------
# aggregation

ScMode = int | Literal["all"]


def _frequencies(sets: Sequence[CandidateSet], C: int) -> np.ndarray:
    freq = np.zeros(C, dtype=int)
    for s in sets:
        for c in s.labels:
            if c >= C:
                raise ValueError(f"label {c} out of range for C={C}")
            freq[c] += 1
    return freq


def sc_aggregate(sets: Sequence[CandidateSet], mode: ScMode, C: int) -> CandidateSet:
    """Combine repeated candidate annotations by per-class frequency.

    mode k (an int) keeps the k most frequent appearing labels, ties broken by
    lower index; if fewer than k labels appear, all appearing labels are kept.
    mode "all" keeps every label that appeared at least once.
    """
    if not sets:
        raise ValueError("need at least one candidate set")
    freq = _frequencies(sets, C)
    appearing = np.flatnonzero(freq > 0)
    if mode == "all":
        return CandidateSet(tuple(int(c) for c in appearing))
    k = int(mode)
    if k < 1:
        raise ValueError("k must be >= 1")
    if k >= len(appearing):
        return CandidateSet(tuple(int(c) for c in appearing))
    order = sorted(appearing, key=lambda c: (-freq[c], c))
    return CandidateSet(tuple(int(c) for c in order[:k]))


def majority_vote(sets: Sequence[CandidateSet], C: int) -> int:
    """Most frequent label across the sets; ties go to the lower index."""
    if not sets:
        raise ValueError("need at least one candidate set")
    return int(_frequencies(sets, C).argmax())


# ---------------------------------------------------------------------------
# annotation runs

@dataclass
class AnnotationRecord:
    sample_id: str
    strategy: StrategyKind
    raw_responses: list[str] = field(default_factory=list)
    parsed: CandidateSet | None = None
    few_shot_ids: list[str] = field(default_factory=list)
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None and self.parsed is not None


def annotate(
    dataset: Dataset,
    strategy: PromptStrategy,
    client,
    pool: ExamplePool | None = None,
    config: LlmClientConfig | None = None,
    *,
    few_shot_k: int = 0,
    sc_mode: ScMode | None = None,
    aliases: Mapping[str, int] | None = None,
    preamble: str = "",
    replay_log: ReplayLogWriter | None = None,
) -> list[AnnotationRecord]:
    """Annotate every sample; per-sample failures become errored records and
    the run continues. Requests run with bounded parallelism and records are
    keyed by sample id, so output order is the dataset order regardless of
    completion order."""
    config = config or LlmClientConfig()
    missing = [s.id for s in dataset.samples if s.text is None]
    if missing:
        raise ValueError(f"{len(missing)} samples lack text (first: {missing[0]!r})")

    def one(sample: Sample) -> AnnotationRecord:
        record = AnnotationRecord(sample_id=sample.id, strategy=strategy.kind)
        try:
            few_shot = retrieve_few_shot(sample.features, pool, few_shot_k) if pool and few_shot_k else []
            record.few_shot_ids = [e.id for e in few_shot]
            prompt = build_prompt(
                sample,
                strategy,
                dataset.label_space,
                few_shot,
                preamble=preamble,
                candidates=dataset.candidates.get(sample.id),
            )
            responses: list[str] | None = None
            last_err: Exception | None = None
            for _ in range(config.retry + 1):
                try:
                    responses = client.complete(
                        prompt, sample_id=sample.id, n=config.n_samples, temperature=config.temperature
                    )
                    break
                except FixtureMiss:
                    raise
                except Exception as e:  # transport-level failure; retry
                    last_err = e
            if responses is None:
                raise TransportError(f"request failed after {config.retry + 1} attempts: {last_err}")
            record.raw_responses = list(responses)
            if replay_log is not None:
                replay_log.append(sample.id, prompt, responses)
            # single-annotation strategies commit to one label per response
            single = strategy.kind in (StrategyKind.SA, StrategyKind.SELECT_FROM_CANDIDATES)
            parsed_sets: list[CandidateSet] = []
            parse_errors: list[str] = []
            for r in responses:
                try:
                    parsed_sets.append(parse_candidates(r, dataset.label_space, aliases, first_only=single))
                except NoLabelFound as e:
                    parse_errors.append(str(e))
            if not parsed_sets:
                raise NoLabelFound(parse_errors[0] if parse_errors else "empty response list")
            if sc_mode is not None:
                record.parsed = sc_aggregate(parsed_sets, sc_mode, dataset.n_classes)
            else:
                record.parsed = parsed_sets[0]
        except FixtureMiss as e:
            record.error = f"replay fixture miss: {e}"
        except Exception as e:
            record.error = str(e)
        return record

    with ThreadPoolExecutor(max_workers=max(1, config.max_concurrency)) as pool_exec:
        by_id = {r.sample_id: r for r in pool_exec.map(one, dataset.samples)}
    return [by_id[s.id] for s in dataset.samples]


def save_annotations(records: Sequence[AnnotationRecord], path) -> None:
    lines = []
    for r in records:
        rec: dict = {"id": r.sample_id, "strategy": r.strategy.value}
        if r.ok:
            rec["candidates"] = list(r.parsed.labels)
        else:
            rec["error"] = r.error
        rec["raw"] = r.raw_responses
        if r.few_shot_ids:
            rec["few_shot_ids"] = r.few_shot_ids
        lines.append(json.dumps(rec))
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_annotations(path) -> list[AnnotationRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            raw = raw.strip()
            if not raw:
                continue
            rec = json.loads(raw)
            records.append(
                AnnotationRecord(
                    sample_id=rec["id"],
                    strategy=StrategyKind(rec["strategy"]),
                    raw_responses=list(rec.get("raw", [])),
                    parsed=CandidateSet(tuple(rec["candidates"])) if rec.get("candidates") else None,
                    few_shot_ids=list(rec.get("few_shot_ids", [])),
                    error=rec.get("error"),
                )
            )
    return records


def generate_pool(
    client,
    label_space: LabelSpace,
    per_class: int,
    config: LlmClientConfig | None = None,
) -> ExamplePool:
    """Thin helper that asks the client for example texts per category. The
    result carries no embeddings (this engine never embeds text); attach them
    before similarity retrieval."""
    config = config or LlmClientConfig()
    entries: list[PoolEntry] = []
    for c, name in enumerate(label_space.names):
        prompt = f"Give {per_class} short example texts of the category: {name}. One per line."
        responses = client.complete(prompt, sample_id=f"pool-{c}", n=1, temperature=config.temperature)
        texts = [t.strip() for t in responses[0].splitlines() if t.strip()][:per_class]
        for j, t in enumerate(texts):
            entries.append(PoolEntry(text=t, labels=(c,), id=f"{c}-{j}"))
    return ExamplePool(tuple(entries))
