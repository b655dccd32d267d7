"""Dataset ingestion, cleaning, score-lattice arithmetic and reference selection.

Every scored corpus lives on an arithmetic score lattice (min, min+step, ...,
max).  This module loads essays from JSONL/TSV, strips annotation markers,
splits train/test, and picks the reference scores and reference essays that
anchor pairwise ranking.
"""

from __future__ import annotations

import csv
import json
import random
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, Mapping, Sequence

LANGUAGES = ("zh", "en")


class CorpusError(Exception):
    """Base class for corpus-level failures."""


class RowParseError(CorpusError):
    """A row of an input file could not be parsed."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class ConfigurationError(CorpusError):
    """Inputs reference prompts, scores or resources that are not configured."""


@dataclass(frozen=True)
class PromptSpec:
    """Score geometry and defaults for one essay prompt (topic)."""

    id: str
    score_min: int
    score_max: int
    step: int = 1
    reference_scores: tuple[int, ...] = ()
    language: str = "en"
    topic: str = ""

    def __post_init__(self):
        if self.step <= 0:
            raise ValueError(f"prompt {self.id}: step must be positive, got {self.step}")
        if self.score_min > self.score_max:
            raise ValueError(f"prompt {self.id}: score_min > score_max")
        if (self.score_max - self.score_min) % self.step:
            raise ValueError(f"prompt {self.id}: range not divisible by step {self.step}")
        if self.language not in LANGUAGES:
            raise ValueError(f"prompt {self.id}: unknown language {self.language!r}")
        refs = tuple(int(r) for r in self.reference_scores)
        object.__setattr__(self, "reference_scores", refs)
        if refs:
            if len(refs) > 5:
                raise ValueError(f"prompt {self.id}: at most 5 reference scores, got {len(refs)}")
            if list(refs) != sorted(set(refs)):
                raise ValueError(f"prompt {self.id}: reference scores must be strictly ascending")
            lat = set(lattice(self))
            bad = [r for r in refs if r not in lat]
            if bad:
                raise ValueError(f"prompt {self.id}: reference scores {bad} are off the lattice")


@dataclass(frozen=True)
class Essay:
    """One scored text belonging to a single prompt."""

    id: str
    prompt_id: str
    text: str
    gold_score: int
    sidecar_features: Mapping[str, float] | None = None

    def __post_init__(self):
        if not self.text:
            raise ValueError(f"essay {self.id}: empty text")


@dataclass(frozen=True)
class RejectedRow:
    line_no: int
    essay_id: str
    reason: str


@dataclass(frozen=True)
class CleaningRecord:
    essay_id: str
    original: str


@dataclass(frozen=True)
class Provenance:
    source: str
    cleaning_log: tuple[CleaningRecord, ...] = ()
    rejected: tuple[RejectedRow, ...] = ()


@dataclass(frozen=True)
class Dataset:
    """All essays of one prompt plus where they came from."""

    prompt: PromptSpec
    essays: tuple[Essay, ...]
    provenance: Provenance

    def __post_init__(self):
        object.__setattr__(self, "essays", tuple(self.essays))
        seen: set[str] = set()
        for essay in self.essays:
            if essay.id in seen:
                raise ValueError(f"duplicate essay id {essay.id!r}")
            seen.add(essay.id)
            if essay.prompt_id != self.prompt.id:
                raise ValueError(
                    f"essay {essay.id} belongs to prompt {essay.prompt_id!r}, "
                    f"not {self.prompt.id!r}"
                )

    def __len__(self) -> int:
        return len(self.essays)

    def __iter__(self) -> Iterator[Essay]:
        return iter(self.essays)

    def ids(self) -> set[str]:
        return {e.id for e in self.essays}

    def golds(self) -> list[int]:
        return [e.gold_score for e in self.essays]

    def by_score(self) -> dict[int, list[Essay]]:
        buckets: dict[int, list[Essay]] = {}
        for essay in self.essays:
            buckets.setdefault(essay.gold_score, []).append(essay)
        return buckets


@dataclass(frozen=True)
class ReferenceSet:
    """Per reference score, the essays that serve as comparison anchors."""

    essays: Mapping[int, tuple[Essay, ...]]

    def __post_init__(self):
        object.__setattr__(self, "essays", dict(self.essays))
        for score, pair in self.essays.items():
            ids = {e.id for e in pair}
            if len(ids) != len(pair):
                raise ValueError(f"reference score {score}: duplicate essay ids")
            for essay in pair:
                if essay.gold_score != score:
                    raise ValueError(
                        f"reference score {score}: essay {essay.id} has gold "
                        f"score {essay.gold_score}"
                    )

    @property
    def scores(self) -> list[int]:
        return sorted(self.essays)

    def ids(self) -> set[str]:
        return {e.id for pair in self.essays.values() for e in pair}


def lattice(prompt: PromptSpec) -> list[int]:
    """All attainable scores of a prompt, ascending."""
    return list(range(prompt.score_min, prompt.score_max + 1, prompt.step))


def nearest_lattice_score(value: float, prompt: PromptSpec) -> int:
    """Clamp an arbitrary value to the nearest lattice score (lower on ties)."""
    lat = lattice(prompt)
    return min(lat, key=lambda s: (abs(s - value), s))


# Score geometry of the benchmark prompts (one Chinese exam corpus, eight
# English ones).  Reference scores are the authoritative per-prompt defaults.
BUILTIN_PROMPTS: dict[str, PromptSpec] = {
    spec.id: spec
    for spec in (
        PromptSpec("hsk", 40, 100, 5, (50, 60, 70, 80, 90), "zh"),
        PromptSpec("asap1", 2, 12, 1, (5, 9), "en"),
        PromptSpec("asap2", 1, 6, 1, (3, 4), "en"),
        PromptSpec("asap3", 0, 3, 1, (1, 2), "en"),
        PromptSpec("asap4", 0, 3, 1, (1, 2), "en"),
        PromptSpec("asap5", 0, 4, 1, (2,), "en"),
        PromptSpec("asap6", 0, 4, 1, (2,), "en"),
        PromptSpec("asap7", 0, 30, 1, (5, 10, 15, 20), "en"),
        PromptSpec("asap8", 0, 60, 1, (10, 20, 30, 40, 50), "en"),
    )
}

_REQUIRED_COLUMNS = ("id", "prompt_id", "text", "score")


def _coerce_row(raw: Mapping[str, object], line_no: int) -> tuple[str, str, str, int]:
    missing = [c for c in _REQUIRED_COLUMNS if raw.get(c) in (None, "")]
    if missing:
        raise RowParseError(line_no, f"missing field(s) {', '.join(missing)}")
    score_raw = raw["score"]
    if isinstance(score_raw, bool) or isinstance(score_raw, float):
        raise RowParseError(line_no, f"score must be an integer, got {score_raw!r}")
    try:
        score = int(score_raw)  # type: ignore[arg-type]
    except (TypeError, ValueError):
        raise RowParseError(line_no, f"score must be an integer, got {score_raw!r}") from None
    return str(raw["id"]), str(raw["prompt_id"]), str(raw["text"]), score


def _iter_jsonl(path: Path) -> Iterator[tuple[int, dict]]:
    with path.open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RowParseError(line_no, f"invalid JSON: {exc.msg}") from exc
            if not isinstance(obj, dict):
                raise RowParseError(line_no, "row is not a JSON object")
            yield line_no, obj


def _iter_tsv(path: Path) -> Iterator[tuple[int, dict]]:
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        if reader.fieldnames is None:
            return
        missing = [c for c in _REQUIRED_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise RowParseError(1, f"missing column(s) {', '.join(missing)}")
        for row in reader:
            yield reader.line_num, row


def load_dataset(path: str | Path, prompt: PromptSpec, fmt: str | None = None) -> Dataset:
    """Load one prompt's essays from a JSONL or TSV file.

    Rows with an off-lattice score are rejected into the dataset's
    provenance (never silently dropped); malformed rows raise with the
    offending line number; a row naming a different prompt is a
    configuration error.
    """
    path = Path(path)
    if fmt is None:
        fmt = path.suffix.lstrip(".").lower()
    if fmt not in ("jsonl", "tsv"):
        raise ConfigurationError(f"unsupported dataset format {fmt!r} for {path}")
    rows = _iter_jsonl(path) if fmt == "jsonl" else _iter_tsv(path)

    lat = set(lattice(prompt))
    essays: list[Essay] = []
    rejected: list[RejectedRow] = []
    seen: set[str] = set()
    for line_no, raw in rows:
        essay_id, prompt_id, text, score = _coerce_row(raw, line_no)
        if prompt_id != prompt.id:
            raise ConfigurationError(
                f"{path} line {line_no}: unknown prompt {prompt_id!r} (expected {prompt.id!r})"
            )
        if essay_id in seen:
            raise RowParseError(line_no, f"duplicate essay id {essay_id!r}")
        seen.add(essay_id)
        if score not in lat:
            rejected.append(
                RejectedRow(line_no, essay_id, f"score {score} off lattice of {prompt.id}")
            )
            continue
        if not text:
            raise RowParseError(line_no, f"essay {essay_id!r} has empty text")
        sidecar = raw.get("features")
        if sidecar is not None and not isinstance(sidecar, Mapping):
            raise RowParseError(line_no, "features must be an object of name -> number")
        essays.append(Essay(essay_id, prompt_id, text, score, sidecar))
    return Dataset(prompt, tuple(essays), Provenance(str(path), rejected=tuple(rejected)))


_HWS_RE = re.compile(r"[ \t\f\v]+")


def clean_text(raw: str, rules: Sequence[str] = ()) -> str:
    """Strip annotation-marker spans and normalize whitespace.

    ``rules`` is an ordered list of regex patterns whose matches are removed.
    Runs of horizontal whitespace collapse to a single space; newlines (the
    paragraph structure) are preserved.
    """
    text = raw
    for pattern in rules:
        text = re.sub(pattern, "", text)
    text = _HWS_RE.sub(" ", text)
    lines = [line.strip() for line in text.split("\n")]
    return "\n".join(lines).strip()


def clean_dataset(dataset: Dataset, rules: Sequence[str]) -> Dataset:
    """Clean every essay; originals of changed texts go to the cleaning log."""
    cleaned: list[Essay] = []
    log: list[CleaningRecord] = []
    for essay in dataset.essays:
        text = clean_text(essay.text, rules)
        if not text:
            raise CorpusError(f"essay {essay.id}: text empty after cleaning")
        if text != essay.text:
            log.append(CleaningRecord(essay.id, essay.text))
        cleaned.append(replace(essay, text=text))
    prov = replace(dataset.provenance, cleaning_log=dataset.provenance.cleaning_log + tuple(log))
    return Dataset(dataset.prompt, tuple(cleaned), prov)


def attach_sidecar_features(dataset: Dataset, table: Mapping[str, Mapping[str, float]]) -> Dataset:
    """Merge externally computed per-essay features into the dataset.

    Values from ``table`` override same-named values already on an essay.
    """
    essays = []
    for essay in dataset.essays:
        extra = table.get(essay.id)
        if extra:
            merged = {**(essay.sidecar_features or {}), **extra}
            essays.append(replace(essay, sidecar_features=merged))
        else:
            essays.append(essay)
    return Dataset(dataset.prompt, tuple(essays), dataset.provenance)


def select_reference_scores(prompt: PromptSpec, max_refs: int = 5) -> list[int]:
    """Reference scores for a prompt.

    Configured scores are returned verbatim.  Otherwise: small lattices
    (<= 6 scores) take the middle score (odd count) or the two middle scores
    (even count); larger lattices take up to ``max_refs`` equally spaced
    interior scores, rounded to the lattice and excluding both extremes.
    """
    if prompt.reference_scores:
        return list(prompt.reference_scores)
    lat = lattice(prompt)
    n = len(lat)
    if n <= 6:
        if n % 2:
            return [lat[n // 2]]
        return [lat[n // 2 - 1], lat[n // 2]]
    m = min(max_refs, n // 2)
    span = prompt.score_max - prompt.score_min
    picks = []
    for i in range(1, m + 1):
        target = prompt.score_min + span * i / (m + 1)
        idx = round((target - prompt.score_min) / prompt.step)
        idx = min(max(idx, 1), n - 2)
        picks.append(lat[idx])
    return sorted(set(picks))


def select_reference_essays(
    dataset: Dataset,
    scores: Sequence[int],
    per_score: int = 2,
    seed: int = 0,
) -> ReferenceSet:
    """Randomly pick ``per_score`` anchor essays at each reference score.

    Deterministic for a given seed.  Draw from the training split only; the
    chosen essays must never be used as evaluation targets.
    """
    rng = random.Random(seed)
    buckets = dataset.by_score()
    chosen: dict[int, tuple[Essay, ...]] = {}
    for score in scores:
        pool = sorted(buckets.get(score, []), key=lambda e: e.id)
        if len(pool) < per_score:
            raise ConfigurationError(
                f"score {score}: need {per_score} reference essays, found {len(pool)}"
            )
        chosen[score] = tuple(rng.sample(pool, per_score))
    return ReferenceSet(chosen)


def split(dataset: Dataset, test_fraction: float, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Stratified train/test split by gold score, deterministic for a seed.

    Each score bucket contributes as close to ``test_fraction`` of its
    essays as integer counts allow.
    """
    if not 0 < test_fraction < 1:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    rng = random.Random(seed)
    buckets = dataset.by_score()
    test_ids: set[str] = set()
    for score in sorted(buckets):
        bucket = sorted(buckets[score], key=lambda e: e.id)
        rng.shuffle(bucket)
        n_test = int(len(bucket) * test_fraction + 0.5)
        test_ids.update(e.id for e in bucket[:n_test])
    train_essays = tuple(e for e in dataset.essays if e.id not in test_ids)
    test_essays = tuple(e for e in dataset.essays if e.id in test_ids)
    prov = dataset.provenance
    return (
        Dataset(dataset.prompt, train_essays, replace(prov, source=f"{prov.source}#train")),
        Dataset(dataset.prompt, test_essays, replace(prov, source=f"{prov.source}#test")),
    )
