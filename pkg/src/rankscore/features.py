"""Statistical essay features, F-score feature selection, and text augmentation.

Only parser-free features are computed natively (counts, ratios, lengths,
frequency/level lookups, two English readability formulas).  Features that
need syntactic parsers, POS taggers or sentiment models enter exclusively
through per-essay sidecar files, declared in the registry with
``implemented=False``.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .corpus import ConfigurationError, Essay

FAMILIES = ("character", "word", "sentence", "paragraph", "readability")

DEGENERATE_EPS = 1e-12

_WORD_RUN_RE = re.compile(r"[^\W_]+", re.UNICODE)
_SENTENCE_SPLIT_RE = re.compile(r"[。！？.!?]+")
_CLAUSE_SPLIT_RE = re.compile(r"[、，；,;]+")
_CJK_RE = re.compile(r"[㐀-䶿一-鿿]+")
_VOWEL_GROUP_RE = re.compile(r"[aeiouy]+")


class FeatureError(Exception):
    """A feature could not be computed or selected."""


@dataclass(frozen=True)
class FeatureSpec:
    """One named feature; sidecar-only features carry ``implemented=False``."""

    name: str
    family: str
    requires_resource: str | None = None
    implemented: bool = True

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"feature {self.name}: unknown family {self.family!r}")


@dataclass(frozen=True)
class FeatureVector:
    """Ordered (name, value) pairs; values are finite reals."""

    names: tuple[str, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.names) != len(self.values):
            raise ValueError("names and values differ in length")
        for name, value in zip(self.names, self.values):
            if not math.isfinite(value):
                raise ValueError(f"feature {name}: non-finite value {value!r}")

    def __len__(self) -> int:
        return len(self.names)

    def __iter__(self) -> Iterator[tuple[str, float]]:
        return iter(zip(self.names, self.values))

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.values))


@dataclass(frozen=True)
class LexiconResources:
    """File-backed lookup tables; ``None`` means the table was not provided.

    All lookups are total: a token absent from a provided table falls into
    the "unregistered" bucket instead of raising.
    """

    word_freq: Mapping[str, float] | None = None
    word_levels: Mapping[str, int] | None = None
    char_levels: Mapping[str, int] | None = None
    stopwords: frozenset[str] | None = None
    dictionary: frozenset[str] | None = None

    @classmethod
    def empty(cls) -> "LexiconResources":
        return cls()

    @classmethod
    def load(
        cls,
        word_freq: str | Path | None = None,
        word_levels: Mapping[int, str | Path] | None = None,
        char_levels: Mapping[int, str | Path] | None = None,
        stopwords: str | Path | None = None,
        dictionary: str | Path | None = None,
    ) -> "LexiconResources":
        return cls(
            word_freq=_load_freq_table(word_freq) if word_freq else None,
            word_levels=_load_level_lists(word_levels) if word_levels else None,
            char_levels=_load_level_lists(char_levels) if char_levels else None,
            stopwords=_load_wordlist(stopwords) if stopwords else None,
            dictionary=_load_wordlist(dictionary) if dictionary else None,
        )

    def lexicon_words(self) -> frozenset[str]:
        """Tokens usable for longest-match segmentation."""
        words: set[str] = set()
        if self.word_freq:
            words.update(self.word_freq)
        if self.word_levels:
            words.update(self.word_levels)
        return frozenset(words)


def _load_freq_table(path: str | Path) -> dict[str, float]:
    table: dict[str, float] = {}
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ConfigurationError(f"{path} line {line_no}: expected 'token<TAB>count'")
        try:
            table[parts[0]] = float(parts[1])
        except ValueError:
            raise ConfigurationError(f"{path} line {line_no}: bad count {parts[1]!r}") from None
    return table


def _load_level_lists(paths: Mapping[int, str | Path]) -> dict[str, int]:
    table: dict[str, int] = {}
    for level in sorted(paths):
        for line in Path(paths[level]).read_text(encoding="utf-8").splitlines():
            token = line.strip()
            if token:
                table.setdefault(token, int(level))
    return table


def _load_wordlist(path: str | Path) -> frozenset[str]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return frozenset(token.strip() for token in lines if token.strip())


def load_sidecar_features(path: str | Path) -> dict[str, dict[str, float]]:
    """Externally computed features: JSONL rows of {"id": ..., name: value, ...}."""
    table: dict[str, dict[str, float]] = {}
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            essay_id = str(row.pop("id"))
            table[essay_id] = {name: float(value) for name, value in row.items()}
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigurationError(f"{path} line {line_no}: bad sidecar row ({exc})") from exc
    return table


@dataclass(frozen=True)
class Tokens:
    characters: tuple[str, ...]
    words: tuple[str, ...]
    sentences: tuple[str, ...]
    paragraphs: tuple[str, ...]


def _segment_zh(run: str, lexicon: frozenset[str], max_len: int) -> list[str]:
    # Greedy longest match with single-character fallback.
    words = []
    i = 0
    while i < len(run):
        for length in range(min(max_len, len(run) - i), 1, -1):
            candidate = run[i : i + length]
            if candidate in lexicon:
                words.append(candidate)
                i += length
                break
        else:
            words.append(run[i])
            i += 1
    return words


def _words_of(text: str, language: str, lexicon: frozenset[str] = frozenset()) -> list[str]:
    runs = _WORD_RUN_RE.findall(text)
    if language == "en":
        return runs
    max_len = max((len(w) for w in lexicon), default=1)
    words: list[str] = []
    for run in runs:
        pos = 0
        for match in _CJK_RE.finditer(run):
            if match.start() > pos:
                words.append(run[pos : match.start()])
            words.extend(_segment_zh(match.group(), lexicon, max_len))
            pos = match.end()
        if pos < len(run):
            words.append(run[pos:])
    return words


def split_sentences(text: str) -> list[str]:
    """Split on terminal punctuation; text without any is one sentence."""
    parts = [p.strip() for p in _SENTENCE_SPLIT_RE.split(text)]
    return [p for p in parts if p]


def split_clauses(sentence: str) -> list[str]:
    """Comma/semicolon clause segmentation (Chinese and ASCII separators)."""
    parts = [p.strip() for p in _CLAUSE_SPLIT_RE.split(sentence)]
    return [p for p in parts if p]


def split_paragraphs(text: str) -> list[str]:
    parts = [p.strip() for p in re.split(r"\n+", text)]
    return [p for p in parts if p]


def tokenize(text: str, language: str, resources: LexiconResources | None = None) -> Tokens:
    """Characters, words, sentences and paragraphs of a cleaned text.

    English words are whitespace/punctuation-delimited runs; Chinese words
    come from longest-match segmentation against the lexicon with a
    single-character fallback.  Characters are the word-constituent
    characters (punctuation and whitespace excluded).
    """
    lexicon = resources.lexicon_words() if resources else frozenset()
    words = _words_of(text, language, lexicon)
    characters = tuple(ch for word in words for ch in word)
    return Tokens(
        characters=characters,
        words=tuple(words),
        sentences=tuple(split_sentences(text)),
        paragraphs=tuple(split_paragraphs(text)),
    )


def syllable_count(word: str) -> int:
    """Vowel-group syllable estimate, at least 1 per word."""
    return max(1, len(_VOWEL_GROUP_RE.findall(word.lower())))


def _mean(xs: Sequence[float]) -> float:
    return float(sum(xs) / len(xs)) if xs else 0.0


def _var(xs: Sequence[float]) -> float:
    return float(np.var(xs)) if xs else 0.0


def _safe_div(a: float, b: float) -> float:
    return a / b if b else 0.0


def automated_readability_index(n_chars: int, n_words: int, n_sentences: int) -> float:
    if not n_words or not n_sentences:
        return 0.0
    return 4.71 * (n_chars / n_words) + 0.5 * (n_words / n_sentences) - 21.43


def linsear_write(words: Sequence[str], text: str) -> float:
    """Standard Linsear Write readability over the first 100 words.

    Easy words (<= 2 syllables by vowel-group counting) score 1 point, hard
    words 3; points over the sample's sentence count give the provisional
    result r, and the value is r/2 when r > 20, else r/2 - 1.
    """
    sample = list(words[:100])
    if not sample:
        return 0.0
    easy = sum(1 for w in sample if syllable_count(w) <= 2)
    hard = len(sample) - easy
    sample_text = text
    if len(words) > 100:
        # Count sentences only up to the end of the 100th word.
        for i, match in enumerate(_WORD_RUN_RE.finditer(text), start=1):
            if i == 100:
                sample_text = text[: match.end()]
                break
    n_sentences = max(1, len(split_sentences(sample_text)))
    provisional = (easy + 3 * hard) / n_sentences
    if provisional > 20:
        return provisional / 2
    return provisional / 2 - 1


def _level_stats(tokens: Sequence[str], table: Mapping[str, int], prefix: str) -> dict[str, float]:
    total = len(tokens)
    counts = {level: 0 for level in (1, 2, 3, 4)}
    unregistered = 0
    level_sum = 0
    registered = 0
    for token in tokens:
        level = table.get(token)
        if level is None:
            unregistered += 1
        else:
            counts[min(max(level, 1), 4)] += 1
            level_sum += level
            registered += 1
    stats: dict[str, float] = {}
    for level, count in counts.items():
        stats[f"{prefix}_level{level}_count"] = float(count)
        stats[f"{prefix}_level{level}_prop"] = _safe_div(count, total)
    stats[f"{prefix}_unregistered_count"] = float(unregistered)
    stats[f"{prefix}_unregistered_prop"] = _safe_div(unregistered, total)
    stats[f"mean_{prefix}_level"] = _safe_div(level_sum, registered)
    stats[f"{prefix}_advanced_prop"] = stats[f"{prefix}_level3_prop"] + stats[f"{prefix}_level4_prop"]
    return stats


def compute_all_features(
    text: str, language: str, resources: LexiconResources | None = None
) -> dict[str, float]:
    """Every natively computable feature of a text, keyed by name."""
    resources = resources or LexiconResources.empty()
    tokens = tokenize(text, language, resources)
    words = tokens.words
    chars = tokens.characters
    sentences = tokens.sentences
    paragraphs = tokens.paragraphs

    sentence_words = [_words_of(s, language, resources.lexicon_words()) for s in sentences]
    paragraph_words = [_words_of(p, language, resources.lexicon_words()) for p in paragraphs]
    clauses = [c for s in sentences for c in split_clauses(s)]
    clause_words = [_words_of(c, language, resources.lexicon_words()) for c in clauses]
    clauses_per_sentence = [len(split_clauses(s)) for s in sentences]

    word_lengths = [len(w) for w in words]
    out: dict[str, float] = {
        "char_count": float(len(chars)),
        "char_type_count": float(len(set(chars))),
        "char_ttr": _safe_div(len(set(chars)), len(chars)),
        "word_count": float(len(words)),
        "word_type_count": float(len(set(words))),
        "unique_word_count": float(len(set(words))),
        "word_ttr": _safe_div(len(set(words)), len(words)),
        "sentence_count": float(len(sentences)),
        "paragraph_count": float(len(paragraphs)),
        "mean_word_length": _mean(word_lengths),
        "max_word_length": float(max(word_lengths, default=0)),
        "word_length_variance": _var(word_lengths),
        "mean_sentence_words": _mean([len(ws) for ws in sentence_words]),
        "max_sentence_words": float(max((len(ws) for ws in sentence_words), default=0)),
        "mean_sentence_chars": _mean([sum(len(w) for w in ws) for ws in sentence_words]),
        "max_sentence_chars": float(
            max((sum(len(w) for w in ws) for ws in sentence_words), default=0)
        ),
        "sentence_length_variance": _var([len(ws) for ws in sentence_words]),
        "clause_count": float(len(clauses)),
        "clauses_per_sentence": _mean(clauses_per_sentence),
        "max_clauses_per_sentence": float(max(clauses_per_sentence, default=0)),
        "mean_clause_words": _mean([len(ws) for ws in clause_words]),
        "max_clause_words": float(max((len(ws) for ws in clause_words), default=0)),
        "mean_clause_chars": _mean([sum(len(w) for w in ws) for ws in clause_words]),
        "mean_paragraph_words": _mean([len(ws) for ws in paragraph_words]),
        "max_paragraph_words": float(max((len(ws) for ws in paragraph_words), default=0)),
    }

    # Word-length buckets: 1, 2, 3, 4 and 5+ characters.
    total = len(words)
    for bucket in (1, 2, 3, 4):
        count = sum(1 for n in word_lengths if n == bucket)
        out[f"word_len{bucket}_count"] = float(count)
        out[f"word_len{bucket}_prop"] = _safe_div(count, total)
    count5 = sum(1 for n in word_lengths if n >= 5)
    out["word_len5plus_count"] = float(count5)
    out["word_len5plus_prop"] = _safe_div(count5, total)

    # English resource lookups are case-insensitive.
    lookup_words = [w.lower() for w in words] if language == "en" else list(words)
    if resources.word_freq is not None:
        freq = resources.word_freq
        types = sorted(set(lookup_words))
        out["mean_word_frequency"] = _mean([freq.get(t, 0.0) for t in types])
        out["weighted_word_frequency"] = _mean([freq.get(w, 0.0) for w in lookup_words])
    if resources.word_levels is not None:
        out.update(_level_stats(lookup_words, resources.word_levels, "word"))
    if resources.char_levels is not None:
        lookup_chars = [c.lower() for c in chars] if language == "en" else list(chars)
        out.update(_level_stats(lookup_chars, resources.char_levels, "char"))
    if resources.stopwords is not None:
        hits = sum(1 for w in lookup_words if w in resources.stopwords)
        out["stopword_prop"] = _safe_div(hits, len(words))

    if language == "en":
        out["automated_readability_index"] = automated_readability_index(
            len(chars), len(words), len(sentences)
        )
        out["linsear_write"] = linsear_write(words, text)
        if resources.dictionary is not None:
            misses = sum(1 for w in lookup_words if w not in resources.dictionary)
            out["spelling_error_count"] = float(misses)
    return out


_RESOURCE_OF = {
    "mean_word_frequency": "word_freq",
    "weighted_word_frequency": "word_freq",
    "stopword_prop": "stopwords",
    "spelling_error_count": "dictionary",
}
for _name in (
    "word_level1_count word_level1_prop word_level2_count word_level2_prop "
    "word_level3_count word_level3_prop word_level4_count word_level4_prop "
    "word_unregistered_count word_unregistered_prop mean_word_level word_advanced_prop"
).split():
    _RESOURCE_OF[_name] = "word_levels"
for _name in (
    "char_level1_count char_level1_prop char_level2_count char_level2_prop "
    "char_level3_count char_level3_prop char_level4_count char_level4_prop "
    "char_unregistered_count char_unregistered_prop mean_char_level char_advanced_prop"
).split():
    _RESOURCE_OF[_name] = "char_levels"

_EN_ONLY = frozenset({"automated_readability_index", "linsear_write", "spelling_error_count"})

_FAMILY_OF_PREFIX = (
    ("char", "character"),
    ("word", "word"),
    ("unique_word", "word"),
    ("mean_word", "word"),
    ("max_word", "word"),
    ("weighted_word", "word"),
    ("stopword", "word"),
    ("spelling", "word"),
    ("sentence", "sentence"),
    ("mean_sentence", "sentence"),
    ("max_sentence", "sentence"),
    ("clause", "sentence"),
    ("mean_clause", "sentence"),
    ("max_clauses", "sentence"),
    ("max_clause", "sentence"),
    ("clauses_per", "sentence"),
    ("paragraph", "paragraph"),
    ("mean_paragraph", "paragraph"),
    ("max_paragraph", "paragraph"),
    ("automated_readability", "readability"),
    ("linsear", "readability"),
)


def _family_of(name: str) -> str:
    best = "word"
    best_len = -1
    for prefix, family in _FAMILY_OF_PREFIX:
        if name.startswith(prefix) and len(prefix) > best_len:
            best, best_len = family, len(prefix)
    return best


def default_registry(
    language: str, resources: LexiconResources | None = None
) -> list[FeatureSpec]:
    """Feature registry for a language, filtered to the available resources.

    Order follows computation order; resource-backed features appear only
    when their lookup table is loaded.
    """
    resources = resources or LexiconResources.empty()
    names = compute_all_features("probe text.", language, resources)
    return [FeatureSpec(name, _family_of(name), _RESOURCE_OF.get(name)) for name in names]


def build_registry(
    language: str,
    resources: LexiconResources | None = None,
    enabled: Sequence[str] | None = None,
    sidecar: Sequence[str] = (),
) -> list[FeatureSpec]:
    """Default registry, optionally restricted to ``enabled`` names, plus
    sidecar-only entries appended as unimplemented specs."""
    registry = default_registry(language, resources)
    if enabled is not None:
        allowed = set(enabled)
        registry = [spec for spec in registry if spec.name in allowed]
    registry += [FeatureSpec(name, "sentence", implemented=False) for name in sidecar]
    return registry


def extract_features(
    essay: Essay,
    resources: LexiconResources | None,
    registry: Sequence[FeatureSpec],
    language: str = "en",
) -> FeatureVector:
    """Feature vector of an essay in registry order.

    Sidecar-only registry entries (``implemented=False``) are passed through
    from ``essay.sidecar_features`` by name; a missing sidecar value or a
    missing required resource is an error.
    """
    resources = resources or LexiconResources.empty()
    seen: set[str] = set()
    for spec in registry:
        if spec.name in seen:
            raise FeatureError(f"duplicate feature name {spec.name!r} in registry")
        seen.add(spec.name)
    computed = compute_all_features(essay.text, language, resources)
    names: list[str] = []
    values: list[float] = []
    for spec in registry:
        if not spec.implemented:
            sidecar = essay.sidecar_features or {}
            if spec.name not in sidecar:
                raise FeatureError(
                    f"essay {essay.id}: sidecar feature {spec.name!r} not provided"
                )
            value = float(sidecar[spec.name])
        else:
            if spec.requires_resource and getattr(resources, spec.requires_resource) is None:
                raise ConfigurationError(
                    f"feature {spec.name!r} requires resource {spec.requires_resource!r}"
                )
            if spec.name not in computed:
                raise FeatureError(
                    f"feature {spec.name!r} is not computable for language {language!r}"
                )
            value = computed[spec.name]
        names.append(spec.name)
        values.append(value)
    return FeatureVector(tuple(names), tuple(values))


@dataclass(frozen=True)
class FScoreEntry:
    spec: FeatureSpec
    f: float
    degenerate: bool


@dataclass(frozen=True)
class FScoreTable:
    """Per-feature separation scores plus the class split they were computed on."""

    entries: tuple[FScoreEntry, ...]
    n_positive: int
    n_negative: int

    def ranked(self) -> list[FScoreEntry]:
        """Degenerate separators first, then descending F; ties keep registry order."""
        order = sorted(
            range(len(self.entries)),
            key=lambda i: (
                0 if self.entries[i].degenerate else 1,
                -self.entries[i].f if not self.entries[i].degenerate else 0.0,
                i,
            ),
        )
        return [self.entries[i] for i in order]


def binarize_scores(gold_scores: Sequence[int]) -> list[bool]:
    """Median split of gold scores into positive/negative labels.

    The median is the lower-middle for even counts; if ``>= median`` labels
    everything positive the split falls back to strictly greater.
    """
    if len(set(gold_scores)) < 2:
        raise FeatureError("cannot binarize: all gold scores are equal")
    ordered = sorted(gold_scores)
    median = ordered[(len(ordered) - 1) // 2]
    labels = [g >= median for g in gold_scores]
    if all(labels):
        labels = [g > median for g in gold_scores]
    return labels


def f_score(
    values: np.ndarray,
    labels: Sequence[bool],
    registry: Sequence[FeatureSpec],
) -> FScoreTable:
    """Between-class-mean to within-class-variance ratio per feature.

    For feature column f with overall mean m, class means m+ and m- and
    sample variances v+ and v- (divisors n+-1, n--1):

        F = ((m+ - m)^2 + (m- - m)^2) / (v+ + v-)

    A denominator below ``DEGENERATE_EPS`` flags the feature as a degenerate
    separator, ranked above every finite score rather than divided by zero.
    """
    matrix = np.asarray(values, dtype=float)
    if matrix.ndim != 2 or matrix.shape[1] != len(registry):
        raise FeatureError(
            f"feature matrix shape {matrix.shape} does not match registry size {len(registry)}"
        )
    mask = np.asarray(labels, dtype=bool)
    if mask.shape[0] != matrix.shape[0]:
        raise FeatureError("labels and matrix differ in length")
    n_pos = int(mask.sum())
    n_neg = int((~mask).sum())
    if n_pos < 2 or n_neg < 2:
        raise FeatureError(f"each class needs >= 2 members, got {n_pos} positive / {n_neg} negative")
    pos = matrix[mask]
    neg = matrix[~mask]
    mean_all = matrix.mean(axis=0)
    mean_pos = pos.mean(axis=0)
    mean_neg = neg.mean(axis=0)
    numerator = (mean_pos - mean_all) ** 2 + (mean_neg - mean_all) ** 2
    denominator = pos.var(axis=0, ddof=1) + neg.var(axis=0, ddof=1)
    entries = []
    for i, spec in enumerate(registry):
        degenerate = bool(denominator[i] < DEGENERATE_EPS)
        f = math.inf if degenerate else float(numerator[i] / denominator[i])
        entries.append(FScoreEntry(spec, f, degenerate))
    return FScoreTable(tuple(entries), n_pos, n_neg)


def select_top_k(table: FScoreTable, k: int = 10) -> list[FeatureSpec]:
    """The k best-separating features, degenerate separators first."""
    if len(table.entries) < k:
        raise FeatureError(f"need at least {k} scored features, got {len(table.entries)}")
    return [entry.spec for entry in table.ranked()[:k]]


DEFAULT_AUGMENT_TEMPLATE = "{body}\n\n[features]\n{features}[/features]"


def augment(essay_text: str, fv: FeatureVector, template: str = DEFAULT_AUGMENT_TEMPLATE) -> str:
    """Essay body followed by a delimited block of ``name: value`` lines.

    Values render with 4 decimal places; rendering is deterministic, so the
    same inputs always produce byte-identical output.
    """
    if "{body}" not in template or "{features}" not in template:
        raise FeatureError("augmentation template needs {body} and {features} slots")
    block = "".join(f"{name}: {value:.4f}\n" for name, value in fv)
    return template.format(body=essay_text, features=block)
