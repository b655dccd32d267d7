"""Scorer backends and fine-tuning data generation with calibrated candidate sets.

The scorer resolves a candidate score set to one final score.  Training data
for an external scorer is generated from the train split: candidate sets are
exact by construction (recoverable from the gold score with no comparator
calls), so a configured fraction is deliberately corrupted to an adjacent
set, keeping the training accuracy a fixed gap below the ranker's measured
test accuracy.
"""

from __future__ import annotations

import json
import logging
import random
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Protocol, Sequence

from .corpus import ConfigurationError, Dataset, PromptSpec, lattice, nearest_lattice_score
from .ranking import (
    CandidateScoreSet,
    LadderLeaf,
    LadderNode,
    ReferenceLadder,
    TraversalRecord,
    VerdictKind,
)
from .seeds import derive_seed, text_fingerprint

logger = logging.getLogger(__name__)


class ScoringError(Exception):
    """Scoring or training-data generation failed."""


class Scorer(Protocol):
    """Maps (essay text, candidate score set, prompt) to a final score.

    Backends should return a lattice score; the engine clamps violations to
    the nearest lattice point and counts them.
    """

    identity: str

    def score(self, essay_text: str, candidate_set: Sequence[int], prompt: PromptSpec) -> int: ...


@dataclass(frozen=True)
class PairwiseExample:
    """One ranker training pair; the label says which listed essay scores higher."""

    first_id: str
    first_text: str
    second_id: str
    second_text: str
    label: int  # 1 or 2

    def __post_init__(self):
        if self.label not in (1, 2):
            raise ValueError(f"label must be 1 or 2, got {self.label}")


@dataclass(frozen=True)
class ScorerExample:
    """One scorer training row; corrupted rows exclude the gold on purpose."""

    essay_id: str
    text: str
    candidate_scores: tuple[int, ...]
    gold: int
    corrupted: bool

    def __post_init__(self):
        inside = self.gold in self.candidate_scores
        if self.corrupted and inside:
            raise ValueError(f"essay {self.essay_id}: corrupted set contains the gold score")
        if not self.corrupted and not inside:
            raise ValueError(f"essay {self.essay_id}: clean set misses the gold score")


@dataclass(frozen=True)
class CalibrationConfig:
    """Target scorer-training accuracy: ranker test accuracy minus a gap."""

    ranker_test_accuracy: float
    gap: float = 0.15
    seed: int = 0

    @property
    def target_accuracy(self) -> float:
        return min(1.0, max(0.0, self.ranker_test_accuracy - self.gap))


def generate_pairwise_training(
    train: Dataset,
    augmented: Mapping[str, str],
    k: int = 5,
    seed: int = 0,
) -> list[PairwiseExample]:
    """For each training essay, pair it with k different-score essays.

    Partners are sampled uniformly without replacement; each pair is emitted
    once, in a seeded fair-coin presentation order, with the label always
    consistent with the gold scores.  Essays short of k eligible partners
    emit fewer pairs with a warning.
    """
    rng = random.Random(seed)
    essays = sorted(train.essays, key=lambda e: e.id)
    examples: list[PairwiseExample] = []
    for essay in essays:
        pool = [e for e in essays if e.gold_score != essay.gold_score]
        if len(pool) < k:
            logger.warning(
                "essay %s: only %d different-score partners available (wanted %d)",
                essay.id,
                len(pool),
                k,
            )
        partners = rng.sample(pool, min(k, len(pool)))
        for partner in partners:
            pair = (essay, partner) if rng.random() < 0.5 else (partner, essay)
            label = 1 if pair[0].gold_score > pair[1].gold_score else 2
            try:
                texts = (augmented[pair[0].id], augmented[pair[1].id])
            except KeyError as exc:
                raise ConfigurationError(f"no augmented text for essay {exc.args[0]!r}") from None
            examples.append(PairwiseExample(pair[0].id, texts[0], pair[1].id, texts[1], label))
    return examples


def true_candidate_set(gold: int, ladder: ReferenceLadder) -> CandidateScoreSet:
    """The set a perfect comparator would produce for this gold score.

    Pure lattice arithmetic: descend by comparing the gold score itself,
    tieing exactly on reference scores.  No comparator calls.
    """
    if gold not in lattice(ladder.prompt):
        raise ValueError(f"gold score {gold} is off the lattice of {ladder.prompt.id}")
    node: LadderNode | LadderLeaf = ladder.root
    steps = []
    while isinstance(node, LadderNode):
        if gold == node.score:
            steps.append((node.score, VerdictKind.TIE))
            return CandidateScoreSet(
                ladder.tie_halo(node.score), TraversalRecord(tuple(steps), 0, "tie")
            )
        kind = VerdictKind.TARGET_GREATER if gold > node.score else VerdictKind.TARGET_LESSER
        steps.append((node.score, kind))
        node = node.right if gold > node.score else node.left
    return CandidateScoreSet(node.scores, TraversalRecord(tuple(steps), 0, "leaf"))


def corrupt_candidate_set(
    candidate_set: CandidateScoreSet,
    gold: int,
    ladder: ReferenceLadder,
    seed: int = 0,
) -> CandidateScoreSet:
    """Replace a gold-containing set with the nearest set that excludes gold.

    Adjacency runs over the ladder's ordered outcome family (gap leaves and
    tie halos); a fair coin picks the side when both directions offer a
    valid set, edges force the only available direction.
    """
    if gold not in candidate_set.scores:
        raise ValueError("corruption expects the gold score inside the candidate set")
    family = ladder.outcome_sets()
    try:
        pos = family.index(candidate_set.scores)
    except ValueError:
        raise ScoringError("candidate set is not an outcome of this ladder") from None
    left = next((s for s in reversed(family[:pos]) if gold not in s), None)
    right = next((s for s in family[pos + 1 :] if gold not in s), None)
    if left is None and right is None:
        raise ScoringError("ladder is degenerate: no adjacent set excludes the gold score")
    if left is None:
        chosen = right
    elif right is None:
        chosen = left
    else:
        rng = random.Random(seed)
        chosen = left if rng.random() < 0.5 else right
    assert chosen is not None
    return CandidateScoreSet(chosen)


def generate_scorer_training(
    train: Dataset,
    ladder: ReferenceLadder,
    calibration: CalibrationConfig,
) -> list[ScorerExample]:
    """Scorer training rows with an exact count of corrupted candidate sets.

    Exactly round((1 - target) * M) rows are corrupted (seeded uniform
    choice), so the achieved accuracy lands within 1/M of the target.
    """
    essays = sorted(train.essays, key=lambda e: e.id)
    m = len(essays)
    if m == 0:
        return []
    target = calibration.target_accuracy
    n_corrupt = int((1.0 - target) * m + 0.5)
    rng = random.Random(calibration.seed)
    corrupt_indices = set(rng.sample(range(m), n_corrupt))
    examples: list[ScorerExample] = []
    for i, essay in enumerate(essays):
        exact = true_candidate_set(essay.gold_score, ladder)
        if i in corrupt_indices:
            corrupted = corrupt_candidate_set(
                exact, essay.gold_score, ladder, derive_seed(calibration.seed, "corrupt", essay.id)
            )
            examples.append(
                ScorerExample(essay.id, essay.text, corrupted.scores, essay.gold_score, True)
            )
        else:
            examples.append(
                ScorerExample(essay.id, essay.text, exact.scores, essay.gold_score, False)
            )
    return examples


class MidpointScorer:
    """Deterministic baseline: the lower-middle element of the candidate set."""

    identity = "midpoint"

    def score(self, essay_text: str, candidate_set: Sequence[int], prompt: PromptSpec) -> int:
        if not candidate_set:
            raise ScoringError("empty candidate set")
        ordered = sorted(candidate_set)
        return ordered[(len(ordered) - 1) // 2]


def midpoint_scorer() -> MidpointScorer:
    return MidpointScorer()


class OracleScorer:
    """Upper-bound scorer: gold when available, else the nearest candidate.

    With probability ``noise_p`` the result is perturbed by one lattice step
    while staying inside the candidate set.  Randomness is keyed by
    (seed, essay text, occurrence), so it is schedule-independent.
    """

    def __init__(self, golds: Mapping[str, int] | None = None, noise_p: float = 0.0, seed: int = 0):
        if not 0.0 <= noise_p <= 1.0:
            raise ValueError(f"noise_p must be in [0, 1], got {noise_p}")
        self._golds: dict[str, int] = dict(golds or {})
        self.noise_p = noise_p
        self.seed = seed
        self._occurrences: dict[bytes, int] = {}
        self._lock = threading.Lock()

    @property
    def identity(self) -> str:
        return f"oracle(noise={self.noise_p}, seed={self.seed})"

    def register(self, text: str, gold_score: int) -> None:
        self._golds[text] = gold_score

    def score(self, essay_text: str, candidate_set: Sequence[int], prompt: PromptSpec) -> int:
        try:
            gold = self._golds[essay_text]
        except KeyError:
            raise ScoringError("essay text is not registered with a gold score") from None
        ordered = sorted(candidate_set)
        result = gold if gold in ordered else min(ordered, key=lambda s: (abs(s - gold), s))
        if self.noise_p:
            digest = text_fingerprint(essay_text)
            with self._lock:
                occurrence = self._occurrences.get(digest, 0)
                self._occurrences[digest] = occurrence + 1
            rng = random.Random(derive_seed(self.seed, digest.hex(), occurrence))
            if rng.random() < self.noise_p:
                neighbors = [s for s in (result - prompt.step, result + prompt.step) if s in ordered]
                if neighbors:
                    result = neighbors[0] if len(neighbors) == 1 or rng.random() < 0.5 else neighbors[1]
        return result


def oracle_scorer(
    gold_lookup: Mapping[str, int], noise_p: float = 0.0, seed: int = 0
) -> OracleScorer:
    return OracleScorer(gold_lookup, noise_p, seed)


def score_with_clamp(
    scorer: Scorer,
    essay_text: str,
    candidate_set: Sequence[int],
    prompt: PromptSpec,
) -> tuple[int, bool]:
    """Invoke a scorer and clamp off-lattice results to the nearest lattice score.

    Returns (score, violated) where ``violated`` marks a clamped result.
    """
    raw = scorer.score(essay_text, candidate_set, prompt)
    if raw in lattice(prompt):
        return int(raw), False
    return nearest_lattice_score(raw, prompt), True


def write_pairwise_jsonl(examples: Sequence[PairwiseExample], path: str | Path) -> Path:
    """Instruction-ready pairwise rows: both texts in their emitted order plus the label."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for ex in examples:
            row = {
                "essay_1": ex.first_text,
                "essay_1_id": ex.first_id,
                "essay_2": ex.second_text,
                "essay_2_id": ex.second_id,
                "label": ex.label,
            }
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")
    return path


def write_scorer_jsonl(
    examples: Sequence[ScorerExample], prompt: PromptSpec, path: str | Path
) -> Path:
    """Scorer rows carrying the same slots the scorer template consumes."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for ex in examples:
            row = {
                "essay": ex.text,
                "essay_id": ex.essay_id,
                "candidate_scores": ", ".join(str(s) for s in ex.candidate_scores),
                "score_min": prompt.score_min,
                "score_max": prompt.score_max,
                "prompt_topic": prompt.topic,
                "gold": ex.gold,
                "corrupted": ex.corrupted,
            }
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")
    return path
