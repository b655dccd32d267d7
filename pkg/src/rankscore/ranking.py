"""Multi-validated pairwise comparison and search-ladder candidate inference.

A target essay descends a balanced search tree of reference essays.  At each
reference score the target is compared against both anchor essays in both
presentation orders (four comparator calls); only a unanimous sweep in one
direction is decisive, anything else is a tie.  Descent ends at a leaf
interval of the score lattice, or at a one-step halo around a reference
score when a tie is declared.
"""

from __future__ import annotations

import random
import threading
from concurrent.futures import Executor
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Protocol, Sequence

from .corpus import PromptSpec, ReferenceSet, lattice
from .seeds import derive_seed, text_fingerprint


class ComparatorError(Exception):
    """A comparator backend failed hard (transport, unregistered text, ...)."""


class ComparatorCallError(ComparatorError):
    """Failure of one of the four validation calls; carries the call index."""

    def __init__(self, call_index: int, partial: "TraversalRecord | None" = None):
        super().__init__(f"comparator failed on call {call_index}")
        self.call_index = call_index
        self.partial = partial


class LadderError(Exception):
    """The reference ladder could not be built."""


class Comparator(Protocol):
    """Pairwise judge: 1 if the first-listed essay is better, 0 otherwise.

    ``None`` marks an unparseable judgment; the validation layer scores it
    as a loss for the target essay in that single call.  Implementations
    must always return and must tolerate concurrent calls (or be used with
    a single-flight executor).
    """

    identity: str

    def compare(self, first_text: str, second_text: str) -> int | None: ...


class VerdictKind(Enum):
    TARGET_GREATER = "target_greater"
    TARGET_LESSER = "target_lesser"
    TIE = "tie"


@dataclass(frozen=True)
class Verdict:
    """Outcome of one multi-validated comparison against a reference score."""

    kind: VerdictKind
    outcomes: tuple[int, int, int, int]

    @property
    def target_wins(self) -> int:
        return self.outcomes[0] + self.outcomes[2]

    @property
    def reference_wins(self) -> int:
        return self.outcomes[1] + self.outcomes[3]


def decide(outcomes: Sequence[int]) -> VerdictKind:
    """Map the four raw comparison results to a verdict.

    The target wins calls 1 and 3 (it is listed first); the reference wins
    calls 2 and 4.  A side needs both of its wins, with the opposing side
    short of both, to be decisive; everything else is a tie.
    """
    o1, o2, o3, o4 = outcomes
    s_target = o1 + o3
    s_reference = o2 + o4
    if s_reference == 2 and s_target < 2:
        return VerdictKind.TARGET_LESSER
    if s_target == 2 and s_reference < 2:
        return VerdictKind.TARGET_GREATER
    return VerdictKind.TIE


def multi_validate(
    comparator: Comparator,
    target: str,
    ref_a: str,
    ref_b: str,
    executor: Executor | None = None,
) -> Verdict:
    """Compare a target against both anchor essays in both orders.

    Exactly four comparator calls, issued in the fixed order
    (target, ref_a), (ref_a, target), (target, ref_b), (ref_b, target);
    with an executor the four calls run concurrently.
    """
    calls = ((target, ref_a), (ref_a, target), (target, ref_b), (ref_b, target))
    if executor is None:
        raws = []
        for index, pair in enumerate(calls, start=1):
            try:
                raws.append(comparator.compare(*pair))
            except ComparatorCallError:
                raise
            except Exception as exc:
                raise ComparatorCallError(index) from exc
    else:
        futures = [executor.submit(comparator.compare, *pair) for pair in calls]
        raws = []
        for index, future in enumerate(futures, start=1):
            try:
                raws.append(future.result())
            except Exception as exc:
                raise ComparatorCallError(index) from exc
    outcomes = []
    for index, raw in enumerate(raws, start=1):
        if raw is None:
            # Unparseable judgment: the target loses this single call.
            raw = 0 if index in (1, 3) else 1
        if raw not in (0, 1):
            raise ComparatorCallError(index)
        outcomes.append(raw)
    return Verdict(decide(outcomes), tuple(outcomes))


@dataclass(frozen=True)
class LadderLeaf:
    """A terminal candidate set: a lattice interval, or a collapsed halo."""

    scores: tuple[int, ...]
    kind: str  # "interval" | "halo"

    def __post_init__(self):
        if not self.scores:
            raise LadderError("empty leaf")


@dataclass(frozen=True)
class LadderNode:
    score: int
    text_a: str
    text_b: str
    left: "LadderNode | LadderLeaf"
    right: "LadderNode | LadderLeaf"


@dataclass(frozen=True)
class ReferenceLadder:
    """Balanced search tree over reference scores.

    The root is the median reference score (lower-middle on even counts);
    each even-count sublist roots at the middle score nearer its parent, so
    the leaf between two lattice-adjacent references is always reached by
    two consecutive verdicts.
    """

    prompt: PromptSpec
    reference_scores: tuple[int, ...]
    root: LadderNode

    def tie_halo(self, score: int) -> tuple[int, ...]:
        """Scores within one lattice step of a reference score."""
        step = self.prompt.step
        return tuple(
            s
            for s in (score - step, score, score + step)
            if self.prompt.score_min <= s <= self.prompt.score_max
        )

    @property
    def depth(self) -> int:
        def walk(node: LadderNode | LadderLeaf) -> int:
            if isinstance(node, LadderLeaf):
                return 0
            return 1 + max(walk(node.left), walk(node.right))

        return walk(self.root)

    def leaves(self) -> list[LadderLeaf]:
        out: list[LadderLeaf] = []

        def walk(node: LadderNode | LadderLeaf) -> None:
            if isinstance(node, LadderLeaf):
                out.append(node)
            else:
                walk(node.left)
                walk(node.right)

        walk(self.root)
        return out

    def outcome_sets(self) -> list[tuple[int, ...]]:
        """Every candidate set a traversal can produce, in lattice order.

        Interleaves the gap leaves with the tie halo of each reference.
        """
        sets: list[tuple[int, ...]] = []
        leaves = self.leaves()
        for i, ref in enumerate(self.reference_scores):
            sets.append(leaves[i].scores)
            sets.append(self.tie_halo(ref))
        sets.append(leaves[-1].scores)
        return sets


def _gap_leaf(prompt: PromptSpec, refs: Sequence[int], lower: int, upper: int) -> LadderLeaf:
    """Leaf between refs[lower] and refs[upper] (-1 / len(refs) mark the edges)."""
    step = prompt.step
    lo = prompt.score_min if lower < 0 else refs[lower] + step
    hi = prompt.score_max if upper >= len(refs) else refs[upper] - step
    if lo <= hi:
        return LadderLeaf(tuple(range(lo, hi + 1, step)), "interval")
    # Empty gap (adjacent-on-lattice references, or a reference sitting on a
    # lattice edge): collapse to the nearer reference's tie halo.
    anchor = refs[lower] if lower >= 0 else refs[upper]
    halo = tuple(
        s
        for s in (anchor - step, anchor, anchor + step)
        if prompt.score_min <= s <= prompt.score_max
    )
    return LadderLeaf(halo, "halo")


def build_ladder(
    reference_set: ReferenceSet,
    prompt: PromptSpec,
    augmented_texts: Mapping[str, str],
) -> ReferenceLadder:
    """Arrange reference essays in a balanced search tree over their scores.

    ``augmented_texts`` maps reference essay ids to their feature-augmented
    texts, which become the comparison anchors at each node.
    """
    refs = reference_set.scores
    if not refs:
        raise LadderError("reference set is empty")
    lat = set(lattice(prompt))
    for ref in refs:
        if ref not in lat:
            raise LadderError(f"reference score {ref} is off the lattice of {prompt.id}")
    texts: dict[int, tuple[str, str]] = {}
    for score in refs:
        pair = reference_set.essays[score]
        if len(pair) < 2:
            raise LadderError(f"reference score {score}: need two anchor essays")
        try:
            texts[score] = (augmented_texts[pair[0].id], augmented_texts[pair[1].id])
        except KeyError as exc:
            raise LadderError(f"no augmented text for reference essay {exc.args[0]!r}") from None

    def build(lo: int, hi: int, side: str) -> LadderNode | LadderLeaf:
        if lo > hi:
            return _gap_leaf(prompt, refs, lo - 1, hi + 1)
        count = hi - lo + 1
        if count % 2 == 1:
            mid = lo + count // 2
        elif side == "left":
            # Nearer the parent above: upper-middle.
            mid = lo + count // 2
        else:
            mid = lo + (count - 1) // 2
        score = refs[mid]
        text_a, text_b = texts[score]
        return LadderNode(
            score,
            text_a,
            text_b,
            build(lo, mid - 1, "left"),
            build(mid + 1, hi, "right"),
        )

    root = build(0, len(refs) - 1, "root")
    assert isinstance(root, LadderNode)
    return ReferenceLadder(prompt, tuple(refs), root)


@dataclass(frozen=True)
class TraversalRecord:
    """Which references were visited, with what verdicts, at what cost."""

    steps: tuple[tuple[int, VerdictKind], ...]
    calls: int
    terminal: str  # "leaf" | "tie"


@dataclass(frozen=True)
class CandidateScoreSet:
    """Ordered nonempty subset of the lattice produced by one traversal."""

    scores: tuple[int, ...]
    provenance: TraversalRecord | None = None

    def __post_init__(self):
        if not self.scores:
            raise ValueError("candidate score set is empty")
        if list(self.scores) != sorted(self.scores):
            raise ValueError("candidate scores must be ascending")

    @property
    def calls(self) -> int:
        return self.provenance.calls if self.provenance else 0


def infer_candidate_set(
    comparator: Comparator,
    target_augmented: str,
    ladder: ReferenceLadder,
    executor: Executor | None = None,
) -> CandidateScoreSet:
    """Descend the ladder with multi-validated comparisons.

    A decisive verdict moves toward higher or lower references; a tie stops
    immediately with the one-step halo around the current reference score.
    Total comparator calls are 4 per visited node.
    """
    node: LadderNode | LadderLeaf = ladder.root
    steps: list[tuple[int, VerdictKind]] = []
    calls = 0
    while isinstance(node, LadderNode):
        try:
            verdict = multi_validate(comparator, target_augmented, node.text_a, node.text_b, executor)
        except ComparatorCallError as exc:
            raise ComparatorCallError(
                exc.call_index, TraversalRecord(tuple(steps), calls, "aborted")
            ) from exc
        calls += 4
        steps.append((node.score, verdict.kind))
        if verdict.kind is VerdictKind.TIE:
            return CandidateScoreSet(
                ladder.tie_halo(node.score), TraversalRecord(tuple(steps), calls, "tie")
            )
        node = node.right if verdict.kind is VerdictKind.TARGET_GREATER else node.left
    return CandidateScoreSet(node.scores, TraversalRecord(tuple(steps), calls, "leaf"))


def candidate_accuracy(sets: Sequence[CandidateScoreSet], golds: Sequence[int]) -> float:
    """Fraction of essays whose gold score fell inside its candidate set."""
    if len(sets) != len(golds):
        raise ValueError(f"{len(sets)} candidate sets vs {len(golds)} gold scores")
    if not sets:
        raise ValueError("no candidate sets")
    hits = sum(1 for cs, gold in zip(sets, golds) if gold in cs.scores)
    return hits / len(sets)


@dataclass(frozen=True)
class NoisyOracleConfig:
    """Synthetic comparator: flips the true order with a fixed probability.

    ``tie_behavior`` governs comparisons between equal gold scores:
    "coin" answers each call with a fair coin; "first_listed" always backs
    the first-listed essay (pure position bias, which multi-validation
    resolves to a tie).
    """

    flip_probability: float = 0.0
    seed: int = 0
    tie_behavior: str = "coin"

    def __post_init__(self):
        if not 0.0 <= self.flip_probability <= 1.0:
            raise ValueError(f"flip_probability must be in [0, 1], got {self.flip_probability}")
        if self.tie_behavior not in ("coin", "first_listed"):
            raise ValueError(f"unknown tie_behavior {self.tie_behavior!r}")


class OracleComparator:
    """Gold-score comparator with independent noise per call.

    Randomness is keyed by (seed, ordered text pair, occurrence index), so
    results do not depend on thread interleaving: any call sequence over
    distinct pairs gets the same answers under any schedule, while repeated
    calls on the same pair resample independently.
    """

    def __init__(self, golds: Mapping[str, int] | None = None, config: NoisyOracleConfig | None = None):
        self.config = config or NoisyOracleConfig()
        self._golds: dict[str, int] = dict(golds or {})
        self._occurrences: dict[tuple[bytes, bytes], int] = {}
        self._lock = threading.Lock()

    @property
    def identity(self) -> str:
        cfg = self.config
        return f"oracle(p={cfg.flip_probability}, seed={cfg.seed}, tie={cfg.tie_behavior})"

    def register(self, text: str, gold_score: int) -> None:
        self._golds[text] = gold_score

    def _lookup(self, text: str) -> int:
        try:
            return self._golds[text]
        except KeyError:
            raise ComparatorError("compared text is not registered with a gold score") from None

    def compare(self, first_text: str, second_text: str) -> int:
        gold_first = self._lookup(first_text)
        gold_second = self._lookup(second_text)
        key = (text_fingerprint(first_text), text_fingerprint(second_text))
        with self._lock:
            occurrence = self._occurrences.get(key, 0)
            self._occurrences[key] = occurrence + 1
        rng = random.Random(derive_seed(self.config.seed, key[0].hex(), key[1].hex(), occurrence))
        if gold_first == gold_second:
            if self.config.tie_behavior == "first_listed":
                answer = 1
            else:
                answer = 1 if rng.random() < 0.5 else 0
        else:
            answer = 1 if gold_first > gold_second else 0
        if self.config.flip_probability and rng.random() < self.config.flip_probability:
            answer = 1 - answer
        return answer


def oracle_comparator(
    gold_lookup: Mapping[str, int], config: NoisyOracleConfig | None = None
) -> OracleComparator:
    """Build a noisy oracle over registered (text -> gold score) pairs."""
    return OracleComparator(gold_lookup, config)
