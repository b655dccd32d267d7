from __future__ import annotations

import pytest

from rankscore.corpus import BUILTIN_PROMPTS, Essay, PromptSpec, ReferenceSet
from rankscore.ranking import ReferenceLadder, build_ladder


def anchors_for(prompt: PromptSpec) -> tuple[ReferenceSet, dict[str, str], dict[str, int]]:
    """Synthetic anchor essays for a prompt's configured reference scores.

    Returns (reference set, augmented-text map by essay id, gold map by text).
    """
    essays: dict[int, tuple[Essay, ...]] = {}
    augmented: dict[str, str] = {}
    golds: dict[str, int] = {}
    for score in prompt.reference_scores:
        pair = []
        for tag in ("a", "b"):
            text = f"anchor {score} {tag}"
            essay = Essay(f"ref-{score}-{tag}", prompt.id, text, score)
            pair.append(essay)
            augmented[essay.id] = text
            golds[text] = score
        essays[score] = tuple(pair)
    return ReferenceSet(essays), augmented, golds


def ladder_for(prompt: PromptSpec) -> ReferenceLadder:
    reference_set, augmented, _ = anchors_for(prompt)
    return build_ladder(reference_set, prompt, augmented)


class ScriptedComparator:
    """Plays a fixed verdict per reference score.

    Anchor texts follow the ``anchors_for`` convention ("anchor <score> <tag>");
    any other text is treated as the target.  "greater"/"lesser" produce
    unanimous sweeps; "tie" backs whichever essay is listed first.
    """

    identity = "scripted"

    def __init__(self, plan: dict[int, str]):
        self.plan = plan
        self.calls: list[tuple[str, str]] = []

    def compare(self, first: str, second: str) -> int:
        self.calls.append((first, second))
        target_first = not first.startswith("anchor ")
        anchor = second if target_first else first
        score = int(anchor.split()[1])
        action = self.plan[score]
        if action == "tie":
            return 1
        if action == "greater":
            return 1 if target_first else 0
        return 0 if target_first else 1


def brute_force_qwk(gold, pred, score_min, score_max, step=1) -> float:
    """Independent quadratic-weighted-kappa oracle: explicit double loops."""
    lat = list(range(score_min, score_max + 1, step))
    n = len(lat)
    index = {s: i for i, s in enumerate(lat)}
    observed = [[0.0] * n for _ in range(n)]
    for g, p in zip(gold, pred):
        observed[index[g]][index[p]] += 1.0
    hist_gold = [sum(observed[i][j] for j in range(n)) for i in range(n)]
    hist_pred = [sum(observed[i][j] for i in range(n)) for j in range(n)]
    total = float(len(gold))
    numerator = 0.0
    denominator = 0.0
    for i in range(n):
        for j in range(n):
            w = (i - j) ** 2 / (n - 1) ** 2 if n > 1 else 0.0
            numerator += w * observed[i][j]
            denominator += w * hist_gold[i] * hist_pred[j] / total
    if denominator == 0.0:
        return 1.0 if list(gold) == list(pred) else 0.0
    return 1.0 - numerator / denominator


@pytest.fixture
def hsk() -> PromptSpec:
    return BUILTIN_PROMPTS["hsk"]


@pytest.fixture
def hsk_ladder(hsk) -> ReferenceLadder:
    return ladder_for(hsk)
