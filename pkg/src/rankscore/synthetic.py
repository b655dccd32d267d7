"""Deterministic synthetic corpora for desk-scale verification runs.

Essay quality is simulated by construction: better-scored essays are longer,
use a wider vocabulary and longer words, so statistical features genuinely
correlate with gold scores.  Texts are guaranteed unique per essay (oracle
backends key their answers by exact text).
"""

from __future__ import annotations

import json
import random
from pathlib import Path

from .corpus import Dataset, Essay, PromptSpec, Provenance, lattice

_BASE_VOCAB = (
    "the a of and to in essay idea point reader writer school day work life "
    "city water food music time friend family question answer problem change "
    "story view reason example effect cause plan goal result study test page"
).split()

_RICH_VOCAB = (
    "argument evidence structure coherent paragraph conclusion perspective "
    "analysis development vocabulary expression transition metaphor precise "
    "persuasive elaborate nuanced compelling observation insightful rigorous"
).split()


def make_synthetic_dataset(
    prompt: PromptSpec,
    n_essays: int = 500,
    seed: int = 0,
    min_per_score: int = 5,
) -> Dataset:
    """A corpus whose texts get longer and richer as the gold score rises.

    Every lattice score receives at least ``min_per_score`` essays so that
    splits and reference selection always have material to work with.
    """
    rng = random.Random(seed)
    lat = lattice(prompt)
    if n_essays < min_per_score * len(lat):
        raise ValueError(
            f"need at least {min_per_score * len(lat)} essays to cover the lattice"
        )
    golds = [lat[i % len(lat)] for i in range(min_per_score * len(lat))]
    golds += [lat[rng.randrange(len(lat))] for _ in range(n_essays - len(golds))]
    rng.shuffle(golds)

    essays = []
    span = max(prompt.score_max - prompt.score_min, 1)
    for index, gold in enumerate(golds):
        quality = (gold - prompt.score_min) / span
        n_sentences = 3 + int(quality * 9) + rng.randrange(2)
        sentences = []
        for _ in range(n_sentences):
            length = 5 + int(quality * 7) + rng.randrange(3)
            words = []
            for _ in range(length):
                if rng.random() < quality * 0.6:
                    words.append(rng.choice(_RICH_VOCAB))
                else:
                    words.append(rng.choice(_BASE_VOCAB))
            # Longer sentences pick up a clause break.
            if length >= 8 and rng.random() < 0.4 + quality * 0.4:
                words[length // 2] += ","
            sentences.append(" ".join(words).capitalize() + ".")
        # Unique marker sentence keeps texts distinct without touching style.
        sentences.append(f"Essay number {index} closes here.")
        n_paragraphs = min(1 + int(quality * 2) + rng.randrange(2), len(sentences))
        paragraphs = [" ".join(sentences[i::n_paragraphs]) for i in range(n_paragraphs)]
        text = "\n".join(p for p in paragraphs if p)
        essays.append(Essay(f"syn-{index:04d}", prompt.id, text, gold))
    return Dataset(prompt, tuple(essays), Provenance(f"synthetic(seed={seed})"))


def write_jsonl(dataset: Dataset, path: str | Path) -> Path:
    """Persist a dataset in the standard ingestion format."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for essay in dataset.essays:
            row = {
                "id": essay.id,
                "prompt_id": essay.prompt_id,
                "text": essay.text,
                "score": essay.gold_score,
            }
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")
    return path
