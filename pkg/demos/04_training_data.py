#!/usr/bin/env python3
"""Fine-tuning data: pairwise ranking pairs and calibrated scorer rows.

Pairwise data pairs every training essay with k different-score partners.
Scorer rows carry candidate sets that are exact by construction, so a
controlled fraction is corrupted to an adjacent set: the training accuracy
sits a configured gap below the ranker's test accuracy.
"""

import collections
import tempfile
from pathlib import Path

from rankscore import (
    BUILTIN_PROMPTS,
    CalibrationConfig,
    build_ladder,
    generate_pairwise_training,
    generate_scorer_training,
    make_synthetic_dataset,
    select_reference_essays,
    split,
    true_candidate_set,
)
from rankscore.scoring import write_pairwise_jsonl, write_scorer_jsonl

prompt = BUILTIN_PROMPTS["hsk"]
dataset = make_synthetic_dataset(prompt, n_essays=260, seed=4)
train, _ = split(dataset, 0.2, seed=4)
augmented = {e.id: e.text for e in dataset.essays}

# k partners per essay, sampled among different-score essays, order coined.
k = 5
pairwise = generate_pairwise_training(train, augmented, k=k, seed=4)
print(f"pairwise: {len(train)} train essays x k={k} -> {len(pairwise)} pairs")
label_counts = collections.Counter(ex.label for ex in pairwise)
print(f"label positions: {dict(label_counts)} (coin-balanced)")

refs = select_reference_essays(train, prompt.reference_scores, seed=4)
ladder = build_ladder(refs, prompt, augmented)

# Exact candidate sets cost no comparator calls: they follow from the gold.
for gold in (65, 50, 100):
    print(f"exact candidate set for gold {gold}: {true_candidate_set(gold, ladder).scores}")

# Suppose the ranker measured 87% test accuracy; a 15% gap targets 72%.
calibration = CalibrationConfig(ranker_test_accuracy=0.87, gap=0.15, seed=4)
rows = generate_scorer_training(train, ladder, calibration)
corrupted = [r for r in rows if r.corrupted]
print(f"\nscorer rows: {len(rows)}, corrupted {len(corrupted)} "
      f"(target accuracy {calibration.target_accuracy:.2f}, "
      f"achieved {(len(rows) - len(corrupted)) / len(rows):.3f})")
sample = corrupted[0]
print(f"corrupted example: gold {sample.gold} vs candidates {sample.candidate_scores}")

with tempfile.TemporaryDirectory() as tmp:
    p1 = write_pairwise_jsonl(pairwise, Path(tmp) / "pairwise.jsonl")
    p2 = write_scorer_jsonl(rows, prompt, Path(tmp) / "scorer_train.jsonl")
    print(f"\nwrote {p1.name} ({p1.stat().st_size} bytes) and "
          f"{p2.name} ({p2.stat().st_size} bytes)")
