#!/usr/bin/env python3
"""Statistical features, F-score ranking, and feature-augmented essays.

Extracts the parser-free feature registry from a synthetic corpus, ranks
features by how well they separate strong from weak essays, keeps the top
10, and renders an augmented essay the way the ranker sees it.
"""

import numpy as np

from rankscore import (
    BUILTIN_PROMPTS,
    augment,
    binarize_scores,
    default_registry,
    extract_features,
    f_score,
    make_synthetic_dataset,
    select_top_k,
    tokenize,
)

prompt = BUILTIN_PROMPTS["hsk"]
dataset = make_synthetic_dataset(prompt, n_essays=200, seed=2)

# Tokenization feeds every count-based feature.
sample = dataset.essays[0]
tokens = tokenize(sample.text, "en")
print(f"sample essay {sample.id} (gold {sample.gold_score}):")
print(f"  {len(tokens.words)} words, {len(tokens.sentences)} sentences, "
      f"{len(tokens.paragraphs)} paragraphs")

# The default registry for a language lists every computable feature.
registry = default_registry("en")
print(f"\nregistry: {len(registry)} features, e.g. "
      f"{[spec.name for spec in registry[:5]]} ...")

# F-score needs a binary split: essays at or above the median gold score
# count as positive, the rest negative.
labels = binarize_scores([e.gold_score for e in dataset.essays])
matrix = np.array(
    [extract_features(e, None, registry, "en").values for e in dataset.essays]
)
table = f_score(matrix, labels, registry)

print("\ntop 10 by F-score:")
selected = select_top_k(table, k=10)
by_name = {entry.spec.name: entry for entry in table.entries}
for spec in selected:
    entry = by_name[spec.name]
    shown = "degenerate" if entry.degenerate else f"{entry.f:8.3f}"
    print(f"  {spec.name:28} {shown}")

# Ranker inputs are the essay body plus a delimited block of the selected
# feature values (4 decimals, fixed order).
fv = extract_features(sample, None, selected, "en")
augmented = augment(sample.text, fv)
print("\naugmented essay tail:")
print("\n".join(augmented.splitlines()[-13:]))
