#!/usr/bin/env python3
"""Score lattices and reference selection.

Every prompt scores its essays on an arithmetic lattice (min, min+step, ...,
max).  Pairwise ranking needs anchors: a handful of reference scores, and
two reference essays at each of them.
"""

from rankscore import (
    BUILTIN_PROMPTS,
    PromptSpec,
    lattice,
    make_synthetic_dataset,
    select_reference_essays,
    select_reference_scores,
    split,
)

# The nine built-in prompt geometries, with their configured reference scores.
print("built-in prompts")
print(f"{'prompt':8} {'range':>9} {'step':>4}  reference scores")
for prompt in BUILTIN_PROMPTS.values():
    refs = ", ".join(str(r) for r in prompt.reference_scores)
    print(f"{prompt.id:8} {prompt.score_min:>4}-{prompt.score_max:<4} {prompt.step:>4}  {refs}")

# The chinese exam lattice has 13 scores, 40 to 100 in steps of 5.
hsk = BUILTIN_PROMPTS["hsk"]
print("\nhsk lattice:", lattice(hsk))

# Without configured reference scores, a middle-rule heuristic kicks in:
# small lattices take the central score (odd) or the two middle scores
# (even); large lattices take up to 5 equally spaced interior scores.
for bare in (PromptSpec("small-odd", 0, 4), PromptSpec("small-even", 1, 6), PromptSpec("large", 40, 100, 5)):
    print(f"auto references for {bare.id} ({bare.score_min}-{bare.score_max}):",
          select_reference_scores(bare))

# Reference essays are drawn at random (seeded) from the train split,
# two per reference score; they are never evaluation targets.
dataset = make_synthetic_dataset(hsk, n_essays=260, seed=1)
train, test = split(dataset, test_fraction=0.2, seed=1)
print(f"\nsplit: {len(train)} train / {len(test)} test")

refs = select_reference_essays(train, select_reference_scores(hsk), per_score=2, seed=1)
for score in refs.scores:
    print(f"score {score}: anchors {[e.id for e in refs.essays[score]]}")
print("anchor ids overlap the test split:", bool(refs.ids() & test.ids()))
