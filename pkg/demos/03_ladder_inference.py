#!/usr/bin/env python3
"""Multi-validated comparisons and candidate inference on the reference ladder.

A comparison against one reference score is validated four ways (two anchor
essays, both presentation orders); only a unanimous sweep is decisive.
Decisive verdicts walk a balanced tree of reference scores down to a lattice
interval; a tie stops at a one-step halo.
"""

from rankscore import (
    BUILTIN_PROMPTS,
    NoisyOracleConfig,
    build_ladder,
    infer_candidate_set,
    lattice,
    multi_validate,
    oracle_comparator,
    select_reference_essays,
    make_synthetic_dataset,
)

prompt = BUILTIN_PROMPTS["hsk"]
dataset = make_synthetic_dataset(prompt, n_essays=260, seed=3)
refs = select_reference_essays(dataset, prompt.reference_scores, seed=3)

# In this demo the "augmented" texts are the raw anchor texts.
augmented = {e.id: e.text for pair in refs.essays.values() for e in pair}
ladder = build_ladder(refs, prompt, augmented)
print(f"ladder root {ladder.root.score}, depth {ladder.depth}")
print("leaves:", [leaf.scores for leaf in ladder.leaves()])

# A perfect comparator knows the gold scores of every registered text.
golds = {e.text: e.gold_score for pair in refs.essays.values() for e in pair}
target = "the target essay body"
golds[target] = 65
perfect = oracle_comparator(golds, NoisyOracleConfig(flip_probability=0.0, seed=3))

# One multi-validated comparison against the root's two anchors:
root = ladder.root
verdict = multi_validate(perfect, target, root.text_a, root.text_b)
print(f"\nvs reference {root.score}: outcomes {verdict.outcomes} -> {verdict.kind.value}")

# Full descent: gold 65 sits between references 60 and 70, so two verdicts
# (below 70, above 60) pin the between-leaf {65} at a cost of 8 calls.
cs = infer_candidate_set(perfect, target, ladder)
print(f"candidate set {cs.scores} after {cs.calls} calls; "
      f"path {[(s, k.value) for s, k in cs.provenance.steps]}")

# A noisy comparator flips each call independently; ties surface as halos.
print("\nnoisy traversals of the same target (p = 0.35):")
for seed in range(4):
    noisy = oracle_comparator(golds, NoisyOracleConfig(0.35, seed=seed))
    cs = infer_candidate_set(noisy, target, ladder)
    print(f"  seed {seed}: {cs.scores} ({cs.provenance.terminal}, {cs.calls} calls)")

# Equal-gold comparisons answered with pure position bias ("whoever is
# listed first wins") cancel out to a tie and its halo.
golds_at_ref = dict(golds)
golds_at_ref[target] = 70
biased = oracle_comparator(golds_at_ref, NoisyOracleConfig(0.0, 0, "first_listed"))
cs = infer_candidate_set(biased, target, ladder)
print(f"\ntarget at reference 70 with position-biased ties: {cs.scores}")
print("full lattice for reference:", lattice(prompt))
