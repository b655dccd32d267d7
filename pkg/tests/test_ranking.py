import itertools
import math

import pytest

from rankscore.corpus import BUILTIN_PROMPTS, PromptSpec, lattice
from rankscore.ranking import (
    CandidateScoreSet,
    ComparatorCallError,
    ComparatorError,
    LadderError,
    NoisyOracleConfig,
    OracleComparator,
    VerdictKind,
    build_ladder,
    candidate_accuracy,
    decide,
    infer_candidate_set,
    multi_validate,
    oracle_comparator,
)

from conftest import ScriptedComparator, anchors_for, ladder_for


class SequenceComparator:
    """Returns a scripted sequence of raw call results."""

    identity = "sequence"

    def __init__(self, results):
        self.results = list(results)
        self.calls = []

    def compare(self, first, second):
        self.calls.append((first, second))
        return self.results.pop(0)


# -- multi_validate ------------------------------------------------------------


def expected_verdict(o1, o2, o3, o4):
    target, reference = o1 + o3, o2 + o4
    if reference == 2 and target < 2:
        return VerdictKind.TARGET_LESSER
    if target == 2 and reference < 2:
        return VerdictKind.TARGET_GREATER
    return VerdictKind.TIE


def test_truth_table_all_16_combinations():
    for outcomes in itertools.product((0, 1), repeat=4):
        assert decide(outcomes) is expected_verdict(*outcomes)
        cmp = SequenceComparator(outcomes)
        verdict = multi_validate(cmp, "t", "a", "b")
        assert verdict.kind is expected_verdict(*outcomes)
        assert verdict.outcomes == outcomes


def test_decisive_patterns():
    assert decide((1, 0, 1, 0)) is VerdictKind.TARGET_GREATER
    assert decide((0, 1, 0, 1)) is VerdictKind.TARGET_LESSER
    assert decide((1, 1, 1, 1)) is VerdictKind.TIE  # pure position bias


def test_call_order_and_count():
    cmp = SequenceComparator([1, 0, 1, 0])
    multi_validate(cmp, "t", "a", "b")
    assert cmp.calls == [("t", "a"), ("a", "t"), ("t", "b"), ("b", "t")]


def test_parse_failure_counts_as_target_loss():
    # None in a target-first call reads as 0; in a reference-first call as 1.
    verdict = multi_validate(SequenceComparator([None, None, None, None]), "t", "a", "b")
    assert verdict.outcomes == (0, 1, 0, 1)
    assert verdict.kind is VerdictKind.TARGET_LESSER
    verdict = multi_validate(SequenceComparator([1, None, 1, 0]), "t", "a", "b")
    assert verdict.outcomes == (1, 1, 1, 0)
    assert verdict.kind is VerdictKind.TARGET_GREATER


def test_comparator_failure_carries_call_index():
    class Boom:
        identity = "boom"

        def __init__(self):
            self.n = 0

        def compare(self, first, second):
            self.n += 1
            if self.n == 3:
                raise RuntimeError("backend down")
            return 1

    with pytest.raises(ComparatorCallError) as err:
        multi_validate(Boom(), "t", "a", "b")
    assert err.value.call_index == 3


def test_swapping_anchor_essays_cannot_flip_a_decisive_verdict():
    # Swapping ref_a and ref_b permutes (o1, o2) with (o3, o4); both decisive
    # conditions are symmetric under that permutation.
    for outcomes in itertools.product((0, 1), repeat=4):
        o1, o2, o3, o4 = outcomes
        swapped = (o3, o4, o1, o2)
        original = decide(outcomes)
        if original is not VerdictKind.TIE:
            assert decide(swapped) is original


def test_executor_runs_all_four_calls():
    from concurrent.futures import ThreadPoolExecutor

    cmp = SequenceComparator([1, 0, 1, 0])
    with ThreadPoolExecutor(max_workers=4) as pool:
        verdict = multi_validate(cmp, "t", "a", "b", executor=pool)
    assert verdict.kind is VerdictKind.TARGET_GREATER
    assert len(cmp.calls) == 4


# -- build_ladder -----------------------------------------------------------------


def test_hsk_ladder_shape(hsk, hsk_ladder):
    assert hsk_ladder.root.score == 70
    assert hsk_ladder.depth == 3
    assert [leaf.scores for leaf in hsk_ladder.leaves()] == [
        (40, 45),
        (55,),
        (65,),
        (75,),
        (85,),
        (95, 100),
    ]


def test_asap5_single_reference_leaves():
    ladder = ladder_for(BUILTIN_PROMPTS["asap5"])
    assert ladder.root.score == 2
    assert [leaf.scores for leaf in ladder.leaves()] == [(0, 1), (3, 4)]


def test_asap2_adjacent_references_collapse():
    ladder = ladder_for(BUILTIN_PROMPTS["asap2"])
    leaves = ladder.leaves()
    assert leaves[0].scores == (1, 2)
    assert leaves[1].kind == "halo" and leaves[1].scores == (2, 3, 4)
    assert leaves[2].scores == (5, 6)


def test_reference_on_lattice_edge_collapses_to_halo():
    prompt = PromptSpec("edge", 0, 4, 1, (0, 2))
    reference_set, augmented, _ = anchors_for(prompt)
    ladder = build_ladder(reference_set, prompt, augmented)
    below = ladder.leaves()[0]
    assert below.kind == "halo" and below.scores == (0, 1)


def test_ladder_rejects_missing_augmented_text(hsk):
    reference_set, augmented, _ = anchors_for(hsk)
    augmented.pop("ref-70-a")
    with pytest.raises(LadderError, match="ref-70-a"):
        build_ladder(reference_set, hsk, augmented)


def test_leaf_coverage_all_builtin_prompts():
    for prompt in BUILTIN_PROMPTS.values():
        ladder = ladder_for(prompt)
        covered = set(ladder.reference_scores)
        interval_leaves = []
        for leaf in ladder.leaves():
            covered.update(leaf.scores)
            if leaf.kind == "interval":
                interval_leaves.append(set(leaf.scores))
        for ref in ladder.reference_scores:
            covered.update(ladder.tie_halo(ref))
        assert covered == set(lattice(prompt)), prompt.id
        for a, b in itertools.combinations(interval_leaves, 2):
            assert not a & b, prompt.id
        for leaf_scores in interval_leaves:
            assert not leaf_scores & set(ladder.reference_scores), prompt.id


def test_depth_matches_log_bound():
    for prompt in BUILTIN_PROMPTS.values():
        ladder = ladder_for(prompt)
        m = len(ladder.reference_scores)
        assert ladder.depth == math.ceil(math.log2(m + 1))


# -- infer_candidate_set -------------------------------------------------------


def test_descent_below_then_between_reaches_65_in_8_calls(hsk_ladder):
    cmp = ScriptedComparator({70: "lesser", 60: "greater"})
    cs = infer_candidate_set(cmp, "target", hsk_ladder)
    assert cs.scores == (65,)
    assert cs.calls == 8
    assert [s for s, _ in cs.provenance.steps] == [70, 60]


def test_descent_all_lesser_reaches_bottom_in_12_calls(hsk_ladder):
    cmp = ScriptedComparator({70: "lesser", 60: "lesser", 50: "lesser"})
    cs = infer_candidate_set(cmp, "target", hsk_ladder)
    assert cs.scores == (40, 45)
    assert cs.calls == 12
    assert [s for s, _ in cs.provenance.steps] == [70, 60, 50]


def test_tie_at_root_returns_halo(hsk_ladder):
    cmp = ScriptedComparator({70: "tie"})
    cs = infer_candidate_set(cmp, "target", hsk_ladder)
    assert cs.scores == (65, 70, 75)
    assert cs.calls == 4
    assert cs.provenance.terminal == "tie"


def test_tie_halo_clipped_at_lattice_edges():
    ladder = ladder_for(BUILTIN_PROMPTS["asap3"])  # refs (1, 2) on 0..3
    assert ladder.tie_halo(1) == (0, 1, 2)
    prompt = PromptSpec("edge", 0, 4, 1, (0,))
    edge_ladder = ladder_for(prompt)
    assert edge_ladder.tie_halo(0) == (0, 1)


def test_call_budget_bound(hsk, hsk_ladder):
    # 4 calls per visited node, at most 4 * depth.
    for gold in lattice(hsk):
        _, _, golds = anchors_for(hsk)
        cmp = OracleComparator({**golds, "t": gold}, NoisyOracleConfig(0.3, seed=gold))
        cs = infer_candidate_set(cmp, "t", hsk_ladder)
        assert cs.calls <= 4 * hsk_ladder.depth == 12


def test_aborted_traversal_keeps_partial_provenance(hsk_ladder):
    class FailsSecondNode:
        identity = "flaky"

        def __init__(self):
            self.n = 0

        def compare(self, first, second):
            self.n += 1
            if self.n > 4:
                raise RuntimeError("down")
            target_first = not first.startswith("anchor ")
            return 0 if target_first else 1  # lesser at the root

    with pytest.raises(ComparatorCallError) as err:
        infer_candidate_set(FailsSecondNode(), "target", hsk_ladder)
    assert err.value.partial is not None
    assert err.value.partial.calls == 4
    assert err.value.partial.steps == ((70, VerdictKind.TARGET_LESSER),)


def test_candidate_set_validation():
    with pytest.raises(ValueError):
        CandidateScoreSet(())
    with pytest.raises(ValueError):
        CandidateScoreSet((3, 1))


# -- oracle comparator ------------------------------------------------------------


def test_oracle_perfect_order():
    cmp = oracle_comparator({"hi": 90, "lo": 50}, NoisyOracleConfig(0.0))
    assert cmp.compare("hi", "lo") == 1
    assert cmp.compare("lo", "hi") == 0


def test_oracle_full_flip():
    cmp = oracle_comparator({"hi": 90, "lo": 50}, NoisyOracleConfig(1.0))
    assert cmp.compare("hi", "lo") == 0


def test_oracle_unregistered_text_is_error():
    cmp = oracle_comparator({}, NoisyOracleConfig())
    with pytest.raises(ComparatorError):
        cmp.compare("a", "b")


def test_oracle_monte_carlo_flip_rate():
    cmp = oracle_comparator({"hi": 90, "lo": 50}, NoisyOracleConfig(0.3, seed=11))
    n = 10_000
    correct = sum(cmp.compare("hi", "lo") for _ in range(n)) / n
    assert correct == pytest.approx(0.7, abs=0.02)


def test_oracle_equal_golds_fair_coin():
    cmp = oracle_comparator({"a": 60, "b": 60}, NoisyOracleConfig(0.0, seed=5))
    n = 4000
    wins = sum(cmp.compare("a", "b") for _ in range(n)) / n
    assert wins == pytest.approx(0.5, abs=0.03)


def test_oracle_first_listed_tie_behavior_yields_tie_verdict():
    cfg = NoisyOracleConfig(0.0, seed=1, tie_behavior="first_listed")
    cmp = oracle_comparator({"t": 60, "a": 60, "b": 60}, cfg)
    verdict = multi_validate(cmp, "t", "a", "b")
    assert verdict.outcomes == (1, 1, 1, 1)
    assert verdict.kind is VerdictKind.TIE


def test_oracle_deterministic_per_seed_and_schedule_independent():
    golds = {"t": 65, "a": 60, "b": 60}
    runs = []
    for _ in range(2):
        cmp = oracle_comparator(golds, NoisyOracleConfig(0.4, seed=9))
        runs.append([cmp.compare("t", "a"), cmp.compare("a", "t"), cmp.compare("t", "b")])
    assert runs[0] == runs[1]
    # Interleaving calls on other pairs does not change a pair's answer.
    cmp = oracle_comparator(golds, NoisyOracleConfig(0.4, seed=9))
    cmp.compare("t", "b")
    assert cmp.compare("t", "a") == runs[0][0]


def test_noisy_oracle_config_validation():
    with pytest.raises(ValueError):
        NoisyOracleConfig(1.5)
    with pytest.raises(ValueError):
        NoisyOracleConfig(0.1, tie_behavior="sometimes")


# -- candidate_accuracy -------------------------------------------------------------


def test_candidate_accuracy_counts():
    sets = [CandidateScoreSet((40, 45)), CandidateScoreSet((55,)), CandidateScoreSet((65,)), CandidateScoreSet((75,))]
    assert candidate_accuracy(sets, [40, 55, 65, 75]) == 1.0
    assert candidate_accuracy(sets, [50, 60, 70, 80]) == 0.0
    assert candidate_accuracy(sets, [40, 55, 65, 80]) == 0.75


def test_candidate_accuracy_length_mismatch():
    with pytest.raises(ValueError):
        candidate_accuracy([CandidateScoreSet((40,))], [40, 45])
