"""Acceptance criteria, one test per criterion, each printing a pass line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines and timings.
"""

import itertools
import math
import random
import time

import numpy as np
import pytest

from rankscore.corpus import BUILTIN_PROMPTS, Dataset, Essay, Provenance, lattice
from rankscore.evaluation import (
    ExperimentConfig,
    MidpointScorerSpec,
    OracleComparatorSpec,
    OracleScorerSpec,
    enumerate_outcomes,
    qwk,
    run_rts,
    simulate_ranker,
)
from rankscore.features import FeatureSpec, f_score
from rankscore.ranking import (
    NoisyOracleConfig,
    OracleComparator,
    VerdictKind,
    decide,
    infer_candidate_set,
    multi_validate,
)
from rankscore.scoring import (
    CalibrationConfig,
    generate_pairwise_training,
    generate_scorer_training,
)
from rankscore.synthetic import make_synthetic_dataset

from conftest import anchors_for, brute_force_qwk, ladder_for


class _Timer:
    def __init__(self, budget_s):
        self.budget_s = budget_s

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start
        return False


def _report(number, name, timer):
    print(f"[criterion {number:02d}] {name}: PASS ({timer.elapsed:.2f}s)")
    assert timer.elapsed < timer.budget_s


def test_c01_multi_validation_truth_table():
    with _Timer(1.0) as t:
        class Scripted:
            identity = "seq"

            def __init__(self, results):
                self.results = list(results)

            def compare(self, first, second):
                return self.results.pop(0)

        for o1, o2, o3, o4 in itertools.product((0, 1), repeat=4):
            if (o2 + o4) == 2 and (o1 + o3) < 2:
                expected = VerdictKind.TARGET_LESSER
            elif (o1 + o3) == 2 and (o2 + o4) < 2:
                expected = VerdictKind.TARGET_GREATER
            else:
                expected = VerdictKind.TIE
            assert decide((o1, o2, o3, o4)) is expected
            verdict = multi_validate(Scripted([o1, o2, o3, o4]), "t", "a", "b")
            assert verdict.kind is expected and verdict.outcomes == (o1, o2, o3, o4)
    _report(1, "multi-validation truth table (16/16)", t)


def test_c02_leaf_coverage_tiles_every_lattice():
    with _Timer(1.0) as t:
        for prompt in BUILTIN_PROMPTS.values():
            ladder = ladder_for(prompt)
            covered = set(ladder.reference_scores)
            intervals = []
            for leaf in ladder.leaves():
                covered.update(leaf.scores)
                if leaf.kind == "interval":
                    intervals.append(set(leaf.scores))
            for ref in ladder.reference_scores:
                covered.update(ladder.tie_halo(ref))
            assert covered == set(lattice(prompt)), prompt.id
            for a, b in itertools.combinations(intervals, 2):
                assert not (a & b), prompt.id
    _report(2, "leaf coverage tiles all 9 prompt lattices", t)


def test_c03_perfect_oracle_containment():
    with _Timer(5.0) as t:
        for prompt in BUILTIN_PROMPTS.values():
            ladder = ladder_for(prompt)
            refs = set(ladder.reference_scores)
            adjacent = {r + d for r in refs for d in (-prompt.step, prompt.step)}
            _, _, anchor_golds = anchors_for(prompt)
            for gold in lattice(prompt):
                # Every coin outcome, exhaustively, via path enumeration.
                outcomes, _ = enumerate_outcomes(ladder, gold, 0.0, "coin")
                for scores, prob in outcomes.items():
                    if prob > 1e-12:
                        assert min(abs(s - gold) for s in scores) <= prompt.step
                if gold not in refs and gold not in adjacent:
                    assert outcomes == {next(iter(outcomes)): 1.0}
                    assert gold in next(iter(outcomes))
                # Spot-check with real traversals.
                for seed in (0, 1, 2):
                    cmp = OracleComparator(
                        {**anchor_golds, "t": gold}, NoisyOracleConfig(0.0, seed)
                    )
                    cs = infer_candidate_set(cmp, "t", ladder)
                    assert min(abs(s - gold) for s in cs.scores) <= prompt.step
    _report(3, "perfect-oracle containment over every lattice score", t)


def test_c04_call_budget():
    with _Timer(5.0) as t:
        budgets = {"hsk": 12, "asap5": 4}
        for prompt_id, budget in budgets.items():
            prompt = BUILTIN_PROMPTS[prompt_id]
            ladder = ladder_for(prompt)
            assert 4 * ladder.depth <= budget
            _, _, anchor_golds = anchors_for(prompt)
            for gold in lattice(prompt):
                for p, seed in ((0.0, 0), (0.3, 1), (0.5, 2)):
                    cmp = OracleComparator(
                        {**anchor_golds, "t": gold}, NoisyOracleConfig(p, seed)
                    )
                    cs = infer_candidate_set(cmp, "t", ladder)
                    assert cs.calls <= budget
                    assert cs.calls == 4 * len(cs.provenance.steps)
        for prompt in BUILTIN_PROMPTS.values():
            m = len(prompt.reference_scores)
            assert 4 * ladder_for(prompt).depth <= 4 * math.ceil(math.log2(m + 1))
    _report(4, "call budget (hsk <= 12, asap5 <= 4, log bound)", t)


def test_c05_noisy_convergence_10k_trials():
    with _Timer(60.0) as t:
        rows = simulate_ranker(BUILTIN_PROMPTS["hsk"], [0.1, 0.3], trials=10_000, seed=101)
        for row in rows:
            assert abs(row.mc_accuracy - row.exact_accuracy) <= 0.02, row
    _report(5, "Monte-Carlo matches exact enumeration at p=0.1, 0.3 (+/-0.02)", t)


def test_c06_qwk_oracle_equivalence():
    with _Timer(10.0) as t:
        assert qwk([3, 1, 2], [3, 1, 2], 0, 3) == 1.0
        assert qwk([1, 2], [2, 1], 1, 3) == pytest.approx(-1.0)
        rng = random.Random(2024)
        for _ in range(1000):
            step = rng.choice([1, 2, 5])
            n_cat = rng.randrange(2, 14)
            smin = rng.randrange(0, 41)
            lat = [smin + step * i for i in range(n_cat)]
            n = rng.randrange(2, 40)
            gold = [rng.choice(lat) for _ in range(n)]
            pred = [rng.choice(lat) for _ in range(n)]
            fast = qwk(gold, pred, lat[0], lat[-1], step)
            slow = brute_force_qwk(gold, pred, lat[0], lat[-1], step)
            assert abs(fast - slow) <= 1e-12
    _report(6, "QWK equals brute-force oracle on 1000 fixtures (1e-12)", t)


def test_c07_f_score_correctness():
    with _Timer(5.0) as t:
        registry = [FeatureSpec("f0", "word")]
        table = f_score(
            np.array([[0.9], [1.1], [-0.1], [0.1]]), [True, True, False, False], registry
        )
        assert table.entries[0].f == pytest.approx(12.5, abs=1e-12)
        rng = np.random.default_rng(77)
        n = 50
        labels = [True] * 25 + [False] * 25
        for _ in range(100):
            column = rng.normal(size=n)
            a = float(rng.uniform(0.1, 10.0) * rng.choice([-1.0, 1.0]))
            b = float(rng.uniform(-10.0, 10.0))
            base = f_score(column[:, None], labels, registry).entries[0].f
            scaled = f_score((a * column + b)[:, None], labels, registry).entries[0].f
            assert scaled == pytest.approx(base, rel=1e-9)
    _report(7, "F-score fixture = 12.5 exactly; affine invariance (1e-9)", t)


def test_c08_calibration_exactness():
    with _Timer(1.0) as t:
        prompt = BUILTIN_PROMPTS["hsk"]
        ladder = ladder_for(prompt)
        golds = [40 + 5 * (i % 13) for i in range(200)]
        essays = tuple(Essay(f"c{i:03d}", "hsk", f"essay {i}", g) for i, g in enumerate(golds))
        train = Dataset(prompt, essays, Provenance("memory"))
        cal = CalibrationConfig(ranker_test_accuracy=0.87, gap=0.15, seed=12)
        examples = generate_scorer_training(train, ladder, cal)
        corrupted = [ex for ex in examples if ex.corrupted]
        assert len(examples) == 200
        assert len(corrupted) == 56
        achieved = (200 - len(corrupted)) / 200
        assert abs(achieved - cal.target_accuracy) <= 1 / 200
        for ex in corrupted:
            assert ex.gold not in ex.candidate_scores
    _report(8, "calibration: exactly 56/200 corrupted at target 0.72", t)


def test_c09_pairwise_volume():
    with _Timer(5.0) as t:
        prompt = BUILTIN_PROMPTS["hsk"]
        golds = [40 + 5 * (i % 13) for i in range(100)]
        essays = tuple(Essay(f"p{i:03d}", "hsk", f"essay {i}", g) for i, g in enumerate(golds))
        train = Dataset(prompt, essays, Provenance("memory"))
        augmented = {e.id: e.text for e in essays}
        examples = generate_pairwise_training(train, augmented, k=5, seed=33)
        assert len(examples) == 5 * 100
        by_id = {e.id: e.gold_score for e in essays}
        for ex in examples:
            first, second = by_id[ex.first_id], by_id[ex.second_id]
            assert first != second
            assert ex.label == (1 if first > second else 2)
    _report(9, "pairwise data: exactly 5M examples, 100% label consistency", t)


def _determinism_config(dataset, out, jobs):
    prompt = BUILTIN_PROMPTS["hsk"]
    return ExperimentConfig(
        prompts=[prompt],
        datasets={"hsk": dataset},
        comparator=OracleComparatorSpec(0.15, tie_behavior="coin"),
        scorer=MidpointScorerSpec(),
        seed=55,
        output_dir=out,
        jobs=jobs,
    )


def test_c10_end_to_end_determinism(tmp_path):
    with _Timer(60.0) as t:
        dataset = make_synthetic_dataset(BUILTIN_PROMPTS["hsk"], 500, seed=21)
        runs = {
            "a": run_rts(_determinism_config(dataset, tmp_path / "a", 1)),
            "b": run_rts(_determinism_config(dataset, tmp_path / "b", 1)),
            "j8": run_rts(_determinism_config(dataset, tmp_path / "j8", 8)),
        }
        assert runs["a"] == runs["b"] == runs["j8"]
        files = sorted(
            p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file()
        )
        assert files
        for f in files:
            reference = (tmp_path / "a" / f).read_bytes()
            assert (tmp_path / "b" / f).read_bytes() == reference, f
            assert (tmp_path / "j8" / f).read_bytes() == reference, f
    _report(10, "run byte-identical across reruns and --jobs 1 vs 8", t)


def test_c11_oracle_ceiling_qwk_one(tmp_path):
    with _Timer(60.0) as t:
        dataset = make_synthetic_dataset(BUILTIN_PROMPTS["hsk"], 500, seed=22)
        cfg = ExperimentConfig(
            prompts=[BUILTIN_PROMPTS["hsk"]],
            datasets={"hsk": dataset},
            comparator=OracleComparatorSpec(0.0, tie_behavior="first_listed"),
            scorer=OracleScorerSpec(0.0),
            seed=56,
            output_dir=tmp_path,
        )
        report = run_rts(cfg)
        result = report.results[0]
        assert result.error is None
        assert result.qwk == pytest.approx(1.0)
        assert result.candidate_accuracy == pytest.approx(1.0)
    _report(11, "oracle ceiling: QWK = 1.0 on the synthetic corpus", t)
