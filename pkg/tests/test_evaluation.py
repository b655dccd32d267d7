import json
import random
from pathlib import Path

import pytest

from rankscore.corpus import BUILTIN_PROMPTS, Dataset, Essay, PromptSpec, Provenance, lattice
from rankscore.evaluation import (
    EndpointScorerSpec,
    EvaluationError,
    ExperimentConfig,
    ExperimentReport,
    MidpointScorerSpec,
    OracleComparatorSpec,
    OracleScorerSpec,
    PromptResult,
    emit_report,
    enumerate_outcomes,
    exact_ranker_accuracy,
    qwk,
    run_rank,
    run_rts,
    run_vanilla,
    simulate_ranker,
)
from rankscore.llm import EndpointConfig, StubTransport
from rankscore.synthetic import make_synthetic_dataset

from conftest import brute_force_qwk


# -- qwk ---------------------------------------------------------------------


def test_qwk_identical_is_one():
    assert qwk([40, 60, 80], [40, 60, 80], 40, 100, 5) == 1.0


def test_qwk_reversed_pair_is_minus_one():
    assert qwk([1, 2], [2, 1], 1, 3) == pytest.approx(-1.0)


def test_qwk_symmetry():
    rng = random.Random(0)
    lat = lattice(BUILTIN_PROMPTS["hsk"])
    gold = [rng.choice(lat) for _ in range(60)]
    pred = [rng.choice(lat) for _ in range(60)]
    assert qwk(gold, pred, 40, 100, 5) == pytest.approx(qwk(pred, gold, 40, 100, 5))


def test_qwk_random_predictions_near_zero():
    rng = random.Random(42)
    lat = lattice(BUILTIN_PROMPTS["hsk"])
    n = 20_000
    gold = [rng.choice(lat) for _ in range(n)]
    pred = [rng.choice(lat) for _ in range(n)]
    assert qwk(gold, pred, 40, 100, 5) == pytest.approx(0.0, abs=0.05)


def test_qwk_matches_brute_force_on_random_fixtures():
    rng = random.Random(7)
    for _ in range(200):
        smin = rng.randrange(0, 5)
        step = rng.choice([1, 2, 5])
        n_cat = rng.randrange(2, 14)
        lat = [smin + step * i for i in range(n_cat)]
        n = rng.randrange(2, 60)
        gold = [rng.choice(lat) for _ in range(n)]
        pred = [rng.choice(lat) for _ in range(n)]
        fast = qwk(gold, pred, lat[0], lat[-1], step)
        slow = brute_force_qwk(gold, pred, lat[0], lat[-1], step)
        assert fast == pytest.approx(slow, abs=1e-12)


def test_qwk_degenerate_single_category():
    assert qwk([60, 60], [60, 60], 60, 60, 5) == 1.0
    assert qwk([60, 60, 60], [60, 60, 60], 40, 100, 5) == 1.0


def test_qwk_lattice_categories_match_scaled_unit_lattice():
    # Quadratic weights are scale-invariant, so step-5 lattice categories
    # agree exactly with the same data mapped onto a unit lattice.
    gold, pred = [40, 55, 100, 70], [45, 55, 95, 80]
    lattice_value = qwk(gold, pred, 40, 100, 5)
    scaled = qwk([(g - 40) // 5 for g in gold], [(p - 40) // 5 for p in pred], 0, 12, 1)
    assert lattice_value == pytest.approx(scaled, abs=1e-12)


def test_qwk_errors():
    with pytest.raises(EvaluationError):
        qwk([1], [1, 2], 0, 3)
    with pytest.raises(EvaluationError):
        qwk([], [], 0, 3)
    with pytest.raises(EvaluationError):
        qwk([7], [1], 0, 3)


# -- experiment runs -----------------------------------------------------------


def small_corpus(prompt, n=80, seed=5):
    return make_synthetic_dataset(prompt, n, seed=seed, min_per_score=4)


def test_run_rts_oracle_ceiling_small():
    prompt = BUILTIN_PROMPTS["asap5"]
    cfg = ExperimentConfig(
        prompts=[prompt],
        datasets={prompt.id: small_corpus(prompt)},
        comparator=OracleComparatorSpec(0.0, tie_behavior="first_listed"),
        scorer=OracleScorerSpec(0.0),
        seed=1,
    )
    report = run_rts(cfg)
    result = report.results[0]
    assert result.error is None
    assert result.qwk == pytest.approx(1.0)
    assert result.candidate_accuracy == pytest.approx(1.0)
    assert result.parse_failures == 0 and result.clamp_violations == 0


def test_run_rts_contains_gold_for_every_non_reference_target(tmp_path):
    # With p=0 and coin ties, only reference-scored golds can escape their
    # candidate set; every other target is contained exactly.
    prompt = BUILTIN_PROMPTS["asap5"]
    dataset = small_corpus(prompt)
    cfg = ExperimentConfig(
        prompts=[prompt],
        datasets={prompt.id: dataset},
        comparator=OracleComparatorSpec(0.0, tie_behavior="coin"),
        scorer=MidpointScorerSpec(),
        seed=2,
        output_dir=tmp_path,
    )
    report = run_rts(cfg)
    assert report.results[0].error is None
    golds = {e.id: e.gold_score for e in dataset.essays}
    rows = [
        json.loads(line)
        for line in (tmp_path / prompt.id / "candidates.jsonl").read_text(encoding="utf-8").splitlines()
    ]
    assert rows
    for row in rows:
        gold = golds[row["essay_id"]]
        if gold not in prompt.reference_scores:
            assert gold in row["candidate_scores"]


def test_run_rts_writes_artifacts_and_is_deterministic(tmp_path):
    prompt = BUILTIN_PROMPTS["asap5"]
    dataset = small_corpus(prompt)

    def run(out):
        cfg = ExperimentConfig(
            prompts=[prompt],
            datasets={prompt.id: dataset},
            comparator=OracleComparatorSpec(0.2),
            scorer=MidpointScorerSpec(),
            seed=3,
            output_dir=Path(out),
        )
        return run_rts(cfg)

    r1 = run(tmp_path / "a")
    r2 = run(tmp_path / "b")
    assert r1 == r2
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert [str(f) for f in files] == [
        f"{prompt.id}/candidates.jsonl",
        f"{prompt.id}/predictions.jsonl",
        f"{prompt.id}/references.json",
        f"{prompt.id}/selected_features.json",
        f"{prompt.id}/split.json",
        "report.csv",
        "report.json",
        "report.md",
    ]
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_run_rts_excludes_reference_essays_from_targets(tmp_path):
    prompt = BUILTIN_PROMPTS["asap5"]
    cfg = ExperimentConfig(
        prompts=[prompt],
        datasets={prompt.id: small_corpus(prompt)},
        comparator=OracleComparatorSpec(0.0, tie_behavior="first_listed"),
        scorer=MidpointScorerSpec(),
        seed=4,
        output_dir=tmp_path,
    )
    run_rts(cfg)
    refs = json.loads((tmp_path / prompt.id / "references.json").read_text(encoding="utf-8"))
    ref_ids = {essay_id for pair in refs.values() for essay_id in pair}
    candidates = [
        json.loads(line)
        for line in (tmp_path / prompt.id / "candidates.jsonl").read_text(encoding="utf-8").splitlines()
    ]
    target_ids = {row["essay_id"] for row in candidates}
    assert ref_ids and not (ref_ids & target_ids)


def test_run_rts_isolates_failing_prompt():
    good = BUILTIN_PROMPTS["asap5"]
    bad = PromptSpec("tiny", 0, 4, 1, (2,))
    tiny = Dataset(
        bad,
        (Essay("only", "tiny", "too small", 2),),
        Provenance("memory"),
    )
    cfg = ExperimentConfig(
        prompts=[bad, good],
        datasets={"tiny": tiny, good.id: small_corpus(good)},
        comparator=OracleComparatorSpec(0.0, tie_behavior="first_listed"),
        scorer=MidpointScorerSpec(),
        seed=5,
    )
    report = run_rts(cfg)
    by_id = {r.prompt_id: r for r in report.results}
    assert by_id["tiny"].error is not None
    assert by_id[good.id].error is None


def test_run_vanilla_midpoint_constant_prediction_qwk_zero():
    # Six essays, midpoint of the full 0..4 lattice is always 2: a constant
    # prediction has observed == expected matrix, so agreement is exactly 0.
    prompt = BUILTIN_PROMPTS["asap5"]
    essays = tuple(
        Essay(f"v{i}", prompt.id, f"essay text {i} with words", g)
        for i, g in enumerate([0, 1, 2, 3, 4, 4] * 5)
    )
    dataset = Dataset(prompt, essays, Provenance("memory"))
    cfg = ExperimentConfig(
        prompts=[prompt],
        datasets={prompt.id: dataset},
        scorer=MidpointScorerSpec(),
        seed=6,
    )
    report = run_vanilla(cfg)
    result = report.results[0]
    assert result.qwk == pytest.approx(0.0, abs=1e-12)
    assert result.candidate_accuracy == 1.0  # full lattice always contains gold
    assert result.mean_calls == 0.0
    # Cross-check the constant-prediction value with the independent oracle.
    test_golds = [1, 2, 2, 3, 4, 0]
    assert brute_force_qwk(test_golds, [2] * 6, 0, 4) == pytest.approx(0.0, abs=1e-12)


def test_run_vanilla_oracle_scorer_is_perfect():
    prompt = BUILTIN_PROMPTS["asap5"]
    cfg = ExperimentConfig(
        prompts=[prompt],
        datasets={prompt.id: small_corpus(prompt)},
        scorer=OracleScorerSpec(0.0),
        seed=7,
    )
    report = run_vanilla(cfg)
    assert report.results[0].qwk == pytest.approx(1.0)


def test_run_with_stub_endpoint_scorer_golden(tmp_path):
    prompt = BUILTIN_PROMPTS["asap5"]
    endpoint = EndpointConfig(base_url="http://stub", model="m", backoff=0.0)
    spec = EndpointScorerSpec(endpoint, transport=StubTransport(lambda payload: "2"))
    cfg = ExperimentConfig(
        prompts=[prompt],
        datasets={prompt.id: small_corpus(prompt)},
        comparator=OracleComparatorSpec(0.0, tie_behavior="first_listed"),
        scorer=spec,
        seed=8,
        output_dir=tmp_path / "x",
    )
    r1 = run_rts(cfg)
    cfg2 = ExperimentConfig(
        prompts=[prompt],
        datasets={prompt.id: small_corpus(prompt)},
        comparator=OracleComparatorSpec(0.0, tie_behavior="first_listed"),
        scorer=EndpointScorerSpec(endpoint, transport=StubTransport(lambda payload: "2")),
        seed=8,
        output_dir=tmp_path / "y",
    )
    r2 = run_rts(cfg2)
    assert r1 == r2
    a = (tmp_path / "x" / prompt.id / "predictions.jsonl").read_bytes()
    b = (tmp_path / "y" / prompt.id / "predictions.jsonl").read_bytes()
    assert a == b


def test_run_rank_only_skips_scoring(tmp_path):
    prompt = BUILTIN_PROMPTS["asap5"]
    cfg = ExperimentConfig(
        prompts=[prompt],
        datasets={prompt.id: small_corpus(prompt)},
        comparator=OracleComparatorSpec(0.0, tie_behavior="first_listed"),
        seed=9,
        output_dir=tmp_path,
    )
    report = run_rank(cfg)
    result = report.results[0]
    assert result.qwk is None
    assert result.candidate_accuracy == pytest.approx(1.0)
    assert (tmp_path / prompt.id / "candidates.jsonl").exists()
    assert not (tmp_path / prompt.id / "predictions.jsonl").exists()


# -- simulation -------------------------------------------------------------------


def test_exact_enumeration_p_zero_probabilities(hsk, hsk_ladder):
    outcomes, nodes = enumerate_outcomes(hsk_ladder, 65, 0.0, "coin")
    assert outcomes == {(65,): 1.0}
    assert nodes == 2.0  # 70 then 60


def test_exact_accuracy_p_zero_with_first_listed_ties(hsk, hsk_ladder):
    accuracy, _ = exact_ranker_accuracy(hsk_ladder, 0.0, "first_listed")
    assert accuracy == pytest.approx(1.0)


def test_exact_accuracy_monotone_in_noise(hsk, hsk_ladder):
    a01, _ = exact_ranker_accuracy(hsk_ladder, 0.1)
    a04, _ = exact_ranker_accuracy(hsk_ladder, 0.4)
    assert a01 >= a04


def test_simulation_converges_to_enumeration(hsk):
    rows = simulate_ranker(hsk, [0.1, 0.3], trials=3000, seed=10)
    for row in rows:
        assert row.mc_accuracy == pytest.approx(row.exact_accuracy, abs=0.03)
        assert row.mc_mean_calls == pytest.approx(row.exact_mean_calls, abs=0.35)


def test_simulation_p_zero_perfect_for_non_reference_golds(hsk, hsk_ladder):
    for gold in lattice(hsk):
        if gold in hsk_ladder.reference_scores:
            continue
        outcomes, _ = enumerate_outcomes(hsk_ladder, gold, 0.0, "coin")
        assert all(gold in scores for scores, p in outcomes.items() if p > 0)


def test_simulation_rejects_bad_trials(hsk):
    with pytest.raises(EvaluationError):
        simulate_ranker(hsk, [0.1], trials=0)


# -- reports --------------------------------------------------------------------


def sample_report():
    return ExperimentReport(
        (
            PromptResult("p1", 40, 0.91, 0.95, 8.0, 0, 1),
            PromptResult("p2", 60, 0.73, 0.88, 9.5, 2, 0),
        )
    )


def test_report_average_row():
    avg = sample_report().average()
    assert avg.n_test == 100
    assert avg.qwk == pytest.approx(0.82)
    assert avg.candidate_accuracy == pytest.approx(0.915)
    assert avg.parse_failures == 2


def test_emit_csv_rows(tmp_path):
    paths = emit_report(sample_report(), ["csv"], tmp_path)
    lines = paths[0].read_text(encoding="utf-8").strip().splitlines()
    assert len(lines) == 4  # header + 2 prompts + average
    assert lines[0].startswith("prompt_id,n_test,qwk,candidate_accuracy,mean_calls")
    assert lines[3].startswith("average,100,")


def test_emit_json_round_trips(tmp_path):
    report = sample_report()
    paths = emit_report(report, ["json"], tmp_path)
    loaded = ExperimentReport.from_json(paths[0].read_text(encoding="utf-8"))
    assert loaded == report


def test_emit_markdown_three_decimals(tmp_path):
    paths = emit_report(sample_report(), ["markdown"], tmp_path)
    text = paths[0].read_text(encoding="utf-8")
    assert "| 0.910 |" in text and "| 0.730 |" in text


def test_emit_unknown_format(tmp_path):
    with pytest.raises(EvaluationError):
        emit_report(sample_report(), ["xml"], tmp_path)


def test_report_validates_ranges():
    with pytest.raises(EvaluationError):
        ExperimentReport((PromptResult("p", 1, qwk=1.5),))
