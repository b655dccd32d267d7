"""Metrics, experiment orchestration and report emission.

``run_rts`` wires the full pipeline per prompt: split, feature selection,
augmentation, reference ladder, candidate inference, scoring and metrics.
``run_vanilla`` is the same pipeline minus ranking (the scorer sees the full
lattice).  ``simulate_ranker`` measures candidate-set accuracy under a noisy
comparator twice: by Monte-Carlo and by exact enumeration of verdict-path
probabilities.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import corpus, features, ranking, scoring
from .corpus import Dataset, Essay, PromptSpec, ReferenceSet, lattice
from .llm import ChatClient, EndpointConfig, LLMComparator, LLMScorer, Transport, load_template
from .ranking import (
    CandidateScoreSet,
    LadderLeaf,
    LadderNode,
    NoisyOracleConfig,
    OracleComparator,
    ReferenceLadder,
)
from .scoring import CalibrationConfig, OracleScorer
from .seeds import derive_seed

logger = logging.getLogger(__name__)


class EvaluationError(Exception):
    """Experiment configuration or metric computation failed."""


def qwk(
    gold: Sequence[int],
    pred: Sequence[int],
    score_min: int,
    score_max: int,
    step: int = 1,
) -> float:
    """Quadratic weighted kappa over lattice categories.

    Categories are the lattice indices 0..N-1 with weights
    w[i, j] = (i - j)^2 / (N - 1)^2; the expected matrix is the outer
    product of the two marginal histograms normalized to the observed
    total.  When expected disagreement is zero (all mass in one category on
    both sides) the result is 1 for identical vectors and 0 otherwise.
    """
    if len(gold) != len(pred):
        raise EvaluationError(f"gold and pred differ in length: {len(gold)} vs {len(pred)}")
    if not gold:
        raise EvaluationError("cannot compute agreement on empty inputs")
    lat = list(range(score_min, score_max + 1, step))
    index = {score: i for i, score in enumerate(lat)}
    try:
        gold_idx = np.array([index[g] for g in gold])
        pred_idx = np.array([index[p] for p in pred])
    except KeyError as exc:
        raise EvaluationError(f"score {exc.args[0]} is off the lattice") from None
    n_cat = len(lat)
    if n_cat == 1:
        return 1.0
    observed = np.zeros((n_cat, n_cat))
    np.add.at(observed, (gold_idx, pred_idx), 1.0)
    idx = np.arange(n_cat)
    weights = np.subtract.outer(idx, idx) ** 2 / (n_cat - 1) ** 2
    hist_gold = observed.sum(axis=1)
    hist_pred = observed.sum(axis=0)
    expected = np.outer(hist_gold, hist_pred) / observed.sum()
    denominator = float((weights * expected).sum())
    if denominator == 0.0:
        return 1.0 if np.array_equal(gold_idx, pred_idx) else 0.0
    return float(1.0 - (weights * observed).sum() / denominator)


# ---------------------------------------------------------------------------
# Backend specifications


@dataclass(frozen=True)
class OracleComparatorSpec:
    flip_probability: float = 0.0
    tie_behavior: str = "coin"


@dataclass(frozen=True)
class EndpointComparatorSpec:
    endpoint: EndpointConfig
    template_path: str | None = None
    transport: Transport | None = None


@dataclass(frozen=True)
class MidpointScorerSpec:
    pass


@dataclass(frozen=True)
class OracleScorerSpec:
    noise_p: float = 0.0


@dataclass(frozen=True)
class EndpointScorerSpec:
    endpoint: EndpointConfig
    template_path: str | None = None
    transport: Transport | None = None


ComparatorSpec = OracleComparatorSpec | EndpointComparatorSpec
ScorerSpec = MidpointScorerSpec | OracleScorerSpec | EndpointScorerSpec


@dataclass
class ExperimentConfig:
    """Everything one evaluation run needs, with deterministic seeds."""

    prompts: Sequence[PromptSpec]
    datasets: Mapping[str, Dataset]
    comparator: ComparatorSpec = field(default_factory=OracleComparatorSpec)
    scorer: ScorerSpec = field(default_factory=MidpointScorerSpec)
    seed: int = 0
    test_fraction: float = 0.2
    feature_k: int = 10
    resources: features.LexiconResources = field(default_factory=features.LexiconResources.empty)
    selected_features: Mapping[str, Sequence[str]] | None = None
    enabled_features: Sequence[str] | None = None
    sidecar_features: Sequence[str] = ()
    calibration: CalibrationConfig | None = None
    pairwise_k: int = 5
    output_dir: Path | None = None
    jobs: int = 1

    def __post_init__(self):
        ids = [p.id for p in self.prompts]
        if len(set(ids)) != len(ids):
            raise EvaluationError("duplicate prompt ids")
        missing = [pid for pid in ids if pid not in self.datasets]
        if missing:
            raise EvaluationError(f"no dataset for prompt(s): {', '.join(missing)}")
        if self.jobs < 1:
            raise EvaluationError(f"jobs must be >= 1, got {self.jobs}")


@dataclass(frozen=True)
class PromptResult:
    prompt_id: str
    n_test: int = 0
    qwk: float | None = None
    candidate_accuracy: float | None = None
    mean_calls: float = 0.0
    parse_failures: int = 0
    clamp_violations: int = 0
    error: str | None = None


@dataclass(frozen=True)
class ExperimentReport:
    """Per-prompt metrics plus an aggregate row, mirrored by emit_report."""

    results: tuple[PromptResult, ...]

    def __post_init__(self):
        for r in self.results:
            if r.qwk is not None and not -1.0 - 1e-9 <= r.qwk <= 1.0 + 1e-9:
                raise EvaluationError(f"{r.prompt_id}: agreement {r.qwk} outside [-1, 1]")
            if r.candidate_accuracy is not None and not 0.0 <= r.candidate_accuracy <= 1.0:
                raise EvaluationError(f"{r.prompt_id}: accuracy {r.candidate_accuracy} outside [0, 1]")

    def average(self) -> PromptResult:
        rows = [r for r in self.results if r.error is None]
        if not rows:
            return PromptResult("average", error="all prompts failed")

        def mean_of(values: list[float | None]) -> float | None:
            present = [v for v in values if v is not None]
            return sum(present) / len(present) if present else None

        return PromptResult(
            prompt_id="average",
            n_test=sum(r.n_test for r in rows),
            qwk=mean_of([r.qwk for r in rows]),
            candidate_accuracy=mean_of([r.candidate_accuracy for r in rows]),
            mean_calls=sum(r.mean_calls for r in rows) / len(rows),
            parse_failures=sum(r.parse_failures for r in rows),
            clamp_violations=sum(r.clamp_violations for r in rows),
        )

    def to_json(self) -> str:
        payload = {"results": [dataclasses.asdict(r) for r in self.results]}
        return json.dumps(payload, ensure_ascii=False, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentReport":
        payload = json.loads(text)
        return cls(tuple(PromptResult(**row) for row in payload["results"]))


# ---------------------------------------------------------------------------
# Pipeline


def _build_comparator(
    spec: ComparatorSpec, prompt: PromptSpec, golds_by_text: Mapping[str, int], seed: int
):
    if isinstance(spec, OracleComparatorSpec):
        cfg = NoisyOracleConfig(spec.flip_probability, seed, spec.tie_behavior)
        return OracleComparator(golds_by_text, cfg)
    client = ChatClient(spec.endpoint, spec.transport)
    template = load_template("ranker", prompt.language, spec.template_path)
    return LLMComparator(client, template, prompt)


def _build_scorer(
    spec: ScorerSpec, prompt: PromptSpec, golds_by_text: Mapping[str, int], seed: int
):
    if isinstance(spec, MidpointScorerSpec):
        return scoring.MidpointScorer()
    if isinstance(spec, OracleScorerSpec):
        return OracleScorer(golds_by_text, spec.noise_p, seed)
    client = ChatClient(spec.endpoint, spec.transport)
    template = load_template("scorer", prompt.language, spec.template_path)
    return LLMScorer(client, template, prompt)


def _jsonl(path: Path, rows: Sequence[Mapping]) -> Path:
    with path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")
    return path


@dataclass
class _PromptArtifacts:
    """Rows accumulated for one prompt's on-disk artifacts."""

    split: dict = field(default_factory=dict)
    selected: list = field(default_factory=list)
    references: dict = field(default_factory=dict)
    candidates: list = field(default_factory=list)
    predictions: list = field(default_factory=list)


def _write_prompt_artifacts(
    out_dir: Path, prompt_id: str, artifacts: _PromptArtifacts
) -> list[Path]:
    """Write the stage outputs that actually exist; returns the written paths."""
    prompt_dir = out_dir / prompt_id
    prompt_dir.mkdir(parents=True, exist_ok=True)
    written = []
    split_path = prompt_dir / "split.json"
    split_path.write_text(
        json.dumps(artifacts.split, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )
    written.append(split_path)
    sel_path = prompt_dir / "selected_features.json"
    sel_path.write_text(
        json.dumps(artifacts.selected, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )
    written.append(sel_path)
    if artifacts.references:
        refs_path = prompt_dir / "references.json"
        refs_path.write_text(
            json.dumps(artifacts.references, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )
        written.append(refs_path)
    written.append(_jsonl(prompt_dir / "candidates.jsonl", artifacts.candidates))
    if artifacts.predictions:
        written.append(_jsonl(prompt_dir / "predictions.jsonl", artifacts.predictions))
    return written


def _candidate_row(essay: Essay, cs: CandidateScoreSet, comparator_identity: str) -> dict:
    record = cs.provenance
    return {
        "essay_id": essay.id,
        "candidate_scores": list(cs.scores),
        "verdict_path": [[score, kind.value] for score, kind in (record.steps if record else ())],
        "calls": cs.calls,
        "comparator": comparator_identity,
    }


def select_and_augment(
    cfg: ExperimentConfig, prompt: PromptSpec, train: Dataset, everyone: Sequence[Essay]
) -> tuple[list[str], dict[str, str]]:
    """Pick the feature set on the train split and augment every essay."""
    registry = features.build_registry(
        prompt.language, cfg.resources, cfg.enabled_features, cfg.sidecar_features
    )
    override = (cfg.selected_features or {}).get(prompt.id)
    if override:
        by_name = {spec.name: spec for spec in registry}
        try:
            selected = [by_name[name] for name in override]
        except KeyError as exc:
            raise EvaluationError(
                f"{prompt.id}: configured feature {exc.args[0]!r} is not in the registry"
            ) from None
    else:
        matrix = np.array(
            [
                features.extract_features(e, cfg.resources, registry, prompt.language).values
                for e in train.essays
            ]
        )
        labels = features.binarize_scores([e.gold_score for e in train.essays])
        table = features.f_score(matrix, labels, registry)
        selected = features.select_top_k(table, cfg.feature_k)
    augmented = {}
    for essay in everyone:
        fv = features.extract_features(essay, cfg.resources, selected, prompt.language)
        augmented[essay.id] = features.augment(essay.text, fv)
    return [spec.name for spec in selected], augmented


def _run_prompt(
    cfg: ExperimentConfig, prompt: PromptSpec, vanilla: bool, with_scoring: bool = True
) -> tuple[PromptResult, _PromptArtifacts]:
    dataset = cfg.datasets[prompt.id]
    prompt_seed = derive_seed(cfg.seed, prompt.id)
    artifacts = _PromptArtifacts()

    train, test = corpus.split(dataset, cfg.test_fraction, derive_seed(prompt_seed, "split"))
    artifacts.split = {
        "train_ids": sorted(train.ids()),
        "test_ids": sorted(test.ids()),
        "test_fraction": cfg.test_fraction,
    }
    if not test.essays:
        raise EvaluationError(f"{prompt.id}: empty test split")

    selected_names, augmented = select_and_augment(cfg, prompt, train, dataset.essays)
    artifacts.selected = selected_names

    targets = sorted(test.essays, key=lambda e: e.id)
    golds = [e.gold_score for e in targets]
    golds_by_augmented = {augmented[e.id]: e.gold_score for e in dataset.essays}
    golds_by_text = {e.text: e.gold_score for e in dataset.essays}

    mean_calls = 0.0
    accuracy = None
    parse_failures = 0
    candidate_sets: list[CandidateScoreSet]

    if vanilla:
        full = tuple(lattice(prompt))
        candidate_sets = [CandidateScoreSet(full) for _ in targets]
        accuracy = 1.0
        comparator_identity = "none"
    else:
        ref_scores = corpus.select_reference_scores(prompt)
        reference_set = corpus.select_reference_essays(
            train, ref_scores, seed=derive_seed(prompt_seed, "refs")
        )
        artifacts.references = {
            str(score): [e.id for e in pair] for score, pair in reference_set.essays.items()
        }
        ladder = ranking.build_ladder(reference_set, prompt, augmented)
        # Reference essays come from the train split, never the eval targets.
        overlap = reference_set.ids() & {e.id for e in targets}
        if overlap:
            raise EvaluationError(f"{prompt.id}: reference essays in test split: {sorted(overlap)}")
        comparator = _build_comparator(
            cfg.comparator, prompt, golds_by_augmented, derive_seed(prompt_seed, "comparator")
        )
        comparator_identity = comparator.identity

        def infer(essay: Essay) -> CandidateScoreSet:
            return ranking.infer_candidate_set(comparator, augmented[essay.id], ladder)

        if cfg.jobs > 1:
            with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
                candidate_sets = list(pool.map(infer, targets))
        else:
            candidate_sets = [infer(e) for e in targets]
        accuracy = ranking.candidate_accuracy(candidate_sets, golds)
        mean_calls = sum(cs.calls for cs in candidate_sets) / len(candidate_sets)
        parse_failures += getattr(comparator, "parse_failures", 0)

    for essay, cs in zip(targets, candidate_sets):
        artifacts.candidates.append(_candidate_row(essay, cs, comparator_identity))

    clamp_violations = 0
    agreement = None
    if with_scoring:
        scorer = _build_scorer(cfg.scorer, prompt, golds_by_text, derive_seed(prompt_seed, "scorer"))
        predictions = []
        for essay, cs in zip(targets, candidate_sets):
            pred, violated = scoring.score_with_clamp(scorer, essay.text, cs.scores, prompt)
            clamp_violations += int(violated)
            predictions.append(pred)
            artifacts.predictions.append(
                {
                    "essay_id": essay.id,
                    "gold": essay.gold_score,
                    "candidate_scores": list(cs.scores),
                    "predicted": pred,
                    "clamped": violated,
                }
            )
        parse_failures += getattr(scorer, "parse_failures", 0)
        clamp_violations += getattr(scorer, "clamp_violations", 0)
        agreement = qwk(golds, predictions, prompt.score_min, prompt.score_max, prompt.step)

    result = PromptResult(
        prompt_id=prompt.id,
        n_test=len(targets),
        qwk=agreement,
        candidate_accuracy=accuracy,
        mean_calls=mean_calls,
        parse_failures=parse_failures,
        clamp_violations=clamp_violations,
    )
    return result, artifacts


def _run(cfg: ExperimentConfig, vanilla: bool, with_scoring: bool = True) -> ExperimentReport:
    results = []
    for prompt in cfg.prompts:
        try:
            result, artifacts = _run_prompt(cfg, prompt, vanilla, with_scoring)
        except Exception as exc:  # one prompt's failure never poisons the batch
            logger.exception("prompt %s failed", prompt.id)
            results.append(PromptResult(prompt_id=prompt.id, error=str(exc)))
            continue
        if cfg.output_dir is not None:
            _write_prompt_artifacts(Path(cfg.output_dir), prompt.id, artifacts)
        results.append(result)
    report = ExperimentReport(tuple(results))
    if cfg.output_dir is not None:
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        emit_report(report, ("csv", "json", "markdown"), out)
    return report


def run_rts(cfg: ExperimentConfig) -> ExperimentReport:
    """Full rank-then-score evaluation over every configured prompt."""
    return _run(cfg, vanilla=False)


def run_vanilla(cfg: ExperimentConfig) -> ExperimentReport:
    """Score directly against the full lattice, skipping the ranking stage."""
    return _run(cfg, vanilla=True)


def run_rank(cfg: ExperimentConfig) -> ExperimentReport:
    """Candidate inference only: candidates and their accuracy, no scoring."""
    return _run(cfg, vanilla=False, with_scoring=False)


# ---------------------------------------------------------------------------
# Noise simulation: Monte-Carlo vs exact enumeration


def _verdict_probabilities(gold: int, ref: int, p: float, tie_behavior: str) -> tuple[float, float, float]:
    """(P(greater), P(lesser), P(tie)) for one multi-validated comparison.

    With a = P(a target-first call returns a target win) and b = P(a
    reference-first call returns a reference win), the decisive outcomes
    need a unanimous pair on one side and a broken pair on the other.
    """
    if gold > ref:
        a, b = 1.0 - p, p
    elif gold < ref:
        a, b = p, 1.0 - p
    elif tie_behavior == "first_listed":
        a = b = 1.0 - p
    else:
        a = b = 0.5
    p_greater = a * a * (1.0 - b * b)
    p_lesser = b * b * (1.0 - a * a)
    return p_greater, p_lesser, 1.0 - p_greater - p_lesser


def enumerate_outcomes(
    ladder: ReferenceLadder, gold: int, p: float, tie_behavior: str = "coin"
) -> tuple[dict[tuple[int, ...], float], float]:
    """Exact distribution over candidate sets plus the expected node visits."""
    outcomes: dict[tuple[int, ...], float] = {}
    expected_nodes = 0.0

    def walk(node: LadderNode | LadderLeaf, prob: float) -> None:
        nonlocal expected_nodes
        if prob == 0.0:
            return
        if isinstance(node, LadderLeaf):
            outcomes[node.scores] = outcomes.get(node.scores, 0.0) + prob
            return
        expected_nodes += prob
        p_greater, p_lesser, p_tie = _verdict_probabilities(gold, node.score, p, tie_behavior)
        halo = ladder.tie_halo(node.score)
        if p_tie:
            outcomes[halo] = outcomes.get(halo, 0.0) + prob * p_tie
        walk(node.right, prob * p_greater)
        walk(node.left, prob * p_lesser)

    walk(ladder.root, 1.0)
    return outcomes, expected_nodes


def exact_ranker_accuracy(
    ladder: ReferenceLadder, p: float, tie_behavior: str = "coin"
) -> tuple[float, float]:
    """Expected (accuracy, calls) for gold scores uniform on the lattice."""
    lat = lattice(ladder.prompt)
    total_acc = 0.0
    total_calls = 0.0
    for gold in lat:
        outcomes, expected_nodes = enumerate_outcomes(ladder, gold, p, tie_behavior)
        total_acc += sum(prob for scores, prob in outcomes.items() if gold in scores)
        total_calls += 4.0 * expected_nodes
    return total_acc / len(lat), total_calls / len(lat)


def _synthetic_ladder(prompt: PromptSpec) -> tuple[ReferenceLadder, dict[str, int]]:
    """A ladder over synthetic anchor texts, plus their gold registrations."""
    ref_scores = corpus.select_reference_scores(prompt)
    essays = {}
    golds = {}
    for score in ref_scores:
        pair = []
        for tag in ("a", "b"):
            text = f"anchor {prompt.id} {score} {tag}"
            essay = Essay(f"ref-{score}-{tag}", prompt.id, text, score)
            pair.append(essay)
            golds[text] = score
        essays[score] = tuple(pair)
    reference_set = ReferenceSet(essays)
    augmented = {e.id: e.text for pair in essays.values() for e in pair}
    return ranking.build_ladder(reference_set, prompt, augmented), golds


@dataclass(frozen=True)
class SimulationRow:
    flip_probability: float
    trials: int
    mc_accuracy: float
    exact_accuracy: float
    mc_mean_calls: float
    exact_mean_calls: float


def simulate_ranker(
    prompt: PromptSpec,
    p_grid: Sequence[float],
    trials: int,
    seed: int = 0,
    tie_behavior: str = "coin",
) -> list[SimulationRow]:
    """Candidate-set accuracy under comparator noise, two independent ways.

    Monte-Carlo draws targets uniformly over the lattice and runs real
    traversals with the noisy oracle; the exact column enumerates
    verdict-path probabilities through the same ladder.
    """
    if trials < 1:
        raise EvaluationError(f"trials must be >= 1, got {trials}")
    ladder, anchor_golds = _synthetic_ladder(prompt)
    lat = lattice(prompt)
    rows = []
    for p_index, p in enumerate(p_grid):
        exact_acc, exact_calls = exact_ranker_accuracy(ladder, p, tie_behavior)
        hits = 0
        calls = 0
        gold_rng = random.Random(derive_seed(seed, "golds", p_index))
        for trial in range(trials):
            gold = lat[gold_rng.randrange(len(lat))]
            target_text = f"target {trial}"
            comparator = OracleComparator(
                {**anchor_golds, target_text: gold},
                NoisyOracleConfig(p, derive_seed(seed, "trial", p_index, trial), tie_behavior),
            )
            cs = ranking.infer_candidate_set(comparator, target_text, ladder)
            hits += int(gold in cs.scores)
            calls += cs.calls
        rows.append(
            SimulationRow(p, trials, hits / trials, exact_acc, calls / trials, exact_calls)
        )
    return rows


# ---------------------------------------------------------------------------
# Report emission


_COLUMNS = (
    "prompt_id",
    "n_test",
    "qwk",
    "candidate_accuracy",
    "mean_calls",
    "parse_failures",
    "clamp_violations",
)


def _report_rows(report: ExperimentReport) -> list[PromptResult]:
    return [*report.results, report.average()]


def emit_report(
    report: ExperimentReport,
    formats: Sequence[str],
    output_dir: str | Path,
) -> list[Path]:
    """Write the report as CSV, JSON and/or markdown with a fixed column order."""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for fmt in formats:
        if fmt == "csv":
            path = output_dir / "report.csv"
            with path.open("w", encoding="utf-8", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(_COLUMNS)
                for row in _report_rows(report):
                    writer.writerow([getattr(row, col) for col in _COLUMNS])
        elif fmt == "json":
            path = output_dir / "report.json"
            path.write_text(report.to_json() + "\n", encoding="utf-8")
        elif fmt == "markdown":
            path = output_dir / "report.md"
            lines = ["| " + " | ".join(_COLUMNS) + " |", "|" + "---|" * len(_COLUMNS)]
            for row in _report_rows(report):
                cells = []
                for col in _COLUMNS:
                    value = getattr(row, col)
                    if isinstance(value, float):
                        cells.append(f"{value:.3f}")
                    else:
                        cells.append("" if value is None else str(value))
                lines.append("| " + " | ".join(cells) + " |")
            path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        else:
            raise EvaluationError(f"unknown report format {fmt!r}")
        written.append(path)
    return written
