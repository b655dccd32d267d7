"""Command-line entry point wiring the pipeline stages.

Every subcommand reads one TOML config, writes its artifacts under the
configured output directory, and finishes by writing a manifest listing the
produced files, the resolved seeds and summary stats.  Usage and config
errors exit 2; operational failures exit 1.
"""

from __future__ import annotations

import dataclasses
import datetime
import json
from dataclasses import dataclass, field
from pathlib import Path

import click
import numpy as np

from . import __version__, corpus, evaluation, features, ranking, scoring
from .config import (
    build_experiment_config,
    load_datasets,
    load_run_config,
    select_prompts,
)
from .corpus import ConfigurationError, CorpusError
from .scoring import CalibrationConfig
from .seeds import derive_seed
from .synthetic import write_jsonl


@dataclass
class RunManifest:
    """What a subcommand produced; always written last."""

    command: str
    config_path: str
    tool_version: str
    root_seed: int
    seeds: dict[str, int] = field(default_factory=dict)
    artifacts: list[str] = field(default_factory=list)
    stats: dict = field(default_factory=dict)
    started_at: str = ""
    finished_at: str = ""


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _write_manifest(output_dir: Path, manifest: RunManifest) -> Path:
    manifest.finished_at = _now()
    manifest.artifacts = sorted(set(manifest.artifacts))
    output_dir.mkdir(parents=True, exist_ok=True)
    path = output_dir / "manifest.json"
    path.write_text(
        json.dumps(dataclasses.asdict(manifest), ensure_ascii=False, sort_keys=True, indent=2)
        + "\n",
        encoding="utf-8",
    )
    return path


class _Stage:
    """Shared per-command plumbing: config, datasets, manifest bookkeeping."""

    def __init__(self, command: str, config_path: str, prompt_ids: tuple[str, ...],
                 seed: int | None, output_dir: str | None, jobs: int | None):
        try:
            self.cfg = load_run_config(config_path)
        except ConfigurationError as exc:
            raise click.UsageError(str(exc)) from exc
        if seed is not None:
            self.cfg.seed = seed
        if output_dir is not None:
            self.cfg.output_dir = Path(output_dir)
        if jobs is not None:
            self.cfg.jobs = jobs
        try:
            self.prompt_ids = select_prompts(self.cfg, prompt_ids)
        except ConfigurationError as exc:
            raise click.UsageError(str(exc)) from exc
        self.manifest = RunManifest(
            command=command,
            config_path=str(self.cfg.path),
            tool_version=__version__,
            root_seed=self.cfg.seed,
            seeds={pid: derive_seed(self.cfg.seed, pid) for pid in self.prompt_ids},
            started_at=_now(),
        )

    @property
    def out(self) -> Path:
        return self.cfg.output_dir

    def datasets(self):
        try:
            return load_datasets(self.cfg, self.prompt_ids)
        except (CorpusError, OSError) as exc:
            raise click.ClickException(str(exc)) from exc

    def prompt_dir(self, prompt_id: str) -> Path:
        path = self.out / prompt_id
        path.mkdir(parents=True, exist_ok=True)
        return path

    def add(self, *paths: Path) -> None:
        for path in paths:
            self.manifest.artifacts.append(str(path.relative_to(self.out)))

    def finish(self) -> None:
        _write_manifest(self.out, self.manifest)
        click.echo(f"manifest: {self.out / 'manifest.json'}", err=True)


def _common_options(fn):
    fn = click.option("--jobs", type=int, default=None, help="Worker cap (also the LLM in-flight bound).")(fn)
    fn = click.option("--output-dir", type=click.Path(), default=None, help="Override the configured output directory.")(fn)
    fn = click.option("--seed", type=int, default=None, help="Override the configured root seed.")(fn)
    fn = click.option("--prompt", "prompts", multiple=True, help="Restrict to these prompt ids (repeatable).")(fn)
    fn = click.option("--config", "config_path", required=True, type=click.Path(), help="TOML run configuration.")(fn)
    return fn


@click.group()
@click.version_option(version=__version__, prog_name="rankscore")
def main():
    """Comparator-driven essay scoring pipeline."""


@main.command()
@_common_options
def ingest(config_path, prompts, seed, output_dir, jobs):
    """Load, validate and clean the configured datasets."""
    stage = _Stage("ingest", config_path, prompts, seed, output_dir, jobs)
    rejected_total = 0
    for prompt_id, dataset in stage.datasets().items():
        prompt_dir = stage.prompt_dir(prompt_id)
        cleaned = write_jsonl(dataset, prompt_dir / "cleaned.jsonl")
        rejects = prompt_dir / "rejected.json"
        rows = [dataclasses.asdict(r) for r in dataset.provenance.rejected]
        rejects.write_text(
            json.dumps(rows, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )
        rejected_total += len(rows)
        stage.add(cleaned, rejects)
        stage.manifest.stats[prompt_id] = {
            "essays": len(dataset),
            "rejected": len(rows),
            "cleaned": len(dataset.provenance.cleaning_log),
        }
    stage.manifest.stats["rejected_total"] = rejected_total
    stage.finish()


@main.group(name="features")
def features_group():
    """Feature extraction and selection."""


@features_group.command(name="extract")
@_common_options
def features_extract(config_path, prompts, seed, output_dir, jobs):
    """Extract the full feature registry for every essay."""
    stage = _Stage("features extract", config_path, prompts, seed, output_dir, jobs)
    for prompt_id, dataset in stage.datasets().items():
        prompt = stage.cfg.prompts[prompt_id]
        registry = features.build_registry(
            prompt.language, stage.cfg.resources,
            stage.cfg.enabled_features, stage.cfg.sidecar_features,
        )
        path = stage.prompt_dir(prompt_id) / "features.jsonl"
        with path.open("w", encoding="utf-8") as fh:
            for essay in dataset.essays:
                fv = features.extract_features(essay, stage.cfg.resources, registry, prompt.language)
                row = {"essay_id": essay.id, "features": fv.as_dict()}
                fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")
        stage.add(path)
        stage.manifest.stats[prompt_id] = {"essays": len(dataset), "features": len(registry)}
    stage.finish()


@features_group.command(name="select")
@_common_options
@click.option("--k", type=int, default=None, help="How many features to keep (default from config).")
def features_select(config_path, prompts, seed, output_dir, jobs, k):
    """Rank features on the train split and keep the top k."""
    stage = _Stage("features select", config_path, prompts, seed, output_dir, jobs)
    k = k if k is not None else stage.cfg.feature_k
    for prompt_id, dataset in stage.datasets().items():
        prompt = stage.cfg.prompts[prompt_id]
        prompt_seed = derive_seed(stage.cfg.seed, prompt_id)
        train, _ = corpus.split(dataset, stage.cfg.test_fraction, derive_seed(prompt_seed, "split"))
        registry = features.build_registry(
            prompt.language, stage.cfg.resources,
            stage.cfg.enabled_features, stage.cfg.sidecar_features,
        )
        try:
            matrix = np.array(
                [
                    features.extract_features(e, stage.cfg.resources, registry, prompt.language).values
                    for e in train.essays
                ]
            )
            labels = features.binarize_scores([e.gold_score for e in train.essays])
            table = features.f_score(matrix, labels, registry)
            override = stage.cfg.selected_features.get(prompt_id)
            if override:
                selected = list(override)
            else:
                selected = [spec.name for spec in features.select_top_k(table, k)]
        except features.FeatureError as exc:
            raise click.ClickException(f"{prompt_id}: {exc}") from exc
        prompt_dir = stage.prompt_dir(prompt_id)
        fscores = prompt_dir / "fscores.csv"
        with fscores.open("w", encoding="utf-8") as fh:
            fh.write("feature,f,degenerate\n")
            for entry in table.ranked():
                fh.write(f"{entry.spec.name},{'' if entry.degenerate else repr(entry.f)},{entry.degenerate}\n")
        sel_path = prompt_dir / "selected_features.json"
        sel_path.write_text(json.dumps(selected, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
        stage.add(fscores, sel_path)
        stage.manifest.stats[prompt_id] = {"selected": selected}
    stage.finish()


@main.command()
@_common_options
def refs(config_path, prompts, seed, output_dir, jobs):
    """Select reference scores and reference essays from the train split."""
    stage = _Stage("refs", config_path, prompts, seed, output_dir, jobs)
    for prompt_id, dataset in stage.datasets().items():
        prompt = stage.cfg.prompts[prompt_id]
        prompt_seed = derive_seed(stage.cfg.seed, prompt_id)
        train, _ = corpus.split(dataset, stage.cfg.test_fraction, derive_seed(prompt_seed, "split"))
        scores = corpus.select_reference_scores(prompt)
        try:
            reference_set = corpus.select_reference_essays(
                train, scores, seed=derive_seed(prompt_seed, "refs")
            )
        except ConfigurationError as exc:
            raise click.ClickException(f"{prompt_id}: {exc}") from exc
        path = stage.prompt_dir(prompt_id) / "references.json"
        payload = {str(s): [e.id for e in pair] for s, pair in reference_set.essays.items()}
        path.write_text(
            json.dumps(payload, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )
        stage.add(path)
        stage.manifest.stats[prompt_id] = {"reference_scores": scores}
    stage.finish()


def _experiment(stage: _Stage, comparator: str | None, p: float | None,
                scorer: str | None, noise: float | None):
    cfg = stage.cfg
    if comparator is not None:
        cfg.comparator_kind = comparator
    if p is not None:
        cfg.comparator_p = p
    if scorer is not None:
        cfg.scorer_kind = scorer
    if noise is not None:
        cfg.scorer_noise = noise
    try:
        datasets = stage.datasets()
        return build_experiment_config(cfg, stage.prompt_ids, datasets)
    except (ConfigurationError, evaluation.EvaluationError) as exc:
        raise click.UsageError(str(exc)) from exc


_PROMPT_ARTIFACT_NAMES = (
    "split.json",
    "selected_features.json",
    "references.json",
    "candidates.jsonl",
    "predictions.jsonl",
)


def _record_report(stage: _Stage, report: evaluation.ExperimentReport) -> None:
    for result in report.results:
        stage.manifest.stats[result.prompt_id] = {
            k: v for k, v in dataclasses.asdict(result).items() if k != "prompt_id"
        }
    failed = [r.prompt_id for r in report.results if r.error]
    for prompt_id in stage.prompt_ids:
        if prompt_id in failed:
            continue
        for name in _PROMPT_ARTIFACT_NAMES:
            path = stage.out / prompt_id / name
            if path.exists():
                stage.add(path)
    for name in ("report.csv", "report.json", "report.md"):
        path = stage.out / name
        if path.exists():
            stage.add(path)
    if failed:
        stage.finish()
        raise click.ClickException(f"prompt(s) failed: {', '.join(failed)}")


@main.command()
@_common_options
@click.option("--comparator", type=click.Choice(["oracle", "endpoint"]), default=None)
@click.option("--p", type=float, default=None, help="Oracle comparator flip probability.")
def rank(config_path, prompts, seed, output_dir, jobs, comparator, p):
    """Infer candidate score sets for the test split (no scoring)."""
    stage = _Stage("rank", config_path, prompts, seed, output_dir, jobs)
    cfg = _experiment(stage, comparator, p, None, None)
    report = evaluation.run_rank(cfg)
    _record_report(stage, report)
    stage.finish()


@main.command()
@_common_options
@click.option("--scorer", type=click.Choice(["midpoint", "oracle", "endpoint"]), default=None)
@click.option("--noise", type=float, default=None, help="Oracle scorer noise probability.")
def score(config_path, prompts, seed, output_dir, jobs, scorer, noise):
    """Score previously ranked candidates (reads candidates.jsonl)."""
    stage = _Stage("score", config_path, prompts, seed, output_dir, jobs)
    cfg = _experiment(stage, None, None, scorer, noise)
    for prompt_id in stage.prompt_ids:
        prompt = stage.cfg.prompts[prompt_id]
        dataset = cfg.datasets[prompt_id]
        candidates_path = stage.out / prompt_id / "candidates.jsonl"
        if not candidates_path.is_file():
            raise click.ClickException(
                f"{prompt_id}: {candidates_path} not found; run `rankscore rank` first"
            )
        by_id = {}
        with candidates_path.open(encoding="utf-8") as fh:
            for line in fh:
                row = json.loads(line)
                by_id[row["essay_id"]] = tuple(row["candidate_scores"])
        prompt_seed = derive_seed(cfg.seed, prompt_id)
        _, test = corpus.split(dataset, cfg.test_fraction, derive_seed(prompt_seed, "split"))
        targets = sorted(test.essays, key=lambda e: e.id)
        missing = [e.id for e in targets if e.id not in by_id]
        if missing:
            raise click.ClickException(
                f"{prompt_id}: candidates.jsonl is missing {len(missing)} test essay(s)"
            )
        golds_by_text = {e.text: e.gold_score for e in dataset.essays}
        backend = evaluation._build_scorer(
            cfg.scorer, prompt, golds_by_text, derive_seed(prompt_seed, "scorer")
        )
        rows = []
        predictions = []
        clamped_n = 0
        for essay in targets:
            pred, violated = scoring.score_with_clamp(backend, essay.text, by_id[essay.id], prompt)
            predictions.append(pred)
            clamped_n += int(violated)
            rows.append(
                {
                    "essay_id": essay.id,
                    "gold": essay.gold_score,
                    "candidate_scores": list(by_id[essay.id]),
                    "predicted": pred,
                    "clamped": violated,
                }
            )
        path = stage.prompt_dir(prompt_id) / "predictions.jsonl"
        with path.open("w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")
        stage.add(path)
        agreement = evaluation.qwk(
            [e.gold_score for e in targets], predictions,
            prompt.score_min, prompt.score_max, prompt.step,
        )
        stage.manifest.stats[prompt_id] = {
            "qwk": agreement,
            "n_test": len(targets),
            "clamp_violations": clamped_n + getattr(backend, "clamp_violations", 0),
            "parse_failures": getattr(backend, "parse_failures", 0),
        }
    stage.finish()


@main.command(name="train-data")
@_common_options
def train_data(config_path, prompts, seed, output_dir, jobs):
    """Emit ranker pairwise data and calibrated scorer training data."""
    stage = _Stage("train-data", config_path, prompts, seed, output_dir, jobs)
    cfg = _experiment(stage, None, None, None, None)
    for prompt_id in stage.prompt_ids:
        prompt = stage.cfg.prompts[prompt_id]
        dataset = cfg.datasets[prompt_id]
        prompt_seed = derive_seed(cfg.seed, prompt_id)
        train, _ = corpus.split(dataset, cfg.test_fraction, derive_seed(prompt_seed, "split"))
        _, augmented = evaluation.select_and_augment(cfg, prompt, train, dataset.essays)
        pairwise = scoring.generate_pairwise_training(
            train, augmented, k=cfg.pairwise_k, seed=derive_seed(prompt_seed, "pairwise")
        )
        prompt_dir = stage.prompt_dir(prompt_id)
        pairwise_path = scoring.write_pairwise_jsonl(pairwise, prompt_dir / "pairwise.jsonl")
        ref_scores = corpus.select_reference_scores(prompt)
        reference_set = corpus.select_reference_essays(
            train, ref_scores, seed=derive_seed(prompt_seed, "refs")
        )
        ladder = ranking.build_ladder(reference_set, prompt, augmented)
        accuracy = stage.cfg.ranker_test_accuracy
        if accuracy is None:
            accuracy = _measured_accuracy(stage.out / prompt_id, dataset)
        if accuracy is None:
            raise click.ClickException(
                f"{prompt_id}: set [calibration] ranker_test_accuracy or run `rankscore rank` first"
            )
        calibration = CalibrationConfig(
            accuracy, stage.cfg.calibration_gap, derive_seed(prompt_seed, "calibration")
        )
        examples = scoring.generate_scorer_training(train, ladder, calibration)
        scorer_path = scoring.write_scorer_jsonl(examples, prompt, prompt_dir / "scorer_train.jsonl")
        stage.add(pairwise_path, scorer_path)
        corrupted = sum(1 for ex in examples if ex.corrupted)
        stage.manifest.stats[prompt_id] = {
            "pairwise_examples": len(pairwise),
            "scorer_examples": len(examples),
            "corrupted": corrupted,
            "target_accuracy": calibration.target_accuracy,
            "achieved_accuracy": (len(examples) - corrupted) / len(examples) if examples else None,
        }
    stage.finish()


def _measured_accuracy(prompt_dir: Path, dataset) -> float | None:
    path = prompt_dir / "candidates.jsonl"
    if not path.is_file():
        return None
    golds = {e.id: e.gold_score for e in dataset.essays}
    hits = 0
    total = 0
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            row = json.loads(line)
            if row["essay_id"] not in golds:
                continue
            total += 1
            hits += int(golds[row["essay_id"]] in row["candidate_scores"])
    return hits / total if total else None


@main.command()
@_common_options
@click.option("--p-grid", default="0.0,0.1,0.3", show_default=True,
              help="Comma-separated comparator flip probabilities.")
@click.option("--trials", type=int, default=1000, show_default=True)
def simulate(config_path, prompts, seed, output_dir, jobs, p_grid, trials):
    """Monte-Carlo + exact candidate-accuracy sweep under comparator noise."""
    stage = _Stage("simulate", config_path, prompts, seed, output_dir, jobs)
    try:
        grid = [float(x) for x in p_grid.split(",") if x.strip()]
    except ValueError:
        raise click.UsageError(f"cannot parse --p-grid {p_grid!r}") from None
    for prompt_id in stage.prompt_ids:
        prompt = stage.cfg.prompts[prompt_id]
        rows = evaluation.simulate_ranker(
            prompt, grid, trials,
            seed=derive_seed(stage.cfg.seed, prompt_id, "simulate"),
            tie_behavior=stage.cfg.tie_behavior,
        )
        path = stage.prompt_dir(prompt_id) / "simulation.csv"
        with path.open("w", encoding="utf-8") as fh:
            fh.write("p,trials,mc_accuracy,exact_accuracy,mc_mean_calls,exact_mean_calls\n")
            for row in rows:
                fh.write(
                    f"{row.flip_probability},{row.trials},{row.mc_accuracy!r},"
                    f"{row.exact_accuracy!r},{row.mc_mean_calls!r},{row.exact_mean_calls!r}\n"
                )
        stage.add(path)
        stage.manifest.stats[prompt_id] = {
            "p_grid": grid,
            "mc_accuracy": [row.mc_accuracy for row in rows],
            "exact_accuracy": [row.exact_accuracy for row in rows],
        }
    stage.finish()


@main.command(name="eval")
@_common_options
@click.option("--vanilla", is_flag=True, help="Skip ranking; score against the full lattice.")
@click.option("--comparator", type=click.Choice(["oracle", "endpoint"]), default=None)
@click.option("--p", type=float, default=None, help="Oracle comparator flip probability.")
@click.option("--scorer", type=click.Choice(["midpoint", "oracle", "endpoint"]), default=None)
@click.option("--noise", type=float, default=None, help="Oracle scorer noise probability.")
def eval_cmd(config_path, prompts, seed, output_dir, jobs, vanilla, comparator, p, scorer, noise):
    """Run the full pipeline and report QWK plus candidate accuracy."""
    stage = _Stage("eval", config_path, prompts, seed, output_dir, jobs)
    cfg = _experiment(stage, comparator, p, scorer, noise)
    report = evaluation.run_vanilla(cfg) if vanilla else evaluation.run_rts(cfg)
    _record_report(stage, report)
    stage.finish()


@main.command(name="report")
@_common_options
@click.option("--formats", default="csv,json,markdown", show_default=True,
              help="Comma-separated output formats.")
def report_cmd(config_path, prompts, seed, output_dir, jobs, formats):
    """Re-emit a stored report.json in other formats."""
    stage = _Stage("report", config_path, prompts, seed, output_dir, jobs)
    source = stage.out / "report.json"
    if not source.is_file():
        raise click.ClickException(f"{source} not found; run `rankscore eval` first")
    report = evaluation.ExperimentReport.from_json(source.read_text(encoding="utf-8"))
    fmts = [f.strip() for f in formats.split(",") if f.strip()]
    try:
        written = evaluation.emit_report(report, fmts, stage.out)
    except evaluation.EvaluationError as exc:
        raise click.UsageError(str(exc)) from exc
    stage.add(*written)
    stage.finish()


if __name__ == "__main__":
    main()
