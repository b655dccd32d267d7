"""TOML run configuration shared by every CLI subcommand."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib  # type: ignore[no-redef]

from . import evaluation
from .corpus import (
    ConfigurationError,
    Dataset,
    PromptSpec,
    attach_sidecar_features,
    clean_dataset,
    load_dataset,
)
from .features import LexiconResources, load_sidecar_features
from .llm import EndpointConfig
from .scoring import CalibrationConfig


@dataclass
class RunConfig:
    """Parsed and path-resolved contents of one config file."""

    path: Path
    seed: int = 0
    output_dir: Path = Path("out")
    jobs: int = 1
    test_fraction: float = 0.2
    prompts: dict[str, PromptSpec] = field(default_factory=dict)
    datasets: dict[str, Path] = field(default_factory=dict)
    cleaning_rules: tuple[str, ...] = ()
    feature_k: int = 10
    selected_features: dict[str, list[str]] = field(default_factory=dict)
    enabled_features: list[str] | None = None
    sidecar_features: list[str] = field(default_factory=list)
    sidecar_paths: dict[str, Path] = field(default_factory=dict)
    resources: LexiconResources = field(default_factory=LexiconResources.empty)
    comparator_kind: str = "oracle"
    comparator_p: float = 0.0
    tie_behavior: str = "coin"
    scorer_kind: str = "midpoint"
    scorer_noise: float = 0.0
    calibration_gap: float = 0.15
    ranker_test_accuracy: float | None = None
    calibration_seed: int = 0
    pairwise_k: int = 5
    endpoint: EndpointConfig | None = None
    ranker_template: Path | None = None
    scorer_template: Path | None = None


def _resolve(base: Path, value: str) -> Path:
    path = Path(value)
    return path if path.is_absolute() else base / path


def load_run_config(path: str | Path) -> RunConfig:
    """Load, validate and path-resolve a TOML config file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid TOML: {exc}") from exc
    base = path.parent

    cfg = RunConfig(path=path)
    run = data.get("run", {})
    cfg.seed = int(run.get("seed", 0))
    cfg.output_dir = _resolve(base, str(run.get("output_dir", "out")))
    cfg.jobs = int(run.get("jobs", 1))
    cfg.test_fraction = float(run.get("test_fraction", 0.2))

    for prompt_id, spec in data.get("prompts", {}).items():
        try:
            cfg.prompts[prompt_id] = PromptSpec(
                id=prompt_id,
                score_min=int(spec["score_min"]),
                score_max=int(spec["score_max"]),
                step=int(spec.get("step", 1)),
                reference_scores=tuple(spec.get("reference_scores", ())),
                language=spec.get("language", "en"),
                topic=spec.get("topic", ""),
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigurationError(f"{path}: prompt {prompt_id!r}: {exc}") from exc
    if not cfg.prompts:
        raise ConfigurationError(f"{path}: no [prompts.*] section")

    for prompt_id, dataset_path in data.get("datasets", {}).items():
        if prompt_id not in cfg.prompts:
            raise ConfigurationError(f"{path}: dataset for unknown prompt {prompt_id!r}")
        cfg.datasets[prompt_id] = _resolve(base, str(dataset_path))
    missing = [pid for pid in cfg.prompts if pid not in cfg.datasets]
    if missing:
        raise ConfigurationError(f"{path}: no dataset for prompt(s) {', '.join(missing)}")

    cfg.cleaning_rules = tuple(data.get("cleaning", {}).get("rules", ()))

    feat = data.get("features", {})
    cfg.feature_k = int(feat.get("k", 10))
    for prompt_id, names in feat.get("selected", {}).items():
        cfg.selected_features[prompt_id] = list(names)
    if "enabled" in feat:
        cfg.enabled_features = list(feat["enabled"])
    cfg.sidecar_features = list(feat.get("sidecar_features", ()))
    for prompt_id, sidecar_path in feat.get("sidecar", {}).items():
        if prompt_id not in cfg.prompts:
            raise ConfigurationError(f"{path}: sidecar for unknown prompt {prompt_id!r}")
        cfg.sidecar_paths[prompt_id] = _resolve(base, str(sidecar_path))

    res = data.get("resources", {})
    if res:
        cfg.resources = LexiconResources.load(
            word_freq=_resolve(base, res["word_freq"]) if "word_freq" in res else None,
            word_levels={
                int(level): _resolve(base, p) for level, p in res.get("word_levels", {}).items()
            }
            or None,
            char_levels={
                int(level): _resolve(base, p) for level, p in res.get("char_levels", {}).items()
            }
            or None,
            stopwords=_resolve(base, res["stopwords"]) if "stopwords" in res else None,
            dictionary=_resolve(base, res["dictionary"]) if "dictionary" in res else None,
        )

    comparator = data.get("comparator", {})
    cfg.comparator_kind = comparator.get("kind", "oracle")
    cfg.comparator_p = float(comparator.get("flip_probability", 0.0))
    cfg.tie_behavior = comparator.get("tie_behavior", "coin")
    if cfg.comparator_kind not in ("oracle", "endpoint"):
        raise ConfigurationError(f"{path}: unknown comparator kind {cfg.comparator_kind!r}")

    scorer = data.get("scorer", {})
    cfg.scorer_kind = scorer.get("kind", "midpoint")
    cfg.scorer_noise = float(scorer.get("noise_p", 0.0))
    if cfg.scorer_kind not in ("midpoint", "oracle", "endpoint"):
        raise ConfigurationError(f"{path}: unknown scorer kind {cfg.scorer_kind!r}")

    calibration = data.get("calibration", {})
    cfg.calibration_gap = float(calibration.get("gap", 0.15))
    if "ranker_test_accuracy" in calibration:
        cfg.ranker_test_accuracy = float(calibration["ranker_test_accuracy"])
    cfg.calibration_seed = int(calibration.get("seed", cfg.seed))
    cfg.pairwise_k = int(calibration.get("pairwise_k", 5))

    endpoint = data.get("endpoint")
    if endpoint is not None:
        try:
            cfg.endpoint = EndpointConfig(
                base_url=endpoint["base_url"],
                model=endpoint["model"],
                token_env=endpoint.get("token_env", "RANKSCORE_API_TOKEN"),
                temperature=float(endpoint.get("temperature", 0.0)),
                max_tokens=int(endpoint.get("max_tokens", 32)),
                timeout=float(endpoint.get("timeout", 30.0)),
                max_attempts=int(endpoint.get("max_attempts", 3)),
                backoff=float(endpoint.get("backoff", 0.5)),
                max_in_flight=int(endpoint.get("max_in_flight", 4)),
            )
        except KeyError as exc:
            raise ConfigurationError(f"{path}: [endpoint] missing {exc.args[0]!r}") from None
    if cfg.comparator_kind == "endpoint" or cfg.scorer_kind == "endpoint":
        if cfg.endpoint is None:
            raise ConfigurationError(f"{path}: endpoint backends need an [endpoint] section")

    templates = data.get("templates", {})
    if "ranker" in templates:
        cfg.ranker_template = _resolve(base, templates["ranker"])
    if "scorer" in templates:
        cfg.scorer_template = _resolve(base, templates["scorer"])
    return cfg


def load_datasets(cfg: RunConfig, prompt_ids: Sequence[str]) -> dict[str, Dataset]:
    """Load, clean and sidecar-augment the datasets of the selected prompts."""
    datasets = {}
    for prompt_id in prompt_ids:
        dataset = load_dataset(cfg.datasets[prompt_id], cfg.prompts[prompt_id])
        if cfg.cleaning_rules:
            dataset = clean_dataset(dataset, cfg.cleaning_rules)
        if prompt_id in cfg.sidecar_paths:
            table = load_sidecar_features(cfg.sidecar_paths[prompt_id])
            dataset = attach_sidecar_features(dataset, table)
        datasets[prompt_id] = dataset
    return datasets


def select_prompts(cfg: RunConfig, prompt_ids: Sequence[str]) -> list[str]:
    if not prompt_ids:
        return sorted(cfg.prompts)
    unknown = [pid for pid in prompt_ids if pid not in cfg.prompts]
    if unknown:
        raise ConfigurationError(f"unknown prompt(s): {', '.join(unknown)}")
    return list(prompt_ids)


def build_experiment_config(
    cfg: RunConfig,
    prompt_ids: Sequence[str],
    datasets: Mapping[str, Dataset],
) -> evaluation.ExperimentConfig:
    """Translate a RunConfig into the library's experiment configuration."""
    if cfg.comparator_kind == "oracle":
        comparator: evaluation.ComparatorSpec = evaluation.OracleComparatorSpec(
            cfg.comparator_p, cfg.tie_behavior
        )
    else:
        assert cfg.endpoint is not None
        comparator = evaluation.EndpointComparatorSpec(
            cfg.endpoint, str(cfg.ranker_template) if cfg.ranker_template else None
        )
    if cfg.scorer_kind == "midpoint":
        scorer: evaluation.ScorerSpec = evaluation.MidpointScorerSpec()
    elif cfg.scorer_kind == "oracle":
        scorer = evaluation.OracleScorerSpec(cfg.scorer_noise)
    else:
        assert cfg.endpoint is not None
        scorer = evaluation.EndpointScorerSpec(
            cfg.endpoint, str(cfg.scorer_template) if cfg.scorer_template else None
        )
    calibration = None
    if cfg.ranker_test_accuracy is not None:
        calibration = CalibrationConfig(
            cfg.ranker_test_accuracy, cfg.calibration_gap, cfg.calibration_seed
        )
    return evaluation.ExperimentConfig(
        prompts=[cfg.prompts[pid] for pid in prompt_ids],
        datasets=dict(datasets),
        comparator=comparator,
        scorer=scorer,
        seed=cfg.seed,
        test_fraction=cfg.test_fraction,
        feature_k=cfg.feature_k,
        resources=cfg.resources,
        selected_features=cfg.selected_features or None,
        enabled_features=cfg.enabled_features,
        sidecar_features=cfg.sidecar_features,
        calibration=calibration,
        pairwise_k=cfg.pairwise_k,
        output_dir=cfg.output_dir,
        jobs=cfg.jobs,
    )
