"""Comparator-driven essay scoring.

A pairwise comparator walks a balanced ladder of reference essays to narrow
each essay down to a candidate score set; a pluggable scorer resolves the
set to a final score; quadratic weighted kappa measures agreement.  The
package also extracts statistical essay features, selects the most
score-separating ones, and generates calibrated fine-tuning data for
external ranker/scorer models.
"""

__version__ = "0.1.0"

from .corpus import (
    BUILTIN_PROMPTS,
    attach_sidecar_features,
    ConfigurationError,
    CorpusError,
    Dataset,
    Essay,
    PromptSpec,
    ReferenceSet,
    RowParseError,
    clean_dataset,
    clean_text,
    lattice,
    load_dataset,
    select_reference_essays,
    select_reference_scores,
    split,
)
from .evaluation import (
    ExperimentConfig,
    ExperimentReport,
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
from .features import (
    FeatureSpec,
    FeatureVector,
    FScoreTable,
    LexiconResources,
    augment,
    binarize_scores,
    build_registry,
    default_registry,
    extract_features,
    f_score,
    load_sidecar_features,
    select_top_k,
    tokenize,
)
from .llm import (
    ChatClient,
    EndpointConfig,
    LLMComparator,
    LLMScorer,
    ParsedResponse,
    PromptTemplate,
    StubTransport,
    complete,
    load_template,
    parse_rank,
    parse_score,
    render,
)
from .ranking import (
    CandidateScoreSet,
    Comparator,
    NoisyOracleConfig,
    OracleComparator,
    ReferenceLadder,
    Verdict,
    VerdictKind,
    build_ladder,
    candidate_accuracy,
    infer_candidate_set,
    multi_validate,
    oracle_comparator,
)
from .scoring import (
    CalibrationConfig,
    PairwiseExample,
    Scorer,
    ScorerExample,
    corrupt_candidate_set,
    generate_pairwise_training,
    generate_scorer_training,
    midpoint_scorer,
    oracle_scorer,
    true_candidate_set,
)
from .synthetic import make_synthetic_dataset

__all__ = [name for name in dir() if not name.startswith("_")]
