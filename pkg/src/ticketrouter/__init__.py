"""Ticket routing as learning to rank over expert groups.

The package covers the full loop: synthetic corpus generation, text and
graph feature extraction, candidate selection, pointwise/pairwise ranker
training, and a routing simulator with MSTR/RR/MADR/hit-rate evaluation.
`ticketrouter.pipeline.execute` drives the whole thing; the `ticketrouter`
console script wraps it.
"""

from .corpus import (
    Corpus,
    ExpertGroup,
    GroupRegistry,
    RoutingRecord,
    Ticket,
    corpus_stats,
    parse_corpus,
    save_corpus,
)
from .errors import ConfigError, ParseError, PipelineError, TicketRouterError, ValidationError
from .features import BLOCKS, FEATURE_NAMES, N_FEATURES, FeaturePipeline, TransitionStats
from .groupnet import (
    GroupPriors,
    RoutingNetwork,
    build_networks,
    compute_centralities,
    compute_priors,
    fidelity_and_roles,
)
from .pipeline import COMMANDS, PipelineConfig, execute
from .ranking import (
    PairwiseBoostedModel,
    PointwiseForestModel,
    TrainingSet,
    build_training_set,
    feature_importance,
    load_model,
    save_model,
    train_pairwise,
    train_pointwise,
)
from .rootrank import CandidateSet, TicketIndex, generate_candidates
from .simulate import (
    MetricsReport,
    ModelScorer,
    OracleScorer,
    RandomScorer,
    TransitionScorer,
    build_test_sets,
    derive_seed,
    evaluate_system,
    human_reference,
    leave_one_out_hit_rate,
    madr_eval,
    rank_step,
    simulate_mstr_rr,
)
from .synthgen import GeneratorConfig, generate_synthetic
from .textmodels import TextModels, build_models, clarity

__version__ = "1.0.0"

__all__ = [
    "BLOCKS",
    "COMMANDS",
    "CandidateSet",
    "ConfigError",
    "Corpus",
    "ExpertGroup",
    "FEATURE_NAMES",
    "FeaturePipeline",
    "GeneratorConfig",
    "GroupPriors",
    "GroupRegistry",
    "MetricsReport",
    "ModelScorer",
    "N_FEATURES",
    "OracleScorer",
    "PairwiseBoostedModel",
    "ParseError",
    "PipelineConfig",
    "PipelineError",
    "PointwiseForestModel",
    "RandomScorer",
    "RoutingNetwork",
    "RoutingRecord",
    "Ticket",
    "TicketIndex",
    "TicketRouterError",
    "TextModels",
    "TrainingSet",
    "TransitionScorer",
    "TransitionStats",
    "ValidationError",
    "build_models",
    "build_networks",
    "build_test_sets",
    "build_training_set",
    "clarity",
    "compute_centralities",
    "compute_priors",
    "corpus_stats",
    "derive_seed",
    "evaluate_system",
    "execute",
    "feature_importance",
    "fidelity_and_roles",
    "generate_candidates",
    "generate_synthetic",
    "human_reference",
    "leave_one_out_hit_rate",
    "load_model",
    "madr_eval",
    "parse_corpus",
    "rank_step",
    "save_corpus",
    "save_model",
    "simulate_mstr_rr",
    "train_pairwise",
    "train_pointwise",
]
