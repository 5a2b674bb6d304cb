"""MC-dropout uncertainty measures and uncertainty-aware patient-level aggregation."""
from .aggregate import (
    ALL_VARIANTS,
    AggregationModel,
    FeatureVariant,
    PatientPrediction,
    TrainConfig,
    build_features,
    build_model,
    maximum_method,
    predict_patient,
    select_top5,
    train_aggregator,
)
from .measures import UncertaintySummary, summarize, summarize_many
from .metrics import (
    EvaluationReport,
    accuracy_with_wilson,
    calibration,
    ci_overlap,
    removal_curve,
    roc_auc,
    sanders_score,
)
from .pipeline import ExperimentConfig, cohort_summaries, make_folds, run_experiment
from .predstore import (
    CohortDataset,
    ImageRecord,
    PatientRecord,
    PredictiveSamples,
    parse_samples_file,
    serialize_samples_file,
)
from .synth import GeneratorConfig, degenerate_cohort, generate

__version__ = "0.1.0"

__all__ = [
    "ALL_VARIANTS",
    "AggregationModel",
    "FeatureVariant",
    "PatientPrediction",
    "TrainConfig",
    "build_features",
    "build_model",
    "maximum_method",
    "predict_patient",
    "select_top5",
    "train_aggregator",
    "EvaluationReport",
    "accuracy_with_wilson",
    "calibration",
    "ci_overlap",
    "removal_curve",
    "roc_auc",
    "sanders_score",
    "CohortDataset",
    "ImageRecord",
    "PatientRecord",
    "PredictiveSamples",
    "parse_samples_file",
    "serialize_samples_file",
    "UncertaintySummary",
    "summarize",
    "summarize_many",
    "ExperimentConfig",
    "cohort_summaries",
    "make_folds",
    "run_experiment",
    "GeneratorConfig",
    "degenerate_cohort",
    "generate",
]
