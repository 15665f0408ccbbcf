"""Class-conditional conformal prediction: standard, classwise and clustered
calibration of classifier prediction sets, plus the evaluation harness."""

from .calibrators import (
    CalibratedModel,
    LabeledScores,
    TuneResult,
    auto_tune,
    fit_classwise,
    fit_clustered,
    fit_clustered_auto,
    fit_standard,
    predict_set,
    predict_sets,
)
from .clustering import ClusterMap, build_cluster_map, embed_class, tv_diagnostic, weighted_kmeans
from .metrics import (
    BetaCoverageLaw,
    MetricsReport,
    avg_size,
    beta_coverage_law,
    class_balance,
    cov_gap,
    evaluate,
    frac_under_cov,
    per_class_coverage,
)
from .quantiles import conformal_quantile, finite_quantile, randomized_conformal_quantile
from .scores import ScoreKind, aps_score, raps_score, score_all_labels, score_matrix, softmax_score

__version__ = "0.1.0"

__all__ = [
    "BetaCoverageLaw",
    "CalibratedModel",
    "ClusterMap",
    "LabeledScores",
    "MetricsReport",
    "ScoreKind",
    "TuneResult",
    "aps_score",
    "auto_tune",
    "avg_size",
    "beta_coverage_law",
    "build_cluster_map",
    "class_balance",
    "conformal_quantile",
    "cov_gap",
    "embed_class",
    "evaluate",
    "finite_quantile",
    "fit_classwise",
    "fit_clustered",
    "fit_clustered_auto",
    "fit_standard",
    "frac_under_cov",
    "per_class_coverage",
    "predict_set",
    "predict_sets",
    "randomized_conformal_quantile",
    "raps_score",
    "score_all_labels",
    "score_matrix",
    "softmax_score",
    "tv_diagnostic",
    "weighted_kmeans",
]
