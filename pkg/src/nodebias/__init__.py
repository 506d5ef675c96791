"""Class-wise and per-input-node robustness bias of small ReLU classifiers
under discretised input noise."""

__version__ = "0.1.0"

from .analysis import (  # noqa: E402
    BiasReport,
    BiasScore,
    SensitivityCurve,
    bias_scores,
    build_report,
    class_robustness_curve,
    compare_regimes,
    node_sensitivity_curves,
    variance_table,
)
from .data import (  # noqa: E402
    Dataset,
    SplitSpec,
    SynthConfig,
    WelchSelector,
    ZScoreNormalizer,
    class_stats,
    load_csv,
    normalize_apply,
    normalize_fit,
    rank_features,
    split,
    synth_longtail,
    truncate_to_balance,
)
from .model import Layer, Network, forward, load_model, save_model, validate_model  # noqa: E402
from .perturb import (  # noqa: E402
    ALL_NODES,
    NoiseSweep,
    PreservationCount,
    SeedInput,
    export_dtmc,
    grid,
    parse_dtmc,
    preserve_all_nodes,
    preserve_single_node,
    worst_case_robust,
)
from .train import ReluNetClassifier, RunSet, TrainConfig, train_one, train_runs  # noqa: E402

__all__ = [
    "ALL_NODES",
    "BiasReport",
    "BiasScore",
    "Dataset",
    "Layer",
    "Network",
    "NoiseSweep",
    "PreservationCount",
    "ReluNetClassifier",
    "RunSet",
    "SeedInput",
    "SensitivityCurve",
    "SplitSpec",
    "SynthConfig",
    "TrainConfig",
    "WelchSelector",
    "ZScoreNormalizer",
    "bias_scores",
    "build_report",
    "class_robustness_curve",
    "class_stats",
    "compare_regimes",
    "export_dtmc",
    "forward",
    "grid",
    "load_csv",
    "load_model",
    "node_sensitivity_curves",
    "normalize_apply",
    "normalize_fit",
    "parse_dtmc",
    "preserve_all_nodes",
    "preserve_single_node",
    "rank_features",
    "save_model",
    "split",
    "synth_longtail",
    "train_one",
    "train_runs",
    "truncate_to_balance",
    "validate_model",
    "variance_table",
    "worst_case_robust",
]
