"""
Harness - 实验配置、集成运行、收敛率实验与产物落盘
"""
from .artifacts import ArtifactWriter
from .config import (
    ENV_KEYS,
    METRIC_NAMES,
    ConfigError,
    ExperimentConfig,
    RateSection,
    load_config,
    parse_override,
)
from .ensemble import (
    EnsembleResult,
    EnsembleRunError,
    EnsembleRunner,
    SemiconvergenceReport,
    aggregate,
    derive_seed,
    error_metrics,
    run_ensemble,
    semiconvergence_report,
)
from .rate_study import (
    DualRateResult,
    IllPosedOperator,
    RateRow,
    RateStudyResult,
    SourceConditionInstance,
    UnsupportedExperimentError,
    build_rate_instance,
    dual_rate_study,
    exact_data_error,
    fit_slope,
    ill_posed_operator,
    rate_study,
    run_rate_study,
    source_condition_instance,
    stopping_index,
)

__all__ = [
    "ArtifactWriter",
    "ENV_KEYS",
    "METRIC_NAMES",
    "ConfigError",
    "ExperimentConfig",
    "RateSection",
    "load_config",
    "parse_override",
    "EnsembleResult",
    "EnsembleRunError",
    "EnsembleRunner",
    "SemiconvergenceReport",
    "aggregate",
    "derive_seed",
    "error_metrics",
    "run_ensemble",
    "semiconvergence_report",
    "DualRateResult",
    "IllPosedOperator",
    "RateRow",
    "RateStudyResult",
    "SourceConditionInstance",
    "UnsupportedExperimentError",
    "build_rate_instance",
    "dual_rate_study",
    "exact_data_error",
    "fit_slope",
    "ill_posed_operator",
    "rate_study",
    "run_rate_study",
    "source_condition_instance",
    "stopping_index",
]
