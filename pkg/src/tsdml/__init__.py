"""Double/debiased machine learning for impulse responses of a treated time series."""

from .core import (
    ArmStarvationError,
    DegenerateSplitError,
    HorizonError,
    HorizonSample,
    OverlapError,
    Panel,
    TsdmlError,
    build_horizon_sample,
    validate_panel,
)
from .crossfit import (
    LearnerConfig,
    MultiLevelLearnerConfig,
    OracleNuisances,
    SplitPlan,
    dml_estimate,
    dml_estimate_multilevel,
    dml_estimate_two_samples,
    estimate_irf,
    make_split_plan,
)
from .learners import BoostSpec, ForestSpec
from .variance import IrfEstimate

__version__ = "0.1.0"

__all__ = [
    "ArmStarvationError",
    "DegenerateSplitError",
    "HorizonError",
    "HorizonSample",
    "OverlapError",
    "Panel",
    "TsdmlError",
    "build_horizon_sample",
    "validate_panel",
    "LearnerConfig",
    "MultiLevelLearnerConfig",
    "OracleNuisances",
    "SplitPlan",
    "dml_estimate",
    "dml_estimate_multilevel",
    "dml_estimate_two_samples",
    "estimate_irf",
    "make_split_plan",
    "BoostSpec",
    "ForestSpec",
    "IrfEstimate",
]
