"""Treatment-effect estimation for survey outcomes with treatment-dependent non-response."""

__version__ = "0.1.0"

from abide.data import (  # noqa: E402
    CovariateSchema,
    ExperimentDataset,
    UnitRecord,
    partition,
    read_csv,
    validate,
    write_csv,
)
from abide.estimators import Estimand, EstimateResult, EstimatorSettings, run_estimator  # noqa: E402

__all__ = [
    "CovariateSchema",
    "Estimand",
    "EstimateResult",
    "EstimatorSettings",
    "ExperimentDataset",
    "UnitRecord",
    "partition",
    "read_csv",
    "run_estimator",
    "validate",
    "write_csv",
]
