"""Estimation layer: design construction, absorbed OLS, and the panel analyses."""

from .design import (
    Design,
    ModelSpec,
    STANDARD_CONTROLS,
    TOKEN_CONTROLS,
    TREATMENT_CONTINUOUS,
    TREATMENT_DISCRETE,
    build_design,
)
from .estimators import (
    AbsorbingOLS,
    Coefficient,
    DiDEstimator,
    FitResult,
    TripleDiffEstimator,
    absorb_fixed_effects,
    estimate_did,
    estimate_triple_diff,
    ols_fit,
)
from .analysis import (
    HedonicIndexEstimator,
    IndexSeries,
    hedonic_index,
    partition_meta,
    residual_trend_series,
)
from . import report

__all__ = [
    "AbsorbingOLS",
    "Coefficient",
    "Design",
    "DiDEstimator",
    "FitResult",
    "HedonicIndexEstimator",
    "IndexSeries",
    "ModelSpec",
    "STANDARD_CONTROLS",
    "TOKEN_CONTROLS",
    "TREATMENT_CONTINUOUS",
    "TREATMENT_DISCRETE",
    "TripleDiffEstimator",
    "absorb_fixed_effects",
    "build_design",
    "estimate_did",
    "estimate_triple_diff",
    "hedonic_index",
    "ols_fit",
    "partition_meta",
    "report",
    "residual_trend_series",
]
