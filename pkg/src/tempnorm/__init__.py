"""Streaming per-subject baseline normalization for mood anomaly detection."""

from tempnorm.core import (
    INF,
    DegenerateVarianceWarning,
    InvalidInputError,
    InvalidParameterError,
    Region,
    TempNormBank,
    TempNormState,
    binarize,
    classify_region,
    combine_max,
    decay_from_half_life,
    prenormalize,
    tempnorm_ratings,
    tempnorm_sequence,
    tempnorm_step,
)

__version__ = "0.1.0"

__all__ = [
    "INF",
    "DegenerateVarianceWarning",
    "InvalidInputError",
    "InvalidParameterError",
    "Region",
    "TempNormBank",
    "TempNormState",
    "binarize",
    "classify_region",
    "combine_max",
    "decay_from_half_life",
    "prenormalize",
    "tempnorm_ratings",
    "tempnorm_sequence",
    "tempnorm_step",
]
