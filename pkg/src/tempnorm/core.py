"""Temporal normalization of scalar streams.

A stream is standardized against its own exponentially weighted mean and
variance, which start from a population prior (mean 0, variance 1) and
adapt at a rate set by a half-life measured in samples.  Every sample is
normalized with the statistics accumulated *before* it, then folded into
them.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

INF = math.inf

DEFAULT_OFFSET = 6.0
DEFAULT_SCALE = 4.0
DEGENERATE_CAP = 1e6


class InvalidParameterError(ValueError):
    """A configuration value is outside its allowed domain."""


class InvalidInputError(ValueError):
    """An input sample is not usable (non-finite, wrong shape, ...)."""


class DegenerateVarianceWarning(RuntimeWarning):
    """The running variance collapsed to exactly zero."""


class Region(str, enum.Enum):
    TYPICAL = "typical"
    UNUSED = "unused"
    ANOMALY = "anomaly"


def parse_half_life(value) -> float:
    """Accept a positive number or the spelling ``"inf"``."""
    if isinstance(value, str):
        text = value.strip().lower()
        if text in ("inf", "infinity", "∞"):
            return INF
        try:
            value = float(text)
        except ValueError:
            raise InvalidParameterError(f"bad half-life {value!r}") from None
    h = float(value)
    if math.isnan(h) or h <= 0:
        raise InvalidParameterError(f"half-life must be > 0, got {value!r}")
    return h


def format_half_life(h: float):
    """JSON/CLI spelling: ``"inf"`` for the infinite half-life, else the number."""
    if math.isinf(h):
        return "inf"
    return int(h) if float(h).is_integer() else float(h)


def decay_from_half_life(half_life: float) -> float:
    """Weight given to each new sample: ``1 - 0.5 ** (1 / half_life)``.

    An infinite half-life yields 0, which freezes the state at the prior.
    """
    h = parse_half_life(half_life)
    if math.isinf(h):
        return 0.0
    return 1.0 - 0.5 ** (1.0 / h)


def prenormalize(raw, offset: float = DEFAULT_OFFSET, scale: float = DEFAULT_SCALE):
    """Map raw ratings onto the population scale, ``(raw - offset) / scale``.

    Works elementwise on arrays.
    """
    if not scale > 0:
        raise InvalidParameterError(f"scale must be > 0, got {scale}")
    if isinstance(raw, (int, float)):
        return (raw - offset) / scale
    return (np.asarray(raw, dtype=float) - offset) / scale


@dataclass(frozen=True)
class TempNormState:
    mean: float = 0.0
    var: float = 1.0
    decay: float = 0.0
    count: int = 0

    @classmethod
    def from_half_life(cls, half_life, prior: tuple[float, float] = (0.0, 1.0)):
        mean, var = prior
        if not var > 0:
            raise InvalidParameterError(f"prior variance must be > 0, got {var}")
        return cls(float(mean), float(var), decay_from_half_life(half_life), 0)

    @property
    def std(self) -> float:
        return math.sqrt(self.var)


def tempnorm_step(
    state: TempNormState,
    x: float,
    var_min: float = 0.0,
    cap: float = DEGENERATE_CAP,
) -> tuple[float, TempNormState]:
    """Normalize ``x`` against ``state`` and return ``(y, updated_state)``.

    ``var_min`` floors the variance used for normalization; the default of
    zero leaves short half-lives free to blow up on repeated values.
    """
    x = float(x)
    if not math.isfinite(x):
        raise InvalidInputError(f"non-finite sample {x!r}")
    lam = state.decay
    delta = x - state.mean
    var = max(state.var, var_min)
    if var > 0:
        y = delta / math.sqrt(var)
    elif delta == 0:
        y = 0.0
    else:
        warnings.warn(
            f"variance collapsed to zero at sample {state.count}",
            DegenerateVarianceWarning,
            stacklevel=2,
        )
        y = math.copysign(cap, delta)
    beta = lam * delta
    new = TempNormState(
        mean=state.mean + beta,
        var=(1.0 - lam) * (state.var + beta * delta),
        decay=lam,
        count=state.count + 1,
    )
    return y, new


def tempnorm_sequence(
    xs: Iterable[float],
    half_life,
    prior: tuple[float, float] = (0.0, 1.0),
    var_min: float = 0.0,
) -> np.ndarray:
    """Normalize a whole stream, starting from ``prior``."""
    values = np.asarray(list(xs) if not isinstance(xs, np.ndarray) else xs, dtype=float)
    if values.ndim != 1 or values.size == 0:
        raise InvalidInputError("expected a non-empty 1-d sequence")
    state = TempNormState.from_half_life(half_life, prior)
    out = np.empty_like(values)
    for i, x in enumerate(values):
        try:
            out[i], state = tempnorm_step(state, x, var_min=var_min)
        except InvalidInputError as exc:
            raise InvalidInputError(f"index {i}: {exc}") from None
    return out


def tempnorm_ratings(
    ymrs: Sequence[float],
    hdrs: Sequence[float],
    half_life,
    offset: float = DEFAULT_OFFSET,
    scale: float = DEFAULT_SCALE,
) -> tuple[np.ndarray, np.ndarray]:
    """Prenormalize raw mania/depression ratings and run one stream per dimension."""
    mania = tempnorm_sequence(prenormalize(np.asarray(ymrs, float), offset, scale), half_life)
    depression = tempnorm_sequence(prenormalize(np.asarray(hdrs, float), offset, scale), half_life)
    return mania, depression


def combine_max(mania_score, depression_score):
    if isinstance(mania_score, (int, float)) and isinstance(depression_score, (int, float)):
        if not (math.isfinite(mania_score) and math.isfinite(depression_score)):
            raise InvalidInputError("scores must be finite")
        return max(mania_score, depression_score)
    a = np.asarray(mania_score, float)
    b = np.asarray(depression_score, float)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise InvalidInputError("scores must be finite")
    return np.maximum(a, b)


def classify_region(y: float, lower: float = 1.0, upper: float = 2.0) -> Region:
    """Band a normalized score.  Scores on either threshold fall in UNUSED."""
    if not lower < upper:
        raise InvalidParameterError(f"need lower < upper, got {lower}, {upper}")
    if y < lower:
        return Region.TYPICAL
    if y > upper:
        return Region.ANOMALY
    return Region.UNUSED


def binarize(y: float, threshold: float = 1.5) -> Region:
    return Region.ANOMALY if y >= threshold else Region.TYPICAL


class TempNormBank:
    """Independent TempNorm streams held as arrays, one per unit.

    Used by the network layer, where every hidden unit is its own stream.
    """

    def __init__(self, width: int, half_life, prior=(0.0, 1.0)):
        self.decay = decay_from_half_life(half_life)
        self.mean = np.full(width, float(prior[0]))
        self.var = np.full(width, float(prior[1]))
        self.count = 0

    def step(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return ``(y, mean_used, std_used)`` and advance the bank one sample."""
        mean = self.mean
        std = np.sqrt(self.var)
        delta = x - mean
        with np.errstate(divide="ignore", invalid="ignore"):
            y = np.where(std > 0, delta / np.where(std > 0, std, 1.0), 0.0)
        beta = self.decay * delta
        self.mean = mean + beta
        self.var = (1.0 - self.decay) * (self.var + beta * delta)
        self.count += 1
        return y, mean, std

    def state(self, unit: int) -> TempNormState:
        return TempNormState(float(self.mean[unit]), float(self.var[unit]), self.decay, self.count)

