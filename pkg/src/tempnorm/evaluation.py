"""Region-based scoring of normalized mood against intervention flags.

Weeks are banded by their normalized score (typical below 1, anomaly above
2, unused in between).  Flags are the ground truth: a flagged week should
land in the anomaly band and an unflagged one in the typical band.  Unused
weeks are never scored, and a subject only counts when both truth classes
survive that exclusion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Iterable, Sequence

import numpy as np

from tempnorm.core import (
    DEFAULT_OFFSET,
    DEFAULT_SCALE,
    INF,
    Region,
    binarize,
    classify_region,
    combine_max,
    format_half_life,
    parse_half_life,
    tempnorm_ratings,
)
from tempnorm.sim import Cohort, SubjectTimeline

DEFAULT_HALF_LIVES = (1, 2, 4, 8, 16, 32, 64, INF)
REGIONS = (Region.TYPICAL, Region.UNUSED, Region.ANOMALY)


class UndefinedUARError(ValueError):
    """A truth class has no samples, so recall is undefined for it."""


def uar(predictions: Sequence, truths: Sequence) -> float:
    """Unweighted average recall over the two classes of binary labels."""
    pred = np.asarray(predictions, dtype=bool)
    true = np.asarray(truths, dtype=bool)
    if pred.shape != true.shape or pred.ndim != 1:
        raise ValueError("predictions and truths must be 1-d and equal length")
    recalls = []
    for cls in (False, True):
        mask = true == cls
        n = int(mask.sum())
        if n == 0:
            raise UndefinedUARError(f"no samples of class {int(cls)}")
        recalls.append(float((pred[mask] == cls).sum()) / n)
    return sum(recalls) / len(recalls)


@dataclass
class RegionCounts:
    """Sample counts by region, split into unflagged/flagged truth."""

    unflagged: dict = field(default_factory=lambda: {r: 0 for r in REGIONS})
    flagged: dict = field(default_factory=lambda: {r: 0 for r in REGIONS})

    def add(self, region: Region, flag: bool) -> None:
        (self.flagged if flag else self.unflagged)[region] += 1

    def __iadd__(self, other: "RegionCounts") -> "RegionCounts":
        for r in REGIONS:
            self.unflagged[r] += other.unflagged[r]
            self.flagged[r] += other.flagged[r]
        return self

    def total(self, region: Region | None = None) -> int:
        regions = REGIONS if region is None else (region,)
        return sum(self.unflagged[r] + self.flagged[r] for r in regions)

    def to_dict(self) -> dict:
        return {
            r.value: {"total": self.unflagged[r] + self.flagged[r], "flagged": self.flagged[r]}
            for r in REGIONS
        }


@dataclass
class SubjectResult:
    subject_id: str
    counts: RegionCounts
    uar: float | None
    scored: list[int]


def normalized_max(timeline: SubjectTimeline, half_life, offset=DEFAULT_OFFSET, scale=DEFAULT_SCALE) -> np.ndarray:
    mania, depression = tempnorm_ratings(timeline.ymrs, timeline.hdrs, half_life, offset, scale)
    return combine_max(mania, depression)


def validate_against_flags(
    timeline: SubjectTimeline,
    half_life,
    lower: float = 1.0,
    upper: float = 2.0,
    enrollment: int = 0,
    offset: float = DEFAULT_OFFSET,
    scale: float = DEFAULT_SCALE,
) -> SubjectResult:
    """Score one subject's normalized ratings against its flags.

    The first ``enrollment`` weeks still update the baseline but are
    neither counted nor scored.
    """
    if len(timeline) == 0:
        return SubjectResult(timeline.subject_id, RegionCounts(), None, [])
    scores = normalized_max(timeline, half_life, offset, scale)
    flags = timeline.flags
    counts = RegionCounts()
    scored, preds, truths = [], [], []
    for i in range(enrollment, len(scores)):
        region = classify_region(scores[i], lower, upper)
        counts.add(region, bool(flags[i]))
        if region is Region.UNUSED:
            continue
        scored.append(i)
        preds.append(region is Region.ANOMALY)
        truths.append(bool(flags[i]))
    try:
        value = uar(preds, truths) if scored else None
    except UndefinedUARError:
        value = None
    return SubjectResult(timeline.subject_id, counts, value, scored)


def score_predictions(
    predicted: Sequence[float],
    truth: Sequence[float],
    lower: float = 1.0,
    upper: float = 2.0,
    threshold: float = 1.5,
) -> float | None:
    """UAR of binarized predictions on samples whose truth is typical or anomalous.

    Returns ``None`` when either truth class is empty.
    """
    predicted = np.asarray(predicted, float)
    truth = np.asarray(truth, float)
    if predicted.shape != truth.shape:
        raise ValueError("predicted and truth must have equal length")
    preds, truths = [], []
    for p, t in zip(predicted, truth):
        region = classify_region(t, lower, upper)
        if region is Region.UNUSED:
            continue
        truths.append(region is Region.ANOMALY)
        preds.append(binarize(p, threshold) is Region.ANOMALY)
    try:
        return uar(preds, truths)
    except UndefinedUARError:
        return None


@dataclass
class SweepRow:
    half_life: float
    n_subjects: int
    counts: RegionCounts
    uars: list[float]
    enrollment: int = 0

    @property
    def uar_mean(self) -> float | None:
        return float(np.mean(self.uars)) if self.uars else None

    @property
    def uar_std(self) -> float | None:
        return float(np.std(self.uars)) if self.uars else None

    def to_dict(self) -> dict:
        return {
            "half_life": format_half_life(self.half_life),
            "n_subjects": self.n_subjects,
            "counts": self.counts.to_dict(),
            "uar_mean": self.uar_mean,
            "uar_std": self.uar_std,
        }


def _ordered(cohort: Cohort) -> list[SubjectTimeline]:
    return sorted(cohort.subjects, key=lambda s: s.subject_id)


def sweep_half_life(
    cohort: Cohort,
    half_lives: Iterable = DEFAULT_HALF_LIVES,
    lower: float = 1.0,
    upper: float = 2.0,
) -> list[SweepRow]:
    """One row per half-life.  Counts cover every week of every subject."""
    if len(cohort) == 0:
        raise ValueError("empty cohort")
    rows = []
    for h in half_lives:
        h = parse_half_life(h)
        counts = RegionCounts()
        uars = []
        for tl in _ordered(cohort):
            res = validate_against_flags(tl, h, lower, upper)
            counts += res.counts
            if res.uar is not None:
                uars.append(res.uar)
        rows.append(SweepRow(h, len(uars), counts, uars))
    return rows


def enrollment_curve(
    cohort: Cohort,
    half_lives: Iterable = (8, 16),
    enrollments: Sequence[int] = tuple(range(13)),
    lower: float = 1.0,
    upper: float = 2.0,
) -> list[SweepRow]:
    """Mean UAR as the unscored warm-up grows.

    For each half-life the subject set is fixed to those still eligible at
    the longest enrollment, so every point averages the same subjects.
    """
    enrollments = sorted(enrollments)
    n_max = enrollments[-1]
    rows = []
    for h in half_lives:
        h = parse_half_life(h)
        keep = [tl for tl in _ordered(cohort) if validate_against_flags(tl, h, lower, upper, n_max).uar is not None]
        for n in enrollments:
            counts = RegionCounts()
            uars = []
            for tl in keep:
                res = validate_against_flags(tl, h, lower, upper, n)
                counts += res.counts
                uars.append(res.uar)
            rows.append(SweepRow(h, len(keep), counts, uars, enrollment=n))
    return rows


@dataclass
class Diagnostics:
    mean: float
    std: float
    r2_normal: float
    n: int


def blom_quantiles(n: int) -> np.ndarray:
    nd = NormalDist()
    return np.array([nd.inv_cdf((i - 0.375) / (n + 0.25)) for i in range(1, n + 1)])


def distribution_diagnostics(values: Sequence[float]) -> Diagnostics:
    """Mean, sample std and normal-probability-plot R^2 (Blom positions)."""
    x = np.asarray(values, float)
    if x.ndim != 1 or x.size < 20:
        raise ValueError("need at least 20 values")
    if not np.all(np.isfinite(x)):
        raise ValueError("values must be finite")
    q = blom_quantiles(x.size)
    xs = np.sort(x)
    if np.ptp(xs) == 0:
        r2 = 0.0
    else:
        r2 = float(np.corrcoef(xs, q)[0, 1] ** 2)
    return Diagnostics(float(x.mean()), float(x.std(ddof=1)), r2, int(x.size))


def cohort_diagnostics(cohort: Cohort, half_lives: Iterable = DEFAULT_HALF_LIVES) -> list[dict]:
    """Pooled distribution of normalized mania and depression per half-life."""
    out = []
    for h in half_lives:
        h = parse_half_life(h)
        pooled = {"mania": [], "depression": []}
        for tl in _ordered(cohort):
            if len(tl) == 0:
                continue
            mania, depression = tempnorm_ratings(tl.ymrs, tl.hdrs, h)
            pooled["mania"].extend(mania)
            pooled["depression"].extend(depression)
        row = {"half_life": format_half_life(h)}
        for dim, vals in pooled.items():
            d = distribution_diagnostics(vals)
            row[dim] = {"mean": d.mean, "std": d.std, "r2": d.r2_normal, "n": d.n}
        out.append(row)
    return out


def summarize(uars: Sequence[float]) -> tuple[float, float]:
    """Mean and std; NaN for an empty list."""
    if not uars:
        return math.nan, math.nan
    return float(np.mean(uars)), float(np.std(uars))
