"""Synthetic cohorts of weekly mania/depression ratings.

Nothing here models psychiatric dynamics.  A subject is a latent baseline
per rating dimension that wanders as a Gaussian random walk; observed
ratings are the baseline plus noise, rounded and clipped to the rating
range.  Anomaly weeks add a bump of ``anomaly_magnitude * base_std`` on top
of the latent baseline and carry the ground-truth intervention flag.

Randomness uses numpy's PCG64 bit generator through
``numpy.random.Generator``.  Per-subject streams are derived from
``SeedSequence([seed, subject_ordinal])`` so cohorts generated serially
or in parallel are bit-identical.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from tempnorm.core import InvalidParameterError

MANIA, DEPRESSION = 0, 1
CSV_HEADER = ("subject_id", "week", "ymrs", "hdrs", "flag")

_JITTER_TAG = 1


@dataclass(frozen=True)
class SubjectGenConfig:
    """Generative parameters for one subject; pairs are (mania, depression)."""

    n_weeks: int = 40
    base_mean: tuple[float, float] = (4.0, 8.0)
    base_std: tuple[float, float] = (1.5, 2.5)
    drift_std: tuple[float, float] = (0.3, 0.6)
    anomaly_rate: float = 0.15
    anomaly_magnitude: float = 3.0
    zero_inflation: float = 0.3
    missing_rate: float = 0.05
    min_anomalies: int = 1
    rating_cap: int = 40

    def validate(self) -> None:
        if self.n_weeks < 1:
            raise InvalidParameterError(f"n_weeks must be >= 1, got {self.n_weeks}")
        for name in ("base_mean", "base_std", "drift_std"):
            if len(getattr(self, name)) != 2:
                raise InvalidParameterError(f"{name} needs one value per dimension")
        if min(self.base_std) < 0 or min(self.drift_std) < 0:
            raise InvalidParameterError("base_std and drift_std must be >= 0")
        for name in ("anomaly_rate", "zero_inflation", "missing_rate"):
            p = getattr(self, name)
            if not 0 <= p < 1 and not (name == "anomaly_rate" and p == 1):
                raise InvalidParameterError(f"{name} must be in [0, 1), got {p}")
        if self.anomaly_magnitude < 2:
            raise InvalidParameterError("anomaly_magnitude must be >= 2")
        if self.min_anomalies < 0 or self.rating_cap < 1:
            raise InvalidParameterError("bad min_anomalies or rating_cap")


@dataclass(frozen=True)
class CohortJitter:
    """Half-widths of uniform per-subject offsets around the template."""

    base_mean: tuple[float, float] = (4.0, 8.0)
    base_std: tuple[float, float] = (0.5, 1.0)


@dataclass(frozen=True)
class Row:
    week: int
    ymrs: int
    hdrs: int
    flag: bool
    is_anomaly_injected: bool


@dataclass
class SubjectTimeline:
    subject_id: str
    rows: list[Row] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def weeks(self) -> np.ndarray:
        return np.array([r.week for r in self.rows], dtype=int)

    @property
    def ymrs(self) -> np.ndarray:
        return np.array([r.ymrs for r in self.rows], dtype=float)

    @property
    def hdrs(self) -> np.ndarray:
        return np.array([r.hdrs for r in self.rows], dtype=float)

    @property
    def flags(self) -> np.ndarray:
        return np.array([r.flag for r in self.rows], dtype=bool)


@dataclass
class Cohort:
    subjects: list[SubjectTimeline]
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = [s.subject_id for s in self.subjects]
        if len(ids) != len(set(ids)):
            raise ValueError("subject ids must be unique")

    def __len__(self) -> int:
        return len(self.subjects)

    def by_id(self) -> dict[str, SubjectTimeline]:
        return {s.subject_id: s for s in self.subjects}


def subject_seed(seed: int, ordinal: int) -> int:
    """Deterministic sub-seed for the ``ordinal``-th subject of a cohort."""
    return int(np.random.SeedSequence([seed, ordinal]).generate_state(1, np.uint64)[0])


def generate_subject(cfg: SubjectGenConfig, seed: int, subject_id: str = "S000") -> SubjectTimeline:
    cfg.validate()
    rng = np.random.Generator(np.random.PCG64(seed))
    n = cfg.n_weeks
    base_mean = np.asarray(cfg.base_mean, float)
    base_std = np.asarray(cfg.base_std, float)
    drift_std = np.asarray(cfg.drift_std, float)

    # All masks are drawn before values so the min_anomalies rule can look
    # at the retained weeks.
    anomaly = rng.random(n) < cfg.anomaly_rate
    missing = rng.random(n) < cfg.missing_rate
    if missing.all():
        missing[rng.integers(n)] = False
    kept = np.flatnonzero(~missing)
    short = cfg.min_anomalies - int(anomaly[kept].sum())
    if short > 0:
        candidates = kept[~anomaly[kept]]
        pick = rng.choice(candidates, size=min(short, candidates.size), replace=False)
        anomaly[pick] = True

    steps = rng.normal(0.0, 1.0, size=(n, 2)) * drift_std
    steps[0] = 0.0
    baseline = base_mean + np.cumsum(steps, axis=0)
    noise = rng.normal(0.0, 1.0, size=(n, 2)) * base_std
    bump = np.where(anomaly[:, None], cfg.anomaly_magnitude * base_std, 0.0)
    zeroed = (rng.random(n) < cfg.zero_inflation) & ~anomaly

    raw = np.rint(np.clip(baseline + noise + bump, 0, cfg.rating_cap)).astype(int)
    raw[zeroed, MANIA] = 0

    rows = [
        Row(int(t), int(raw[t, MANIA]), int(raw[t, DEPRESSION]), bool(anomaly[t]), bool(anomaly[t]))
        for t in kept
    ]
    return SubjectTimeline(subject_id, rows)


def jittered_config(template: SubjectGenConfig, jitter: CohortJitter, seed: int, ordinal: int) -> SubjectGenConfig:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, ordinal, _JITTER_TAG])))
    dm = rng.uniform(-1.0, 1.0, size=2) * np.asarray(jitter.base_mean, float)
    ds = rng.uniform(-1.0, 1.0, size=2) * np.asarray(jitter.base_std, float)
    mean = np.maximum(np.asarray(template.base_mean) + dm, 0.0)
    std = np.maximum(np.asarray(template.base_std) + ds, 0.1)
    return replace(template, base_mean=tuple(map(float, mean)), base_std=tuple(map(float, std)))


def generate_cohort(
    n_subjects: int,
    template: SubjectGenConfig | None = None,
    jitter: CohortJitter | None = None,
    seed: int = 0,
) -> Cohort:
    """Subjects ``S000 .. S{n-1}`` with heterogeneous baselines."""
    if n_subjects < 1:
        raise InvalidParameterError("n_subjects must be >= 1")
    template = template or SubjectGenConfig()
    jitter = jitter if jitter is not None else CohortJitter()
    template.validate()
    subjects = []
    for i in range(n_subjects):
        cfg = jittered_config(template, jitter, seed, i)
        subjects.append(generate_subject(cfg, subject_seed(seed, i), subject_id=f"S{i:03d}"))
    meta = {"n_subjects": n_subjects, "template": asdict(template), "jitter": asdict(jitter)}
    return Cohort(subjects, seed=seed, meta=meta)


def apply_selection(
    cohort: Cohort,
    min_samples_per_subject: int = 8,
    records: Iterable | None = None,
    min_segments: int = 5,
    min_words: int = 100,
) -> Cohort:
    """Drop under-sampled subjects, and with ``records`` also failing samples.

    ``records`` are feature records carrying ``meta["segments"]`` and
    ``meta["words"]``; a week survives only if it has a record meeting both
    minima.  Filtering happens on raw timelines, before any normalization,
    because dropped weeks must not feed the baseline.
    """
    keep_weeks = None
    if records is not None:
        keep_weeks = set()
        for rec in records:
            meta = rec.meta or {}
            if meta.get("segments", 0) >= min_segments and meta.get("words", 0) >= min_words:
                keep_weeks.add((rec.subject_id, rec.week))
    subjects = []
    for s in cohort.subjects:
        rows = s.rows
        if keep_weeks is not None:
            rows = [r for r in rows if (s.subject_id, r.week) in keep_weeks]
        if len(rows) >= min_samples_per_subject:
            subjects.append(SubjectTimeline(s.subject_id, list(rows)))
    return Cohort(subjects, seed=cohort.seed, meta=dict(cohort.meta))


def cohort_to_csv(cohort: Cohort) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for s in cohort.subjects:
        for r in s.rows:
            writer.writerow((s.subject_id, r.week, r.ymrs, r.hdrs, int(r.flag)))
    return buf.getvalue()


def cohort_from_csv(text: str) -> Cohort:
    reader = csv.reader(io.StringIO(text))
    header = tuple(next(reader, ()))
    if header != CSV_HEADER:
        raise ValueError(f"unexpected header {header!r}; expected {','.join(CSV_HEADER)}")
    timelines: dict[str, SubjectTimeline] = {}
    for lineno, fields in enumerate(reader, start=2):
        if not fields:
            continue
        try:
            sid, week, ymrs, hdrs, flag = fields
            row = Row(int(week), int(ymrs), int(hdrs), flag == "1", flag == "1")
        except ValueError:
            raise ValueError(f"line {lineno}: malformed row {fields!r}") from None
        if flag not in ("0", "1") or row.ymrs < 0 or row.hdrs < 0:
            raise ValueError(f"line {lineno}: bad values {fields!r}")
        tl = timelines.setdefault(sid, SubjectTimeline(sid))
        if tl.rows and row.week <= tl.rows[-1].week:
            raise ValueError(f"line {lineno}: weeks must increase within {sid}")
        tl.rows.append(row)
    return Cohort(list(timelines.values()))


def write_cohort(cohort: Cohort, path: Path, config: dict | None = None) -> None:
    from tempnorm.io import atomic_write, dumps_json, sidecar_path

    atomic_write(path, cohort_to_csv(cohort))
    meta = {"seed": cohort.seed, **cohort.meta}
    if config is not None:
        meta["config"] = config
    atomic_write(sidecar_path(path), dumps_json(meta))


def read_cohort(path: Path) -> Cohort:
    from tempnorm.io import sidecar_path

    path = Path(path)
    cohort = cohort_from_csv(path.read_text(encoding="utf-8"))
    side = sidecar_path(path)
    if side.exists():
        meta = json.loads(side.read_text(encoding="utf-8"))
        cohort.seed = meta.pop("seed", None)
        cohort.meta = meta
    return cohort

