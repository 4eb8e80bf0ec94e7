from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tempnorm.core import InvalidParameterError
from tempnorm.features import FeatureRecord
from tempnorm.sim import (
    Cohort,
    CohortJitter,
    Row,
    SubjectGenConfig,
    SubjectTimeline,
    apply_selection,
    cohort_from_csv,
    cohort_to_csv,
    generate_cohort,
    generate_subject,
    jittered_config,
    read_cohort,
    subject_seed,
    write_cohort,
)


def test_noiseless_subject_is_constant():
    cfg = SubjectGenConfig(
        n_weeks=30, base_mean=(5.2, 11.7), base_std=(1e-9, 1e-9), drift_std=(0, 0),
        anomaly_rate=0, zero_inflation=0, missing_rate=0, min_anomalies=0,
    )
    tl = generate_subject(cfg, seed=3)
    assert len(tl) == 30
    assert set(tl.ymrs) == {5} and set(tl.hdrs) == {12}
    assert not tl.flags.any()


def test_forced_anomalies():
    cfg = SubjectGenConfig(
        n_weeks=400, base_mean=(10, 10), base_std=(2, 2), drift_std=(0, 0),
        anomaly_rate=1, anomaly_magnitude=4, zero_inflation=0, missing_rate=0,
    )
    tl = generate_subject(cfg, seed=5)
    assert tl.flags.all()
    # noise is zero-mean, so the bump of 4 * base_std shows in the average
    assert tl.ymrs.mean() == pytest.approx(10 + 4 * 2, abs=0.4)
    assert tl.hdrs.mean() == pytest.approx(10 + 4 * 2, abs=0.4)


def test_subject_determinism():
    cfg = SubjectGenConfig()
    assert generate_subject(cfg, 11) == generate_subject(cfg, 11)
    assert generate_subject(cfg, 11) != generate_subject(cfg, 12)


@pytest.mark.parametrize(
    "kw", [{"n_weeks": 0}, {"anomaly_magnitude": 1.5}, {"missing_rate": 1.0}, {"base_std": (1.0,)}]
)
def test_invalid_config(kw):
    with pytest.raises(InvalidParameterError):
        generate_subject(replace(SubjectGenConfig(), **kw), 0)


def test_single_subject_cohort_matches_generate_subject():
    template = SubjectGenConfig()
    jitter = CohortJitter()
    cohort = generate_cohort(1, template, jitter, seed=9)
    cfg = jittered_config(template, jitter, 9, 0)
    assert cohort.subjects[0] == generate_subject(cfg, subject_seed(9, 0), "S000")


def test_zero_jitter_shares_parameters():
    template = SubjectGenConfig()
    zero = CohortJitter(base_mean=(0, 0), base_std=(0, 0))
    cfgs = {jittered_config(template, zero, 4, i) for i in range(5)}
    assert cfgs == {template}
    cohort = generate_cohort(5, template, zero, seed=4)
    assert len({tuple(s.ymrs) for s in cohort.subjects}) > 1


def test_default_cohorts_have_both_classes():
    for seed in range(100):
        for s in generate_cohort(20, seed=seed).subjects:
            assert s.flags.any() and not s.flags.all(), (seed, s.subject_id)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_cohort_invariants(seed):
    cohort = generate_cohort(4, seed=seed)
    assert len({s.subject_id for s in cohort.subjects}) == 4
    for s in cohort.subjects:
        assert np.all(np.diff(s.weeks) > 0)
        for r in s.rows:
            assert 0 <= r.ymrs <= 40 and 0 <= r.hdrs <= 40
            assert isinstance(r.ymrs, int) and isinstance(r.hdrs, int)
            assert r.flag == r.is_anomaly_injected


def test_serial_equals_parallel_order():
    cohort = generate_cohort(6, seed=21)
    template, jitter = SubjectGenConfig(), CohortJitter()
    for i in reversed(range(6)):
        cfg = jittered_config(template, jitter, 21, i)
        assert generate_subject(cfg, subject_seed(21, i), f"S{i:03d}") == cohort.subjects[i]


def _timeline(sid, n):
    return SubjectTimeline(sid, [Row(w, 1, 2, False, False) for w in range(n)])


class TestSelection:
    def test_threshold(self):
        cohort = Cohort([_timeline("a", 7), _timeline("b", 8)])
        kept = apply_selection(cohort, 8)
        assert [s.subject_id for s in kept.subjects] == ["b"]

    def test_zero_threshold_keeps_all(self):
        cohort = generate_cohort(3, seed=1)
        assert apply_selection(cohort, 0).subjects == cohort.subjects

    def test_idempotent(self):
        cohort = generate_cohort(10, replace(SubjectGenConfig(), n_weeks=9, missing_rate=0.2), seed=2)
        once = apply_selection(cohort, 8)
        assert apply_selection(once, 8).subjects == once.subjects
        assert 0 < len(once) < len(cohort)

    def test_per_sample_minima(self):
        cohort = Cohort([_timeline("a", 10)])
        records = [
            FeatureRecord("a", w, np.zeros(1), "x", {"segments": 5 if w % 2 else 4, "words": 100})
            for w in range(10)
        ]
        kept = apply_selection(cohort, 1, records)
        assert [r.week for r in kept.subjects[0].rows] == [1, 3, 5, 7, 9]
        assert apply_selection(cohort, 6, records).subjects == []


def test_csv_round_trip(tmp_path):
    cohort = generate_cohort(5, seed=13)
    text = cohort_to_csv(cohort)
    assert text.splitlines()[0] == "subject_id,week,ymrs,hdrs,flag"
    back = cohort_from_csv(text)
    assert back.subjects == cohort.subjects
    assert cohort_to_csv(back) == text
    write_cohort(cohort, tmp_path / "c.csv")
    loaded = read_cohort(tmp_path / "c.csv")
    assert loaded.subjects == cohort.subjects and loaded.seed == 13
    assert (tmp_path / "c.meta.json").exists()


@pytest.mark.parametrize(
    "body",
    ["subject,week\n", "subject_id,week,ymrs,hdrs,flag\na,1,2,3,7\n", "subject_id,week,ymrs,hdrs,flag\na,2,1,1,0\na,1,1,1,0\n"],
)
def test_csv_rejects_bad_input(body):
    with pytest.raises(ValueError):
        cohort_from_csv(body)
