import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import optimize

from oracles import gradient_check, normal_pdf
from tempnorm.core import TempNormBank
from tempnorm.features import synthetic_feature_records
from tempnorm.neural import (
    FoldError,
    MLPConfig,
    MLPModel,
    ShapeError,
    SubjectData,
    TrainConfig,
    assign_folds,
    backward,
    forward,
    normalized_targets,
    rrelu,
    sample_weight,
    subjects_from_records,
    train,
    train_fold,
    validation_score,
    wmse,
    wmse_and_grad,
)
from tempnorm.sim import generate_cohort

TINY = MLPConfig(3, hidden=(4,) * 6, half_life=2)


def tiny_model(seed=0):
    return MLPModel.init(TINY, np.random.default_rng(seed))


class TestRReLU:
    def test_examples(self):
        rng = np.random.default_rng(0)
        assert rrelu(2.0) == 2.0 and rrelu(2.0, "train", rng) == 2.0
        assert rrelu(-1.0) == pytest.approx(-0.2291666666666667, abs=1e-15)
        for _ in range(100):
            assert -1 / 3 <= rrelu(-1.0, "train", rng) <= -1 / 8

    def test_train_needs_rng(self):
        with pytest.raises(ValueError):
            rrelu(-1.0, "train")


class TestForward:
    def test_first_sample_identity(self):
        model = tiny_model()
        x = np.random.default_rng(1).normal(size=(1, 3))
        with_tn = forward(model, x)
        assert np.all(with_tn.tn_mean[0] == 0) and np.all(with_tn.tn_std[0] == 1)
        np.testing.assert_array_equal(with_tn.outputs, forward(model, x, tempnorm=False).outputs)

    def test_zero_model(self):
        x = np.random.default_rng(2).normal(size=(7, 3))
        assert not forward(MLPModel.zeros(TINY), x).outputs.any()

    def test_identical_subjects(self):
        model = tiny_model()
        x = np.random.default_rng(3).normal(size=(9, 3))
        a = forward(model, x).outputs
        b = forward(model, x.copy()).outputs
        np.testing.assert_array_equal(a, b)

    def test_order_matters(self):
        model = tiny_model()
        x = np.random.default_rng(4).normal(size=(6, 3))
        a = forward(model, x).outputs
        b = forward(model, x[::-1]).outputs[::-1]
        assert not np.allclose(a, b)

    def test_bank_continues_across_calls(self):
        model = tiny_model()
        x = np.random.default_rng(5).normal(size=(8, 3))
        whole = forward(model, x).outputs
        bank = TempNormBank(4, TINY.half_life)
        parts = np.vstack([forward(model, x[:3], bank).outputs, forward(model, x[3:], bank).outputs])
        np.testing.assert_allclose(parts, whole, atol=1e-14)

    def test_shape_errors(self):
        with pytest.raises(ShapeError):
            forward(tiny_model(), np.zeros((2, 5)))
        with pytest.raises(ShapeError):
            forward(tiny_model(), np.zeros((2, 3)), bank=TempNormBank(5, 2))


class TestWeights:
    def test_examples(self):
        assert sample_weight(0.0) == pytest.approx(2.5066282746310002, abs=1e-12)
        assert 1 / normal_pdf(3.0) > 25
        assert sample_weight(3.0) == 25.0

    def test_cap_boundary(self):
        root = optimize.brentq(lambda y: 1 / normal_pdf(y) - 25, 0, 5, xtol=1e-14)
        assert root == pytest.approx(2.1447318208407913, abs=1e-9)
        assert sample_weight(root - 1e-6) < 25
        assert sample_weight(root + 1e-6) == 25

    @given(st.floats(-40, 40))
    def test_shape(self, y):
        w = sample_weight(y)
        assert w == sample_weight(-y)
        assert math.sqrt(2 * math.pi) - 1e-12 <= w <= 25
        assert sample_weight(abs(y) + 0.1) >= w
        assert w == pytest.approx(min(1 / normal_pdf(y), 25) if abs(y) < 30 else 25, rel=1e-12)


class TestWMSE:
    def test_zero(self):
        t = np.random.default_rng(0).normal(size=(5, 2))
        assert wmse(t, t) == 0

    def test_single_sample(self):
        assert wmse([[1.0, 1.0]], [[0.0, 0.0]]) == pytest.approx(2.0)

    def test_two_samples_brute_force(self):
        preds = [[1.0, 0.5], [2.0, 2.0]]
        tgts = [[0.0, 0.0], [2.5, 2.5]]
        expected = 0.0
        for d in range(2):
            num = den = 0.0
            for p, t in zip(preds, tgts):
                w = min(1 / normal_pdf(t[d]), 25)
                num += w * (p[d] - t[d]) ** 2
                den += w
            expected += num / den
        assert wmse(preds, tgts) == pytest.approx(expected, rel=1e-12)
        # mpmath value of the mania term alone: (2.5066*1 + 25*0.25) / 27.5066
        assert wmse([[1.0], [2.0]], [[0.0], [2.5]]) == pytest.approx(0.3183461159689689, rel=1e-12)

    def test_empty(self):
        with pytest.raises(ValueError):
            wmse(np.zeros((0, 2)), np.zeros((0, 2)))

    def test_gradient(self):
        rng = np.random.default_rng(1)
        p, t = rng.normal(size=(4, 2)), rng.normal(size=(4, 2))
        _, g = wmse_and_grad(p, t)
        h = 1e-6
        for idx in np.ndindex(p.shape):
            e = np.zeros_like(p)
            e[idx] = h
            fd = (wmse(p + e, t) - wmse(p - e, t)) / (2 * h)
            assert g[idx] == pytest.approx(fd, rel=1e-6, abs=1e-9)


@pytest.mark.parametrize("tempnorm", [True, False])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradients_match_finite_differences(tempnorm, seed):
    rng = np.random.default_rng(seed)
    model = tiny_model(seed)
    for b in model.biases:
        b += rng.normal(0, 0.1, size=b.shape)
    x = rng.normal(size=(3, 3))
    targets = rng.normal(size=(3, 2))
    assert max(gradient_check(model, x, targets, tempnorm)) < 1e-4


class TestValidationScore:
    def _constant_model(self, out):
        model = MLPModel.zeros(TINY)
        model.biases[-1][:] = out
        return model

    def test_perfect_model(self):
        subj = SubjectData("s", np.ones((6, 3)), np.zeros((6, 2)))
        assert validation_score(MLPModel.zeros(TINY), [subj], [np.ones(6, bool)]) == 0.0

    def test_max_reduction(self):
        ratings = np.array([[2.0, 0.1]])
        subj = SubjectData("s", np.ones((1, 3)), ratings)
        model = self._constant_model([0.5, 2.0])
        # first sample of a stream is unchanged, so targets are (2.0, 0.1)
        assert validation_score(model, [subj], [np.array([True])]) == 0.0
        assert wmse(model.biases[-1][None], ratings) > 0

    def test_subset_changes_score_not_states(self):
        rng = np.random.default_rng(3)
        subj = SubjectData("s", rng.normal(size=(10, 3)), rng.normal(size=(10, 2)))
        model = tiny_model(3)
        mask = np.zeros(10, bool)
        mask[[2, 5, 7]] = True
        a = validation_score(model, [subj], [mask])
        b = validation_score(model, [subj], [np.ones(10, bool)])
        assert a != b
        full = forward(model, subj.features).outputs
        out = full.max(axis=1)[mask]
        tgt = normalized_targets(subj.ratings, TINY.half_life).max(axis=1)[mask]
        assert a == pytest.approx(wmse(out, tgt), rel=1e-12)

    def test_no_dev_samples(self):
        subj = SubjectData("s", np.ones((3, 3)), np.zeros((3, 2)))
        with pytest.raises(ValueError):
            validation_score(tiny_model(), [subj], [np.zeros(3, bool)])


def test_checkpoint_round_trip():
    model = tiny_model(7)
    back = MLPModel.from_json(model.to_json())
    assert back.config == model.config
    for a, b in zip(model.params(), back.params()):
        np.testing.assert_array_equal(a, b)
    with pytest.raises(ShapeError):
        MLPModel(TINY, model.weights[:-1] + [np.zeros((4, 3))], model.biases)


def test_fold_assignment():
    ids = [f"s{i}" for i in range(12)]
    folds = assign_folds(ids, 5, np.random.default_rng(0))
    assert sorted(sum(folds, [])) == sorted(ids)
    assert sorted(len(f) for f in folds) == [2, 2, 2, 3, 3]
    with pytest.raises(FoldError):
        assign_folds(ids[:4], 5, np.random.default_rng(0))


def synthetic_subjects(n_subjects, seed, width=8):
    cohort = generate_cohort(n_subjects, seed=seed)
    return subjects_from_records(cohort, synthetic_feature_records(cohort, width, seed))


def test_training_reduces_loss():
    cfg = MLPConfig(8, hidden=(16,) * 6, half_life=8)
    tcfg = TrainConfig(epochs=20, pretrain_epochs=5, learning_rate=1e-3)
    first, last = [], []
    for seed in range(10):
        rows = []
        train_fold(synthetic_subjects(8, seed), cfg, tcfg, np.random.default_rng(seed), log_rows=rows)
        first.append(rows[0]["train_loss"])
        last.append(rows[-1]["train_loss"])
    assert np.median(last) < np.median(first)
    assert all(b < 0.5 * a for a, b in zip(first, last))


def test_train_structure():
    subjects = synthetic_subjects(7, 1)
    cfg = MLPConfig(8, hidden=(8,) * 6, half_life=8)
    tcfg = TrainConfig(epochs=4, pretrain_epochs=2, learning_rate=1e-3)
    result = train(subjects, cfg, tcfg, seed=3)
    assert len(result.folds) == 5
    for f in result.folds:
        assert not set(f.test_ids) & set(f.train_ids)
        assert sorted(f.test_ids + f.train_ids) == sorted(s.subject_id for s in subjects)
        assert 3 <= f.best_epoch <= 4
    assert {r["epoch"] for r in result.log} == {1, 2, 3, 4}
    assert all(("validation_score" in r) == (r["epoch"] > 2) for r in result.log)
    again = train(subjects, cfg, tcfg, seed=3)
    assert again.subject_uar == result.subject_uar
    with pytest.raises(FoldError):
        train(subjects[:4], cfg, tcfg)
