"""A small numpy feed-forward regressor with an in-network TempNorm layer.

Six dense layers with randomized leaky ReLU activations map a feature
vector to two linear outputs (normalized mania and depression).  After the
third hidden layer every unit is normalized as its own TempNorm stream, so
the network sees each subject's samples relative to that subject's running
baseline.  Samples of one subject must therefore be fed in sequence.

Gradients treat the running mean and standard deviation as constants at
each step: only the current sample's numerator and the ``1 / std`` factor
are differentiated.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from tempnorm.core import TempNormBank, format_half_life, parse_half_life, tempnorm_sequence
from tempnorm.evaluation import score_predictions

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "tempnorm-mlp"
CHECKPOINT_VERSION = 1
WEIGHT_CAP = 25.0
_SQRT_2PI = math.sqrt(2.0 * math.pi)


class ShapeError(ValueError):
    pass


class FoldError(ValueError):
    pass


@dataclass(frozen=True)
class MLPConfig:
    input_width: int
    hidden: tuple[int, ...] = (256,) * 6
    tempnorm_after: int = 3
    rrelu_bounds: tuple[float, float] = (1 / 8, 1 / 3)
    output_width: int = 2
    half_life: float = 8.0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "half_life", parse_half_life(self.half_life))
        if not 1 <= self.tempnorm_after <= len(self.hidden):
            raise ValueError("tempnorm_after must name a hidden layer")
        lo, hi = self.rrelu_bounds
        if not 0 <= lo <= hi:
            raise ValueError("bad rrelu bounds")

    @property
    def eval_slope(self) -> float:
        return (self.rrelu_bounds[0] + self.rrelu_bounds[1]) / 2.0

    @property
    def widths(self) -> list[int]:
        return [self.input_width, *self.hidden, self.output_width]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["half_life"] = format_half_life(self.half_life)
        return d


@dataclass(frozen=True)
class TrainConfig:
    folds: int = 5
    epochs: int = 50
    pretrain_epochs: int = 10
    learning_rate: float = 1e-4
    weight_cap: float = WEIGHT_CAP
    dev_fraction: float = 0.2
    iterations: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    reorder: bool = True
    feature_tempnorm: bool = True

    def __post_init__(self):
        if not 0 <= self.pretrain_epochs < self.epochs:
            raise ValueError("need 0 <= pretrain_epochs < epochs")
        if self.folds < 2:
            raise ValueError("need at least 2 folds")


def rrelu(x, mode: str = "eval", rng: np.random.Generator | None = None, bounds=(1 / 8, 1 / 3)):
    """Leaky ReLU whose negative slope is random in training, the midpoint otherwise."""
    slopes = _rrelu_slopes(np.shape(x), mode, rng, bounds)
    out = np.where(np.asarray(x) >= 0, x, slopes * np.asarray(x))
    return float(out) if np.ndim(out) == 0 else out


def _rrelu_slopes(shape, mode, rng, bounds):
    lo, hi = bounds
    if mode == "train":
        if rng is None:
            raise ValueError("training mode needs an rng")
        return rng.uniform(lo, hi, size=shape)
    if mode != "eval":
        raise ValueError(f"unknown mode {mode!r}")
    return np.full(shape, (lo + hi) / 2.0)


class MLPModel:
    def __init__(self, config: MLPConfig, weights: list[np.ndarray], biases: list[np.ndarray]):
        self.config = config
        self.weights = weights
        self.biases = biases
        widths = config.widths
        for k, (w, b) in enumerate(zip(weights, biases)):
            if w.shape != (widths[k], widths[k + 1]) or b.shape != (widths[k + 1],):
                raise ShapeError(f"layer {k}: weight {w.shape}, bias {b.shape} do not match {widths}")

    @classmethod
    def init(cls, config: MLPConfig, rng: np.random.Generator) -> "MLPModel":
        widths = config.widths
        weights, biases = [], []
        for k in range(len(widths) - 1):
            gain = 2.0 if k < len(widths) - 2 else 1.0
            weights.append(rng.normal(0.0, math.sqrt(gain / widths[k]), size=(widths[k], widths[k + 1])))
            biases.append(np.zeros(widths[k + 1]))
        return cls(config, weights, biases)

    @classmethod
    def zeros(cls, config: MLPConfig) -> "MLPModel":
        w = config.widths
        return cls(
            config,
            [np.zeros((w[k], w[k + 1])) for k in range(len(w) - 1)],
            [np.zeros(w[k + 1]) for k in range(len(w) - 1)],
        )

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "MLPModel":
        return MLPModel(self.config, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def to_json(self) -> str:
        flat = np.concatenate([p.ravel() for p in self.params()])
        return json.dumps(
            {
                "format": CHECKPOINT_FORMAT,
                "version": CHECKPOINT_VERSION,
                "config": self.config.to_dict(),
                "shapes": [list(p.shape) for p in self.params()],
                "params": [float(v) for v in flat],
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "MLPModel":
        obj = json.loads(text)
        if obj.get("format") != CHECKPOINT_FORMAT or obj.get("version") != CHECKPOINT_VERSION:
            raise ValueError("not a supported checkpoint")
        cfg = dict(obj["config"])
        cfg["hidden"] = tuple(cfg["hidden"])
        cfg["rrelu_bounds"] = tuple(cfg["rrelu_bounds"])
        config = MLPConfig(**cfg)
        flat = np.asarray(obj["params"], float)
        arrays, pos = [], 0
        for shape in obj["shapes"]:
            size = int(np.prod(shape))
            arrays.append(flat[pos : pos + size].reshape(shape))
            pos += size
        if pos != flat.size:
            raise ShapeError("parameter count does not match shapes")
        return cls(config, arrays[0::2], arrays[1::2])


@dataclass
class ForwardCache:
    outputs: np.ndarray
    inputs: list[np.ndarray] = field(default_factory=list)
    pre: list[np.ndarray] = field(default_factory=list)
    slopes: list[np.ndarray] = field(default_factory=list)
    tn_mean: np.ndarray | None = None
    tn_std: np.ndarray | None = None
    bank: TempNormBank | None = None


def forward(
    model: MLPModel,
    features: np.ndarray,
    bank: TempNormBank | None = None,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
    tempnorm: bool = True,
    stats: tuple[np.ndarray, np.ndarray] | None = None,
) -> ForwardCache:
    """Run one subject's ordered samples through the network.

    ``bank`` carries the per-unit streams across calls; a fresh one starts
    from the population prior.  ``stats`` replaces the running statistics
    with fixed ``(mean, std)`` arrays of shape ``(samples, width)``.
    With ``tempnorm=False`` the layer is the identity.
    """
    cfg = model.config
    x = np.asarray(features, float)
    if x.ndim != 2 or x.shape[1] != cfg.input_width:
        raise ShapeError(f"expected (samples, {cfg.input_width}) features, got {x.shape}")
    width = cfg.hidden[cfg.tempnorm_after - 1]
    if bank is None:
        bank = TempNormBank(width, cfg.half_life)
    elif bank.mean.shape != (width,):
        raise ShapeError(f"state bank width {bank.mean.shape} != {width}")
    cache = ForwardCache(outputs=np.empty(0), bank=bank)
    a = x
    n_layers = len(model.weights)
    for k in range(n_layers):
        cache.inputs.append(a)
        z = a @ model.weights[k] + model.biases[k]
        if k == n_layers - 1:
            cache.outputs = z
            break
        cache.pre.append(z)
        slopes = _rrelu_slopes(z.shape, mode, rng, cfg.rrelu_bounds)
        cache.slopes.append(slopes)
        a = np.where(z >= 0, z, slopes * z)
        if k == cfg.tempnorm_after - 1 and tempnorm:
            a = _tempnorm_layer(a, bank, stats, cache)
    return cache


def _tempnorm_layer(a, bank, stats, cache):
    if stats is not None:
        mean, std = stats
    else:
        mean = np.empty_like(a)
        std = np.empty_like(a)
        for t in range(a.shape[0]):
            _, mean[t], std[t] = bank.step(a[t])
    cache.tn_mean, cache.tn_std = mean, std
    safe = np.where(std > 0, std, 1.0)
    return np.where(std > 0, (a - mean) / safe, 0.0)


def backward(model: MLPModel, cache: ForwardCache, grad_out: np.ndarray) -> list[np.ndarray]:
    """Gradients for ``model.params()`` given d(loss)/d(outputs)."""
    cfg = model.config
    n_layers = len(model.weights)
    grads: list[np.ndarray] = [None] * (2 * n_layers)
    g = np.asarray(grad_out, float)
    for k in range(n_layers - 1, -1, -1):
        grads[2 * k] = cache.inputs[k].T @ g
        grads[2 * k + 1] = g.sum(axis=0)
        if k == 0:
            break
        g = g @ model.weights[k].T
        # g is now d/d(input of layer k) = d/d(activation of layer k-1)
        if k - 1 == cfg.tempnorm_after - 1 and cache.tn_std is not None:
            std = cache.tn_std
            g = np.where(std > 0, g / np.where(std > 0, std, 1.0), 0.0)
        z = cache.pre[k - 1]
        g = np.where(z >= 0, g, cache.slopes[k - 1] * g)
    return grads


def sample_weight(target, cap: float = WEIGHT_CAP):
    """``min(1 / phi(target), cap)`` with phi the standard normal density."""
    t = np.asarray(target, float)
    limit = 2.0 * math.log(cap / _SQRT_2PI) if cap > _SQRT_2PI else 0.0
    sq = np.minimum(t * t, limit)
    w = np.minimum(_SQRT_2PI * np.exp(sq / 2.0), cap)
    return float(w) if w.ndim == 0 else w


def wmse(predictions, targets, cap: float = WEIGHT_CAP, mask=None) -> float:
    """Weighted MSE per output column, summed over columns."""
    loss, _ = wmse_and_grad(predictions, targets, cap, mask)
    return loss


def wmse_and_grad(predictions, targets, cap: float = WEIGHT_CAP, mask=None):
    p = np.asarray(predictions, float)
    t = np.asarray(targets, float)
    if p.ndim == 1:
        p, t = p[:, None], t[:, None]
    if p.shape != t.shape:
        raise ShapeError(f"predictions {p.shape} vs targets {t.shape}")
    w = sample_weight(t, cap)
    if mask is not None:
        w = w * np.asarray(mask, float)[:, None]
    total = w.sum(axis=0)
    if p.shape[0] == 0 or np.any(total == 0):
        raise ValueError("no weighted samples")
    diff = p - t
    loss = float(np.sum(np.sum(w * diff * diff, axis=0) / total))
    grad = 2.0 * w * diff / total
    return loss, grad


def normalized_targets(ratings: np.ndarray, half_life) -> np.ndarray:
    """TempNorm each rating column of an ordered ``(samples, 2)`` array."""
    return np.column_stack([tempnorm_sequence(ratings[:, d], half_life) for d in range(ratings.shape[1])])


@dataclass
class SubjectData:
    """One subject's chronologically ordered features and prenormalized ratings."""

    subject_id: str
    features: np.ndarray
    ratings: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, float)
        self.ratings = np.asarray(self.ratings, float)
        if len(self.features) != len(self.ratings):
            raise ShapeError(f"{self.subject_id}: features and ratings differ in length")


def validation_score(
    model: MLPModel,
    subjects: Sequence[SubjectData],
    dev_masks: Sequence[np.ndarray],
    tempnorm: bool = True,
    cap: float = WEIGHT_CAP,
) -> float:
    """WMSE between max-of-outputs and max-of-targets on dev-tagged samples.

    Each subject is run over its full chronological sequence so the layer
    states match test conditions; only tagged samples enter the loss.
    """
    preds, tgts = [], []
    for subj, mask in zip(subjects, dev_masks):
        if not np.any(mask):
            continue
        out = forward(model, subj.features, tempnorm=tempnorm).outputs
        targets = normalized_targets(subj.ratings, model.config.half_life)
        preds.append(out.max(axis=1)[mask])
        tgts.append(targets.max(axis=1)[mask])
    if not preds:
        raise ValueError("no dev samples")
    return wmse(np.concatenate(preds), np.concatenate(tgts), cap)


class Adam:
    def __init__(self, params: list[np.ndarray], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class FoldResult:
    fold: int
    test_ids: list[str]
    train_ids: list[str]
    model: MLPModel
    best_epoch: int
    subject_uar: dict[str, float | None]


@dataclass
class TrainResult:
    folds: list[FoldResult]
    log: list[dict]
    seed: int

    @property
    def subject_uar(self) -> dict[str, float | None]:
        out = {}
        for f in self.folds:
            out.update(f.subject_uar)
        return dict(sorted(out.items()))

    @property
    def eligible_uars(self) -> list[float]:
        return [u for u in self.subject_uar.values() if u is not None]

    @property
    def uar_mean(self) -> float | None:
        u = self.eligible_uars
        return float(np.mean(u)) if u else None

    def report(self) -> dict:
        u = self.eligible_uars
        return {
            "seed": self.seed,
            "subject_uar": self.subject_uar,
            "n_subjects": len(u),
            "uar_mean": self.uar_mean,
            "uar_std": float(np.std(u)) if u else None,
            "folds": [
                {"fold": f.fold, "test": f.test_ids, "best_epoch": f.best_epoch} for f in self.folds
            ],
        }


def assign_folds(subject_ids: Sequence[str], n_folds: int, rng: np.random.Generator) -> list[list[str]]:
    """Shuffle subjects and deal them round-robin into ``n_folds`` groups."""
    ids = sorted(subject_ids)
    if len(ids) < n_folds:
        raise FoldError(f"need at least {n_folds} subjects, got {len(ids)}")
    order = rng.permutation(len(ids))
    folds: list[list[str]] = [[] for _ in range(n_folds)]
    for pos, idx in enumerate(order):
        folds[pos % n_folds].append(ids[idx])
    return [sorted(f) for f in folds]


def _dev_mask(n: int, fraction: float, rng: np.random.Generator) -> np.ndarray:
    mask = np.zeros(n, dtype=bool)
    k = int(round(n * fraction))
    if n >= 2:
        k = min(max(k, 1), n - 1)
    else:
        k = 0
    mask[rng.permutation(n)[:k]] = True
    return mask


def train_fold(
    train_subjects: Sequence[SubjectData],
    mlp_config: MLPConfig,
    cfg: TrainConfig,
    rng: np.random.Generator,
    fold: int = 0,
    log_rows: list | None = None,
) -> tuple[MLPModel, int]:
    """Fit one model; returns the checkpoint with the best dev score and its epoch."""
    model = MLPModel.init(mlp_config, rng)
    params = model.params()
    opt = Adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    dev_masks = [_dev_mask(len(s.features), cfg.dev_fraction, rng) for s in train_subjects]
    best, best_score, best_epoch = model.copy(), math.inf, 0
    for epoch in range(1, cfg.epochs + 1):
        active = cfg.feature_tempnorm and epoch > cfg.pretrain_epochs
        losses = []
        for si in rng.permutation(len(train_subjects)):
            subj, dev = train_subjects[si], dev_masks[si]
            n = len(subj.features)
            order = rng.permutation(n) if cfg.reorder else np.arange(n)
            train_mask = ~dev[order]
            if not train_mask.any():
                continue
            targets = normalized_targets(subj.ratings[order], mlp_config.half_life)
            cache = forward(model, subj.features[order], mode="train", rng=rng, tempnorm=active)
            loss, grad = wmse_and_grad(cache.outputs, targets, cfg.weight_cap, train_mask)
            opt.step(params, backward(model, cache, grad))
            losses.append(loss)
        row = {"fold": fold, "epoch": epoch, "train_loss": float(np.mean(losses)) if losses else None}
        if epoch > cfg.pretrain_epochs:
            score = validation_score(model, train_subjects, dev_masks, tempnorm=cfg.feature_tempnorm, cap=cfg.weight_cap)
            row["validation_score"] = score
            if score < best_score:
                best, best_score, best_epoch = model.copy(), score, epoch
        if log_rows is not None:
            log_rows.append(row)
        log.debug("fold %d epoch %d %s", fold, epoch, row)
    return best, best_epoch


def subject_test_uar(model: MLPModel, subj: SubjectData, tempnorm: bool = True) -> float | None:
    out = forward(model, subj.features, tempnorm=tempnorm).outputs
    truth = normalized_targets(subj.ratings, model.config.half_life)
    return score_predictions(out.max(axis=1), truth.max(axis=1))


def train(
    subjects: Sequence[SubjectData],
    mlp_config: MLPConfig,
    cfg: TrainConfig = TrainConfig(),
    seed: int = 0,
) -> TrainResult:
    """Subject-independent round-robin training and testing."""
    by_id = {s.subject_id: s for s in subjects}
    if len(by_id) != len(subjects):
        raise ValueError("duplicate subject ids")
    ss = np.random.SeedSequence(seed)
    fold_seq, *task_seqs = ss.spawn(cfg.folds + 1)
    folds = assign_folds(list(by_id), cfg.folds, np.random.Generator(np.random.PCG64(fold_seq)))
    log_rows: list[dict] = []
    results = []
    for k, test_ids in enumerate(folds):
        rng = np.random.Generator(np.random.PCG64(task_seqs[k]))
        train_ids = sorted(set(by_id) - set(test_ids))
        model, best_epoch = train_fold([by_id[i] for i in train_ids], mlp_config, cfg, rng, k, log_rows)
        uars = {sid: subject_test_uar(model, by_id[sid], cfg.feature_tempnorm) for sid in test_ids}
        results.append(FoldResult(k, list(test_ids), train_ids, model, best_epoch, uars))
    return TrainResult(results, log_rows, seed)


def subjects_from_records(cohort, records, offset: float = 6.0, scale: float = 4.0) -> list[SubjectData]:
    """Join a cohort's ratings with feature records on ``(subject_id, week)``.

    Weeks without a feature record are dropped before any normalization.
    """
    feats = {(r.subject_id, r.week): np.asarray(r.features, float) for r in records}
    out = []
    for tl in sorted(cohort.subjects, key=lambda s: s.subject_id):
        rows = [row for row in tl.rows if (tl.subject_id, row.week) in feats]
        if not rows:
            continue
        x = np.stack([feats[(tl.subject_id, row.week)] for row in rows])
        y = (np.array([[row.ymrs, row.hdrs] for row in rows], float) - offset) / scale
        out.append(SubjectData(tl.subject_id, x, y))
    return out
