"""Attention-based MIL on frozen instance features, trained on pseudo-bags.

Instance scores are ``w . tanh(V f)``; their softmax weights pool the bag
into one embedding that a logistic classifier scores. During training every
bag is re-split each epoch into random pseudo-bags that inherit its label;
prediction always pools the whole bag.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .encoder import Adam
from .errors import EmptyBag, ShapeMismatch, SingleClass, SingleClassTraining
from .seeding import rng_for

METRICS = ("balanced_accuracy", "accuracy", "auc")


@dataclass
class AttentionMILModel:
    V: np.ndarray
    w: np.ndarray
    c: np.ndarray
    b: float = 0.0
    shift: np.ndarray = None
    scale: np.ndarray = None

    def __post_init__(self):
        h, k = self.V.shape
        if self.w.shape != (h,) or self.c.shape != (k,):
            raise ShapeMismatch(f"attention dims do not chain: V {self.V.shape}, w {self.w.shape}, "
                                f"classifier {self.c.shape}")
        if self.shift is None:
            self.shift = np.zeros(k)
        if self.scale is None:
            self.scale = np.ones(k)

    @property
    def feature_dim(self):
        return self.V.shape[1]

    @classmethod
    def init(cls, feature_dim, hidden, rng):
        V = rng.standard_normal((hidden, feature_dim)) / math.sqrt(feature_dim)
        w = rng.standard_normal(hidden) / math.sqrt(hidden)
        return cls(V, w, np.zeros(feature_dim), 0.0)

    def prepare(self, features):
        f = np.asarray(features, dtype=np.float64)
        if f.ndim != 2 or f.shape[1] != self.feature_dim:
            raise ShapeMismatch(f"features {f.shape} do not match model dim {self.feature_dim}")
        return (f - self.shift) / self.scale


@dataclass
class MILTrainConfig:
    n_pseudo_bags: int = 5
    epochs: int = 60
    learning_rate: float = 1e-3
    attention_hidden: int = 32
    weight_decay: float = 0.0
    standardize: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_pseudo_bags < 1:
            raise ValueError("n_pseudo_bags must be >= 1")
        if self.epochs < 0 or self.attention_hidden < 1:
            raise ValueError("epochs must be >= 0 and attention_hidden >= 1")


def pseudo_bag_indices(n, m, rng):
    """Random partition of ``range(n)`` into ``min(m, n)`` parts of near-equal size."""
    if m < 1:
        raise ValueError("m must be >= 1")
    if n < 1:
        return [np.arange(0)]
    perm = rng.permutation(n)
    return np.array_split(perm, min(m, n))


def pseudo_bag_split(bag_features, m, rng):
    f = np.asarray(bag_features)
    return [f[idx] for idx in pseudo_bag_indices(f.shape[0], m, rng)]


def attention_pool(features, model):
    """Return ``(bag_embedding, attention_weights)`` for one bag."""
    f = np.ascontiguousarray(features, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] < 1:
        raise EmptyBag("attention pooling needs at least one instance")
    if f.shape[1] != model.feature_dim:
        raise ShapeMismatch(f"features {f.shape} do not match model dim {model.feature_dim}")
    return _kernels.attention_pool(f, model.V, model.w)


def sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    ex = math.exp(x)
    return ex / (1.0 + ex)


def mil_predict(model, bag_features):
    """Bag score in (0, 1) from whole-bag attention pooling."""
    emb, _ = attention_pool(model.prepare(bag_features), model)
    return sigmoid(float(model.c @ emb) + model.b)


def mil_train(bag_features, bag_labels, config, on_epoch=None):
    """Train on pseudo-bags with one Adam step per parent bag.

    Returns ``(model, epoch_losses)``; losses are mean BCE per pseudo-bag.
    """
    labels = np.asarray(bag_labels, dtype=np.int64)
    if len(bag_features) != labels.size:
        raise ShapeMismatch("one label per bag required")
    if np.unique(labels).size < 2:
        raise SingleClassTraining("MIL training needs at least one bag of each class")
    feats = [np.asarray(f, dtype=np.float64) for f in bag_features]
    if any(f.shape[0] == 0 for f in feats):
        raise EmptyBag("training bags must be non-empty")
    k = feats[0].shape[1]
    model = AttentionMILModel.init(k, config.attention_hidden, rng_for(config.seed, "mil-init"))
    if config.standardize:
        stacked = np.concatenate(feats)
        model.shift = stacked.mean(axis=0)
        sd = stacked.std(axis=0)
        model.scale = np.where(sd > 1e-12, sd, 1.0)
    feats = [np.ascontiguousarray(model.prepare(f)) for f in feats]
    split_rng = rng_for(config.seed, "mil-pseudobags")
    b_arr = np.zeros(1)
    params = [model.V, model.w, model.c, b_arr]
    opt = Adam(params, lr=config.learning_rate)
    history = []
    for epoch in range(config.epochs):
        total, count = 0.0, 0
        for j in split_rng.permutation(len(feats)):
            f = feats[j]
            parts = pseudo_bag_indices(f.shape[0], config.n_pseudo_bags, split_rng)
            order = np.concatenate(parts)
            bounds = np.zeros(len(parts) + 1, dtype=np.int64)
            bounds[1:] = np.cumsum([p.size for p in parts])
            loss, gV, gw, gc, gb = _kernels.abmil_bag_grad(
                np.ascontiguousarray(f[order]), bounds, model.V, model.w, model.c,
                float(b_arr[0]), float(labels[j]))
            n_parts = len(parts)
            grads = [gV / n_parts, gw / n_parts, gc / n_parts, np.array([gb / n_parts])]
            if config.weight_decay:
                grads[0] = grads[0] + config.weight_decay * model.V
                grads[2] = grads[2] + config.weight_decay * model.c
            opt.step(params, grads)
            model.b = float(b_arr[0])
            total += loss
            count += n_parts
        history.append(total / max(count, 1))
        if on_epoch is not None:
            on_epoch(epoch, history[-1], model)
    model.b = float(b_arr[0])
    return model, history


def auc(scores, labels):
    """Mann-Whitney AUC: P(score_pos > score_neg) with ties counted 1/2.

    Computed from mid-ranks, so the result is exact for any tie pattern.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUC needs both classes")
    order = np.argsort(s, kind="mergesort")
    ss = s[order]
    # twice the mid-rank keeps everything integral
    ranks2 = np.empty(s.size, dtype=np.int64)
    i = 0
    while i < ss.size:
        j = i
        while j + 1 < ss.size and ss[j + 1] == ss[i]:
            j += 1
        ranks2[order[i:j + 1]] = i + j + 2
        i = j + 1
    u2 = int(ranks2[y == 1].sum()) - n_pos * (n_pos + 1)
    return (u2 / 2) / (n_pos * n_neg)


def accuracy(preds, labels):
    p = np.asarray(preds, dtype=np.int64)
    y = np.asarray(labels, dtype=np.int64)
    if p.shape != y.shape or y.size == 0:
        raise ShapeMismatch("preds and labels must be equal-length and non-empty")
    return float((p == y).mean())


def balanced_accuracy(preds, labels):
    p = np.asarray(preds, dtype=np.int64)
    y = np.asarray(labels, dtype=np.int64)
    if not ((y == 1).any() and (y == 0).any()):
        raise SingleClass("balanced accuracy needs both classes")
    tpr = float((p[y == 1] == 1).mean())
    tnr = float((p[y == 0] == 0).mean())
    return (tpr + tnr) / 2


def evaluate_scores(scores, labels, threshold=0.5):
    s = np.asarray(scores, dtype=np.float64)
    preds = (s >= threshold).astype(np.int64)
    return {
        "balanced_accuracy": balanced_accuracy(preds, labels),
        "accuracy": accuracy(preds, labels),
        "auc": auc(s, labels),
    }


def evaluate(model, bag_features, bag_labels):
    """Bag-level metrics of one trained model on one split."""
    if len(bag_features) == 0:
        raise EmptyBag("evaluation split is empty")
    scores = [mil_predict(model, f) for f in bag_features]
    return evaluate_scores(scores, bag_labels)


@dataclass
class MetricsReport:
    """Per-run metrics plus mean and population std across runs."""

    runs: list = field(default_factory=list)

    @property
    def n_runs(self):
        return len(self.runs)

    def values(self, metric):
        return np.array([r[metric] for r in self.runs], dtype=np.float64)

    def mean(self, metric):
        return float(self.values(metric).mean())

    def std(self, metric):
        return float(self.values(metric).std(ddof=0))

    def summary(self):
        return {m: {"mean": self.mean(m), "std": self.std(m)} for m in METRICS}

    def __getattr__(self, name):
        if name in METRICS:
            return self.mean(name)
        raise AttributeError(name)
