"""MLP encoder with a projection head, an Adam trainer, and feature extraction.

Layers compute ``x @ W + b``. A ReLU follows every layer except the last
projection layer, so the trunk ends in a ReLU and its output (the MIL
feature) is exactly what the projection head consumes.
"""
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .datagen import NEGATIVE, POSITIVE, AugmentPolicy, augment_batch
from .errors import CacheMismatch, EmptyDataset, NonFiniteLoss, ShapeMismatch
from .losses import DEFAULT_TAU, ContrastiveBatch, LossKind, loss_and_grad
from .seeding import rng_for

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "weaksupcon-encoder/1"


@dataclass
class EncoderModel:
    encoder_layers: list
    projection_layers: list

    def __post_init__(self):
        layers = self.layers
        if not self.encoder_layers or not self.projection_layers:
            raise ShapeMismatch("encoder and projection head each need at least one layer")
        for (w0, _), (w1, _) in zip(layers, layers[1:]):
            if w0.shape[1] != w1.shape[0]:
                raise ShapeMismatch(f"layer dims do not chain: {w0.shape} -> {w1.shape}")
        for w, b in layers:
            if b.shape != (w.shape[1],):
                raise ShapeMismatch(f"bias shape {b.shape} does not match weight {w.shape}")

    @property
    def layers(self):
        return list(self.encoder_layers) + list(self.projection_layers)

    @property
    def input_dim(self):
        return self.encoder_layers[0][0].shape[0]

    @property
    def feature_dim(self):
        return self.encoder_layers[-1][0].shape[1]

    @property
    def projection_dim(self):
        return self.projection_layers[-1][0].shape[1]

    @property
    def dims(self):
        return [self.input_dim] + [w.shape[1] for w, _ in self.layers]

    def params(self):
        return [p for layer in self.layers for p in layer]

    def copy(self):
        return EncoderModel([(w.copy(), b.copy()) for w, b in self.encoder_layers],
                            [(w.copy(), b.copy()) for w, b in self.projection_layers])

    @classmethod
    def init(cls, input_dim, hidden=(64,), feature_dim=64, projection_hidden=(32,),
             projection_dim=16, rng=None):
        """He-initialized weights, zero biases."""
        rng = rng if rng is not None else np.random.default_rng(0)

        def stack(dims):
            return [(rng.standard_normal((a, b)) * math.sqrt(2.0 / a), np.zeros(b))
                    for a, b in zip(dims, dims[1:])]

        enc = stack([input_dim, *hidden, feature_dim])
        proj = stack([feature_dim, *projection_hidden, projection_dim])
        return cls(enc, proj)


def forward(model, x):
    """Return ``(features, projections, cache)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ShapeMismatch(f"input has shape {x.shape}, model expects (*, {model.input_dim})")
    layers = model.layers
    n_enc = len(model.encoder_layers)
    inputs, pres = [], []
    h = x
    features = None
    for i, (w, b) in enumerate(layers):
        inputs.append(h)
        pre = h @ w + b
        pres.append(pre)
        h = np.maximum(pre, 0.0) if i < len(layers) - 1 else pre
        if i == n_enc - 1:
            features = h
    cache = {"inputs": inputs, "pres": pres, "dims": model.dims}
    return features, h, cache


def backward(model, cache, grad_projections, grad_features=None):
    """Parameter gradients in ``model.params()`` order.

    ``grad_features`` optionally injects an upstream gradient at the trunk
    output (after its ReLU). The ReLU subgradient at 0 is 0.
    """
    if cache.get("dims") != model.dims or len(cache["pres"]) != len(model.layers):
        raise CacheMismatch("cache was produced by a model with a different architecture")
    layers = model.layers
    n_enc = len(model.encoder_layers)
    g = np.asarray(grad_projections, dtype=np.float64)
    if g.shape != cache["pres"][-1].shape:
        raise ShapeMismatch(f"upstream grad shape {g.shape} != output shape {cache['pres'][-1].shape}")
    grads = [None] * (2 * len(layers))
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        grads[2 * i] = cache["inputs"][i].T @ g
        grads[2 * i + 1] = g.sum(axis=0)
        if i > 0:
            g = g @ w.T
            if i == n_enc and grad_features is not None:
                g = g + grad_features
            g = g * (cache["pres"][i - 1] > 0)
    return grads


class Adam:
    """Adam with bias correction; updates parameter arrays in place."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        if len(params) != len(self.m):
            raise ShapeMismatch("optimizer state does not match parameter list")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


@dataclass
class PretrainConfig:
    loss_kind: str = "weaksupcon"
    tau: float = DEFAULT_TAU
    batch_samples: int = 128
    epochs: int = 20
    steps_per_epoch: int = 0
    learning_rate: float = 1e-3
    augment: dict = field(default_factory=lambda: asdict(AugmentPolicy()))
    stratify_ratio: float = 0.5
    hidden: tuple = (64,)
    feature_dim: int = 64
    projection_hidden: tuple = (32,)
    projection_dim: int = 16
    simclr_denominator: str = "group"
    similarity_mean_normalize: bool = False
    simclr_weight: float = 1.0
    seed: int = 0

    def __post_init__(self):
        self.loss_kind = LossKind.parse(self.loss_kind).value
        self.hidden = tuple(int(h) for h in self.hidden)
        self.projection_hidden = tuple(int(h) for h in self.projection_hidden)
        if self.batch_samples < 2:
            raise ValueError("batch_samples must be >= 2")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.stratify_ratio is not None and not 0.0 <= self.stratify_ratio <= 1.0:
            raise ValueError("stratify_ratio must lie in [0, 1] or be null")
        self.policy()

    def policy(self):
        return AugmentPolicy(**self.augment)

    def loss_options(self):
        return {"simclr_denominator": self.simclr_denominator,
                "similarity_mean_normalize": self.similarity_mean_normalize,
                "simclr_weight": self.simclr_weight}


class InstancePool:
    """Flattened training instances with their bag labels, for batch sampling."""

    def __init__(self, dataset, split="train"):
        bags = dataset.bags(split)
        if not bags or sum(b.n_instances for b in bags) == 0:
            raise EmptyDataset(f"split {split!r} has no instances")
        self.x = np.concatenate([b.instances for b in bags])
        self.bag_label = np.concatenate([np.full(b.n_instances, b.bag_label) for b in bags])
        self.true_label = np.concatenate([b.true_instance_labels for b in bags])
        self.by_label = {lab: np.flatnonzero(self.bag_label == lab) for lab in (NEGATIVE, POSITIVE)}

    def __len__(self):
        return self.x.shape[0]


def make_batch(dataset, rng, config, pool=None):
    """Sample N instances and augment each twice.

    Returns ``(views, pair_of, bag_label)`` with rows laid out as
    ``[first views of 0..N-1, second views of 0..N-1]``. With a
    ``stratify_ratio`` r, ``round(r * N)`` samples come from positive bags and
    the rest from negative bags (falling back to whichever group exists).
    """
    pool = pool or InstancePool(dataset)
    n = config.batch_samples
    ratio = config.stratify_ratio
    neg, pos = pool.by_label[NEGATIVE], pool.by_label[POSITIVE]
    if ratio is None or not neg.size or not pos.size:
        idx = rng.choice(len(pool), size=n, replace=n > len(pool))
    else:
        n_pos = int(round(ratio * n))
        n_neg = n - n_pos
        idx = np.concatenate([
            rng.choice(neg, size=n_neg, replace=n_neg > neg.size),
            rng.choice(pos, size=n_pos, replace=n_pos > pos.size),
        ])
    policy = config.policy()
    x = pool.x[idx]
    views = np.concatenate([augment_batch(x, rng, policy), augment_batch(x, rng, policy)])
    pair_of = np.concatenate([np.arange(n, 2 * n), np.arange(n)])
    labels = np.concatenate([pool.bag_label[idx], pool.bag_label[idx]])
    return views, pair_of, labels


def train_step(model, optimizer, views, pair_of, bag_label, loss_kind, tau, **loss_options):
    """One Adam step on the chosen loss; mutates ``model`` and ``optimizer``."""
    _, proj, cache = forward(model, views)
    batch = ContrastiveBatch(proj, pair_of, bag_label, tau)
    out = loss_and_grad(loss_kind, batch, **loss_options)
    if not math.isfinite(out.value) or not np.all(np.isfinite(out.grad)):
        raise NonFiniteLoss(f"{LossKind.parse(loss_kind).value} loss became non-finite "
                            f"(value={out.value}, step={optimizer.t})")
    grads = backward(model, cache, out.grad)
    optimizer.step(model.params(), grads)
    return out.value


def pretrain(dataset, config, model=None, on_epoch=None):
    """Pre-train an encoder; returns ``(model, epoch_losses)``.

    Each epoch runs ``steps_per_epoch`` steps, or enough steps to visit the
    training pool once when that is 0.
    """
    init_rng = rng_for(config.seed, "encoder-init")
    batch_rng = rng_for(config.seed, "encoder-batches")
    pool = InstancePool(dataset)
    if model is None:
        model = EncoderModel.init(pool.x.shape[1], config.hidden, config.feature_dim,
                                  config.projection_hidden, config.projection_dim, init_rng)
    opt = Adam(model.params(), lr=config.learning_rate)
    steps = config.steps_per_epoch or max(1, math.ceil(len(pool) / config.batch_samples))
    options = config.loss_options()
    history = []
    for epoch in range(config.epochs):
        total = 0.0
        for _ in range(steps):
            views, pair_of, labels = make_batch(dataset, batch_rng, config, pool)
            total += train_step(model, opt, views, pair_of, labels, config.loss_kind,
                                config.tau, **options)
        history.append(total / steps)
        log.debug("%s epoch %d loss %.6f", config.loss_kind, epoch, history[-1])
        if on_epoch is not None:
            on_epoch(epoch, history[-1], model)
    return model, history


def extract_features(model, dataset, use="trunk"):
    """Per-bag feature matrices in instance order, without augmentation."""
    if use not in ("trunk", "projection"):
        raise ValueError("use must be 'trunk' or 'projection'")
    out = {}
    for bag in dataset.bags():
        feats, proj, _ = forward(model, bag.instances)
        out[bag.bag_id] = feats if use == "trunk" else proj
    return out


def save_checkpoint(model, path, meta=None):
    doc = {
        "format": CHECKPOINT_FORMAT,
        "dims": {"input": model.input_dim, "feature": model.feature_dim,
                 "projection": model.projection_dim, "all": model.dims},
        "encoder": [_layer_doc(w, b) for w, b in model.encoder_layers],
        "projection": [_layer_doc(w, b) for w, b in model.projection_layers],
        "meta": meta or {},
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")


def load_checkpoint(path):
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not an encoder checkpoint")

    def layers(items):
        return [(np.array(it["W"], dtype=np.float64).reshape(it["shape"]),
                 np.array(it["b"], dtype=np.float64)) for it in items]

    return EncoderModel(layers(doc["encoder"]), layers(doc["projection"])), doc.get("meta", {})


def _layer_doc(w, b):
    return {"shape": list(w.shape), "W": [float(v) for v in w.ravel()],
            "b": [float(v) for v in b]}
