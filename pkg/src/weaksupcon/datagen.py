"""Synthetic MIL datasets made of Gaussian-mixture instance vectors.

Negative instances come from ``n_neg_clusters`` Gaussians, positive instances
from ``n_pos_clusters`` Gaussians whose centers sit ``cluster_separation``
away from the centroid of the negative centers. Every bag also receives a
random bag-level offset (``bag_shift_std``), standing in for slide-to-slide
appearance variation. A positive bag holds ``ceil(positive_fraction * n)``
positive instances at random positions.

Randomness comes from numpy's PCG64 generator seeded with ``config.seed``;
identical configs yield bit-identical datasets.
"""
import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigInvalid, PolicyInvalid

SPLITS = ("train", "val", "test")
NEGATIVE = 0
POSITIVE = 1
FORMAT = "weaksupcon-dataset/1"


@dataclass(frozen=True)
class SyntheticMILConfig:
    n_neg_bags: tuple = (40, 10, 10)
    n_pos_bags: tuple = (40, 10, 10)
    bag_size_range: tuple = (30, 60)
    instance_dim: int = 32
    positive_fraction: float = 0.08
    n_neg_clusters: int = 3
    n_pos_clusters: int = 2
    cluster_spread: float = 1.0
    cluster_separation: float = 3.0
    bag_shift_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("n_neg_bags", "n_pos_bags", "bag_size_range"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        self.validate()

    def validate(self):
        if len(self.n_neg_bags) != 3 or len(self.n_pos_bags) != 3:
            raise ConfigInvalid("n_neg_bags / n_pos_bags need one count per split (train, val, test)")
        if min(self.n_neg_bags + self.n_pos_bags) < 1:
            raise ConfigInvalid("every split needs at least one bag of each label")
        lo_hi = self.bag_size_range
        if len(lo_hi) != 2 or lo_hi[0] < 2 or lo_hi[1] < lo_hi[0]:
            raise ConfigInvalid(f"bag_size_range must be [min, max] with 2 <= min <= max, got {list(lo_hi)}")
        if not 0.0 < self.positive_fraction <= 1.0:
            raise ConfigInvalid(f"positive_fraction must lie in (0, 1], got {self.positive_fraction}")
        if self.instance_dim < 1 or self.n_neg_clusters < 1 or self.n_pos_clusters < 1:
            raise ConfigInvalid("instance_dim and cluster counts must be >= 1")
        if not (self.cluster_spread > 0 and self.cluster_separation > 0):
            raise ConfigInvalid("cluster_spread and cluster_separation must be > 0")
        if self.bag_shift_std < 0:
            raise ConfigInvalid("bag_shift_std must be >= 0")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigInvalid("seed must be an unsigned 64-bit integer")

    def to_dict(self):
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ConfigInvalid(f"unknown dataset fields: {sorted(extra)}")
        return cls(**d)


@dataclass
class Bag:
    bag_id: str
    bag_label: int
    instances: np.ndarray
    true_instance_labels: np.ndarray

    @property
    def n_instances(self):
        return self.instances.shape[0]


@dataclass
class MILDataset:
    splits: dict
    config: SyntheticMILConfig = None
    extra: dict = field(default_factory=dict)

    def bags(self, split=None):
        if split is not None:
            return self.splits[split]
        return [b for s in SPLITS for b in self.splits.get(s, [])]

    def bag_map(self):
        return {b.bag_id: b for b in self.bags()}


@dataclass(frozen=True)
class AugmentPolicy:
    noise_std: float = 0.1
    dropout_prob: float = 0.1
    scale_range: tuple = (0.8, 1.2)

    def __post_init__(self):
        object.__setattr__(self, "scale_range", tuple(float(v) for v in self.scale_range))
        a, b = self.scale_range
        if self.noise_std < 0 or not 0 <= self.dropout_prob < 1 or not 0 < a <= b:
            raise PolicyInvalid(
                f"need noise_std >= 0, dropout_prob in [0, 1), 0 < a <= b; got {self}")


def n_positive(n, positive_fraction):
    # guard against 0.6 * 50 == 30.000000000000004 rounding up to 31
    return min(n, max(1, math.ceil(positive_fraction * n - 1e-9)))


def _centers(rng, cfg):
    d = cfg.instance_dim
    dirs = rng.standard_normal((cfg.n_neg_clusters, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    neg = cfg.cluster_separation * dirs
    centroid = neg.mean(axis=0)
    pdirs = rng.standard_normal((cfg.n_pos_clusters, d))
    pdirs /= np.linalg.norm(pdirs, axis=1, keepdims=True)
    pos = centroid + cfg.cluster_separation * pdirs
    return neg, pos


def _draw(rng, centers, count, spread):
    which = rng.integers(0, centers.shape[0], size=count)
    return centers[which] + spread * rng.standard_normal((count, centers.shape[1]))


def generate_dataset(config):
    cfg = config
    cfg.validate()
    rng = np.random.Generator(np.random.PCG64(int(cfg.seed)))
    neg_c, pos_c = _centers(rng, cfg)
    lo, hi = cfg.bag_size_range
    splits = {}
    for s_idx, split in enumerate(SPLITS):
        bags = []
        labels = [NEGATIVE] * cfg.n_neg_bags[s_idx] + [POSITIVE] * cfg.n_pos_bags[s_idx]
        for j, label in enumerate(labels):
            n = int(rng.integers(lo, hi + 1))
            x = _draw(rng, neg_c, n, cfg.cluster_spread)
            truth = np.zeros(n, dtype=np.int64)
            if label == POSITIVE:
                k = n_positive(n, cfg.positive_fraction)
                where = np.sort(rng.choice(n, size=k, replace=False))
                x[where] = _draw(rng, pos_c, k, cfg.cluster_spread)
                truth[where] = POSITIVE
            if cfg.bag_shift_std > 0:
                x += cfg.bag_shift_std * rng.standard_normal(cfg.instance_dim)
            bags.append(Bag(f"{split}_{j:04d}", label, x, truth))
        splits[split] = bags
    return MILDataset(splits, cfg, {"neg_centers": neg_c, "pos_centers": pos_c})


def augment_batch(x, rng, policy):
    """Row-wise ``s * (x * mask) + noise`` with independent draws per row."""
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    keep = rng.random((n, d)) >= policy.dropout_prob
    a, b = policy.scale_range
    s = rng.uniform(a, b, size=(n, 1)) if b > a else np.full((n, 1), a)
    out = s * (x * keep)
    if policy.noise_std > 0:
        out = out + policy.noise_std * rng.standard_normal((n, d))
    return out


def augment_instance(x, rng, policy):
    return augment_batch(np.asarray(x, dtype=np.float64)[None, :], rng, policy)[0]


def save_dataset(dataset, out_dir):
    """Write ``manifest.json`` plus one ``bag_<id>.csv`` per bag; returns written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    manifest = {
        "format": FORMAT,
        "config": dataset.config.to_dict() if dataset.config else None,
        "splits": {s: [b.bag_id for b in dataset.splits.get(s, [])] for s in SPLITS},
        "bags": {},
    }
    for bag in dataset.bags():
        d = bag.instances.shape[1]
        path = out / f"bag_{bag.bag_id}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["instance_idx", "true_label"] + [f"f{j}" for j in range(d)])
            for i, (row, t) in enumerate(zip(bag.instances, bag.true_instance_labels)):
                w.writerow([i, int(t)] + [repr(float(v)) for v in row])
        manifest["bags"][bag.bag_id] = {
            "label": int(bag.bag_label),
            "n_instances": int(bag.n_instances),
            "n_positive_instances": int(bag.true_instance_labels.sum()),
        }
        written.append(path)
    mpath = out / "manifest.json"
    mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    written.append(mpath)
    return written


def load_dataset(in_dir):
    root = Path(in_dir)
    mpath = root / "manifest.json"
    if not mpath.is_file():
        raise FileNotFoundError(f"no dataset manifest at {mpath}")
    manifest = json.loads(mpath.read_text())
    cfg = SyntheticMILConfig.from_dict(manifest["config"]) if manifest.get("config") else None
    splits = {}
    for split in SPLITS:
        bags = []
        for bag_id in manifest["splits"].get(split, []):
            with open(root / f"bag_{bag_id}.csv", newline="") as fh:
                rows = list(csv.reader(fh))[1:]
            truth = np.array([int(r[1]) for r in rows], dtype=np.int64)
            x = np.array([[float(v) for v in r[2:]] for r in rows], dtype=np.float64)
            bags.append(Bag(bag_id, int(manifest["bags"][bag_id]["label"]), x, truth))
        splits[split] = bags
    return MILDataset(splits, cfg)
