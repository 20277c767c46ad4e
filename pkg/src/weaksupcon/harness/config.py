"""Experiment configuration: JSON schema, presets, and seed derivation.

A config file is one JSON object::

    {
      "preset": "camelyon-like",          # optional, fills every default below
      "seed": 7,                          # master seed, unsigned 64-bit
      "output_dir": "runs/camelyon",
      "dataset": {...},                   # SyntheticMILConfig fields
      "dataset_dir": null,                # or a pre-generated dataset directory
      "pretrain": {...},                  # PretrainConfig fields shared by variants
      "variant_overrides": {"supcon": {...}},
      "variants": ["simclr", "supcon", "weaksupcon"],
      "mil": {...},                       # MILTrainConfig fields
      "n_mil_repetitions": 3,
      "eval_splits": ["test"],
      "features_from": "trunk",
      "pca": {"max_points": 5000}
    }

Seeds are never taken from the clock. The dataset, the encoder runs and the
MIL repetitions get child seeds ``derive_seed(seed, name, index)``; all
encoder variants share the same pretraining seed, so they start from the same
weights and see the same batch draws. A ``seed`` inside ``dataset`` pins the
dataset seed explicitly.
"""
import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from ..datagen import SyntheticMILConfig
from ..encoder import PretrainConfig
from ..errors import ConfigInvalid, ConfigParse
from ..losses import LossKind
from ..mil import MILTrainConfig
from ..seeding import derive_seed

DEFAULT_VARIANTS = ("simclr", "supcon", "weaksupcon")

_BASE_DATASET = {
    "n_neg_bags": [80, 10, 100],
    "n_pos_bags": [80, 10, 100],
    "bag_size_range": [30, 60],
    "instance_dim": 32,
    "n_neg_clusters": 10,
    "n_pos_clusters": 2,
    "bag_shift_std": 0.3,
}

PRESETS = {
    # rare positives: < 10% of a positive bag
    "camelyon-like": {
        "dataset": {**_BASE_DATASET, "positive_fraction": 0.08,
                    "cluster_spread": 0.9, "cluster_separation": 3.0},
        "pretrain": {"epochs": 15},
        "mil": {"n_pseudo_bags": 5},
    },
    # positives are the majority of a positive bag
    "rvt-like": {
        "dataset": {**_BASE_DATASET, "positive_fraction": 0.6,
                    "cluster_spread": 1.0, "cluster_separation": 1.5},
        "pretrain": {"epochs": 15},
        "mil": {"n_pseudo_bags": 30},
    },
    # seconds-scale smoke configuration
    "tiny": {
        "dataset": {**_BASE_DATASET, "n_neg_bags": [6, 2, 3], "n_pos_bags": [6, 2, 3],
                    "bag_size_range": [8, 12], "instance_dim": 8, "positive_fraction": 0.25,
                    "cluster_spread": 0.7, "cluster_separation": 3.0},
        "pretrain": {"batch_samples": 16, "epochs": 2, "hidden": [16], "feature_dim": 12,
                     "projection_hidden": [8], "projection_dim": 6},
        "mil": {"n_pseudo_bags": 2, "epochs": 5, "attention_hidden": 8},
        "pca": {"max_points": 50},
    },
}

_DEFAULT_PRETRAIN = {"epochs": 30}
_DEFAULT_MIL = {"epochs": 40}

TOP_LEVEL_KEYS = {
    "preset", "seed", "output_dir", "dataset", "dataset_dir", "pretrain", "variant_overrides",
    "variants", "mil", "n_mil_repetitions", "eval_splits", "features_from", "pca",
}


@dataclass
class ExperimentConfig:
    seed: int = 0
    output_dir: str = "weaksupcon-run"
    dataset: dict = field(default_factory=dict)
    dataset_dir: str = None
    pretrain: dict = field(default_factory=dict)
    variant_overrides: dict = field(default_factory=dict)
    variants: list = field(default_factory=lambda: list(DEFAULT_VARIANTS))
    mil: dict = field(default_factory=dict)
    n_mil_repetitions: int = 3
    eval_splits: list = field(default_factory=lambda: ["test"])
    features_from: str = "trunk"
    pca: dict = field(default_factory=lambda: {"max_points": 5000})
    preset: str = None

    def to_dict(self):
        return asdict(self)

    def canonical_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def config_hash(self):
        # where results land does not change what they are
        d = {k: v for k, v in self.to_dict().items() if k != "output_dir"}
        return hashlib.sha256(json.dumps(d, sort_keys=True, separators=(",", ":")).encode()).hexdigest()

    @property
    def dataset_seed(self):
        return int(self.dataset.get("seed", derive_seed(self.seed, "dataset")))

    @property
    def pretrain_seed(self):
        return derive_seed(self.seed, "pretrain")

    def mil_seed(self, run_index):
        return derive_seed(self.seed, "mil", run_index)

    def pca_seed(self, split):
        return derive_seed(self.seed, f"pca-{split}")

    def dataset_config(self):
        d = {k: v for k, v in self.dataset.items() if k != "seed"}
        try:
            return SyntheticMILConfig(seed=self.dataset_seed, **d)
        except (TypeError, ValueError) as exc:
            raise ConfigParse(str(exc), "dataset") from None

    def pretrain_config(self, variant):
        kw = {**self.pretrain, **self.variant_overrides.get(variant, {})}
        kw.setdefault("loss_kind", variant)
        try:
            return PretrainConfig(seed=self.pretrain_seed, **kw)
        except (TypeError, ValueError) as exc:
            raise ConfigParse(str(exc), f"pretrain[{variant}]") from None

    def mil_config(self, run_index):
        try:
            return MILTrainConfig(seed=self.mil_seed(run_index), **self.mil)
        except (TypeError, ValueError) as exc:
            raise ConfigParse(str(exc), "mil") from None

    def seeds(self):
        return {
            "master": int(self.seed),
            "dataset": self.dataset_seed,
            "pretrain": self.pretrain_seed,
            "mil": [self.mil_seed(r) for r in range(self.n_mil_repetitions)],
        }


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def build_config(raw, seed=None, output_dir=None):
    """Validate a parsed JSON object and resolve preset defaults."""
    if not isinstance(raw, dict):
        raise ConfigParse("config must be a JSON object", "<root>")
    unknown = set(raw) - TOP_LEVEL_KEYS
    if unknown:
        raise ConfigParse(f"unknown keys {sorted(unknown)}", "<root>")
    preset = raw.get("preset")
    base = {"dataset": dict(_BASE_DATASET), "pretrain": dict(_DEFAULT_PRETRAIN), "mil": dict(_DEFAULT_MIL)}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigParse(f"unknown preset {preset!r} (known: {sorted(PRESETS)})", "preset")
        base = _merge(base, PRESETS[preset])
    merged = _merge(base, raw)
    if seed is not None:
        merged["seed"] = seed
    if output_dir is not None:
        merged["output_dir"] = str(output_dir)

    s = merged.get("seed", 0)
    if not isinstance(s, int) or isinstance(s, bool) or not 0 <= s < 2**64:
        raise ConfigParse("must be an unsigned 64-bit integer", "seed")
    for key in ("dataset", "pretrain", "mil", "pca", "variant_overrides"):
        if not isinstance(merged.get(key, {}), dict):
            raise ConfigParse("must be a JSON object", key)
    variants = merged.get("variants", list(DEFAULT_VARIANTS))
    if not isinstance(variants, list) or not variants:
        raise ConfigParse("must be a non-empty list", "variants")
    for i, v in enumerate(variants):
        try:
            LossKind.parse(v)
        except ValueError as exc:
            raise ConfigParse(str(exc), f"variants[{i}]") from None
    if len(set(variants)) != len(variants):
        raise ConfigParse("duplicate variant names", "variants")
    reps = merged.get("n_mil_repetitions", 3)
    if not isinstance(reps, int) or reps < 1:
        raise ConfigParse("must be an integer >= 1", "n_mil_repetitions")
    splits = merged.get("eval_splits", ["test"])
    if not isinstance(splits, list) or not splits or any(x not in ("train", "val", "test") for x in splits):
        raise ConfigParse("must be a non-empty list drawn from train/val/test", "eval_splits")
    if merged.get("features_from", "trunk") not in ("trunk", "projection"):
        raise ConfigParse("must be 'trunk' or 'projection'", "features_from")
    _check_fields(merged["dataset"], SyntheticMILConfig, "dataset")
    _check_fields(merged["pretrain"], PretrainConfig, "pretrain", forbid=("seed",))
    _check_fields(merged["mil"], MILTrainConfig, "mil", forbid=("seed",))
    for name, over in merged.get("variant_overrides", {}).items():
        _check_fields(over, PretrainConfig, f"variant_overrides.{name}", forbid=("seed",))

    cfg = ExperimentConfig(**merged)
    cfg.variants = [LossKind.parse(v).value for v in cfg.variants]
    # surface value errors now rather than mid-run
    cfg.dataset_config()
    for v in cfg.variants:
        cfg.pretrain_config(v)
    cfg.mil_config(0)
    return cfg


def _check_fields(d, cls, where, forbid=()):
    names = {f.name for f in fields(cls)} - set(forbid)
    for key in d:
        if key not in names:
            raise ConfigParse(f"unknown field (allowed: {sorted(names)})", f"{where}.{key}")


def load_config(path, seed=None, output_dir=None):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigParse(f"cannot read config: {exc.strerror}", str(path)) from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigParse(exc.msg, f"{path}: line {exc.lineno} column {exc.colno}") from None
    try:
        return build_config(raw, seed=seed, output_dir=output_dir)
    except ConfigInvalid as exc:
        raise ConfigParse(str(exc), "dataset") from None
