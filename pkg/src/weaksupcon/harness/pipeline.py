"""Pipeline stages behind the CLI subcommands.

Output directory layout::

    <out>/config.json
    <out>/dataset/manifest.json, bag_<id>.csv
    <out>/encoders/<variant>/checkpoint.json, loss_curve.csv
    <out>/encoders/<variant>/features/features_<id>.csv, features_manifest.json
    <out>/encoders/<variant>/metrics.csv, summary.json
    <out>/encoders/<variant>/pca_<split>.csv, pca_stats.json
    <out>/report.csv, report.txt
    <out>/run_manifest.json

Every file is a pure function of the config, so re-running a stage rewrites
byte-identical output.
"""
import csv
import json
import logging
import math
from pathlib import Path

import numpy as np

from .. import __version__
from ..datagen import generate_dataset, load_dataset, save_dataset
from ..encoder import extract_features, forward, load_checkpoint, pretrain, save_checkpoint
from ..errors import IncompleteExperiment, MissingFeatures, SingleClass
from ..mil import METRICS, MetricsReport, evaluate, mil_train
from ..numerics import l2_normalize_rows, pca_2d, pca_apply
from ..seeding import rng_for

log = logging.getLogger(__name__)

METRIC_COLUMNS = {"balanced_accuracy": "balanced_acc", "accuracy": "accuracy", "auc": "auc"}


def _dump_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _fmt(x):
    return repr(float(x))


class Layout:
    def __init__(self, cfg):
        self.cfg = cfg
        self.root = Path(cfg.output_dir)

    @property
    def dataset(self):
        return Path(self.cfg.dataset_dir) if self.cfg.dataset_dir else self.root / "dataset"

    def encoder(self, variant):
        return self.root / "encoders" / variant

    def checkpoint(self, variant):
        return self.encoder(variant) / "checkpoint.json"

    def features(self, variant):
        return self.encoder(variant) / "features"


def write_config_echo(cfg):
    root = Path(cfg.output_dir)
    root.mkdir(parents=True, exist_ok=True)
    _dump_json(root / "config.json", cfg.to_dict())


def write_run_manifest(cfg, command):
    root = Path(cfg.output_dir)
    path = root / "run_manifest.json"
    files = sorted({p.relative_to(root).as_posix() for p in root.rglob("*") if p.is_file()}
                   | {"run_manifest.json"})
    _dump_json(path, {
        "tool": "weaksupcon",
        "tool_version": __version__,
        "command": command,
        "config_hash": cfg.config_hash(),
        "seeds": cfg.seeds(),
        "files": files,
    })
    return path


def cmd_generate(cfg):
    write_config_echo(cfg)
    out = Layout(cfg).dataset
    ds = generate_dataset(cfg.dataset_config())
    save_dataset(ds, out)
    log.info("dataset written to %s (%d bags)", out, len(ds.bags()))
    return out


def _load_dataset(cfg):
    path = Layout(cfg).dataset
    if not (path / "manifest.json").is_file():
        raise FileNotFoundError(f"no dataset at {path}; run `weaksupcon generate` first")
    return load_dataset(path)


def cmd_pretrain(cfg, variants=None):
    write_config_echo(cfg)
    ds = _load_dataset(cfg)
    lay = Layout(cfg)
    written = []
    for variant in variants or cfg.variants:
        pc = cfg.pretrain_config(variant)
        d = lay.encoder(variant)
        d.mkdir(parents=True, exist_ok=True)
        model, history = pretrain(ds, pc)
        pool_size = sum(b.n_instances for b in ds.bags("train"))
        per_epoch = pc.steps_per_epoch or max(1, math.ceil(pool_size / pc.batch_samples))
        # one row per epoch: mean loss over the epoch, logged at its last step
        with open(d / "loss_curve.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "loss_kind", "value"])
            for epoch, value in enumerate(history):
                w.writerow([(epoch + 1) * per_epoch, pc.loss_kind, _fmt(value)])
        save_checkpoint(model, lay.checkpoint(variant), meta={
            "variant": variant, "loss_kind": pc.loss_kind, "seed": pc.seed,
            "config_hash": cfg.config_hash(),
        })
        log.info("pretrained %s: final epoch loss %.6f", variant, history[-1])
        written.append(lay.checkpoint(variant))
    return written


def _load_model(cfg, variant):
    path = Layout(cfg).checkpoint(variant)
    if not path.is_file():
        raise FileNotFoundError(f"no checkpoint for {variant!r} at {path}; run `weaksupcon pretrain`")
    model, _ = load_checkpoint(path)
    return model


def cmd_extract(cfg, variants=None):
    ds = _load_dataset(cfg)
    lay = Layout(cfg)
    out_dirs = []
    for variant in variants or cfg.variants:
        model = _load_model(cfg, variant)
        feats = extract_features(model, ds, use=cfg.features_from)
        out = lay.features(variant)
        out.mkdir(parents=True, exist_ok=True)
        entries = {}
        for bag in ds.bags():
            f = feats[bag.bag_id]
            with open(out / f"features_{bag.bag_id}.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["instance_idx"] + [f"f{j}" for j in range(f.shape[1])])
                for i, row in enumerate(f):
                    w.writerow([i] + [repr(float(v)) for v in row])
            entries[bag.bag_id] = {"n_instances": int(f.shape[0])}
        _dump_json(out / "features_manifest.json", {
            "variant": variant,
            "source": cfg.features_from,
            "feature_dim": int(model.feature_dim if cfg.features_from == "trunk" else model.projection_dim),
            "bags": entries,
        })
        out_dirs.append(out)
    return out_dirs


def load_features(cfg, variant, ds):
    fdir = Layout(cfg).features(variant)
    mpath = fdir / "features_manifest.json"
    if not mpath.is_file():
        raise MissingFeatures(f"no features for {variant!r} at {fdir}; run `weaksupcon extract`")
    manifest = json.loads(mpath.read_text())
    feats = {}
    for bag in ds.bags():
        path = fdir / f"features_{bag.bag_id}.csv"
        if bag.bag_id not in manifest["bags"] or not path.is_file():
            raise MissingFeatures(f"features for bag {bag.bag_id} missing in {fdir}")
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))[1:]
        feats[bag.bag_id] = np.array([[float(v) for v in r[1:]] for r in rows], dtype=np.float64)
    return feats


def cmd_mil(cfg, variants=None):
    ds = _load_dataset(cfg)
    lay = Layout(cfg)
    written = []
    for variant in variants or cfg.variants:
        feats = load_features(cfg, variant, ds)
        train = ds.bags("train")
        x_tr = [feats[b.bag_id] for b in train]
        y_tr = [b.bag_label for b in train]
        reports = {s: MetricsReport() for s in cfg.eval_splits}
        rows = []
        for r in range(cfg.n_mil_repetitions):
            mc = cfg.mil_config(r)
            model, _ = mil_train(x_tr, y_tr, mc)
            for split in cfg.eval_splits:
                bags = ds.bags(split)
                labels = [b.bag_label for b in bags]
                if len(set(labels)) < 2:
                    raise SingleClass(f"split {split!r} holds a single class; metrics undefined")
                m = evaluate(model, [feats[b.bag_id] for b in bags], labels)
                reports[split].runs.append(m)
                rows.append([variant, cfg.pretrain_config(variant).loss_kind, str(mc.seed), split]
                            + [_fmt(m[k]) for k in METRICS])
        for split in cfg.eval_splits:
            rep = reports[split]
            rows.append([variant, cfg.pretrain_config(variant).loss_kind, "mean", split]
                        + [_fmt(rep.mean(k)) for k in METRICS])
        d = lay.encoder(variant)
        d.mkdir(parents=True, exist_ok=True)
        with open(d / "metrics.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["encoder", "loss_kind", "run_seed", "split", "balanced_acc", "accuracy", "auc"])
            w.writerows(rows)
        _dump_json(d / "summary.json", {
            "encoder": variant,
            "loss_kind": cfg.pretrain_config(variant).loss_kind,
            "n_runs": cfg.n_mil_repetitions,
            "std": "population (divide by n)",
            "splits": {
                split: {METRIC_COLUMNS[k]: {"mean": reports[split].mean(k), "std": reports[split].std(k),
                                            "runs": [float(v) for v in reports[split].values(k)]}
                        for k in METRICS}
                for split in cfg.eval_splits
            },
        })
        log.info("%s test auc %.4f", variant, reports[cfg.eval_splits[-1]].mean("auc"))
        written += [d / "metrics.csv", d / "summary.json"]
    return written


def _mean_cos(a, b=None):
    ua = l2_normalize_rows(a)
    if b is None:
        s = ua @ ua.T
        m = ua.shape[0]
        return float((s.sum() - np.trace(s)) / (m * (m - 1)))
    return float((ua @ l2_normalize_rows(b).T).mean())


def geometry_stats(model, ds, split="train"):
    """Mean cosines among negative-bag instances and between them and true positives.

    Computed in projection space (where the losses act) and in trunk space.
    """
    bags = ds.bags(split)
    x = np.concatenate([b.instances for b in bags])
    bag_label = np.concatenate([np.full(b.n_instances, b.bag_label) for b in bags])
    truth = np.concatenate([b.true_instance_labels for b in bags])
    feats, proj, _ = forward(model, x)
    out = {}
    for name, z in (("projection", proj), ("trunk", feats)):
        neg, pos = z[bag_label == 0], z[truth == 1]
        nn = _mean_cos(neg)
        np_ = _mean_cos(neg, pos) if pos.size else float("nan")
        out[name] = {"neg_neg_cosine": nn, "neg_truepos_cosine": np_, "gap": nn - np_}
    return out


def cmd_pca(cfg, variants=None, splits=("train", "test")):
    ds = _load_dataset(cfg)
    lay = Layout(cfg)
    max_points = int(cfg.pca.get("max_points", 5000))
    written = []
    for variant in variants or cfg.variants:
        feats = load_features(cfg, variant, ds)
        train = np.concatenate([feats[b.bag_id] for b in ds.bags("train")])
        proj, comps, explained = pca_2d(train)
        mean = train.mean(axis=0)
        d = lay.encoder(variant)
        stats = {
            "fit_split": "train",
            "components": comps.tolist(),
            "explained_variance": explained.tolist(),
            "projected_train_variance": proj.var(axis=0, ddof=1).tolist(),
            "splits": {},
        }
        for split in splits:
            bags = ds.bags(split)
            x = np.concatenate([feats[b.bag_id] for b in bags])
            bl = np.concatenate([np.full(b.n_instances, b.bag_label) for b in bags])
            tl = np.concatenate([b.true_instance_labels for b in bags])
            pcs = pca_apply(x, mean, comps)
            idx = np.arange(x.shape[0])
            if idx.size > max_points:
                idx = np.sort(rng_for(cfg.seed, f"pca-{split}").choice(idx.size, max_points, replace=False))
            path = d / f"pca_{split}.csv"
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["bag_label", "true_instance_label", "pc1", "pc2"])
                for i in idx:
                    w.writerow([int(bl[i]), int(tl[i]), _fmt(pcs[i, 0]), _fmt(pcs[i, 1])])
            stats["splits"][split] = {"n_points": int(idx.size), "n_total": int(x.shape[0])}
            written.append(path)
        ckpt = lay.checkpoint(variant)
        if ckpt.is_file():
            model, _ = load_checkpoint(ckpt)
            stats["geometry"] = {s: geometry_stats(model, ds, s) for s in splits}
        _dump_json(d / "pca_stats.json", stats)
        written.append(d / "pca_stats.json")
    return written


def cmd_report(cfg):
    lay = Layout(cfg)
    missing = [v for v in cfg.variants if not (lay.encoder(v) / "summary.json").is_file()]
    if missing:
        raise IncompleteExperiment(f"missing MIL summaries for variant(s): {', '.join(missing)}")
    split = cfg.eval_splits[-1]
    cols = ["balanced_acc", "accuracy", "auc"]
    rows = []
    for v in cfg.variants:
        summary = json.loads((lay.encoder(v) / "summary.json").read_text())
        if split not in summary["splits"]:
            raise IncompleteExperiment(f"summary for {v!r} lacks split {split!r}")
        s = summary["splits"][split]
        rows.append((v, [(s[c]["mean"], s[c]["std"]) for c in cols]))
    with open(lay.root / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["encoder", "split"] + [f"{c}_{x}" for c in cols for x in ("mean", "std")])
        for v, vals in rows:
            w.writerow([v, split] + [_fmt(x) for pair in vals for x in pair])
    width = max(len("Encoder"), *(len(v) for v, _ in rows))
    lines = [
        f"MIL results on the {split} split: mean ± population std over {cfg.n_mil_repetitions} runs",
        f"{'Encoder':<{width}}  {'Balanced acc':<17}  {'Accuracy':<17}  {'AUC':<17}",
    ]
    for v, vals in rows:
        cells = [f"{m:.4f} ± {s:.4f}" for m, s in vals]
        lines.append(f"{v:<{width}}  " + "  ".join(f"{c:<17}" for c in cells).rstrip())
    text = "\n".join(lines) + "\n"
    (lay.root / "report.txt").write_text(text)
    return text


def cmd_all(cfg):
    write_config_echo(cfg)
    if not cfg.dataset_dir:
        cmd_generate(cfg)
    cmd_pretrain(cfg)
    cmd_extract(cfg)
    cmd_mil(cfg)
    cmd_pca(cfg)
    return cmd_report(cfg)
