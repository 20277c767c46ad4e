import numpy as np
import pytest

from conftest import central_differences, max_rel_err
from weaksupcon.datagen import SyntheticMILConfig, generate_dataset
from weaksupcon.encoder import (Adam, EncoderModel, InstancePool, PretrainConfig, backward,
                                extract_features, forward, load_checkpoint, make_batch, pretrain,
                                save_checkpoint, train_step)
from weaksupcon.errors import CacheMismatch, ShapeMismatch
from weaksupcon.losses import ContrastiveBatch, LossKind, loss_and_grad
from weaksupcon.numerics import pairwise_sim


def tiny_model(rng, dims=(5, 6, 4), head=(4, 3, 3)):
    enc = [(rng.standard_normal((a, b)), rng.standard_normal(b) * 0.1) for a, b in zip(dims, dims[1:])]
    proj = [(rng.standard_normal((a, b)), rng.standard_normal(b) * 0.1) for a, b in zip(head, head[1:])]
    return EncoderModel(enc, proj)


def small_dataset(seed=0, **kw):
    base = dict(n_neg_bags=(6, 1, 1), n_pos_bags=(6, 1, 1), bag_size_range=(10, 14),
                instance_dim=8, positive_fraction=0.2, seed=seed)
    base.update(kw)
    return generate_dataset(SyntheticMILConfig(**base))


def relu(x):
    return np.maximum(x, 0.0)


class TestForward:
    def test_matches_explicit_composition(self, rng):
        m = tiny_model(rng)
        x = rng.standard_normal((7, 5))
        (w1, b1), (w2, b2) = m.encoder_layers
        (w3, b3), (w4, b4) = m.projection_layers
        feats = relu(relu(x @ w1 + b1) @ w2 + b2)
        proj = relu(feats @ w3 + b3) @ w4 + b4
        f, p, _ = forward(m, x)
        np.testing.assert_allclose(f, feats, atol=1e-12)
        np.testing.assert_allclose(p, proj, atol=1e-12)

    def test_zero_weights_give_biases(self, rng):
        m = tiny_model(rng)
        for w, b in m.layers:
            w[:] = 0.0
        f, p, _ = forward(m, rng.standard_normal((3, 5)))
        np.testing.assert_array_equal(f, np.tile(relu(m.encoder_layers[-1][1]), (3, 1)))
        np.testing.assert_array_equal(p, np.tile(m.projection_layers[-1][1], (3, 1)))

    def test_identity_layers(self):
        eye = [(np.eye(3), np.zeros(3))]
        m = EncoderModel(eye, [(np.eye(3), np.zeros(3))])
        x = np.array([[1.0, -2.0, 3.0]])
        f, p, _ = forward(m, x)
        np.testing.assert_array_equal(f, relu(x))
        np.testing.assert_array_equal(p, relu(x))

    def test_shape_checks(self, rng):
        m = tiny_model(rng)
        with pytest.raises(ShapeMismatch):
            forward(m, np.zeros((2, 4)))
        with pytest.raises(ShapeMismatch):
            EncoderModel([(np.zeros((3, 4)), np.zeros(4))], [(np.zeros((5, 2)), np.zeros(2))])

    def test_default_architecture(self):
        m = EncoderModel.init(32, rng=np.random.default_rng(0))
        assert m.dims == [32, 64, 64, 32, 16]
        assert (m.feature_dim, m.projection_dim) == (64, 16)


class TestBackward:
    def test_two_by_two_by_hand(self):
        w1 = np.array([[1.0, -1.0], [2.0, 0.5]])
        w2 = np.array([[1.0, 0.0], [0.0, 1.0]])
        m = EncoderModel([(w1, np.zeros(2))], [(w2, np.zeros(2))])
        x = np.array([[1.0, 1.0]])
        # pre1 = [3, -0.5] -> relu [3, 0]; out = [3, 0]
        _, out, cache = forward(m, x)
        np.testing.assert_array_equal(out, [[3.0, 0.0]])
        g = backward(m, cache, np.array([[1.0, 1.0]]))
        np.testing.assert_array_equal(g[2], [[3.0, 3.0], [0.0, 0.0]])
        np.testing.assert_array_equal(g[3], [1.0, 1.0])
        np.testing.assert_array_equal(g[0], [[1.0, 0.0], [1.0, 0.0]])
        np.testing.assert_array_equal(g[1], [1.0, 0.0])

    def test_linear_objective_matches_finite_differences(self, rng):
        m = tiny_model(rng)
        x = rng.standard_normal((6, 5))
        c = rng.standard_normal((6, 3))
        _, _, cache = forward(m, x)
        grads = backward(m, cache, c)
        for p, g in zip(m.params(), grads):
            def f(v, p=p):
                old = p.copy()
                p[...] = v
                val = float((forward(m, x)[1] * c).sum())
                p[...] = old
                return val
            assert max_rel_err(g, central_differences(f, p, h=1e-6)) <= 1e-6

    def test_feature_injection(self, rng):
        m = tiny_model(rng)
        x = rng.standard_normal((4, 5))
        gf = rng.standard_normal((4, 4))
        _, _, cache = forward(m, x)
        grads = backward(m, cache, np.zeros((4, 3)), grad_features=gf)
        w = m.encoder_layers[0][0]

        def f(v):
            old = w.copy()
            w[...] = v
            val = float((forward(m, x)[0] * gf).sum())
            w[...] = old
            return val

        assert max_rel_err(grads[0], central_differences(f, w, h=1e-6)) <= 1e-6

    def test_cache_mismatch(self, rng):
        m = tiny_model(rng)
        other = tiny_model(rng, dims=(5, 7, 4))
        _, _, cache = forward(other, rng.standard_normal((2, 5)))
        with pytest.raises(CacheMismatch):
            backward(m, cache, np.zeros((2, 3)))


@pytest.mark.parametrize("kind", list(LossKind))
def test_end_to_end_gradients(kind):
    rng = np.random.default_rng(42)
    m = tiny_model(rng)
    n = 4
    x = rng.standard_normal((2 * n, 5))
    pair_of = np.concatenate([np.arange(n, 2 * n), np.arange(n)])
    labels = np.array([0, 1, 1, 0] * 2)

    def total(model):
        _, p, cache = forward(model, x)
        out = loss_and_grad(kind, ContrastiveBatch(p, pair_of, labels, 0.5))
        return out, cache

    out, cache = total(m)
    grads = backward(m, cache, out.grad)
    for p, g in zip(m.params(), grads):
        def f(v, p=p):
            old = p.copy()
            p[...] = v
            val = total(m)[0].value
            p[...] = old
            return val
        assert max_rel_err(g, central_differences(f, p, h=1e-6)) <= 1e-4


class TestAdam:
    def test_zero_learning_rate_is_noop(self, rng):
        m = tiny_model(rng)
        before = [p.copy() for p in m.params()]
        opt = Adam(m.params(), lr=0.0)
        opt.step(m.params(), [np.ones_like(p) for p in m.params()])
        for a, b in zip(before, m.params()):
            np.testing.assert_array_equal(a, b)

    def test_first_step_moves_by_lr_times_sign(self):
        p = [np.array([1.0, -2.0, 3.0])]
        Adam(p, lr=0.01).step(p, [np.array([5.0, -0.1, 0.0])])
        np.testing.assert_allclose(p[0], [0.99, -1.99, 3.0], atol=1e-9)

    def test_descends_quadratic(self):
        p = [np.array([3.0, -4.0])]
        opt = Adam(p, lr=0.1)
        for _ in range(300):
            opt.step(p, [2 * p[0]])
        assert np.linalg.norm(p[0]) < 0.1


class TestTraining:
    def test_loss_decreases_over_fifty_steps(self):
        ds = small_dataset()
        cfg = PretrainConfig(loss_kind="simclr", batch_samples=32, learning_rate=1e-2, hidden=(16,),
                             feature_dim=16, projection_hidden=(8,), projection_dim=8)
        m = EncoderModel.init(8, (16,), 16, (8,), 8, np.random.default_rng(0))
        opt = Adam(m.params(), lr=1e-2)
        rng = np.random.default_rng(1)
        pool = InstancePool(ds)
        losses = [train_step(m, opt, *make_batch(ds, rng, cfg, pool), "simclr", 0.5) for _ in range(50)]
        assert np.mean(losses[-10:]) < np.mean(losses[:10])

    def test_stratified_batch(self):
        ds = small_dataset()
        cfg = PretrainConfig(batch_samples=64, stratify_ratio=0.5)
        views, pair_of, labels = make_batch(ds, np.random.default_rng(0), cfg)
        assert views.shape == (128, 8)
        assert (labels[:64] == 1).sum() == 32 and (labels[:64] == 0).sum() == 32
        np.testing.assert_array_equal(labels[:64], labels[64:])
        np.testing.assert_array_equal(pair_of[pair_of], np.arange(128))

    def test_pretrain_is_deterministic(self):
        ds = small_dataset()
        cfg = PretrainConfig(batch_samples=16, epochs=2, seed=7)
        (a, ha), (b, hb) = pretrain(ds, cfg), pretrain(ds, cfg)
        assert ha == hb
        for x, y in zip(a.params(), b.params()):
            np.testing.assert_array_equal(x, y)

    def test_similarity_only_collapses(self):
        ds = small_dataset(seed=3)
        cfg = PretrainConfig(loss_kind="similarity", batch_samples=32, epochs=15, learning_rate=1e-2,
                             seed=1)
        model, _ = pretrain(ds, cfg)
        x = np.concatenate([b.instances for b in ds.bags("train")])
        _, proj, _ = forward(model, x)
        s = pairwise_sim(proj)
        assert s[~np.eye(len(s), dtype=bool)].mean() >= 0.95

    def test_weaksupcon_pulls_negatives_together(self):
        ds = small_dataset(seed=4)
        neg = np.concatenate([b.instances for b in ds.bags("train") if b.bag_label == 0])

        def mean_neg_cos(model):
            s = pairwise_sim(forward(model, neg)[1])
            return s[~np.eye(len(s), dtype=bool)].mean()

        cfg = PretrainConfig(loss_kind="weaksupcon", batch_samples=32, epochs=10, seed=2)
        init = EncoderModel.init(8, rng=np.random.default_rng(0))
        before = mean_neg_cos(init)
        trained, _ = pretrain(ds, cfg, model=init.copy())
        assert mean_neg_cos(trained) > before + 0.1


def test_extract_features(rng):
    ds = small_dataset()
    m = EncoderModel.init(8, rng=rng)
    feats = extract_features(m, ds)
    proj = extract_features(m, ds, use="projection")
    for bag in ds.bags():
        f, p, _ = forward(m, bag.instances)
        np.testing.assert_array_equal(feats[bag.bag_id], f)
        np.testing.assert_array_equal(proj[bag.bag_id], p)
        assert feats[bag.bag_id].shape == (bag.n_instances, 64)
    with pytest.raises(ValueError):
        extract_features(m, ds, use="logits")


def test_checkpoint_round_trip(tmp_path, rng):
    m = EncoderModel.init(8, rng=rng)
    path = tmp_path / "ckpt.json"
    save_checkpoint(m, path, {"loss_kind": "simclr"})
    back, meta = load_checkpoint(path)
    assert meta == {"loss_kind": "simclr"}
    for a, b in zip(m.params(), back.params()):
        np.testing.assert_array_equal(a, b)
    save_checkpoint(back, tmp_path / "again.json", {"loss_kind": "simclr"})
    assert path.read_bytes() == (tmp_path / "again.json").read_bytes()
