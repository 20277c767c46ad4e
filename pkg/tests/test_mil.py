import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from weaksupcon.errors import EmptyBag, SingleClass, SingleClassTraining
from weaksupcon.mil import (AttentionMILModel, MetricsReport, MILTrainConfig, accuracy,
                            attention_pool, auc, balanced_accuracy, evaluate, evaluate_scores,
                            mil_predict, mil_train, pseudo_bag_split, sigmoid)


def random_model(rng, k=4, h=3):
    return AttentionMILModel(rng.standard_normal((h, k)), rng.standard_normal(h),
                             rng.standard_normal(k), float(rng.standard_normal()))


def naive_pool(f, model):
    scores = [sum(model.w[a] * math.tanh(sum(model.V[a, j] * row[j] for j in range(len(row))))
                  for a in range(len(model.w))) for row in f]
    top = max(scores)
    e = [math.exp(s - top) for s in scores]
    weights = [x / sum(e) for x in e]
    emb = [sum(weights[i] * f[i][j] for i in range(len(f))) for j in range(len(f[0]))]
    return np.array(emb), np.array(weights)


def brute_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return total / (len(pos) * len(neg))


class TestPseudoBags:
    def test_thirty_into_five(self, rng):
        parts = pseudo_bag_split(np.arange(30.0)[:, None], 5, rng)
        assert [len(p) for p in parts] == [6] * 5

    def test_m_one_is_permutation(self, rng):
        x = np.arange(12.0).reshape(6, 2)
        (only,) = pseudo_bag_split(x, 1, rng)
        assert sorted(map(tuple, only)) == sorted(map(tuple, x))

    def test_fewer_instances_than_m(self, rng):
        parts = pseudo_bag_split(np.arange(3.0)[:, None], 5, rng)
        assert [len(p) for p in parts] == [1, 1, 1]

    @given(st.integers(1, 200), st.integers(1, 40), st.integers(0, 2**32 - 1))
    def test_partition_property(self, n, m, seed):
        x = np.arange(n, dtype=np.float64)[:, None]
        parts = pseudo_bag_split(x, m, np.random.default_rng(seed))
        sizes = [len(p) for p in parts]
        assert len(parts) == max(1, min(m, n))
        assert max(sizes) - min(sizes) <= 1 and min(sizes) >= 1
        np.testing.assert_array_equal(np.sort(np.concatenate(parts)[:, 0]), np.arange(n))


class TestAttentionPool:
    def test_single_instance(self, rng):
        m = random_model(rng)
        f = rng.standard_normal((1, 4))
        emb, a = attention_pool(f, m)
        np.testing.assert_array_equal(a, [1.0])
        np.testing.assert_allclose(emb, f[0], atol=1e-15)

    def test_identical_instances_uniform(self, rng):
        m = random_model(rng)
        f = np.tile(rng.standard_normal(4), (7, 1))
        _, a = attention_pool(f, m)
        np.testing.assert_allclose(a, 1 / 7, atol=1e-15)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_naive_oracle(self, seed):
        rng = np.random.default_rng(seed)
        m = random_model(rng)
        f = rng.standard_normal((5, 4))
        emb, a = attention_pool(f, m)
        e_ref, a_ref = naive_pool(f.tolist(), m)
        np.testing.assert_allclose(a, a_ref, atol=1e-12)
        np.testing.assert_allclose(emb, e_ref, atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_duplication_invariance(self, seed):
        rng = np.random.default_rng(10 + seed)
        m = random_model(rng)
        f = rng.standard_normal((6, 4))
        emb, a = attention_pool(f, m)
        emb2, a2 = attention_pool(np.concatenate([f, f]), m)
        np.testing.assert_allclose(emb2, emb, atol=1e-9)
        np.testing.assert_allclose(a2[:6] * 2, a, atol=1e-12)

    @given(st.integers(1, 30), st.integers(0, 2**32 - 1))
    def test_weights_on_simplex(self, n, seed):
        rng = np.random.default_rng(seed)
        _, a = attention_pool(rng.standard_normal((n, 4)) * 3, random_model(rng))
        assert abs(a.sum() - 1.0) <= 1e-9
        assert np.all((a > 0) & (a <= 1))

    def test_empty_bag(self, rng):
        with pytest.raises(EmptyBag):
            attention_pool(np.zeros((0, 4)), random_model(rng))


class TestPredict:
    def test_zero_classifier(self, rng):
        m = random_model(rng)
        m.c[:] = 0.0
        m.b = 0.0
        assert mil_predict(m, rng.standard_normal((5, 4))) == 0.5

    def test_bias_is_monotone(self, rng):
        m = random_model(rng)
        f = rng.standard_normal((5, 4))
        lo = mil_predict(m, f)
        m.b += 0.5
        assert mil_predict(m, f) > lo

    def test_hand_computed_two_instance_bag(self):
        m = AttentionMILModel(np.array([[1.0, 0.0]]), np.array([1.0]), np.array([2.0, -1.0]), 0.5)
        f = np.array([[1.0, 1.0], [0.0, 2.0]])
        s1, s2 = math.tanh(1.0), math.tanh(0.0)
        a1 = math.exp(s1) / (math.exp(s1) + math.exp(s2))
        pooled = a1 * f[0] + (1 - a1) * f[1]
        expected = 1 / (1 + math.exp(-(2.0 * pooled[0] - pooled[1] + 0.5)))
        assert mil_predict(m, f) == pytest.approx(expected, abs=1e-14)

    def test_sigmoid_extremes(self):
        assert sigmoid(0.0) == 0.5
        assert 0.0 <= sigmoid(-800.0) < 1e-300
        assert sigmoid(800.0) == 1.0


def _separable_bags(rng, n_bags=20, k=6):
    feats, labels = [], []
    for j in range(n_bags):
        y = j % 2
        f = rng.standard_normal((int(rng.integers(4, 9)), k))
        if y:
            f[: 2] += 4.0 * np.eye(k)[0]
        feats.append(f)
        labels.append(y)
    return feats, labels


class TestTraining:
    def test_separable_reaches_perfect_accuracy(self):
        feats, labels = _separable_bags(np.random.default_rng(0))
        model, hist = mil_train(feats, labels, MILTrainConfig(n_pseudo_bags=1, epochs=200,
                                                              learning_rate=1e-2))
        assert evaluate(model, feats, labels)["accuracy"] == 1.0
        assert hist[-1] < hist[0]

    def test_zero_learning_rate_keeps_init(self):
        feats, labels = _separable_bags(np.random.default_rng(1))
        cfg = MILTrainConfig(epochs=3, learning_rate=0.0, seed=4)
        trained, _ = mil_train(feats, labels, cfg)
        untouched, _ = mil_train(feats, labels, MILTrainConfig(epochs=0, seed=4))
        np.testing.assert_array_equal(trained.V, untouched.V)
        np.testing.assert_array_equal(trained.c, untouched.c)
        assert trained.b == untouched.b == 0.0

    def test_deterministic(self):
        feats, labels = _separable_bags(np.random.default_rng(2))
        cfg = MILTrainConfig(epochs=5, seed=11)
        (a, ha), (b, hb) = mil_train(feats, labels, cfg), mil_train(feats, labels, cfg)
        assert ha == hb
        np.testing.assert_array_equal(a.V, b.V)
        assert a.b == b.b

    def test_single_class_rejected(self, rng):
        with pytest.raises(SingleClassTraining):
            mil_train([rng.standard_normal((3, 2))] * 2, [1, 1], MILTrainConfig())

    def test_standardization_stored_on_model(self):
        feats, labels = _separable_bags(np.random.default_rng(3))
        feats = [f * 50 + 7 for f in feats]
        model, _ = mil_train(feats, labels, MILTrainConfig(epochs=1))
        z = model.prepare(np.concatenate(feats))
        np.testing.assert_allclose(z.mean(axis=0), 0.0, atol=1e-9)
        np.testing.assert_allclose(z.std(axis=0), 1.0, atol=1e-9)


class TestAUC:
    def test_perfect(self):
        assert auc([0.9, 0.1], [1, 0]) == 1.0

    def test_all_ties(self):
        assert auc([0.3] * 6, [0, 1, 0, 1, 1, 0]) == 0.5

    def test_three_of_four(self):
        assert auc([0.2, 0.8, 0.4, 0.6], [0, 1, 1, 0]) == 0.75

    def test_single_class(self):
        with pytest.raises(SingleClass):
            auc([0.1, 0.2], [1, 1])

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(120):
            n = int(rng.integers(2, 40))
            labels = rng.integers(0, 2, size=n)
            labels[:2] = [0, 1]
            scores = rng.integers(0, 6, size=n) / 5.0 if rng.random() < 0.5 else rng.random(n)
            assert auc(scores, labels) == brute_auc(scores.tolist(), labels.tolist())

    @given(st.lists(st.integers(-50, 50), min_size=4, max_size=30), st.integers(0, 2**32 - 1))
    def test_monotone_invariance(self, scores, seed):
        # integer scores keep the cubic transform exact, so ties survive it
        labels = np.random.default_rng(seed).integers(0, 2, size=len(scores))
        labels[:2] = [0, 1]
        s = np.array(scores, dtype=np.float64)
        assert auc(2 * s**3 + s - 7, labels) == auc(s, labels)

    def test_null_distribution(self):
        rng = np.random.default_rng(5)
        labels = np.repeat([0, 1], 500)
        assert abs(auc(rng.random(1000), labels) - 0.5) <= 0.15


class TestAccuracy:
    def test_perfect(self):
        assert accuracy([1, 0, 1], [1, 0, 1]) == balanced_accuracy([1, 0, 1], [1, 0, 1]) == 1.0

    def test_all_positive_predictions(self):
        assert accuracy([1, 1, 1, 1], [1, 1, 1, 0]) == 0.75
        assert balanced_accuracy([1, 1, 1, 1], [1, 1, 1, 0]) == 0.5

    def test_inverted(self):
        assert balanced_accuracy([0, 1, 1], [1, 0, 0]) == 0.0

    def test_balanced_single_class(self):
        with pytest.raises(SingleClass):
            balanced_accuracy([1, 0], [1, 1])

    def test_threshold_is_inclusive(self):
        out = evaluate_scores([0.5, 0.49], [1, 0])
        assert out == {"balanced_accuracy": 1.0, "accuracy": 1.0, "auc": 1.0}


class TestReport:
    def test_aggregation(self):
        rep = MetricsReport([{"balanced_accuracy": v, "accuracy": v, "auc": v} for v in (0.8, 0.9, 1.0)])
        assert rep.n_runs == 3
        assert rep.auc == pytest.approx(0.9, abs=1e-12)
        assert rep.std("auc") == pytest.approx(math.sqrt(2 / 300), abs=1e-12)
        assert round(rep.std("auc"), 4) == 0.0816
        assert rep.summary()["accuracy"]["mean"] == pytest.approx(0.9)

    def test_oracle_scores(self):
        assert evaluate_scores([1.0, 0.0, 1.0], [1, 0, 1]) == {
            "balanced_accuracy": 1.0, "accuracy": 1.0, "auc": 1.0}
