import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from daalml import gradcheck, losses
from daalml.losses import CenterSet, ClassifierParams, MarginSpec
from daalml.numerics import DegenerateVectorError, Rng

COS_HALF = 0.877582561890372716  # cos(0.5), mpmath at 30 digits


def _instance(seed, N=4, d=5, C=3):
    rng = Rng(seed)
    X = rng.normal((N, d))
    W = rng.normal((d, C))
    b = rng.normal(C)
    y = np.arange(N) % C
    return X, W, b, y


def _nll_loop(logits, y):
    """Cross-entropy by explicit per-row log-sum-exp (math module only)."""
    total = 0.0
    for row, t in zip(logits.tolist(), y.tolist()):
        m = max(row)
        lse = m + math.log(sum(math.exp(v - m) for v in row))
        total += lse - row[t]
    return total / len(y)


def _cosines_loop(X, W):
    out = np.zeros((X.shape[0], W.shape[1]))
    for i in range(X.shape[0]):
        for j in range(W.shape[1]):
            x, w = X[i], W[:, j]
            out[i, j] = sum(a * b for a, b in zip(x, w)) / (math.sqrt(sum(a * a for a in x)) * math.sqrt(sum(b * b for b in w)))
    return out


class TestSoftmax:
    def test_uniform_logits(self):
        X = np.ones((3, 2))
        p = ClassifierParams(np.zeros((2, 2)), np.zeros(2))
        assert losses.softmax_loss(p, X, [0, 1, 0]).value == pytest.approx(math.log(2), abs=1e-15)

    def test_saturated(self):
        X = 100 * np.eye(3)
        p = ClassifierParams(np.eye(3), np.zeros(3))
        assert losses.softmax_loss(p, X, [0, 1, 2]).value < 1e-6

    def test_matches_loop_oracle(self):
        X, W, b, y = _instance(11)
        r = losses.softmax_loss(ClassifierParams(W, b), X, y)
        assert abs(r.value - _nll_loop(X @ W + b, y)) < 1e-10

    def test_bias_shift_invariance(self):
        X, W, b, y = _instance(12)
        base = losses.softmax_loss(ClassifierParams(W, b), X, y).value
        shifted = losses.softmax_loss(ClassifierParams(W, b + 3.7), X, y).value
        assert abs(base - shifted) <= 1e-12

    def test_empty_batch(self):
        with pytest.raises(losses.EmptyInputError):
            losses.softmax_loss(ClassifierParams(np.zeros((2, 2)), np.zeros(2)), np.zeros((0, 2)), [])

    def test_label_range(self):
        with pytest.raises(losses.LabelError):
            losses.softmax_loss(ClassifierParams(np.zeros((2, 2)), np.zeros(2)), np.ones((1, 2)), [2])

    def test_gradient_shapes(self):
        X, W, b, y = _instance(13)
        r = losses.softmax_loss(ClassifierParams(W, b), X, y)
        assert r.grad_embeddings.shape == X.shape
        assert r.grad_params["W"].shape == W.shape
        assert r.grad_params["b"].shape == b.shape


class TestNormalizedSoftmax:
    def test_saturates_when_aligned(self):
        W = np.eye(3)
        X = np.eye(3) * 2.0
        p = ClassifierParams(W, np.zeros(3))
        assert losses.normalized_softmax_loss(p, X, [0, 1, 2], 100.0).value < 1e-30

    def test_identical_columns_give_log_c(self):
        rng = Rng(4)
        col = rng.normal(5)
        W = np.tile(col[:, None], (1, 4))
        X = rng.normal((6, 5))
        r = losses.normalized_softmax_loss(ClassifierParams(W, np.zeros(4)), X, np.arange(6) % 4, 16.0)
        assert r.value == pytest.approx(math.log(4), abs=1e-12)

    def test_matches_loop_oracle(self):
        X, W, b, y = _instance(21, N=5, d=6, C=4)
        r = losses.normalized_softmax_loss(ClassifierParams(W, b), X, y, 16.0)
        assert abs(r.value - _nll_loop(16.0 * _cosines_loop(X, W), y)) < 1e-10

    def test_zero_norm_rejected(self):
        X, W, b, y = _instance(22)
        X[1] = 0
        with pytest.raises(DegenerateVectorError):
            losses.normalized_softmax_loss(ClassifierParams(W, b), X, y, 4.0)
        X, W, b, y = _instance(22)
        W[:, 0] = 0
        with pytest.raises(DegenerateVectorError):
            losses.normalized_softmax_loss(ClassifierParams(W, b), X, y, 4.0)


class TestMarginFunction:
    def test_additive_cosine_at_zero(self):
        assert losses.margin_function(MarginSpec("additive-cosine", 0.35), 0.0) == pytest.approx(0.65, abs=1e-15)

    @pytest.mark.parametrize("theta", [0.0, 0.3, 1.0, 2.5, math.pi])
    def test_multiplicative_identity(self, theta):
        assert losses.margin_function(MarginSpec("multiplicative-angular", 1), theta) == pytest.approx(math.cos(theta), abs=1e-15)

    def test_additive_angular_at_zero(self):
        assert abs(losses.margin_function(MarginSpec("additive-angular", 0.5), 0.0) - COS_HALF) < 1e-15

    def test_domain(self):
        with pytest.raises(ValueError):
            losses.margin_function(MarginSpec("additive-cosine", 0.1), -0.1)
        with pytest.raises(ValueError):
            losses.margin_function(MarginSpec("additive-cosine", 0.1), 3.2)

    def test_spec_validation(self):
        with pytest.raises(losses.ConfigurationError):
            MarginSpec("multiplicative-angular", 1.5)
        with pytest.raises(losses.ConfigurationError):
            MarginSpec("additive-angular", -0.1)
        with pytest.raises(losses.ConfigurationError):
            MarginSpec("additive-cosine", 0.1, s=0)

    @pytest.mark.parametrize("spec", [
        MarginSpec("multiplicative-angular", 1), MarginSpec("multiplicative-angular", 3),
        MarginSpec("additive-cosine", 0.35), MarginSpec("additive-angular", 0.5),
    ])
    def test_cosine_form_agrees_with_angle_form(self, spec):
        for theta in np.linspace(0, math.pi, 41):
            g, _ = losses.margin_target(spec, np.array([math.cos(theta)]))
            assert g[0] == pytest.approx(losses.margin_function(spec, theta), abs=1e-12)


class TestMarginSoftmax:
    @pytest.mark.parametrize("spec", [
        MarginSpec("multiplicative-angular", 1, 8.0),
        MarginSpec("additive-cosine", 0.0, 8.0),
        MarginSpec("additive-angular", 0.0, 8.0),
    ])
    def test_identity_margin_reduces(self, spec):
        X, W, b, y = _instance(31)
        p = ClassifierParams(W, b)
        a = losses.margin_softmax_loss(p, X, y, spec)
        n = losses.normalized_softmax_loss(p, X, y, 8.0)
        assert abs(a.value - n.value) <= 1e-12
        np.testing.assert_allclose(a.grad_embeddings, n.grad_embeddings, atol=1e-12)

    def test_margin_increases_loss(self):
        X, W, b, y = _instance(32)
        p = ClassifierParams(W, b)
        lo = losses.margin_softmax_loss(p, X, y, MarginSpec("additive-cosine", 0.0, 8.0)).value
        hi = losses.margin_softmax_loss(p, X, y, MarginSpec("additive-cosine", 0.2, 8.0)).value
        assert hi >= lo

    def test_arcface_matches_direct(self):
        X, W, b, y = _instance(33)
        U = _cosines_loop(X, W)
        logits = 8.0 * U
        for i, t in enumerate(y):
            logits[i, t] = 8.0 * math.cos(math.acos(U[i, t]) + 0.3)
        r = losses.margin_softmax_loss(ClassifierParams(W, b), X, y, MarginSpec("additive-angular", 0.3, 8.0))
        assert abs(r.value - _nll_loop(logits, y)) < 1e-10


class TestTriplet:
    def test_examples(self):
        assert losses.triplet_loss([0, 0], [0, 0], [2, 0], 1).value == 0
        assert losses.triplet_loss([0, 0], [0, 0], [0.5, 0], 1).value == pytest.approx(0.75)
        assert losses.triplet_loss([0, 0], [1, 0], [1, 0], 0.5).value == pytest.approx(0.5)

    def test_batch_sums(self):
        a = np.zeros((2, 2))
        r = losses.triplet_loss(a, a, np.array([[0.5, 0], [2, 0]]), 1)
        assert r.value == pytest.approx(0.75)
        assert r.grad_embeddings.shape == (3, 2, 2)

    def test_kink_gradient_zero(self):
        r = losses.triplet_loss([0, 0], [1, 0], [1, 0], 0.0)
        assert r.value == 0
        assert not np.any(r.grad_embeddings)

    def test_dimension_mismatch(self):
        with pytest.raises(losses.DimensionError):
            losses.triplet_loss([0, 0], [0, 0, 0], [1, 0], 1)

    @settings(max_examples=200)
    @given(st.integers(0, 2**32))
    def test_non_negative(self, seed):
        rng = Rng(seed)
        a, p, n = rng.normal((3, 3), 2.0)
        assert losses.triplet_loss(a, p, n, float(rng.uniform(1)[0])).value >= 0


class TestCenter:
    def test_at_centers(self):
        c = np.array([[0.0, 1.0], [2.0, -1.0]])
        r = losses.center_loss(c[[0, 1, 1]], [0, 1, 1], CenterSet(c))
        assert r.value == 0
        assert np.all(r.grad_embeddings == 0)

    def test_distance_two(self):
        r = losses.center_loss([[2.0, 0.0]], [0], CenterSet([[0.0, 0.0]]))
        assert r.value == 2.0

    def test_matches_sum(self):
        rng = Rng(41)
        X = rng.normal((3, 4))
        c = rng.normal((2, 4))
        y = np.array([0, 1, 0])
        expected = 0.5 * sum(float(np.sum((X[i] - c[y[i]]) ** 2)) for i in range(3))
        assert abs(losses.center_loss(X, y, CenterSet(c)).value - expected) < 1e-12

    def test_label_out_of_range(self):
        with pytest.raises(losses.LabelError):
            losses.center_loss([[0.0]], [3], CenterSet([[0.0], [1.0]]))

    def test_update_examples(self):
        c = CenterSet(np.zeros((2, 2)), alpha=1.0)
        new = losses.update_centers(c, [[1.0, 3.0], [3.0, 1.0]], [0, 0])
        np.testing.assert_array_equal(new.centers, [[2.0, 2.0], [0.0, 0.0]])
        same = losses.update_centers(CenterSet(np.ones((2, 2)), alpha=0.0), [[5.0, 5.0]], [1])
        np.testing.assert_array_equal(same.centers, np.ones((2, 2)))
        half = losses.update_centers(CenterSet(np.zeros((1, 2)), alpha=0.5), [[2.0, 2.0]], [0])
        np.testing.assert_array_equal(half.centers, [[1.0, 1.0]])


class TestTripletCenter:
    def test_examples(self):
        # own center at the sample; other center at D = 0.5*|f-c|^2 = 5
        c = np.array([[0.0, 0.0], [math.sqrt(10), 0.0]])
        assert losses.triplet_center_loss([[0.0, 0.0]], [0], CenterSet(c), 1.0).value == 0
        c = np.array([[2.0, 0.0], [-2.0, 0.0]])  # both at D = 2
        assert losses.triplet_center_loss([[0.0, 0.0]], [0], CenterSet(c), 0.5).value == pytest.approx(0.5)

    def test_needs_two_classes(self):
        with pytest.raises(losses.ConfigurationError):
            losses.triplet_center_loss([[0.0]], [0], CenterSet([[0.0]]), 1.0)

    def test_matches_exhaustive_min(self):
        rng = Rng(51)
        X = rng.normal((4, 3))
        c = rng.normal((3, 3))
        y = np.array([0, 1, 2, 1])
        m = 0.7
        expected = 0.0
        for i in range(4):
            D = [0.5 * float(np.sum((X[i] - c[j]) ** 2)) for j in range(3)]
            other = min(D[j] for j in range(3) if j != y[i])
            expected += max(0.0, D[y[i]] + m - other)
        assert abs(losses.triplet_center_loss(X, y, CenterSet(c), m).value - expected) < 1e-12

    @settings(max_examples=200)
    @given(st.integers(0, 2**32))
    def test_non_negative(self, seed):
        rng = Rng(seed)
        X = rng.normal((5, 2), 2.0)
        c = rng.normal((3, 2), 2.0)
        y = rng.integers(3, 5)
        assert losses.triplet_center_loss(X, y, CenterSet(c), 1.0).value >= 0


@pytest.mark.parametrize("name", ["softmax", "normsoftmax", "sphereface", "cosface", "arcface",
                                  "triplet", "center", "triplet-center"])
def test_gradients_match_finite_differences(name):
    r = gradcheck.run_suite(name, seed=7, points=50)
    assert r.points == 50
    assert r.max_rel_error < 1e-4
