import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from daalml import daal, gradcheck, losses
from daalml.daal import (
    DaalConfig,
    IntraMode,
    LineSegmentSet,
    TotalLossWeights,
    VertexTargets,
)
from daalml.numerics import Rng


def seg_set(A, B):
    A, B = np.atleast_2d(np.asarray(A, float)), np.atleast_2d(np.asarray(B, float))
    V = B - A
    V = V / np.linalg.norm(V, axis=1, keepdims=True)
    return LineSegmentSet(A, B, V)


def _brute_segment_distance(e, A, B, grid=20001):
    ts = np.linspace(0.0, 1.0, grid)
    pts = A[None, :] + ts[:, None] * (B - A)[None, :]
    return float(np.min(np.linalg.norm(pts - e, axis=1)))


class TestInit:
    def test_length_and_direction(self):
        s = daal.init_segments(5, 4, 2.5, Rng(1))
        np.testing.assert_allclose(np.linalg.norm(s.B - s.A, axis=1), 2.5, atol=1e-9)
        np.testing.assert_allclose(np.linalg.norm(s.v_hat, axis=1), 1.0, atol=1e-9)

    def test_deterministic(self):
        a, b = daal.init_segments(3, 2, 1.0, Rng(9)), daal.init_segments(3, 2, 1.0, Rng(9))
        assert a.A.tobytes() == b.A.tobytes() and a.B.tobytes() == b.B.tobytes()

    def test_one_dimensional(self):
        s = daal.init_segments(20, 1, 1.0, Rng(2))
        assert set(np.abs(s.v_hat[:, 0]).tolist()) == {1.0}

    def test_bad_args(self):
        with pytest.raises(losses.ConfigurationError):
            daal.init_segments(0, 2, 1.0, Rng(0))
        with pytest.raises(losses.ConfigurationError):
            daal.init_segments(2, 2, 0.0, Rng(0))


class TestStats:
    def test_examples(self):
        E = np.array([[5.0, 5.0], [0.0, 0.0], [2.0, 0.0], [0.0, 0.0], [0.0, 4.0]])
        y = np.array([0, 1, 1, 2, 2])
        s = daal.batch_class_stats(E, y, 4)
        np.testing.assert_array_equal(s.centroids[0], [5, 5])
        assert s.sigma_sq[0] == 0
        np.testing.assert_array_equal(s.centroids[1], [1, 0])
        assert s.sigma_sq[1] == 1
        np.testing.assert_array_equal(s.centroids[2], [0, 2])
        assert s.sigma_sq[2] == 4
        assert s.counts.tolist() == [1, 2, 2, 0]
        assert s.present.tolist() == [True, True, True, False]


class TestTargets:
    def test_zero_variance_collapses(self):
        segs = seg_set([[0, 0]], [[1, 0]])
        stats = daal.BatchClassStats(np.array([[3.0, 4.0]]), np.array([0.0]), np.array([1]))
        t = daal.target_vertices(stats, segs, 5.0)
        np.testing.assert_array_equal(t.A, [[3, 4]])
        np.testing.assert_array_equal(t.B, [[3, 4]])

    def test_direct_substitution(self):
        segs = seg_set([[0, 0]], [[1, 0]])
        stats = daal.BatchClassStats(np.zeros((1, 2)), np.array([0.04]), np.array([3]))
        t = daal.target_vertices(stats, segs, 5.0)
        np.testing.assert_allclose(t.A, [[-1, 0]], atol=1e-15)
        np.testing.assert_allclose(t.B, [[1, 0]], atol=1e-15)

    def test_length_linear_in_eta(self):
        segs = daal.init_segments(3, 4, 1.0, Rng(3))
        stats = daal.BatchClassStats(Rng(4).normal((3, 4)), np.array([0.5, 2.0, 0.1]), np.array([2, 2, 2]))
        l1 = np.linalg.norm(daal.target_vertices(stats, segs, 2.0).B - daal.target_vertices(stats, segs, 2.0).A, axis=1)
        l2 = np.linalg.norm(daal.target_vertices(stats, segs, 4.0).B - daal.target_vertices(stats, segs, 4.0).A, axis=1)
        np.testing.assert_allclose(l2, 2 * l1, rtol=1e-14)

    def test_degenerate_direction_falls_back(self):
        segs = LineSegmentSet([[1.0, 1.0]], [[1.0, 1.0]], [[0.0, 1.0]])
        stats = daal.BatchClassStats(np.zeros((1, 2)), np.array([1.0]), np.array([4]))
        t = daal.target_vertices(stats, segs, 1.0)
        np.testing.assert_allclose(t.A, [[0, -1]])
        np.testing.assert_allclose(t.B, [[0, 1]])

    def test_absent_classes_masked(self):
        segs = daal.init_segments(3, 2, 1.0, Rng(0))
        stats = daal.batch_class_stats(np.ones((2, 2)), [0, 2], 3)
        assert daal.target_vertices(stats, segs, 5.0).mask.tolist() == [True, False, True]


class TestPointSegmentDistance:
    def test_examples(self):
        assert daal.point_segment_distance([0.5, 1], [0, 0], [1, 0]) == (1.0, 0.5)
        assert daal.point_segment_distance([2, 0], [0, 0], [1, 0]) == (1.0, 1.0)
        d, t = daal.point_segment_distance([-1, 1], [0, 0], [1, 0])
        assert d == pytest.approx(math.sqrt(2), abs=1e-15) and t == 0.0

    def test_degenerate_segment(self):
        assert daal.point_segment_distance([3, 4], [0, 0], [0, 0]) == (5.0, 0.0)

    def test_dimension_mismatch(self):
        with pytest.raises(losses.DimensionError):
            daal.point_segment_distance([0, 0, 0], [0, 0], [1, 0])

    @settings(max_examples=300)
    @given(st.integers(0, 2**32), st.integers(1, 5))
    def test_properties(self, seed, d):
        rng = Rng(seed)
        e, A, B = rng.normal((3, d), 2.0)
        dist, t = daal.point_segment_distance(e, A, B)
        dist2, t2 = daal.point_segment_distance(e, B, A)
        assert abs(dist - dist2) <= 1e-12
        assert abs(t - (1 - t2)) <= 1e-9
        assert dist <= min(np.linalg.norm(e - A), np.linalg.norm(e - B)) + 1e-12
        s = float(rng.uniform(1)[0])
        on, _ = daal.point_segment_distance(A + s * (B - A), A, B)
        assert on <= 1e-9

    def test_matches_dense_sampling(self):
        rng = Rng(77)
        for _ in range(20):
            e, A, B = rng.normal((3, 3))
            d, _ = daal.point_segment_distance(e, A, B)
            assert d == pytest.approx(_brute_segment_distance(e, A, B), abs=1e-4)
            assert d <= _brute_segment_distance(e, A, B) + 1e-12

    def test_vectorized_agrees_with_scalar(self):
        rng = Rng(8)
        E = rng.normal((7, 3))
        segs = daal.init_segments(4, 3, 1.5, rng)
        dist, t, _ = daal.segment_projection(E, segs.A, segs.B)
        for i in range(7):
            for k in range(4):
                ds, ts = daal.point_segment_distance(E[i], segs.A[k], segs.B[k])
                assert dist[i, k] == pytest.approx(ds, abs=1e-12)
                assert t[i, k] == pytest.approx(ts, abs=1e-12)


class TestIntra:
    def test_at_vertex_a(self):
        segs = daal.init_segments(3, 2, 1.0, Rng(1))
        y = np.array([0, 1, 2, 1])
        for mode in IntraMode:
            assert daal.intra_loss(segs.A[y], y, segs, mode).value == 0

    def test_midpoint(self):
        segs = seg_set([[0, 0]], [[2, 0]])
        E = np.array([[1.0, 0.0]])
        assert daal.intra_loss(E, [0], segs, "nearest-vertex").value == 1.0
        assert daal.intra_loss(E, [0], segs, "segment").value == 0.0

    def test_vertex_tie_goes_to_a(self):
        segs = seg_set([[0, 0]], [[2, 0]])
        g = daal.intra_loss(np.array([[1.0, 0.0]]), [0], segs, "nearest-vertex").grad_embeddings
        np.testing.assert_array_equal(g, [[2.0, 0.0]])  # 2 * (e - A) / N

    @settings(max_examples=100)
    @given(st.integers(0, 2**32))
    def test_segment_mode_bounded_by_vertex_mode(self, seed):
        rng = Rng(seed)
        segs = daal.init_segments(3, 3, 2.0, rng)
        y = rng.integers(3, 6)
        E = rng.normal((6, 3), 2.0)
        assert daal.intra_loss(E, y, segs, "segment").value <= daal.intra_loss(E, y, segs, "nearest-vertex").value + 1e-12

    def test_label_out_of_range(self):
        segs = daal.init_segments(2, 2, 1.0, Rng(1))
        with pytest.raises(losses.LabelError):
            daal.intra_loss(np.zeros((1, 2)), [2], segs)


class TestInter:
    def test_far_from_all(self):
        segs = seg_set([[0, 0], [10, 0]], [[1, 0], [11, 0]])
        E = np.array([[0.5, 0.0], [10.5, 0.0]])
        r = daal.inter_loss(E, [0, 1], segs, 1.5)
        assert r.value == 0 and not np.any(r.grad_embeddings)

    def test_on_wrong_segment(self):
        segs = seg_set([[0, 0], [10, 0]], [[1, 0], [11, 0]])
        r = daal.inter_loss(np.array([[10.5, 0.0]]), [0], segs, 1.5)
        assert r.value == 1.5
        assert not np.any(r.grad_embeddings)

    def test_needs_two_classes(self):
        with pytest.raises(losses.ConfigurationError):
            daal.inter_loss(np.zeros((1, 2)), [0], seg_set([[0, 0]], [[1, 0]]), 1.5)

    def test_matches_exhaustive(self):
        rng = Rng(99)
        segs = daal.init_segments(3, 2, 1.0, rng)
        E = rng.normal((5, 2))
        y = np.array([0, 1, 2, 0, 1])
        expected = 0.0
        for i in range(5):
            dmin = min(_seg_dist_closed_form(E[i], segs.A[j], segs.B[j]) for j in range(3) if j != y[i])
            expected += max(0.0, 1.5 - dmin)
        assert abs(daal.inter_loss(E, y, segs, 1.5).value - expected / 5) < 1e-12


def _seg_dist_closed_form(e, A, B):
    """Distance via explicit case analysis on the projection (no clamping)."""
    ab = B - A
    s = float(np.dot(e - A, ab) / np.dot(ab, ab))
    if s <= 0:
        return float(np.linalg.norm(e - A))
    if s >= 1:
        return float(np.linalg.norm(e - B))
    foot = A + s * ab
    return float(np.linalg.norm(e - foot))


class TestDaalLoss:
    def test_lambda_zero_is_intra(self):
        rng = Rng(5)
        segs = daal.init_segments(3, 2, 1.0, rng)
        E, y = rng.normal((6, 2)), np.arange(6) % 3
        cfg = DaalConfig(lambda_inter=0.0)
        assert daal.daal_loss(E, y, segs, cfg).value == daal.intra_loss(E, y, segs, cfg.intra_mode).value

    def test_zero_on_own_segments_far_from_others(self):
        segs = seg_set([[0, 0], [10, 0]], [[1, 0], [11, 0]])
        E = np.array([[0.2, 0.0], [10.7, 0.0]])
        assert daal.daal_loss(E, [0, 1], segs, DaalConfig()).value == 0

    def test_component_sum(self):
        rng = Rng(6)
        segs = daal.init_segments(4, 3, 1.0, rng)
        E, y = rng.normal((8, 3)), np.arange(8) % 4
        cfg = DaalConfig(lambda_inter=0.7)
        expected = daal.intra_loss(E, y, segs).value + 0.7 * daal.inter_loss(E, y, segs, 1.5).value
        assert abs(daal.daal_loss(E, y, segs, cfg).value - expected) < 1e-12

    def test_deterministic_bits(self):
        rng = Rng(7)
        segs = daal.init_segments(4, 3, 1.0, rng)
        E, y = rng.normal((8, 3)), np.arange(8) % 4
        a, b = daal.daal_loss(E, y, segs, DaalConfig()), daal.daal_loss(E, y, segs, DaalConfig())
        assert a.value == b.value and a.grad_embeddings.tobytes() == b.grad_embeddings.tobytes()

    def test_config_validation(self):
        with pytest.raises(losses.ConfigurationError):
            DaalConfig(tau=0.0)
        with pytest.raises(losses.ConfigurationError):
            DaalConfig(eta=-1)
        with pytest.raises(ValueError):
            DaalConfig(intra_mode="sideways")

    @pytest.mark.parametrize("name", ["daal-intra", "daal-intra-vertex", "daal-inter", "daal", "total"])
    def test_gradients(self, name):
        r = gradcheck.run_suite(name, seed=3, points=50)
        assert r.points == 50 and r.max_rel_error < 1e-4


class TestEma:
    def test_tau_one_jumps(self):
        segs = daal.init_segments(2, 2, 1.0, Rng(0))
        tgt = VertexTargets(np.zeros((2, 2)), np.ones((2, 2)))
        out = daal.ema_update(segs, tgt, 1.0)
        np.testing.assert_array_equal(out.A, 0)
        np.testing.assert_array_equal(out.B, 1)

    def test_small_tau(self):
        segs = LineSegmentSet([[0.0]], [[2.0]], [[1.0]])
        out = daal.ema_update(segs, VertexTargets(np.array([[1.0]]), np.array([[2.0]])), 0.001)
        assert out.A[0, 0] == 0.001

    def test_masked_classes_unchanged(self):
        segs = daal.init_segments(2, 2, 1.0, Rng(0))
        tgt = VertexTargets(np.zeros((2, 2)), np.ones((2, 2)), np.array([True, False]))
        out = daal.ema_update(segs, tgt, 0.5)
        np.testing.assert_array_equal(out.A[1], segs.A[1])
        np.testing.assert_array_equal(out.B[1], segs.B[1])

    def test_refreshes_direction(self):
        segs = LineSegmentSet([[0.0, 0.0]], [[1.0, 0.0]], [[1.0, 0.0]])
        out = daal.ema_update(segs, VertexTargets(np.array([[0.0, 0.0]]), np.array([[0.0, 3.0]])), 1.0)
        np.testing.assert_allclose(out.v_hat, [[0.0, 1.0]])

    @pytest.mark.parametrize("tau", [0.001, 0.1, 1.0])
    def test_geometric_contraction(self, tau):
        rng = Rng(12)
        segs = daal.init_segments(3, 4, 1.0, rng)
        tgt = VertexTargets(rng.normal((3, 4)), rng.normal((3, 4)))
        r0 = np.linalg.norm(segs.A - tgt.A)
        for n in range(1, 51):
            segs = daal.ema_update(segs, tgt, tau)
            assert abs(np.linalg.norm(segs.A - tgt.A) - (1 - tau) ** n * r0) <= 1e-12

    def test_not_mutating(self):
        segs = daal.init_segments(2, 2, 1.0, Rng(0))
        before = segs.A.copy()
        daal.ema_update(segs, VertexTargets(np.zeros((2, 2)), np.ones((2, 2))), 0.5)
        np.testing.assert_array_equal(segs.A, before)


class TestTotal:
    def _parts(self):
        rng = Rng(21)
        X, y = rng.normal((6, 3)), np.arange(6) % 3
        p = losses.ClassifierParams(rng.normal((3, 3)), rng.normal(3))
        segs = daal.init_segments(3, 3, 1.0, rng)
        return losses.softmax_loss(p, X, y), daal.daal_loss(X, y, segs, DaalConfig())

    def test_pure_softmax(self):
        sm, dl = self._parts()
        r = daal.total_loss(sm, dl, TotalLossWeights(1.0, 0.0))
        assert r.value == sm.value
        assert r.grad_embeddings.tobytes() == sm.grad_embeddings.tobytes()

    def test_pure_daal(self):
        sm, dl = self._parts()
        assert daal.total_loss(sm, dl, TotalLossWeights(0.0, 1.0)).value == dl.value

    def test_default_weights(self):
        sm, dl = self._parts()
        r = daal.total_loss(sm, dl, TotalLossWeights())
        assert r.value == pytest.approx(sm.value + 0.01 * dl.value, abs=1e-15)

    def test_shape_mismatch(self):
        sm, dl = self._parts()
        bad = losses.LossResult(dl.value, dl.grad_embeddings[:2])
        with pytest.raises(losses.DimensionError):
            daal.total_loss(sm, bad, TotalLossWeights())


class TestSegmentVarianceLaw:
    @settings(max_examples=200)
    @given(st.integers(0, 2**32), st.floats(0.0, 10.0), st.floats(0.0, 25.0))
    def test_length_is_two_eta_sigma(self, seed, eta, sigma_sq):
        segs = daal.init_segments(1, 4, 1.0, Rng(seed))
        stats = daal.BatchClassStats(Rng(seed + 1).normal((1, 4)), np.array([sigma_sq]), np.array([5]))
        t = daal.target_vertices(stats, segs, eta)
        assert abs(np.linalg.norm(t.B - t.A) - 2 * eta * math.sqrt(sigma_sq)) <= 1e-12 * max(1.0, eta * math.sqrt(sigma_sq))


def test_segment_json_roundtrip(tmp_path):
    segs = daal.init_segments(4, 3, 1.0, Rng(31))
    p = tmp_path / "s.json"
    segs.save(p)
    back = LineSegmentSet.load(p)
    assert back.A.tobytes() == segs.A.tobytes()
    assert back.B.tobytes() == segs.B.tobytes()
    assert back.v_hat.tobytes() == segs.v_hat.tobytes()
    doc = json.loads(p.read_text())
    assert set(doc["segments"][0]) == {"class_id", "A", "B", "v_hat"}
