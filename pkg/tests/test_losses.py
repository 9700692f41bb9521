import numpy as np
import pytest

from splinefield import losses
from splinefield.autodiff import Tape, Var
from splinefield.losses import (LossConfig, acceleration_loss, build_knn,
                                knn_indices, recon_loss_l1, total_loss,
                                velocity_loss)


class TestKnn:
    def test_collinear_middle_picks_nearer_endpoint(self):
        pts = np.array([[0.0, 0, 0], [1.0, 0, 0], [3.0, 0, 0]])
        idx = knn_indices(pts, 1)
        assert idx[1, 0] == 0

    def test_full_k_covers_all_other_points(self):
        pts = np.random.default_rng(0).normal(size=(8, 3))
        idx = knn_indices(pts, 7)
        for i in range(8):
            assert set(idx[i]) == set(range(8)) - {i}

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(1)
        pts = rng.normal(size=(200, 3))
        idx = knn_indices(pts, 10)
        d2 = np.sum((pts[:, None] - pts[None]) ** 2, axis=2)
        np.fill_diagonal(d2, np.inf)
        for i in range(200):
            oracle = set(np.argsort(d2[i])[:10])
            assert set(idx[i]) == oracle

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            knn_indices(np.zeros((3, 3)), 3)

    def test_weights_row_normalized(self):
        pts = np.random.default_rng(2).normal(size=(20, 3))
        g = build_knn(pts, 5)
        np.testing.assert_allclose(g.weights.sum(axis=1), np.ones(20), atol=1e-12)
        # nearer neighbors get larger weights
        d = np.linalg.norm(pts[:, None] - pts[g.indices], axis=2)
        for i in range(20):
            order = np.argsort(d[i])
            assert np.all(np.diff(g.weights[i][order]) <= 1e-12)


class TestVelocityLoss:
    def test_identical_velocities_give_zero(self):
        pts = np.random.default_rng(3).normal(size=(10, 3))
        g = build_knn(pts, 3)
        v = np.tile([1.0, -2.0, 0.5], (10, 1))
        assert velocity_loss(v, g) == pytest.approx(0.0, abs=1e-15)

    def test_zero_velocities_give_zero(self):
        pts = np.random.default_rng(4).normal(size=(10, 3))
        g = build_knn(pts, 3)
        assert velocity_loss(np.zeros((10, 3)), g) == 0.0

    def test_two_point_hand_value(self):
        pts = np.array([[0.0, 0, 0], [1.0, 0, 0]])
        g = build_knn(pts, 1)
        v = np.array([[0.0, 0, 0], [1.0, 0, 0]])
        assert velocity_loss(v, g) == pytest.approx(1.0, abs=1e-9)

    def test_var_path_matches_numpy_path(self):
        rng = np.random.default_rng(5)
        pts = rng.normal(size=(12, 3))
        v0 = rng.normal(size=(12, 3))
        g = build_knn(pts, 4)
        plain = velocity_loss(v0, g)
        tape = Tape()
        out = velocity_loss(Var(v0, tape), g)
        assert out.value == pytest.approx(plain, rel=1e-12)

    def test_subgraph_closure_reproduces_rows(self):
        rng = np.random.default_rng(6)
        pts = rng.normal(size=(30, 3))
        v = rng.normal(size=(30, 3))
        g = build_knn(pts, 5)
        rows = np.array([2, 7, 19])
        needed, loc_rows, loc_nbrs, w = g.subgraph_closure(rows)
        batched = losses.velocity_loss_rows(v[needed], loc_rows, loc_nbrs, w)
        direct = np.mean([np.sum(g.weights[i] * np.sum(
            (v[i] - v[g.indices[i]]) ** 2, axis=1)) for i in rows])
        assert batched == pytest.approx(direct, rel=1e-12)


class TestAccelerationLoss:
    def test_zero(self):
        assert acceleration_loss(np.zeros((5, 3))) == 0.0

    def test_single_point_hand_value(self):
        assert acceleration_loss(np.array([[1.0, -2.0, 2.0]])) == pytest.approx(5 / 3)

    def test_positive_homogeneity(self):
        a = np.random.default_rng(7).normal(size=(6, 3))
        assert acceleration_loss(2 * a) == pytest.approx(2 * acceleration_loss(a))

    def test_l2_mode(self):
        a = np.array([[3.0, 4.0, 0.0]])
        assert acceleration_loss(a, mode="l2") == pytest.approx(5.0)
        with pytest.raises(ValueError):
            acceleration_loss(a, mode="huber")

    def test_var_path(self):
        a0 = np.random.default_rng(8).normal(size=(4, 3))
        tape = Tape()
        out = acceleration_loss(Var(a0, tape))
        assert out.value == pytest.approx(acceleration_loss(a0), rel=1e-12)


class TestReconLoss:
    def test_exact_match_is_zero(self):
        x = np.random.default_rng(9).normal(size=(7, 3))
        assert recon_loss_l1(x, x) == 0.0

    def test_uniform_offset(self):
        gt = np.zeros((4, 3))
        pred = gt.copy()
        pred[:, 0] += 0.5
        assert recon_loss_l1(pred, gt) == pytest.approx(0.5 / 3)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(10)
        pred, gt = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
        oracle = np.mean([abs(pred[i, j] - gt[i, j])
                          for i in range(5) for j in range(3)])
        assert recon_loss_l1(pred, gt) == pytest.approx(oracle, rel=1e-14)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            recon_loss_l1(np.zeros((2, 3)), np.zeros((3, 3)))


class TestTotalLoss:
    def test_zero_weights_reduce_to_recon(self):
        assert total_loss(1.7, 5.0, 9.0, LossConfig(alpha=0, beta=0)) == 1.7

    def test_default_weights_hand_value(self):
        assert total_loss(1.0, 2.0, 3.0, LossConfig()) == pytest.approx(3.03)

    def test_linearity_per_term(self):
        cfg = LossConfig(alpha=0.5, beta=0.25)
        base = total_loss(1.0, 2.0, 4.0, cfg)
        assert total_loss(2.0, 2.0, 4.0, cfg) - base == pytest.approx(1.0)
        assert total_loss(1.0, 4.0, 4.0, cfg) - base == pytest.approx(1.0)
        assert total_loss(1.0, 2.0, 8.0, cfg) - base == pytest.approx(1.0)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            LossConfig(alpha=-1.0)
        with pytest.raises(ValueError):
            LossConfig(beta=float("nan"))
