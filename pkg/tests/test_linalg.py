import numpy as np
import pytest

from noisebench.errors import AsymmetricInput, EigFailure, ShapeError, SingularSystem
from noisebench.linalg import pca_fit, pca_project, pca_reconstruct, ridge_fit, symmetric_eig


class TestRidge:
    def test_identity_design(self):
        w = ridge_fit(np.eye(2), np.array([[3.0], [5.0]]), 0.0)
        assert np.allclose(w, [[3], [5]])

    def test_hand_solved_two_by_two(self):
        w = ridge_fit(np.array([[1.0, 0], [1, 1]]), np.array([[1.0], [2]]), 0.0)
        assert np.allclose(w, [[1], [1]])

    def test_penalty_halves_identity_solution(self):
        w = ridge_fit(np.eye(2), np.array([[2.0], [2.0]]), 1.0)
        assert np.allclose(w, [[1], [1]])

    def test_singular_without_penalty(self):
        with pytest.raises(SingularSystem):
            ridge_fit(np.array([[1.0, 1.0], [2.0, 2.0]]), np.ones((2, 1)), 0.0)

    def test_row_mismatch(self):
        with pytest.raises(ShapeError):
            ridge_fit(np.eye(3), np.ones((2, 1)))

    def test_matches_augmented_least_squares(self, rng):
        g = rng.normal(size=(30, 6))
        t = rng.normal(size=(30, 4))
        alpha = 0.7
        # ridge is ordinary least squares on [G; sqrt(alpha) I] against [T; 0]
        aug_g = np.vstack([g, np.sqrt(alpha) * np.eye(6)])
        aug_t = np.vstack([t, np.zeros((6, 4))])
        ref = np.linalg.lstsq(aug_g, aug_t, rcond=None)[0]
        assert np.allclose(ridge_fit(g, t, alpha), ref, rtol=1e-8, atol=1e-10)

    def test_square_direct_solve(self, rng):
        g = rng.normal(size=(5, 5)) + 5 * np.eye(5)
        t = rng.normal(size=(5, 2))
        assert np.allclose(ridge_fit(g, t, 0.0), np.linalg.solve(g, t), rtol=1e-4)


class TestEig:
    def test_diagonal(self):
        vals, vecs = symmetric_eig(np.diag([1.0, 3.0]))
        assert np.allclose(vals, [3, 1])
        assert np.allclose(np.abs(vecs), [[0, 1], [1, 0]])

    def test_hand_two_by_two(self):
        vals, vecs = symmetric_eig(np.array([[2.0, 1.0], [1.0, 2.0]]))
        assert np.allclose(vals, [3, 1])
        assert np.isclose(abs(vecs[:, 0] @ np.array([1, 1]) / np.sqrt(2)), 1)
        assert np.isclose(abs(vecs[:, 1] @ np.array([1, -1]) / np.sqrt(2)), 1)

    def test_identity_reconstructs(self):
        vals, vecs = symmetric_eig(np.eye(3))
        assert np.allclose(vals, 1)
        assert np.allclose(vecs @ np.diag(vals) @ vecs.T, np.eye(3))

    @pytest.mark.parametrize("method", ["jacobi", "lapack"])
    def test_random_matches_reference(self, rng, method):
        a = rng.normal(size=(40, 40))
        m = a + a.T
        vals, vecs = symmetric_eig(m, method=method)
        ref = np.sort(np.linalg.eigvalsh(m))[::-1]
        assert np.allclose(vals, ref, atol=1e-8)
        assert np.allclose(vecs.T @ vecs, np.eye(40), atol=1e-8)
        rec = vecs @ np.diag(vals) @ vecs.T
        assert np.linalg.norm(rec - m) / np.linalg.norm(m) < 1e-3
        assert np.all(np.diff(vals) <= 1e-12)

    def test_asymmetric(self):
        with pytest.raises(AsymmetricInput):
            symmetric_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_nan(self):
        with pytest.raises(EigFailure):
            symmetric_eig(np.array([[np.nan, 0.0], [0.0, 1.0]]))


class TestPca:
    def test_points_on_a_line(self):
        t = np.linspace(-2, 2, 9)
        rows = np.outer(t, [3.0, 4.0]) / 5.0
        m = pca_fit(rows, 1)
        assert np.isclose(abs(m.components[0] @ np.array([0.6, 0.8])), 1)
        assert np.isclose(m.explained_variance_ratio[0], 1.0)

    def test_hand_covariance(self):
        rows = np.array([[1.0, 0], [-1, 0], [0, 0.1], [0, -0.1]])
        m = pca_fit(rows, 2)
        # covariance diag(0.5, 0.005) -> ratios 0.5/0.505 and 0.005/0.505
        assert np.allclose(m.explained_variance_ratio, [0.5 / 0.505, 0.005 / 0.505])

    def test_gram_route_matches_covariance_route(self, rng):
        rows = rng.normal(size=(8, 30))
        m = pca_fit(rows, 5)
        ref = np.linalg.svd(rows - rows.mean(0), full_matrices=False)
        assert np.allclose(np.abs(m.components @ ref[2][:5].T), np.eye(5), atol=1e-6)
        assert np.allclose(m.components @ m.components.T, np.eye(5), atol=1e-4)

    def test_full_rank_round_trip_and_ranges(self, rng):
        rows = rng.normal(size=(20, 4))
        m = pca_fit(rows, 4)
        scores = pca_project(m, rows)
        assert np.allclose(pca_reconstruct(m, scores), rows, atol=1e-8)
        assert np.allclose(m.score_range[:, 0], scores.min(0))
        assert np.allclose(m.score_range[:, 1], scores.max(0))
        assert m.explained_variance_ratio.sum() <= 1 + 1e-6

    def test_zero_scores_give_mean(self, rng):
        rows = rng.normal(size=(10, 3))
        m = pca_fit(rows, 2)
        assert np.allclose(pca_reconstruct(m, np.zeros(2)), rows.mean(0))

    def test_rank_deficient_data(self):
        rows = np.tile([0.2, 0.4, 0.1], (6, 1))
        m = pca_fit(rows, 2)
        assert np.allclose(m.explained_variance_ratio, 0)
        assert np.allclose(m.components @ m.components.T, np.eye(2), atol=1e-6)

    def test_k_out_of_range(self, rng):
        with pytest.raises(ShapeError):
            pca_fit(rng.normal(size=(5, 3)), 4)

    def test_reconstruct_length_mismatch(self, rng):
        m = pca_fit(rng.normal(size=(5, 3)), 2)
        with pytest.raises(ShapeError):
            pca_reconstruct(m, np.zeros(3))
