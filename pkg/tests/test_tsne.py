import numpy as np
import pytest

from lookalike import tsne
from lookalike.errors import DataError, DivergenceError


@pytest.fixture(scope="module")
def three_clusters_10d():
    """Three well-separated Gaussian clusters spanning a planar subspace."""
    rng = np.random.default_rng(1)
    basis = np.linalg.qr(rng.normal(size=(10, 2)))[0]
    points = []
    for center in [(0.0, 0.0), (12.0, 0.0), (0.0, 12.0)]:
        z = rng.normal(0.0, 1.0, (50, 2)) + center
        points.append(z @ basis.T)
    return np.vstack(points) + rng.normal(0.0, 0.001, (150, 10))


@pytest.fixture(scope="module")
def three_cluster_embedding(three_clusters_10d):
    cfg = tsne.TsneConfig(
        perplexity=45.0,
        iterations=1000,
        early_exaggeration_factor=4.0,
        rng_seed=3,
    )
    return tsne.run_tsne(three_clusters_10d, cfg)


class TestConditionalAffinities:
    def test_equilateral_triangle_uniform_rows(self):
        X = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, np.sqrt(3) / 2]])
        P = tsne.conditional_affinities(X, 2.0)
        np.testing.assert_allclose(P[0], [0.0, 0.5, 0.5], atol=1e-12)
        np.testing.assert_allclose(np.diag(P), 0.0)

    def test_rows_hit_target_perplexity(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(80, 5))
        P = tsne.conditional_affinities(X, 12.0)
        perp = tsne.row_perplexities(P)
        assert np.max(np.abs(perp - 12.0)) < 1e-5
        np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)
        assert P.min() >= 0.0

    def test_far_clusters_have_negligible_cross_mass(self):
        rng = np.random.default_rng(3)
        X = np.vstack(
            [rng.normal(0, 1, (20, 2)), rng.normal(0, 1, (20, 2)) + 500.0]
        )
        P, sigmas = tsne.conditional_affinities(X, 5.0, return_sigmas=True)
        cross = P[:20, 20:].sum() + P[20:, :20].sum()
        assert cross < 1e-6
        # Recompute one row's kernel directly from the returned bandwidth.
        i = 0
        d2 = np.sum((X - X[i]) ** 2, axis=1)
        kernel = np.exp(-d2 / (2.0 * sigmas[i] ** 2))
        kernel[i] = 0.0
        kernel /= kernel.sum()
        np.testing.assert_allclose(P[i], kernel, atol=1e-9)
        assert kernel[20:].sum() < 1e-6

    def test_degenerate_row_raises(self):
        X = np.zeros((3, 2))
        with pytest.raises(DataError, match="row 0"):
            tsne.conditional_affinities(X, 2.0)

    def test_perplexity_must_be_below_n(self):
        with pytest.raises(DataError):
            tsne.conditional_affinities(np.eye(4), 4.0)


class TestSymmetrize:
    def test_symmetric_input_equals_input_over_n(self):
        rng = np.random.default_rng(4)
        A = rng.random((6, 6)) + 0.1
        A = (A + A.T) / 2.0
        np.fill_diagonal(A, 0.0)
        P = tsne.symmetrize(A)
        np.testing.assert_allclose(P, A / 6.0, atol=1e-15)

    def test_total_mass_one_and_symmetry(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(30, 3))
        P = tsne.symmetrize(tsne.conditional_affinities(X, 8.0))
        assert abs(P.sum() - 1.0) < 1e-12
        assert np.max(np.abs(P - P.T)) == 0.0
        off_diag = P[~np.eye(30, dtype=bool)]
        assert off_diag.min() >= 1e-12

    def test_floor_applied_to_tiny_entries(self):
        A = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
        P = tsne.symmetrize(A)
        assert P[0, 2] == 1e-12
        assert P[2, 2] == 0.0


class TestKlDivergence:
    def test_zero_when_q_matches_p(self):
        rng = np.random.default_rng(6)
        coords = rng.normal(size=(20, 2))
        P = tsne._student_t_q(coords)
        assert abs(tsne.kl_divergence(P, coords)) < 1e-9

    def test_non_negative(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            X = rng.normal(size=(25, 4))
            coords = rng.normal(size=(25, 2))
            P = tsne.symmetrize(tsne.conditional_affinities(X, 8.0))
            assert tsne.kl_divergence(P, coords) >= 0.0

    def test_translation_invariance(self):
        rng = np.random.default_rng(8)
        X = rng.normal(size=(30, 4))
        coords = rng.normal(size=(30, 2))
        P = tsne.symmetrize(tsne.conditional_affinities(X, 10.0))
        a = tsne.kl_divergence(P, coords)
        b = tsne.kl_divergence(P, coords + np.array([123.0, -45.0]))
        assert abs(a - b) < 1e-9


class TestRunTsne:
    def test_deterministic_bit_identical(self):
        rng = np.random.default_rng(9)
        X = rng.normal(size=(40, 6))
        cfg = tsne.TsneConfig(perplexity=10, iterations=260, rng_seed=17)
        a = tsne.run_tsne(X, cfg)
        b = tsne.run_tsne(X, cfg)
        assert np.array_equal(a.coords, b.coords)
        assert a.meta.final_kl == b.meta.final_kl

    def test_final_kl_below_initial(self, three_cluster_embedding):
        assert three_cluster_embedding.meta.final_kl < (
            three_cluster_embedding.meta.initial_kl
        )

    def test_kl_decreases_across_checkpoints(self, three_clusters_10d):
        P = tsne.symmetrize(tsne.conditional_affinities(three_clusters_10d, 45.0))
        snaps = {}

        def hook(i, Y):
            if i % 250 == 0:
                snaps[i] = Y.copy()

        cfg = tsne.TsneConfig(
            perplexity=45.0,
            iterations=1000,
            early_exaggeration_factor=4.0,
            rng_seed=3,
        )
        tsne.run_tsne(three_clusters_10d, cfg, iterate_hook=hook)
        kls = [tsne.kl_divergence(P, snaps[i]) for i in sorted(snaps)]
        assert kls[-1] < kls[0]
        post = kls[1:]  # exaggeration ends at iteration 250
        assert all(b <= a + 1e-9 for a, b in zip(post, post[1:]))

    def test_cluster_fixture_preserves_neighborhoods(
        self, three_clusters_10d, three_cluster_embedding
    ):
        score = tsne.neighborhood_preservation(
            three_clusters_10d, three_cluster_embedding.coords, 10
        )
        assert score >= 0.90

    def test_calibration_error_on_fixture_rows(self, three_clusters_10d):
        P = tsne.conditional_affinities(three_clusters_10d, 45.0)
        assert np.max(np.abs(tsne.row_perplexities(P) - 45.0)) < 1e-5

    def test_divergence_reports_iteration(self, monkeypatch):
        rng = np.random.default_rng(10)
        X = rng.normal(size=(12, 3))
        cfg = tsne.TsneConfig(
            perplexity=5, iterations=260, rng_seed=0, n_components=3
        )
        monkeypatch.setattr(
            tsne, "_gradient_any", lambda Y, P: np.full_like(Y, np.nan)
        )
        with pytest.raises(DivergenceError, match="iteration 0"):
            tsne.run_tsne(X, cfg)

    def test_needs_ten_points(self):
        with pytest.raises(DataError):
            tsne.run_tsne(np.eye(5), tsne.TsneConfig(perplexity=2))

    def test_config_validation(self):
        with pytest.raises(DataError):
            tsne.TsneConfig(iterations=100)
        with pytest.raises(DataError):
            tsne.TsneConfig(perplexity=-1)


class TestNeighborhoodPreservation:
    def test_identity_embedding_scores_one(self):
        rng = np.random.default_rng(11)
        X = rng.normal(size=(40, 2))
        assert tsne.neighborhood_preservation(X, X.copy(), 5) == 1.0

    def test_random_permutation_matches_chance_level(self):
        rng = np.random.default_rng(12)
        n, k = 60, 6
        X = rng.normal(size=(n, 3))
        scores = []
        for _ in range(100):
            perm = rng.permutation(n)
            scores.append(tsne.neighborhood_preservation(X, X[perm], k))
        expected = k / (n - 1)
        assert abs(np.mean(scores) - expected) < 0.03

    def test_tie_break_by_smaller_index(self):
        # Point 0 is equidistant from 1, 2, 3; k=1 must pick index 1.
        X = np.array([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]])
        score = tsne.neighborhood_preservation(X, X.copy(), 1)
        assert score == 1.0

    def test_k_bounds(self):
        X = np.zeros((5, 2))
        with pytest.raises(DataError):
            tsne.neighborhood_preservation(X, X, 5)


class TestPersistence:
    def test_embedding_round_trip_with_meta(self, tmp_path):
        rng = np.random.default_rng(13)
        X = rng.normal(size=(20, 4))
        cfg = tsne.TsneConfig(perplexity=6, iterations=250, rng_seed=5)
        emb = tsne.run_tsne(X, cfg)
        path = tmp_path / "emb.csv"
        tsne.save_embedding(path, emb, labels=np.arange(20) % 3)
        loaded, labels = tsne.load_embedding(path)
        assert np.array_equal(loaded.coords, emb.coords)
        assert np.array_equal(loaded.ids, emb.ids)
        np.testing.assert_array_equal(labels, np.arange(20) % 3)
        assert loaded.meta.final_kl == emb.meta.final_kl
        assert loaded.meta.rng_seed == 5

    def test_precomputed_embedding_without_sidecar(self, tmp_path):
        from lookalike.data import write_matrix_csv

        path = tmp_path / "pre.csv"
        write_matrix_csv(path, [0, 1, 2], [[0.0, 1.0], [2.0, 3.0], [4.0, 5.0]])
        emb, labels = tsne.load_embedding(path)
        assert emb.meta is None
        assert labels is None
        assert emb.n_points == 3
