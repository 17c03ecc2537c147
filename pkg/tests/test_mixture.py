import math

import numpy as np
import numpy.testing as nt
import pytest
import scipy.stats

from funoclust import basis, evaluate, mixture


def two_blobs(n_per_blob=100, dim=2, separation=10.0, seed=1):
    rng = np.random.default_rng(seed)
    a = rng.normal(0, 1, (n_per_blob, dim))
    b = rng.normal(0, 1, (n_per_blob, dim))
    b[:, 0] += separation
    labels = np.repeat([1, 2], n_per_blob)
    return basis.CoefficientSet(np.vstack([a, b])), labels


def random_params(G, dim, seed):
    rng = np.random.default_rng(seed)
    weights = rng.uniform(0.5, 1, G)
    means = rng.normal(0, 2, (G, dim))
    covs = []
    for _ in range(G):
        A = rng.normal(size=(dim, dim))
        covs.append(A @ A.T + dim * np.eye(dim))
    return mixture.GmmParams(weights / weights.sum(), means, np.array(covs))


def direct_log_likelihood(params, X):
    total = 0.0
    for x in X:
        density = 0.0
        for w, mu, cov in zip(params.weights, params.means, params.covariances):
            density += w * scipy.stats.multivariate_normal(mu, cov).pdf(x)
        total += math.log(density)
    return total


class TestGmmParams:
    def test_properties(self):
        params = random_params(3, 4, 1)
        assert params.G == 3
        assert params.dim == 4

    @pytest.mark.parametrize("weights", [[0.5, 0.6], [1.0, 0.0], [1.5, -0.5]])
    def test_bad_weights(self, weights):
        with pytest.raises(ValueError, match="positive and sum to 1"):
            mixture.GmmParams(weights, np.zeros((2, 1)), np.ones((2, 1, 1)))

    def test_bad_shapes(self):
        with pytest.raises(ValueError, match="Inconsistent"):
            mixture.GmmParams([0.5, 0.5], np.zeros((2, 2)), np.ones((2, 3, 3)))


class TestFitGmm:
    @pytest.fixture(scope="class")
    def blobs(self):
        return two_blobs()

    @pytest.fixture(scope="class")
    def blob_fit(self, blobs):
        coefs, _ = blobs
        return mixture.fit_gmm(coefs, 2, seed=3)

    def test_single_component_closed_form(self):
        X = np.random.default_rng(5).normal(size=(50, 3))
        fit = mixture.fit_gmm(basis.CoefficientSet(X), 1)
        nt.assert_allclose(fit.params.weights, [1])
        nt.assert_allclose(fit.params.means[0], X.mean(axis=0), atol=1e-10)
        nt.assert_allclose(
            fit.params.covariances[0], np.cov(X, rowvar=False, ddof=0), atol=1e-10
        )
        expected = np.sum(
            scipy.stats.multivariate_normal(X.mean(axis=0), np.cov(X.T, ddof=0)).logpdf(
                X
            )
        )
        assert fit.loglik == pytest.approx(expected, rel=1e-10)
        assert fit.converged

    def test_recovers_blobs(self, blobs, blob_fit):
        _, labels = blobs
        assert evaluate.ari(labels, blob_fit.labels) == 1.0

    def test_monotone(self, blob_fit):
        trace = np.array(blob_fit.trace)
        assert np.all(np.diff(trace) >= -1e-9 * np.abs(trace[:-1]))

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_monotone_overlapping(self, seed):
        coefs, _ = two_blobs(n_per_blob=60, dim=3, separation=2.0, seed=seed)
        fit = mixture.fit_gmm(coefs, 3, seed=seed)
        trace = np.array(fit.trace)
        assert np.all(np.diff(trace) >= -1e-9 * np.abs(trace[:-1]))

    def test_responsibilities(self, blob_fit):
        probs = blob_fit.responsibilities.probs
        nt.assert_allclose(probs.sum(axis=1), 1, atol=1e-12)
        assert np.all(probs >= 0)
        assert np.all(probs <= 1)
        nt.assert_array_equal(blob_fit.responsibilities.labels(), blob_fit.labels)

    def test_params_valid(self, blob_fit):
        params = blob_fit.params
        assert params.weights.sum() == pytest.approx(1)
        for cov in params.covariances:
            nt.assert_allclose(cov, cov.T, atol=1e-10)
            assert np.min(np.linalg.eigvalsh(cov)) > 0

    def test_loglik_consistent(self, blobs, blob_fit):
        coefs, _ = blobs
        assert mixture.log_likelihood(blob_fit.params, coefs) == pytest.approx(
            blob_fit.loglik, rel=1e-12
        )

    def test_deterministic(self, blobs):
        coefs, _ = blobs
        fit1 = mixture.fit_gmm(coefs, 2, seed=11)
        fit2 = mixture.fit_gmm(coefs, 2, seed=11)
        nt.assert_array_equal(fit1.params.means, fit2.params.means)
        nt.assert_array_equal(fit1.params.covariances, fit2.params.covariances)
        nt.assert_array_equal(fit1.labels, fit2.labels)
        assert fit1.loglik == fit2.loglik

    def test_best_of_starts(self, blobs):
        coefs, _ = blobs
        best = mixture.fit_gmm(coefs, 2, seed=4)
        single = mixture.fit_gmm(coefs, 2, mixture.InitSpec(n_starts=1), seed=4)
        assert best.loglik >= single.loglik

    def test_refine_from_converged(self, blobs, blob_fit):
        coefs, _ = blobs
        refit = mixture.refine_gmm(coefs, blob_fit.params)
        assert refit.loglik == pytest.approx(blob_fit.loglik, rel=1e-8)
        assert refit.n_iter <= 5

    def test_too_few_points(self):
        coefs = basis.CoefficientSet(np.zeros((5, 2)))
        with pytest.raises(ValueError, match="cannot support 2 clusters"):
            mixture.fit_gmm(coefs, 2)

    def test_bad_G(self, blobs):
        coefs, _ = blobs
        with pytest.raises(ValueError, match=">= 1"):
            mixture.fit_gmm(coefs, 0)

    def test_persistent_collapse(self):
        # A lone point can never support a second component in 2D
        X = np.vstack([np.zeros((5, 2)), [[10, 10]]])
        with pytest.raises(mixture.EmFailureError, match="collapsed"):
            mixture.fit_gmm(basis.CoefficientSet(X), 2)


class TestLogLikelihood:
    @pytest.mark.parametrize("dim", [1, 2, 5, 12])
    def test_standard_normal_at_mean(self, dim):
        params = mixture.GmmParams([1], np.zeros((1, dim)), np.eye(dim)[np.newaxis])
        value = mixture.log_likelihood(params, basis.CoefficientSet(np.zeros((1, dim))))
        assert value == pytest.approx(-dim / 2 * math.log(2 * math.pi), rel=1e-14)

    @pytest.mark.parametrize("seed", range(5))
    def test_direct_oracle(self, seed):
        params = random_params(3, 3, seed)
        X = np.random.default_rng(seed + 100).normal(0, 3, (15, 3))
        value = mixture.log_likelihood(params, basis.CoefficientSet(X))
        assert value == pytest.approx(direct_log_likelihood(params, X), rel=1e-10)

    def test_duplicated(self):
        params = random_params(2, 3, 7)
        X = np.random.default_rng(8).normal(size=(20, 3))
        single = mixture.log_likelihood(params, basis.CoefficientSet(X))
        double = mixture.log_likelihood(params, basis.CoefficientSet(np.vstack([X, X])))
        assert double == pytest.approx(2 * single, rel=1e-12)

    @pytest.mark.parametrize("order", [[1, 0, 2], [2, 1, 0], [2, 0, 1]])
    def test_permutation_invariance(self, order):
        params = random_params(3, 2, 9)
        coefs = basis.CoefficientSet(np.random.default_rng(10).normal(size=(30, 2)))
        assert mixture.log_likelihood(
            params.permute(order), coefs
        ) == pytest.approx(mixture.log_likelihood(params, coefs), rel=1e-12)

    def test_underflow(self):
        # Densities far below the smallest double still give a finite value
        params = random_params(2, 12, 3)
        coefs = basis.CoefficientSet(np.full((3, 12), 200.0))
        assert np.isfinite(mixture.log_likelihood(params, coefs))

    def test_non_pd(self):
        params = mixture.GmmParams([1], np.zeros((1, 2)), [[[1, 2], [2, 1]]])
        with pytest.raises(ValueError, match="not positive definite"):
            mixture.log_likelihood(params, basis.CoefficientSet(np.zeros((1, 2))))

    def test_dimension_mismatch(self):
        params = random_params(1, 3, 0)
        with pytest.raises(ValueError, match="dimension 2"):
            mixture.log_likelihood(params, basis.CoefficientSet(np.zeros((1, 2))))


class TestCompleteDataLogLikelihood:
    def test_single_component(self):
        params = random_params(1, 3, 1)
        coefs = basis.CoefficientSet(np.random.default_rng(2).normal(size=(10, 3)))
        labels = np.zeros(10, dtype=int)
        assert mixture.complete_data_log_likelihood(
            params, coefs, labels
        ) == pytest.approx(mixture.log_likelihood(params, coefs), rel=1e-12)

    @pytest.mark.parametrize("seed", range(4))
    def test_bounded_by_log_likelihood(self, seed):
        params = random_params(3, 2, seed)
        coefs = basis.CoefficientSet(np.random.default_rng(seed).normal(size=(25, 2)))
        labels = np.random.default_rng(seed).integers(0, 3, 25)
        assert mixture.complete_data_log_likelihood(
            params, coefs, labels
        ) <= mixture.log_likelihood(params, coefs)

    def test_gap_shrinks_with_separation(self):
        gaps = []
        for separation in [2, 5, 10, 20]:
            coefs, truth = two_blobs(n_per_blob=50, separation=separation, seed=4)
            fit = mixture.fit_gmm(coefs, 2, seed=1)
            gap = fit.loglik - mixture.complete_data_log_likelihood(
                fit.params, coefs, fit.labels
            )
            assert gap >= 0
            gaps.append(gap)
        assert gaps[-1] < 1e-6
        assert gaps[-1] <= gaps[0]

    @pytest.mark.parametrize("bad", [-1, 2])
    def test_out_of_range(self, bad):
        params = random_params(2, 2, 0)
        labels = np.array([0, 1, bad])
        with pytest.raises(ValueError, match="Labels must lie in 0..1"):
            mixture.complete_data_log_likelihood(
                params, basis.CoefficientSet(np.zeros((3, 2))), labels
            )


class TestClusterStats:
    def test_hand_computed(self):
        stats = mixture.cluster_stats(basis.CoefficientSet([[0], [2]]), [0, 0])
        nt.assert_array_equal(stats.sizes, [2])
        nt.assert_allclose(stats.means, [[1]])
        nt.assert_allclose(stats.covariances, [[[2]]])
        nt.assert_allclose(stats.pi_hat, [1])

    def test_identical_points(self):
        coefs = basis.CoefficientSet(np.ones((10, 2)))
        stats = mixture.cluster_stats(coefs, np.zeros(10, dtype=int))
        nt.assert_array_equal(stats.covariances[0], 0)
        assert stats.degenerate[0]
        assert stats.log_dets[0] == -np.inf

    @pytest.mark.parametrize("seed", range(3))
    def test_textbook_oracle(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(40, 3))
        labels = np.repeat([0, 1, 2], [10, 12, 18])
        stats = mixture.cluster_stats(basis.CoefficientSet(X), labels)
        assert stats.n == 40
        assert stats.G == 3
        nt.assert_allclose(stats.pi_hat, [10 / 40, 12 / 40, 18 / 40])
        for g in range(3):
            members = X[labels == g]
            nt.assert_allclose(stats.means[g], members.mean(axis=0), atol=1e-12)
            nt.assert_allclose(
                stats.covariances[g], np.cov(members, rowvar=False), atol=1e-12
            )
        assert not np.any(stats.degenerate)

    def test_small_cluster_flagged(self):
        X = np.random.default_rng(0).normal(size=(20, 3))
        labels = np.array([0] * 16 + [1] * 4)
        stats = mixture.cluster_stats(basis.CoefficientSet(X), labels)
        # Four points do not exceed dim + 1 = 4
        nt.assert_array_equal(stats.degenerate, [False, True])

    def test_empty_cluster(self):
        with pytest.raises(ValueError, match="empty"):
            mixture.cluster_stats(basis.CoefficientSet(np.zeros((4, 1))), [0, 0, 2, 2])

    def test_label_out_of_range(self):
        with pytest.raises(ValueError, match="Labels must lie"):
            mixture.cluster_stats(
                basis.CoefficientSet(np.zeros((4, 1))), [0, 1, 2, 2], G=2
            )


class TestRegularizedCholesky:
    def test_positive_definite_unchanged(self):
        cov = np.array([[2.0, 0.5], [0.5, 1.0]])
        loaded, L = mixture.regularized_cholesky(cov)
        nt.assert_array_equal(loaded, cov)
        nt.assert_allclose(L @ L.T, cov)

    @pytest.mark.parametrize(
        "cov", [np.zeros((3, 3)), np.ones((3, 3)), np.diag([1.0, 1.0, 0.0])]
    )
    def test_singular(self, cov):
        loaded, L = mixture.regularized_cholesky(cov)
        assert np.min(np.linalg.eigvalsh(loaded)) > 0
        nt.assert_allclose(L @ L.T, loaded)
