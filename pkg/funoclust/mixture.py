"""
Full covariance Gaussian mixtures fitted to coefficient vectors by EM.
"""
import dataclasses
import logging
import math

import numpy as np
import scipy.linalg
import scipy.special

from . import core

logger = logging.getLogger(__name__)

MAX_ITER = 500
# Relative change in log-likelihood below which EM stops.
TOLERANCE = 1e-8
# Diagonal loading, as a fraction of the average variance, applied when a
# covariance fails its Cholesky factorisation.
REGULARIZATION = 1e-8
MAX_REGULARIZATION_STEPS = 8
LOG_2PI = math.log(2 * math.pi)


class DegenerateClusterError(ValueError):
    pass


class EmFailureError(RuntimeError):
    pass


@dataclasses.dataclass
class GmmParams:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        self.means = np.array(self.means, dtype=float, ndmin=2)
        self.covariances = np.array(self.covariances, dtype=float, ndmin=3)
        G, p = self.means.shape
        if self.weights.shape[0] != G or self.covariances.shape != (G, p, p):
            raise ValueError(
                f"Inconsistent mixture shapes: weights {self.weights.shape}, "
                f"means {self.means.shape}, covariances {self.covariances.shape}"
            )
        if np.any(self.weights <= 0) or abs(self.weights.sum() - 1) > 1e-8:
            raise ValueError("Mixing proportions must be positive and sum to 1")

    @property
    def G(self):
        return self.weights.shape[0]

    @property
    def dim(self):
        return self.means.shape[1]

    def permute(self, order):
        order = np.asarray(order)
        return GmmParams(
            self.weights[order], self.means[order], self.covariances[order]
        )


@dataclasses.dataclass
class Responsibilities:
    probs: np.ndarray

    def labels(self):
        return np.argmax(self.probs, axis=1)


@dataclasses.dataclass
class InitSpec:
    n_starts: int = 10
    kmeans_iter: int = 10
    # Extra seeded draws allowed to replace starts that collapse.
    max_restarts: int = 20


@dataclasses.dataclass
class GmmFit:
    params: GmmParams
    responsibilities: Responsibilities
    labels: np.ndarray
    loglik: float
    n_iter: int
    converged: bool
    trace: list


@dataclasses.dataclass
class ClusterStats:
    sizes: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    pi_hat: np.ndarray
    degenerate: np.ndarray

    @property
    def G(self):
        return self.sizes.shape[0]

    @property
    def n(self):
        return int(self.sizes.sum())

    @property
    def dim(self):
        return self.means.shape[1]

    @property
    def log_dets(self):
        sign, logdet = np.linalg.slogdet(self.covariances)
        return np.where(sign > 0, logdet, -np.inf)


def regularized_cholesky(cov):
    """
    Returns (cov, L) where L is the lower Cholesky factor of cov, loading the
    diagonal when the factorisation fails.
    """
    try:
        return cov, np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    p = cov.shape[0]
    jitter = REGULARIZATION * np.trace(cov) / p
    if not jitter > 0:
        jitter = REGULARIZATION
    for _ in range(MAX_REGULARIZATION_STEPS):
        loaded = cov + jitter * np.eye(p)
        try:
            L = np.linalg.cholesky(loaded)
        except np.linalg.LinAlgError:
            jitter *= 10
            continue
        logger.warning(f"Regularized a singular covariance with jitter {jitter:.3g}")
        return loaded, L
    raise DegenerateClusterError("Covariance could not be made positive definite")


def log_gaussian(X, mean, L):
    """
    Log density of each row of X under N(mean, LLᵀ).
    """
    p = X.shape[1]
    z = scipy.linalg.solve_triangular(L, (X - mean).T, lower=True)
    log_det = 2 * np.sum(np.log(np.diag(L)))
    return -0.5 * (p * LOG_2PI + log_det + np.sum(z**2, axis=0))


def _check_dim(params, coefs):
    if coefs.dim != params.dim:
        raise ValueError(
            f"Coefficients have dimension {coefs.dim}, mixture has {params.dim}"
        )


def _exact_cholesky(params):
    factors = []
    for g, cov in enumerate(params.covariances):
        try:
            factors.append(np.linalg.cholesky(cov))
        except np.linalg.LinAlgError:
            raise ValueError(f"Covariance {g} is not positive definite") from None
    return factors


def _log_joint(X, weights, means, factors):
    # n x G matrix of log π_g + log φ(x_i | μ_g, Σ_g)
    return np.stack(
        [
            math.log(w) + log_gaussian(X, mu, L)
            for w, mu, L in zip(weights, means, factors)
        ],
        axis=1,
    )


def log_likelihood(params, coefs):
    _check_dim(params, coefs)
    log_prob = _log_joint(
        coefs.coefs, params.weights, params.means, _exact_cholesky(params)
    )
    return float(np.sum(scipy.special.logsumexp(log_prob, axis=1)))


def complete_data_log_likelihood(params, coefs, labels):
    _check_dim(params, coefs)
    labels = np.asarray(labels)
    if labels.shape != (coefs.num_curves,):
        raise ValueError("Need one label per coefficient vector")
    if np.any(labels < 0) or np.any(labels >= params.G):
        raise ValueError(f"Labels must lie in 0..{params.G - 1}")
    log_prob = _log_joint(
        coefs.coefs, params.weights, params.means, _exact_cholesky(params)
    )
    return float(np.sum(log_prob[np.arange(labels.shape[0]), labels]))


def _m_step(X, resp):
    n, p = X.shape
    nk = resp.sum(axis=0)
    for g, size in enumerate(nk):
        if size < p + 1:
            raise DegenerateClusterError(
                f"Component {g} collapsed to effective size {size:.3g}"
            )
    means = (resp.T @ X) / nk[:, np.newaxis]
    covs = []
    factors = []
    for g in range(resp.shape[1]):
        diff = X - means[g]
        cov = (resp[:, g, np.newaxis] * diff).T @ diff / nk[g]
        cov, L = regularized_cholesky((cov + cov.T) / 2)
        covs.append(cov)
        factors.append(L)
    return GmmParams(nk / n, means, np.array(covs)), factors


def _em(X, params, factors, max_iter, tol):
    trace = []
    converged = False
    while True:
        log_prob = _log_joint(X, params.weights, params.means, factors)
        log_norm = scipy.special.logsumexp(log_prob, axis=1)
        trace.append(float(np.sum(log_norm)))
        if len(trace) > 1:
            if trace[-1] < trace[-2] - 1e-9 * abs(trace[-2]):
                logger.debug(f"EM log-likelihood decreased: {trace[-2]} -> {trace[-1]}")
            if abs(trace[-1] - trace[-2]) <= tol * abs(trace[-2]):
                converged = True
        resp = np.exp(log_prob - log_norm[:, np.newaxis])
        if converged or len(trace) > max_iter:
            break
        params, factors = _m_step(X, resp)
    return GmmFit(
        params=params,
        responsibilities=Responsibilities(resp),
        labels=np.argmax(resp, axis=1),
        loglik=trace[-1],
        n_iter=len(trace) - 1,
        converged=converged,
        trace=trace,
    )


def _kmeans_labels(X, G, rng, num_iter):
    n = X.shape[0]
    centroids = X[rng.choice(n, size=G, replace=False)]
    labels = None
    for _ in range(num_iter):
        d2 = np.sum((X[:, np.newaxis, :] - centroids[np.newaxis]) ** 2, axis=2)
        new_labels = np.argmin(d2, axis=1)
        if labels is not None and np.array_equal(labels, new_labels):
            break
        labels = new_labels
        for g in range(G):
            members = labels == g
            if not np.any(members):
                raise DegenerateClusterError(f"k-means seeding left cluster {g} empty")
            centroids[g] = X[members].mean(axis=0)
    return labels


def refine_gmm(coefs, warm, *, max_iter=MAX_ITER, tol=TOLERANCE):
    """
    Runs EM to convergence on coefs starting from the parameters warm.
    """
    _check_dim(warm, coefs)
    factors = []
    covs = []
    for cov in warm.covariances:
        cov, L = regularized_cholesky(cov)
        covs.append(cov)
        factors.append(L)
    params = GmmParams(warm.weights, warm.means, np.array(covs))
    return _em(coefs.coefs, params, factors, max_iter, tol)


def fit_gmm(coefs, G, init=None, seed=0, *, max_iter=MAX_ITER, tol=TOLERANCE):
    """
    Fits a G component mixture with full covariances, keeping the best of
    init.n_starts k-means seeded EM runs. Starts whose clusters collapse are
    replaced by fresh seeded draws.
    """
    if G < 1:
        raise ValueError("Number of clusters must be >= 1")
    if init is None:
        init = InitSpec()
    X = coefs.coefs
    n, p = X.shape
    if n < G * (p + 1):
        raise ValueError(
            f"{n} points cannot support {G} clusters in dimension {p}"
        )
    # Every start is identical for a single component.
    n_starts = 1 if G == 1 else init.n_starts
    best = None
    successes = 0
    attempt = 0
    while successes < n_starts and attempt < n_starts + init.max_restarts:
        rng = np.random.default_rng(core.derive_seed(seed, attempt))
        attempt += 1
        try:
            labels = _kmeans_labels(X, G, rng, init.kmeans_iter)
            params, factors = _m_step(X, np.eye(G)[labels])
            fit = _em(X, params, factors, max_iter, tol)
        except DegenerateClusterError as e:
            logger.debug(f"Discarding EM start {attempt - 1}: {e}")
            continue
        successes += 1
        logger.debug(
            f"EM start {attempt - 1}: loglik={fit.loglik:.6f} "
            f"iterations={fit.n_iter} converged={fit.converged}"
        )
        if best is None or fit.loglik > best.loglik:
            best = fit
    if best is None:
        raise EmFailureError(
            f"All {attempt} EM starts collapsed for G={G} on {n} points"
        )
    if not best.converged:
        logger.warning(f"EM did not converge within {max_iter} iterations")
    return best


def cluster_stats(coefs, labels, G=None):
    """
    Per-cluster sizes, means and sample covariances (divisor n_h - 1) for hard
    labels in 0..G-1. Clusters with n_h <= p + 1 points or a singular
    covariance are flagged as degenerate.
    """
    X = coefs.coefs
    labels = np.asarray(labels)
    if labels.shape != (X.shape[0],):
        raise ValueError("Need one label per coefficient vector")
    if G is None:
        G = int(labels.max()) + 1
    n, p = X.shape
    sizes = np.bincount(labels, minlength=G)
    if sizes.shape[0] > G:
        raise ValueError(f"Labels must lie in 0..{G - 1}")
    empty = np.flatnonzero(sizes == 0)
    if empty.shape[0] > 0:
        raise ValueError(f"Clusters {[int(g) for g in empty]} are empty")
    means = np.zeros((G, p))
    covs = np.zeros((G, p, p))
    for g in range(G):
        members = X[labels == g]
        means[g] = members.mean(axis=0)
        if sizes[g] > 1:
            diff = members - means[g]
            covs[g] = diff.T @ diff / (sizes[g] - 1)
    sign, _ = np.linalg.slogdet(covs)
    degenerate = (sizes <= p + 1) | (sign <= 0)
    for g in np.flatnonzero(degenerate):
        logger.warning(
            f"Cluster {g} is degenerate: {sizes[g]} points in dimension {p}"
        )
    return ClusterStats(
        sizes=sizes,
        means=means,
        covariances=covs,
        pi_hat=sizes / n,
        degenerate=degenerate,
    )
