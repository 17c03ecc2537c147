"""
Agreement between partitions, outlier detection rates and the trimmed
k-means baseline. Partitions use cluster numbers 1..G and OUTLIER for
trimmed items.
"""
import dataclasses
import logging

import numpy as np
import scipy.special
import tabulate

from . import core

logger = logging.getLogger(__name__)

OUTLIER = 0
MAX_KMEANS_ITER = 200


@dataclasses.dataclass
class Partition:
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels).reshape(-1)

    def __len__(self):
        return self.labels.shape[0]

    @property
    def outliers(self):
        return self.labels == OUTLIER

    @property
    def num_outliers(self):
        return int(np.sum(self.outliers))


def _as_partition(a):
    if isinstance(a, Partition):
        return a
    return Partition(a)


def _check_lengths(a, b):
    if len(a) != len(b):
        raise ValueError(f"Partitions differ in length: {len(a)} != {len(b)}")


def _contingency(a, b):
    rows, a_codes = np.unique(a.labels, return_inverse=True)
    cols, b_codes = np.unique(b.labels, return_inverse=True)
    counts = np.zeros((rows.shape[0], cols.shape[0]), dtype=np.int64)
    np.add.at(counts, (a_codes, b_codes), 1)
    return rows, cols, counts


def _pairs(counts):
    # Exact integer pair counts
    return sum(scipy.special.comb(int(x), 2, exact=True) for x in counts.flat)


def ari(a, b):
    """
    Adjusted Rand index of two partitions of the same items.
    """
    a = _as_partition(a)
    b = _as_partition(b)
    _check_lengths(a, b)
    if len(a) == 0:
        raise ValueError("Cannot compare empty partitions")
    _, _, counts = _contingency(a, b)
    index = _pairs(counts)
    sum_a = _pairs(counts.sum(axis=1))
    sum_b = _pairs(counts.sum(axis=0))
    total = scipy.special.comb(len(a), 2, exact=True)
    if total == 0:
        return 1.0
    expected = sum_a * sum_b / total
    maximum = (sum_a + sum_b) / 2
    if maximum == expected:
        # Both partitions are trivial (one cluster, or all singletons)
        return 1.0
    return float((index - expected) / (maximum - expected))


def ari_on_inliers(truth, pred):
    """
    ARI over the items that are not outliers in truth.
    """
    truth = _as_partition(truth)
    pred = _as_partition(pred)
    _check_lengths(truth, pred)
    keep = ~truth.outliers
    return ari(truth.labels[keep], pred.labels[keep])


def _order_labels(labels):
    # Clusters ascending, outliers last as the "bad" class
    labels = [x for x in labels if x != OUTLIER] + [x for x in labels if x == OUTLIER]
    return np.array(labels)


@dataclasses.dataclass
class ConfusionMatrix:
    row_labels: np.ndarray
    col_labels: np.ndarray
    counts: np.ndarray

    @property
    def total(self):
        return int(self.counts.sum())

    def count(self, truth_label, pred_label):
        rows = np.flatnonzero(self.row_labels == truth_label)
        cols = np.flatnonzero(self.col_labels == pred_label)
        if rows.shape[0] == 0 or cols.shape[0] == 0:
            return 0
        return int(self.counts[rows[0], cols[0]])

    def table(self, tablefmt="simple"):
        def name(label):
            return "bad" if label == OUTLIER else str(label)

        headers = ["truth"] + [name(label) for label in self.col_labels]
        rows = [
            [name(label)] + [int(x) for x in row]
            for label, row in zip(self.row_labels, self.counts)
        ]
        return tabulate.tabulate(rows, headers=headers, tablefmt=tablefmt)


def confusion_matrix(truth, pred):
    """
    Cross tabulation of truth (rows) against pred (columns), with any
    OUTLIER class placed last.
    """
    truth = _as_partition(truth)
    pred = _as_partition(pred)
    _check_lengths(truth, pred)
    rows, cols, counts = _contingency(truth, pred)
    row_order = _order_labels(rows)
    col_order = _order_labels(cols)
    counts = counts[np.searchsorted(rows, row_order)][
        :, np.searchsorted(cols, col_order)
    ]
    return ConfusionMatrix(row_order, col_order, counts)


@dataclasses.dataclass
class OutlierRates:
    false_positive_rate: float
    # None when there are no true outliers
    false_negative_rate: float = None


def outlier_rates(truth, pred):
    truth = _as_partition(truth)
    pred = _as_partition(pred)
    _check_lengths(truth, pred)
    good = ~truth.outliers
    bad = truth.outliers
    fp = None
    if np.any(good):
        fp = float(np.sum(pred.outliers & good) / np.sum(good))
    fn = None
    if np.any(bad):
        fn = float(np.sum(~pred.outliers & bad) / np.sum(bad))
    return OutlierRates(false_positive_rate=fp, false_negative_rate=fn)


@dataclasses.dataclass
class TrimmedKMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    objective: float
    trace: list
    n_iter: int

    @property
    def partition(self):
        return Partition(self.labels)


class _EmptyCluster(Exception):
    pass


def _concentrate(X, centroids, n_trim):
    d2 = np.sum((X[:, np.newaxis, :] - centroids[np.newaxis]) ** 2, axis=2)
    assign = np.argmin(d2, axis=1)
    dist = d2[np.arange(X.shape[0]), assign]
    keep = np.ones(X.shape[0], dtype=bool)
    if n_trim > 0:
        keep[np.argsort(-dist, kind="stable")[:n_trim]] = False
    return assign, keep, float(dist[keep].sum())


def _trimmed_kmeans_start(X, G, n_trim, rng, max_iter):
    centroids = X[rng.choice(X.shape[0], size=G, replace=False)].copy()
    trace = []
    previous = None
    for iteration in range(max_iter):
        assign, keep, objective = _concentrate(X, centroids, n_trim)
        trace.append(objective)
        state = np.where(keep, assign, -1)
        if previous is not None and np.array_equal(state, previous):
            break
        previous = state
        for g in range(G):
            members = keep & (assign == g)
            if not np.any(members):
                raise _EmptyCluster(f"Cluster {g} empty after trimming")
            centroids[g] = X[members].mean(axis=0)
    labels = np.where(keep, assign + 1, OUTLIER)
    return TrimmedKMeansResult(labels, centroids, trace[-1], trace, iteration + 1)


def trimmed_kmeans(
    coefs, G, n_trim, seed=0, *, n_starts=10, max_iter=MAX_KMEANS_ITER, max_restarts=20
):
    """
    Trimmed k-means on the rows of coefs: the n_trim points furthest from
    their nearest centroid are trimmed at every concentration step. Returns
    the best of n_starts seeded starts by trimmed within-cluster sum of
    squares; trimmed points are labelled OUTLIER.
    """
    X = coefs.coefs
    n = X.shape[0]
    if G < 1:
        raise ValueError("Number of clusters must be >= 1")
    if n_trim < 0 or n_trim >= n - G:
        raise ValueError(f"n_trim={n_trim} must be in [0, {n - G})")
    best = None
    successes = 0
    attempt = 0
    while successes < n_starts and attempt < n_starts + max_restarts:
        rng = np.random.default_rng(core.derive_seed(seed, attempt))
        attempt += 1
        try:
            result = _trimmed_kmeans_start(X, G, n_trim, rng, max_iter)
        except _EmptyCluster as e:
            logger.debug(f"Restarting trimmed k-means start {attempt - 1}: {e}")
            continue
        successes += 1
        if best is None or result.objective < best.objective:
            best = result
    if best is None:
        raise RuntimeError("Every trimmed k-means start left a cluster empty")
    logger.info(
        f"Trimmed k-means: objective={best.objective:.6g} after {best.n_iter} "
        "iterations"
    )
    return best
