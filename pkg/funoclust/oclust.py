"""
Iterative trimming of candidate outliers from a Gaussian mixture fitted to
B-spline coefficients. At each iteration every retained point is left out
in turn, the mixture refitted, and the point whose removal gives the
largest log-likelihood becomes the candidate. The number of removals kept
is the one whose subset log-likelihood differences are closest, in binned
KL divergence, to their beta law.
"""
import dataclasses
import logging
import time

import humanfriendly
import numpy as np

from . import basis
from . import betadist
from . import core
from . import mixture

logger = logging.getLogger(__name__)


@dataclasses.dataclass
class SubsetLoglikVector:
    values: np.ndarray
    # Positions refitted from fresh starts after the warm start collapsed
    fallbacks: np.ndarray = dataclasses.field(
        default_factory=lambda: np.zeros(0, dtype=int)
    )

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        self.fallbacks = np.asarray(self.fallbacks, dtype=int).reshape(-1)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("Subset log-likelihoods must be finite")

    def __len__(self):
        return self.values.shape[0]


@dataclasses.dataclass
class IterationRecord:
    """
    State of one trimming iteration. Indexes are positions within the
    coefficient set the iteration was run on.
    """

    fit: mixture.GmmFit
    logliks: SubsetLoglikVector
    d_sample: betadist.DSample
    kl: float
    candidate: int
    excluded_clusters: list


@dataclasses.dataclass
class OclustResult:
    kl_trace: np.ndarray
    removal_sequence: list
    best_iteration: int
    final_labels: np.ndarray
    final_params: mixture.GmmParams
    final_loglik: float
    # Original curve indexes retained at each iteration, aligned with d_samples
    retained: list
    d_samples: list
    fallbacks: list
    excluded_clusters: list
    coefs: basis.CoefficientSet = None
    basis_matrix: basis.BasisMatrix = None

    @property
    def num_outliers(self):
        return self.best_iteration

    @property
    def outliers(self):
        return self.removal_sequence[: self.best_iteration]

    @property
    def cluster_sizes(self):
        G = self.final_params.G
        return np.bincount(self.final_labels, minlength=G + 1)[1:]


def _subset_loglik_slice(X, start, stop, G, warm, seed, track_progress):
    n = X.shape[0]
    values = []
    fallbacks = []
    for j in range(start, stop):
        keep = np.ones(n, dtype=bool)
        keep[j] = False
        subset = basis.CoefficientSet(X[keep])
        try:
            fit = mixture.refine_gmm(subset, warm)
        except mixture.DegenerateClusterError as e:
            logger.warning(
                f"Warm started refit without point {j} failed ({e}); "
                "refitting from fresh starts"
            )
            fit = mixture.fit_gmm(subset, G, seed=core.derive_seed(seed, j))
            fallbacks.append(j)
        values.append(fit.loglik)
        if track_progress:
            core.update_progress(1)
    logger.debug(f"Refitted points {start}:{stop}")
    return values, fallbacks


def subset_logliks(
    coefs, G, warm, seed, *, worker_processes=1, show_progress=False
):
    """
    Returns the log-likelihood of the mixture refitted by EM, warm started
    at warm, on coefs with each row removed in turn.
    """
    n = coefs.num_curves
    slices = core.chunk_slices(n, max(1, worker_processes))
    progress_config = core.ProgressConfig(
        total=n, units="fits", title="Refit", show=show_progress
    )
    with core.ParallelWorkManager(worker_processes, progress_config) as pwm:
        futures = pwm.map(
            _subset_loglik_slice,
            [
                (coefs.coefs, start, stop, G, warm, seed, show_progress)
                for start, stop in slices
            ],
        )
    values = []
    fallbacks = []
    # Reduce in index order whatever the completion order
    for future in futures:
        slice_values, slice_fallbacks = future.result()
        values.extend(slice_values)
        fallbacks.extend(slice_fallbacks)
    return SubsetLoglikVector(values, fallbacks)


def candidate_outlier(logliks):
    if len(logliks) == 0:
        raise ValueError("No subset log-likelihoods to choose from")
    # argmax returns the first maximum
    return int(np.argmax(logliks.values))


def d_values(logliks, full_loglik):
    return betadist.DSample(logliks.values - full_loglik)


def _beta_mixture(coefs, labels, G, K):
    present = np.unique(labels)
    absent = [int(g) for g in range(G) if g not in present]
    for g in absent:
        logger.warning(f"Cluster {g} has no members; excluding it")
    stats = mixture.cluster_stats(coefs, np.searchsorted(present, labels))
    mix, excluded = betadist.mixture_params(stats, K)
    mix.clusters = present[mix.clusters]
    return mix, sorted(absent + [int(present[h]) for h in excluded])


def evaluate_iteration(
    coefs, G, K, seed, *, bins=betadist.DEFAULT_BINS, worker_processes=1,
    show_progress=False
):
    """
    Fits the mixture to coefs, computes the subset log-likelihood
    differences and their KL divergence from the beta mixture, and picks
    the candidate outlier. Points in clusters too small for a beta
    component are left out of the KL sample.
    """
    fit = mixture.fit_gmm(coefs, G, seed=core.derive_seed(seed, 0))
    logliks = subset_logliks(
        coefs,
        G,
        fit.params,
        core.derive_seed(seed, 1),
        worker_processes=worker_processes,
        show_progress=show_progress,
    )
    d_sample = d_values(logliks, fit.loglik)
    try:
        mix, excluded = _beta_mixture(coefs, fit.labels, G, K)
    except betadist.UnusableComponentError as e:
        logger.warning(f"KL divergence undefined: {e}")
        mix = None
        excluded = list(range(G))
    kl = np.inf
    if mix is not None:
        usable = ~np.isin(fit.labels, excluded)
        kl_sample = d_sample.subset(usable)
        if len(kl_sample) >= bins:
            kl = betadist.kl_divergence(kl_sample, mix, bins)
        else:
            logger.warning(
                f"Only {len(kl_sample)} points in usable clusters for {bins} bins"
            )
    return IterationRecord(
        fit=fit,
        logliks=logliks,
        d_sample=d_sample,
        kl=kl,
        candidate=candidate_outlier(logliks),
        excluded_clusters=excluded,
    )


def check_max_outliers(n, K, G, F):
    """
    Raises ValueError unless F is in [0, n - G(K + 6)), so that the curves
    left after trimming can fill G clusters of more than K + 5 members.
    """
    if F < 0 or F >= n - G * (K + 6):
        raise ValueError(
            f"Maximum outliers F={F} must be in [0, n - G(K + 6)) = "
            f"[0, {n - G * (K + 6)})"
        )


def trim_outliers(
    coefs,
    K,
    G,
    F,
    *,
    seed=0,
    bins=betadist.DEFAULT_BINS,
    worker_processes=1,
    show_progress=False,
):
    """
    Runs the trimming loop for iterations 0..F on a coefficient set of
    dimension K + 4, removing one candidate per iteration before the last.
    """
    n = coefs.num_curves
    if G < 1:
        raise ValueError("Number of clusters must be >= 1")
    if coefs.dim != K + 4:
        raise ValueError(f"Coefficient dimension {coefs.dim} does not match K={K}")
    check_max_outliers(n, K, G, F)
    start_time = time.time()
    retained = np.arange(n)
    removal_sequence = []
    records = []
    retained_sets = []
    for iteration in range(F + 1):
        record = evaluate_iteration(
            coefs.subset(retained),
            G,
            K,
            core.derive_seed(seed, iteration),
            bins=bins,
            worker_processes=worker_processes,
            show_progress=show_progress,
        )
        records.append(record)
        retained_sets.append(retained)
        candidate = int(retained[record.candidate])
        logger.info(
            f"Iteration {iteration}: n={len(retained)} KL={record.kl:.6g} "
            f"candidate={candidate}"
        )
        if iteration < F:
            removal_sequence.append(candidate)
            retained = np.delete(retained, record.candidate)

    kl_trace = np.array([record.kl for record in records])
    if not np.any(np.isfinite(kl_trace)):
        raise betadist.UnusableComponentError(
            "KL divergence undefined at every iteration"
        )
    # First minimum, so ties prefer fewer removals
    best = int(np.argmin(kl_trace))
    best_record = records[best]
    final_labels = np.zeros(n, dtype=int)
    final_labels[retained_sets[best]] = best_record.fit.labels + 1
    logger.info(
        f"Selected {best} outliers (KL={kl_trace[best]:.6g}) in "
        f"{humanfriendly.format_timespan(time.time() - start_time)}"
    )
    return OclustResult(
        kl_trace=kl_trace,
        removal_sequence=removal_sequence,
        best_iteration=best,
        final_labels=final_labels,
        final_params=best_record.fit.params,
        final_loglik=best_record.fit.loglik,
        retained=retained_sets,
        d_samples=[record.d_sample for record in records],
        fallbacks=[
            [int(r[j]) for j in record.logliks.fallbacks]
            for r, record in zip(retained_sets, records)
        ],
        excluded_clusters=[record.excluded_clusters for record in records],
        coefs=coefs,
    )


def run_funoclust(
    curves,
    knots,
    G,
    F,
    *,
    seed=0,
    bins=betadist.DEFAULT_BINS,
    worker_processes=1,
    show_progress=False,
):
    """
    Filters curves through the cubic B-spline basis on knots and trims up to
    F outliers while clustering the coefficients into G groups.
    """
    bm = basis.eval_basis(knots, curves.grid)
    coefs = basis.fit_coefficients(bm, curves)
    result = trim_outliers(
        coefs,
        knots.K,
        G,
        F,
        seed=seed,
        bins=bins,
        worker_processes=worker_processes,
        show_progress=show_progress,
    )
    result.basis_matrix = bm
    return result
