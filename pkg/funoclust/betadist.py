"""
The shifted and scaled beta law of subset log-likelihood differences, and
the binned KL divergence of an observed sample from it.

For a cluster h of n_h coefficient vectors in dimension K + 4, the
difference d between the log-likelihood of the subset without one member
and that of the full set satisfies, approximately,

    scale * (d - c) ~ Beta((K + 4) / 2, (n_h - K - 5) / 2)

with scale = 2 n_h / (n_h - 1)^2 and
c = -log(pi_h) + (K + 4) / 2 * log(2 pi) + log|S_h| / 2.
"""
import dataclasses
import logging
import math

import numpy as np
import scipy.special
import scipy.stats

logger = logging.getLogger(__name__)

DEFAULT_BINS = 10
# Floor applied to theoretical bin masses before taking logs.
MASS_FLOOR = 1e-12
LOG_2PI = math.log(2 * math.pi)


class UnusableComponentError(ValueError):
    pass


@dataclasses.dataclass
class BetaComponentParams:
    n: int
    K: int
    pi_hat: float
    c: float

    def __post_init__(self):
        if self.n <= self.K + 5:
            raise UnusableComponentError(
                f"Cluster of size {self.n} needs more than K + 5 = {self.K + 5} points"
            )
        if not 0 < self.pi_hat <= 1:
            raise ValueError(f"Mixing proportion {self.pi_hat} outside (0, 1]")
        if not math.isfinite(self.c):
            raise ValueError(f"Shift {self.c} is not finite")

    @property
    def scale(self):
        return 2 * self.n / (self.n - 1) ** 2

    @property
    def shape1(self):
        return (self.K + 4) / 2

    @property
    def shape2(self):
        return (self.n - self.K - 5) / 2

    @property
    def lower(self):
        return self.c

    @property
    def upper(self):
        return (self.n - 1) ** 2 / (2 * self.n) + self.c

    @property
    def mean(self):
        return self.c + self.shape1 / (self.shape1 + self.shape2) / self.scale

    def _standardise(self, d):
        return self.scale * (np.asarray(d, dtype=float) - self.c)

    def log_density(self, d):
        d = np.asarray(d, dtype=float)
        flat = d.reshape(-1)
        x = self._standardise(flat)
        out = np.full(flat.shape, -np.inf)
        # Support is open at both ends, in d as well as after scaling
        inside = (flat > self.lower) & (flat < self.upper) & (x > 0) & (x < 1)
        xi = x[inside]
        # Log-gamma form keeps large shapes finite
        out[inside] = (
            scipy.special.xlogy(self.shape1 - 1, xi)
            + scipy.special.xlog1py(self.shape2 - 1, -xi)
            - scipy.special.betaln(self.shape1, self.shape2)
            + math.log(self.scale)
        )
        return out.reshape(d.shape)

    def density(self, d):
        return np.exp(self.log_density(d))

    def cdf(self, d):
        x = np.clip(self._standardise(d), 0, 1)
        return scipy.special.betainc(self.shape1, self.shape2, x)


@dataclasses.dataclass
class BetaMixtureParams:
    components: list
    weights: np.ndarray
    # Index of the cluster each component was derived from
    clusters: np.ndarray = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if len(self.components) == 0:
            raise ValueError("Beta mixture needs at least one component")
        if self.weights.shape[0] != len(self.components):
            raise ValueError("Need one weight per component")
        if np.any(self.weights <= 0) or abs(self.weights.sum() - 1) > 1e-8:
            raise ValueError("Mixture weights must be positive and sum to 1")
        if self.clusters is None:
            self.clusters = np.arange(len(self.components))
        self.clusters = np.asarray(self.clusters, dtype=int)

    @property
    def lower(self):
        return min(comp.lower for comp in self.components)

    @property
    def upper(self):
        return max(comp.upper for comp in self.components)

    def sample(self, size, rng):
        """
        Draws size values of D from the mixture using the numpy Generator rng.
        """
        which = rng.choice(len(self.components), size=size, p=self.weights)
        out = np.empty(size)
        for k, comp in enumerate(self.components):
            members = which == k
            draws = rng.beta(comp.shape1, comp.shape2, size=int(members.sum()))
            out[members] = comp.c + draws / comp.scale
        return out


@dataclasses.dataclass
class DSample:
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("D-sample values must be finite")

    def __len__(self):
        return self.values.shape[0]

    def subset(self, mask):
        return DSample(self.values[mask])


def component_params(stats, K, h):
    """
    Beta law parameters of cluster h in stats (a mixture.ClusterStats) for a
    basis with K interior knots.
    """
    if stats.dim != K + 4:
        raise ValueError(
            f"Coefficient dimension {stats.dim} does not match K + 4 = {K + 4}"
        )
    n_h = int(stats.sizes[h])
    if n_h <= K + 5:
        raise UnusableComponentError(
            f"Cluster {h} has {n_h} points; needs more than {K + 5}"
        )
    log_det = float(stats.log_dets[h])
    if not np.isfinite(log_det):
        raise UnusableComponentError(f"Cluster {h} covariance is not positive definite")
    pi_hat = float(stats.pi_hat[h])
    c = -math.log(pi_hat) + (K + 4) / 2 * LOG_2PI + log_det / 2
    return BetaComponentParams(n=n_h, K=K, pi_hat=pi_hat, c=c)


def mixture_params(stats, K):
    """
    Returns the beta mixture over the usable clusters of stats, with weights
    renormalised, together with the indexes of clusters left out.
    """
    components = []
    clusters = []
    excluded = []
    for h in range(stats.G):
        try:
            components.append(component_params(stats, K, h))
        except UnusableComponentError as e:
            logger.warning(f"Excluding cluster {h} from the beta mixture: {e}")
            excluded.append(h)
            continue
        clusters.append(h)
    if len(components) == 0:
        raise UnusableComponentError("No cluster supports a valid beta component")
    weights = np.array([comp.pi_hat for comp in components])
    return (
        BetaMixtureParams(components, weights / weights.sum(), np.array(clusters)),
        excluded,
    )


def density_d(d, mix):
    d = np.asarray(d, dtype=float)
    total = np.zeros(d.shape)
    for w, comp in zip(mix.weights, mix.components):
        total += w * comp.density(d)
    if total.ndim == 0:
        return float(total)
    return total


def cdf_d(d, mix):
    d = np.asarray(d, dtype=float)
    total = np.zeros(d.shape)
    for w, comp in zip(mix.weights, mix.components):
        total += w * comp.cdf(d)
    if total.ndim == 0:
        return float(total)
    return total


def kl_divergence(sample, mix, bins=DEFAULT_BINS):
    """
    Binned KL divergence of the empirical distribution of sample from mix.
    The union of component supports is split into equal-width bins; sample
    values outside it count towards the nearest edge bin. Theoretical bin
    masses are exact CDF differences, floored at MASS_FLOOR.
    """
    if bins < 2:
        raise ValueError(f"Need at least 2 bins, got {bins}")
    if len(sample) < bins:
        raise ValueError(f"Sample of size {len(sample)} is smaller than {bins} bins")
    lo = mix.lower
    hi = mix.upper
    edges = np.linspace(lo, hi, bins + 1)
    counts, _ = np.histogram(np.clip(sample.values, lo, hi), bins=edges)
    p_emp = counts / counts.sum()
    p_theo = np.diff(cdf_d(edges, mix))
    if not np.sum(np.maximum(p_theo, 0)) > MASS_FLOOR:
        raise ValueError("Theoretical distribution puts no mass on any bin")
    p_theo = np.maximum(p_theo, MASS_FLOOR)
    p_theo /= p_theo.sum()
    nonzero = p_emp > 0
    kl = float(np.sum(p_emp[nonzero] * np.log(p_emp[nonzero] / p_theo[nonzero])))
    return max(kl, 0.0)


def ks_distance(sample, mix):
    """
    Kolmogorov-Smirnov distance between sample and the mixture CDF.
    """
    result = scipy.stats.kstest(sample.values, lambda x: cdf_d(x, mix))
    return float(result.statistic)
