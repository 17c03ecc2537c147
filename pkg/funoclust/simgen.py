"""
Simulated functional data: two families of noisy parametric curves, sine
shaped and logarithmic, followed by curves of uniform noise spanning the
range of the good curves.
"""
import dataclasses
import logging
import math

import numpy as np

from . import basis

logger = logging.getLogger(__name__)

OUTLIER = 0


@dataclasses.dataclass
class SimConfig:
    n_per_class: int = 250
    n_outliers: int = 15
    num_points: int = 100
    t_lo: float = 0.0
    t_hi: float = 2 * math.pi
    noise_sd: float = 0.4
    amplitude_mean: float = 1.0
    amplitude_sd: float = 0.4
    # Class 1: amplitude * sin(t - shift) + offset
    shift1_mean: float = 0.0
    shift1_sd: float = 0.4
    offset1_mean: float = 0.0
    offset1_sd: float = 0.4
    # Class 2: amplitude * log(t + shift) + offset
    shift2_mean: float = 2.0
    shift2_sd: float = 0.4
    offset2_mean: float = -1.0
    offset2_sd: float = 0.4
    seed: int = 0

    def __post_init__(self):
        if self.n_per_class < 1:
            raise ValueError("n_per_class must be >= 1")
        if self.n_outliers < 0:
            raise ValueError("n_outliers must be >= 0")
        if self.num_points < 2:
            raise ValueError("num_points must be >= 2")
        if not self.t_lo < self.t_hi:
            raise ValueError("Empty time interval")
        for name in [
            "noise_sd",
            "amplitude_sd",
            "shift1_sd",
            "offset1_sd",
            "shift2_sd",
            "offset2_sd",
        ]:
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.shift2_sd == 0 and self.shift2_mean + self.t_lo <= 0:
            raise ValueError("log(t + shift) is undefined on the grid")

    @property
    def num_curves(self):
        return 2 * self.n_per_class + self.n_outliers

    @property
    def grid(self):
        return basis.TimeGrid.uniform(self.t_lo, self.t_hi, self.num_points)

    def asdict(self):
        return dataclasses.asdict(self)


@dataclasses.dataclass
class LabeledCurveSet:
    curves: basis.CurveSet
    # 1 and 2 for the two classes, OUTLIER for noise curves
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=int)
        if self.labels.shape != (self.curves.num_curves,):
            raise ValueError("Need one label per curve")


def _draw_shift2(config, rng, size):
    shift = rng.normal(config.shift2_mean, config.shift2_sd, size)
    while True:
        bad = shift + config.t_lo <= 0
        if not np.any(bad):
            return shift
        logger.debug(f"Resampling {int(bad.sum())} log shifts")
        shift[bad] = rng.normal(config.shift2_mean, config.shift2_sd, int(bad.sum()))


def generate(config):
    rng = np.random.default_rng(config.seed)
    grid = config.grid
    t = grid.points
    m = config.n_per_class
    j = config.num_points

    amplitude = rng.normal(config.amplitude_mean, config.amplitude_sd, m)
    shift = rng.normal(config.shift1_mean, config.shift1_sd, m)
    offset = rng.normal(config.offset1_mean, config.offset1_sd, m)
    noise = rng.normal(0, config.noise_sd, (m, j))
    class1 = (
        amplitude[:, np.newaxis] * np.sin(t - shift[:, np.newaxis])
        + offset[:, np.newaxis]
        + noise
    )

    amplitude = rng.normal(config.amplitude_mean, config.amplitude_sd, m)
    shift = _draw_shift2(config, rng, m)
    offset = rng.normal(config.offset2_mean, config.offset2_sd, m)
    noise = rng.normal(0, config.noise_sd, (m, j))
    class2 = (
        amplitude[:, np.newaxis] * np.log(t + shift[:, np.newaxis])
        + offset[:, np.newaxis]
        + noise
    )

    good = np.vstack([class1, class2])
    # Outlier range is taken over the good curves only
    lo = good.min()
    hi = good.max()
    outliers = rng.uniform(lo, hi, (config.n_outliers, j))
    labels = np.concatenate(
        [np.full(m, 1), np.full(m, 2), np.full(config.n_outliers, OUTLIER)]
    )
    logger.info(
        f"Simulated {2 * m} curves in two classes and {config.n_outliers} outliers"
    )
    return LabeledCurveSet(basis.CurveSet(grid, np.vstack([good, outliers])), labels)
