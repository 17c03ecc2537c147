"""
Clamped cubic B-spline bases and per-curve least squares filtering.
"""
import dataclasses
import logging
import math

import numpy as np
import scipy.linalg

logger = logging.getLogger(__name__)

DEGREE = 3
# BᵀB is treated as rank deficient when its smallest singular value is below
# this fraction of its largest.
RANK_TOLERANCE = 1e-10


class RankDeficientBasisError(ValueError):
    pass


@dataclasses.dataclass
class TimeGrid:
    points: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim != 1 or self.points.shape[0] == 0:
            raise ValueError("Time grid must be a non-empty 1D array")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("Time grid contains non-finite points")
        if np.any(np.diff(self.points) <= 0):
            raise ValueError("Time grid must be strictly increasing")

    def __len__(self):
        return self.points.shape[0]

    @property
    def lo(self):
        return float(self.points[0])

    @property
    def hi(self):
        return float(self.points[-1])

    @staticmethod
    def uniform(lo, hi, num_points):
        return TimeGrid(np.linspace(lo, hi, num_points))


@dataclasses.dataclass
class KnotVector:
    interior: np.ndarray
    boundary_lo: float
    boundary_hi: float

    def __post_init__(self):
        self.interior = np.asarray(self.interior, dtype=float).reshape(-1)
        self.boundary_lo = float(self.boundary_lo)
        self.boundary_hi = float(self.boundary_hi)
        if not self.boundary_lo < self.boundary_hi:
            raise ValueError(
                f"Knot domain is empty: [{self.boundary_lo}, {self.boundary_hi}]"
            )
        if self.K > 0:
            if np.any(np.diff(self.interior) <= 0):
                raise ValueError("Interior knots must be strictly increasing")
            if (
                self.interior[0] <= self.boundary_lo
                or self.interior[-1] >= self.boundary_hi
            ):
                raise ValueError("Interior knots must lie strictly inside the domain")

    @property
    def K(self):
        return self.interior.shape[0]

    @property
    def num_basis(self):
        return self.K + DEGREE + 1

    @property
    def sequence(self):
        """
        The full clamped knot sequence, of length K + 8.
        """
        order = DEGREE + 1
        return np.concatenate(
            [
                np.full(order, self.boundary_lo),
                self.interior,
                np.full(order, self.boundary_hi),
            ]
        )


@dataclasses.dataclass
class BasisMatrix:
    values: np.ndarray
    knots: KnotVector
    grid: TimeGrid

    @property
    def num_basis(self):
        return self.values.shape[1]


@dataclasses.dataclass
class CurveSet:
    """
    Curves observed on a shared time grid, one per row. Missing
    observations are stored as NaN.
    """

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.array(self.values, dtype=float, ndmin=2)
        if self.values.ndim != 2 or self.values.shape[0] == 0:
            raise ValueError("A curve set needs at least one curve")
        if self.values.shape[1] != len(self.grid):
            raise ValueError(
                f"Curves have {self.values.shape[1]} points but the grid "
                f"has {len(self.grid)}"
            )

    @property
    def num_curves(self):
        return self.values.shape[0]

    @property
    def num_points(self):
        return self.values.shape[1]

    @property
    def missing(self):
        return np.isnan(self.values)

    @property
    def has_missing(self):
        return bool(np.any(self.missing))

    def subset(self, indices):
        return CurveSet(self.grid, self.values[indices])


@dataclasses.dataclass
class CoefficientSet:
    coefs: np.ndarray

    def __post_init__(self):
        self.coefs = np.array(self.coefs, dtype=float, ndmin=2)
        if self.coefs.ndim != 2:
            raise ValueError("Coefficients must be a 2D array")
        if not np.all(np.isfinite(self.coefs)):
            raise ValueError("Coefficients must be finite")

    def __len__(self):
        return self.coefs.shape[0]

    @property
    def num_curves(self):
        return self.coefs.shape[0]

    @property
    def dim(self):
        return self.coefs.shape[1]

    def subset(self, indices):
        return CoefficientSet(self.coefs[indices])


def make_knots(domain_lo, domain_hi, K):
    if not (math.isfinite(domain_lo) and math.isfinite(domain_hi)):
        raise ValueError("Knot domain bounds must be finite")
    if domain_lo >= domain_hi:
        raise ValueError(f"Inverted knot domain: {domain_lo} >= {domain_hi}")
    if K < 0:
        raise ValueError("Number of interior knots must be >= 0")
    step = (domain_hi - domain_lo) / (K + 1)
    interior = domain_lo + step * np.arange(1, K + 1)
    return KnotVector(interior, domain_lo, domain_hi)


def eval_basis(knots, grid):
    """
    Evaluates the K + 4 clamped cubic B-splines at the grid points using the
    Cox-de Boor recursion. Row r holds B_k(t_r) for every k.
    """
    t = knots.sequence
    x = grid.points
    if x[0] < knots.boundary_lo or x[-1] > knots.boundary_hi:
        raise ValueError(
            f"Grid [{x[0]}, {x[-1]}] falls outside the knot domain "
            f"[{knots.boundary_lo}, {knots.boundary_hi}]"
        )
    num_spans = t.shape[0] - 1
    B = np.zeros((x.shape[0], num_spans))
    for i in range(num_spans):
        if t[i] < t[i + 1]:
            B[:, i] = (t[i] <= x) & (x < t[i + 1])
    # Half-open spans miss the right boundary; it belongs to the last span.
    last_span = np.flatnonzero(t[:-1] < t[1:])[-1]
    B[x == t[-1], last_span] = 1.0

    for k in range(1, DEGREE + 1):
        Bk = np.zeros((x.shape[0], num_spans - k))
        for i in range(num_spans - k):
            left = t[i + k] - t[i]
            right = t[i + k + 1] - t[i + 1]
            # 0/0 terms are taken as zero
            if left > 0:
                Bk[:, i] += (x - t[i]) / left * B[:, i]
            if right > 0:
                Bk[:, i] += (t[i + k + 1] - x) / right * B[:, i + 1]
        B = Bk
    assert B.shape[1] == knots.num_basis
    logger.debug(f"Evaluated {B.shape[1]} basis functions at {B.shape[0]} points")
    return BasisMatrix(values=B, knots=knots, grid=grid)


def check_rank(basis):
    B = basis.values
    p = B.shape[1]
    s = np.linalg.svd(B, compute_uv=False)
    # The singular values of BᵀB are the squares of those of B.
    if s.shape[0] < p or s[-1] ** 2 < RANK_TOLERANCE * s[0] ** 2:
        raise RankDeficientBasisError(
            f"BᵀB is rank deficient for {p} basis functions on {B.shape[0]} "
            "grid points; use fewer knots or a denser grid"
        )


def fit_coefficients(basis, curves):
    """
    Ordinary least squares fit of every curve onto the basis, via a QR
    decomposition of B.
    """
    if curves.has_missing:
        raise ValueError(
            f"{int(np.sum(curves.missing))} missing values must be imputed "
            "before fitting"
        )
    B = basis.values
    if B.shape[0] != curves.num_points:
        raise ValueError(
            f"Basis evaluated at {B.shape[0]} points but curves have "
            f"{curves.num_points}"
        )
    check_rank(basis)
    q, r = np.linalg.qr(B)
    coefs = scipy.linalg.solve_triangular(r, q.T @ curves.values.T).T
    logger.info(
        f"Fitted {basis.num_basis} coefficients for {curves.num_curves} curves"
    )
    return CoefficientSet(coefs)


def reconstruct(basis, coefs):
    if coefs.dim != basis.num_basis:
        raise ValueError(
            f"Coefficient dimension {coefs.dim} does not match "
            f"{basis.num_basis} basis functions"
        )
    return CurveSet(basis.grid, coefs.coefs @ basis.values.T)
