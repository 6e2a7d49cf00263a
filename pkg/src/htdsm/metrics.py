"""Generative-model metrics over pluggable feature vectors.

Precision/recall/density/coverage (kNN-ball form), polynomial-kernel
squared MMD (the KID form), Fréchet distance between moment-matched
Gaussians, percentile bootstrap confidence intervals, and the
mode-imbalance statistic for mixture experiments.

Identity features (raw points) are the only built-in extractor; reports
carry the feature-map label so downstream consumers know the values are
not classifier-feature metrics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from htdsm.sampler import DIVERGED
from htdsm.scorenet import MixtureSpec

__all__ = [
    "MetricError",
    "FeatureSet",
    "MetricReport",
    "prdc",
    "kid",
    "kid_kernel",
    "fid",
    "bootstrap_ci",
    "mode_imbalance",
]


class MetricError(ValueError):
    """Degenerate inputs made a metric undefined."""


@dataclass(frozen=True)
class FeatureSet:
    """A matrix of feature vectors plus its provenance tag."""

    points: np.ndarray
    source: str = "real"

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise ValueError(f"points must be a nonempty (M, d) matrix, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("feature vectors must be finite")
        if self.source not in ("real", "generated"):
            raise ValueError(f"source must be 'real' or 'generated', got {self.source!r}")
        object.__setattr__(self, "points", pts)


@dataclass
class MetricReport:
    precision: float | None = None
    recall: float | None = None
    density: float | None = None
    coverage: float | None = None
    kid: float | None = None
    fid: float | None = None
    feature_map: str = "identity"

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "density": self.density,
            "coverage": self.coverage,
            "kid": self.kid,
            "fid": self.fid,
            "feature_map": self.feature_map,
        }


def _points(x) -> np.ndarray:
    if isinstance(x, FeatureSet):
        return x.points
    pts = np.asarray(x, dtype=float)
    if pts.ndim != 2:
        raise ValueError(f"expected an (M, d) matrix, got shape {pts.shape}")
    return pts


def _pairwise(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    sq = (
        (a**2).sum(axis=1)[:, None]
        + (b**2).sum(axis=1)[None, :]
        - 2.0 * (a @ b.T)
    )
    return np.sqrt(np.maximum(sq, 0.0))


def _knn_radii(pts: np.ndarray, k: int) -> np.ndarray:
    d = _pairwise(pts, pts)
    # Row-sorted distances include the self distance at index 0, so the
    # k-th nearest neighbor (self excluded) sits at index k.
    return np.sort(d, axis=1)[:, k]


def prdc(real, fake, k: int):
    """Precision, recall, density, coverage with k-NN ball neighborhoods.

    Balls are closed, radii are k-th nearest-neighbor distances within each
    set (self excluded). Returns (precision, recall, density, coverage).
    """
    r = _points(real)
    f = _points(fake)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if r.shape[0] <= k or f.shape[0] <= k:
        raise ValueError(
            f"both sets need more than k={k} points, got {r.shape[0]} and {f.shape[0]}"
        )
    if r.shape[1] != f.shape[1]:
        raise ValueError("feature dimensions differ")
    radii_r = _knn_radii(r, k)
    radii_f = _knn_radii(f, k)
    if radii_r.max() == 0.0 or radii_f.max() == 0.0:
        raise MetricError("degenerate feature set: all points identical")

    d_rf = _pairwise(r, f)  # (M_real, M_fake)
    in_real_balls = d_rf <= radii_r[:, None]
    in_fake_balls = d_rf <= radii_f[None, :]

    precision = float(in_real_balls.any(axis=0).mean())
    recall = float(in_fake_balls.any(axis=1).mean())
    density = float(in_real_balls.sum() / (k * f.shape[0]))
    coverage = float(in_real_balls.any(axis=1).mean())
    return precision, recall, density, coverage


def kid_kernel(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cubic polynomial kernel (x.y / d + 1)^3 over rows of a and b."""
    d = a.shape[1]
    return (a @ b.T / d + 1.0) ** 3


def kid(real, fake) -> float:
    """Unbiased squared-MMD estimate with the cubic polynomial kernel.

    Diagonal terms are excluded from the within-set averages; for equal set
    sizes the cross term also excludes matched pairs (the full U-statistic),
    which makes kid(A, A) vanish identically. May be slightly negative.
    """
    x = _points(real)
    y = _points(fake)
    m, n = x.shape[0], y.shape[0]
    if m < 2 or n < 2:
        raise ValueError("kid needs at least 2 points per set")
    if x.shape[1] != y.shape[1]:
        raise ValueError("feature dimensions differ")
    k_xx = kid_kernel(x, x)
    k_yy = kid_kernel(y, y)
    k_xy = kid_kernel(x, y)
    sum_xx = k_xx.sum() - np.trace(k_xx)
    sum_yy = k_yy.sum() - np.trace(k_yy)
    if m == n:
        sum_xy = k_xy.sum() - np.trace(k_xy)
        return float((sum_xx + sum_yy - 2.0 * sum_xy) / (m * (m - 1)))
    return float(
        sum_xx / (m * (m - 1)) + sum_yy / (n * (n - 1)) - 2.0 * k_xy.mean()
    )


def _sym_sqrt(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2.0)
    vals = np.maximum(vals, 0.0)
    return (vecs * np.sqrt(vals)) @ vecs.T


def fid(real, fake) -> float:
    """Fréchet distance between moment-matched Gaussians of two feature sets.

    The cross covariance square root is computed through the symmetrized
    product S1^{1/2} S2 S1^{1/2} with negative eigenvalues clamped to zero.
    """
    x = _points(real)
    y = _points(fake)
    d = x.shape[1]
    if x.shape[0] <= d or y.shape[0] <= d:
        raise ValueError(
            f"fid needs more than d={d} points per set, got {x.shape[0]} and {y.shape[0]}"
        )
    if y.shape[1] != d:
        raise ValueError("feature dimensions differ")
    mu_x, mu_y = x.mean(axis=0), y.mean(axis=0)
    cov_x = np.cov(x, rowvar=False).reshape(d, d)
    cov_y = np.cov(y, rowvar=False).reshape(d, d)
    root_x = _sym_sqrt(cov_x)
    cross = _sym_sqrt(root_x @ cov_y @ root_x)
    value = float(
        ((mu_x - mu_y) ** 2).sum()
        + np.trace(cov_x)
        + np.trace(cov_y)
        - 2.0 * np.trace(cross)
    )
    if not math.isfinite(value):
        raise MetricError("fid produced a non-finite value")
    return max(value, 0.0)


def bootstrap_ci(
    values,
    resamples: int,
    level: float,
    rng: np.random.Generator,
):
    """Percentile bootstrap of the mean: returns (mean, lo, hi)."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("bootstrap_ci needs a nonempty sequence")
    if resamples < 1:
        raise ValueError(f"resamples must be >= 1, got {resamples}")
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    idx = rng.integers(0, values.size, size=(int(resamples), values.size))
    means = values[idx].mean(axis=1)
    lo, hi = np.quantile(means, [(1.0 - level) / 2.0, (1.0 + level) / 2.0])
    return float(values.mean()), float(lo), float(hi)


def mode_imbalance(endpoints, mixture: MixtureSpec, statuses=None) -> float:
    """Percentage of non-diverged endpoints assigned to the majority mode.

    Endpoints are assigned to the nearest mixture mean; the majority mode is
    the one with the largest training weight. Diverged endpoints (per the
    statuses sequence, if given) are excluded here and reported separately
    by callers.
    """
    endpoints = np.atleast_2d(np.asarray(endpoints, dtype=float))
    if statuses is not None:
        keep = np.asarray([s != DIVERGED for s in statuses], dtype=bool)
        endpoints = endpoints[keep]
    endpoints = endpoints[np.isfinite(endpoints).all(axis=1)]
    if endpoints.shape[0] == 0:
        raise MetricError("no non-diverged endpoints to assign")
    means = mixture.mean_array()
    assign = np.linalg.norm(
        endpoints[:, None, :] - means[None, :, :], axis=2
    ).argmin(axis=1)
    majority = int(np.argmax(mixture.weights))
    return float(100.0 * np.mean(assign == majority))
