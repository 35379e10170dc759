"""Intrinsic dimension estimation from nearest-neighbor distance ratios.

For points drawn from a locally uniform density on a d-dimensional manifold,
the ratio mu_k = r_k / r_1 of the k-th to the first nearest-neighbor distance
has the cumulative law

    C(mu_k) = (1 - mu_k**(-d)) ** (k - 1)

so d is the negative slope of log(1 - C**(1/(k-1))) against log(mu_k). The
k = 2 case is the classic two-nearest-neighbor estimator. The same neighbor
statistics feed the per-point maximum-likelihood estimator

    d_i = numer / ((k-1) * log(mu_k) - sum_{j=2}^{k-1} log(mu_j))

with numer = k-1 (plain MLE) or k-2 (its unbiased correction), averaged over
points.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .manifolds import PointCloud
from .rng import derive_seed, make_rng

__all__ = [
    "NeighborRatios",
    "IdEstimate",
    "neighbor_ratios",
    "estimate_id_knn",
    "estimate_id_mle",
    "knn_dimension_from_ratios",
    "mle_dimension_from_ratios",
    "id_vs_pointcount",
]


@dataclass(frozen=True)
class NeighborRatios:
    """Per-point neighbor distance ratios mu_j = r_j / r_1 for j = 2..k.

    ``ratios`` has shape (n_used, k-1) with columns mu_2 .. mu_k, each row
    nondecreasing and >= 1. Points whose nearest-neighbor distance is exactly
    zero (duplicates) are excluded and counted in ``excluded_count``.
    """

    ratios: np.ndarray
    k: int
    excluded_count: int

    @property
    def n_used(self) -> int:
        return self.ratios.shape[0]


@dataclass(frozen=True)
class IdEstimate:
    """An intrinsic-dimension measurement with its method and diagnostics."""

    d_hat: float
    method: str  # knn_cumulative | mle_biased | mle_unbiased
    k: int
    n_used: int
    fit_r2: float | None = None
    per_point: np.ndarray | None = None

    def record(self) -> dict:
        """JSON-ready summary (per-point values omitted)."""
        return {
            "method": self.method,
            "k": self.k,
            "n_used": self.n_used,
            "d_hat": self.d_hat,
            "fit_r2": self.fit_r2,
        }


def _sq_dists(points: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances from ``x`` to each row of ``points``.

    This is the single canonical distance computation: both the brute-force
    and the tree-accelerated neighbor paths call it, so their results agree
    bit-for-bit whenever they select the same neighbor indices.
    """
    diff = points - x
    return np.einsum("ij,ij->i", diff, diff)


def _nearest_k(d2: np.ndarray, self_index: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Indices and squared distances of the k nearest others, canonical order.

    Order is lexicographic by (distance, index): ties broken by point index.
    """
    n = d2.shape[0]
    take = min(k + 1, n)
    cand = np.argpartition(d2, take - 1)[:take]
    boundary = d2[cand].max()
    # argpartition breaks value ties arbitrarily; pull in every tied index so
    # the index tie-break below is exact
    if np.count_nonzero(d2 == boundary) != np.count_nonzero(d2[cand] == boundary):
        cand = np.flatnonzero(d2 <= boundary)
    cand = cand[np.lexsort((cand, d2[cand]))]
    cand = cand[cand != self_index][:k]
    return cand, d2[cand]


def neighbor_ratios(cloud: PointCloud, k: int, method: str = "brute") -> NeighborRatios:
    """Compute mu_j = r_j / r_1 for every point, j = 2..k.

    Parameters
    ----------
    cloud : PointCloud
        Input points; requires ``cloud.n > k``.
    k : int
        Number of nearest neighbors (k >= 2).
    method : str
        "brute" scans all pairs (the reference path); "kdtree" finds
        candidate neighbors with a k-d tree and re-ranks them with the same
        distance arithmetic, agreeing bit-exactly with "brute" whenever all
        pairwise distances are distinct.
    """
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if cloud.n <= k:
        raise ValueError(f"need more than k={k} points, got {cloud.n}")
    if method not in ("brute", "kdtree"):
        raise ValueError(f"unknown method {method!r}")

    pts = cloud.points
    n = cloud.n
    rows = np.empty((n, k - 1))
    used = 0
    excluded = 0

    if method == "kdtree":
        tree = cKDTree(pts)
        # pad the query so duplicate-of-self cases still leave k others
        _, nbr = tree.query(pts, k=min(n, k + 2))

    for i in range(n):
        if method == "brute":
            d2 = _sq_dists(pts, pts[i])
            idx, d2k = _nearest_k(d2, i, k)
        else:
            cand = np.unique(nbr[i])
            d2c = _sq_dists(pts[cand], pts[i])
            order = np.lexsort((cand, d2c))
            keep = cand[order] != i
            idx = cand[order][keep][:k]
            d2k = d2c[order][keep][:k]
            if idx.shape[0] < k:  # duplicates crowded out the padded query
                d2 = _sq_dists(pts, pts[i])
                idx, d2k = _nearest_k(d2, i, k)
        r = np.sqrt(d2k)
        if r[0] == 0.0:
            excluded += 1
            continue
        rows[used] = r[1:] / r[0]
        used += 1

    if used == 0:
        raise ValueError("no usable points: every point has a zero-distance neighbor")
    return NeighborRatios(ratios=rows[:used].copy(), k=k, excluded_count=excluded)


def knn_dimension_from_ratios(
    mu_k: np.ndarray, k: int, discard_top_fraction: float = 0.0
) -> tuple[float, float, int]:
    """Fit d to a stream of mu_k values via the cumulative-distribution law.

    Sorts the ratios, forms the empirical CDF C_i = i/(n+1), and regresses
    y_i = log(1 - C_i**(1/(k-1))) on x_i = log(mu_i) with a zero-intercept
    least-squares line (the theoretical line passes through the origin).
    Returns (d_hat, fit_r2, n_used) where fit_r2 is the uncentered R^2 of the
    through-origin fit.

    ``discard_top_fraction`` optionally drops that fraction of the largest
    ratios before the regression (a robustness tweak, off by default).
    """
    mu = np.sort(np.asarray(mu_k, dtype=np.float64))
    n = mu.shape[0]
    if n < 2:
        raise ValueError("need at least 2 ratio values")
    if not 0.0 <= discard_top_fraction < 1.0:
        raise ValueError("discard_top_fraction must be in [0, 1)")
    cdf = np.arange(1, n + 1) / (n + 1.0)
    x = np.log(mu)
    y = np.log(1.0 - cdf ** (1.0 / (k - 1)))
    if discard_top_fraction > 0.0:
        keep = n - int(np.floor(n * discard_top_fraction))
        x, y = x[:keep], y[:keep]
    sxx = float(np.dot(x, x))
    if sxx == 0.0:
        raise ValueError("all ratios equal 1: zero-variance cloud, dimension undefined")
    slope = float(np.dot(x, y)) / sxx
    resid = y - slope * x
    syy = float(np.dot(y, y))
    r2 = 1.0 - float(np.dot(resid, resid)) / syy if syy > 0 else 1.0
    return -slope, r2, x.shape[0]


def estimate_id_knn(
    cloud: PointCloud,
    k: int = 2,
    discard_top_fraction: float = 0.0,
    method: str = "brute",
) -> IdEstimate:
    """Estimate intrinsic dimension via the k-neighbor cumulative law.

    ``k = 2`` (the default) is the two-nearest-neighbor estimator.
    """
    ratios = neighbor_ratios(cloud, k, method=method)
    d_hat, r2, n_used = knn_dimension_from_ratios(
        ratios.ratios[:, -1], k, discard_top_fraction
    )
    return IdEstimate(d_hat=d_hat, method="knn_cumulative", k=k, n_used=n_used, fit_r2=r2)


def mle_dimension_from_ratios(
    ratios: np.ndarray, k: int, unbiased: bool = True
) -> np.ndarray:
    """Per-point maximum-likelihood dimension values from (n, k-1) ratios.

    Rows whose denominator is not strictly positive (possible only when all
    neighbor distances coincide) are dropped.
    """
    ratios = np.asarray(ratios, dtype=np.float64)
    if ratios.ndim != 2 or ratios.shape[1] != k - 1:
        raise ValueError(f"ratios must have shape (n, k-1) for k={k}")
    if k < 3:
        raise ValueError(f"MLE needs k >= 3, got {k}")
    log_mu = np.log(ratios)
    denom = (k - 1) * log_mu[:, -1] - log_mu[:, :-1].sum(axis=1)
    numer = float(k - 2 if unbiased else k - 1)
    valid = denom > 0
    return numer / denom[valid]


def estimate_id_mle(
    cloud: PointCloud, k: int, unbiased: bool = True, method: str = "brute"
) -> IdEstimate:
    """Estimate intrinsic dimension as the mean of the per-point MLE values.

    ``unbiased`` selects the k-2 numerator (default) over the plain k-1
    maximum-likelihood form. Requires ``k >= 3``.
    """
    nbrs = neighbor_ratios(cloud, k, method=method)
    per_point = mle_dimension_from_ratios(nbrs.ratios, k, unbiased=unbiased)
    if per_point.shape[0] == 0:
        raise ValueError("no usable points: every MLE denominator was non-positive")
    return IdEstimate(
        d_hat=float(per_point.mean()),
        method="mle_unbiased" if unbiased else "mle_biased",
        k=k,
        n_used=per_point.shape[0],
        per_point=per_point,
    )


def id_vs_pointcount(
    cloud: PointCloud,
    k: int,
    counts: list[int],
    seed: int = 0,
    method: str = "knn_cumulative",
    unbiased: bool = True,
) -> list[tuple[int, IdEstimate]]:
    """Estimate dimension on seeded subsamples of increasing size.

    For each count a subsample without replacement is drawn (the full cloud
    is used verbatim when count equals the cloud size) and the chosen
    estimator runs on it. Counts too small for the estimator (< k+1) are
    skipped with a warning. Results are sorted ascending by count.
    """
    out = []
    for count in sorted(set(int(c) for c in counts)):
        if count > cloud.n:
            raise ValueError(f"count {count} exceeds cloud size {cloud.n}")
        if count < k + 1:
            warnings.warn(f"count {count} too small for k={k}; skipped", stacklevel=2)
            continue
        if count == cloud.n:
            sub = cloud
        else:
            rng = make_rng(derive_seed(seed, "subsample", count))
            pick = np.sort(rng.choice(cloud.n, size=count, replace=False))
            sub = PointCloud(cloud.points[pick])
        if method == "knn_cumulative":
            est = estimate_id_knn(sub, k)
        elif method in ("mle_biased", "mle_unbiased"):
            est = estimate_id_mle(sub, k, unbiased=(method == "mle_unbiased"))
        else:
            raise ValueError(f"unknown method {method!r}")
        out.append((count, est))
    return out
