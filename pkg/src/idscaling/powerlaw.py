"""Power-law fits to loss-vs-size curves with circle-based range selection.

A model-size sweep yields (N, L) points that follow L = c * N**(-alpha) up
to some largest size, then flatten. The fitting pipeline: keep the best loss
per size and the lower convex hull in log-log space, pick the longest
most-linear prefix as the one whose least-squares circle has maximal radius,
and run ordinary least squares on that prefix. Two notions of the largest
power-law size are provided: the end of the selected prefix, and the size at
which the fitted law reaches a loss threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "LossCurve",
    "PowerLawFit",
    "NmaxResult",
    "DimensionReport",
    "RADIUS_CAP",
    "fit_circle",
    "convex_hull_filter",
    "select_linear_prefix",
    "fit_power_law",
    "n_max_at_loss_threshold",
    "n_max_empirical",
    "alpha_vs_dimension_report",
]

RADIUS_CAP = 1e12  # radius assigned to (numerically) collinear prefixes


@dataclass(frozen=True)
class LossCurve:
    """Converged-loss measurements across model sizes.

    ``n`` holds parameter counts, ``loss`` the matching losses; optional
    parallel arrays carry per-point provenance (width, depth, seed).
    """

    n: np.ndarray
    loss: np.ndarray
    width: np.ndarray | None = None
    depth: np.ndarray | None = None
    seed: np.ndarray | None = None
    loss_kind: str = ""

    def __post_init__(self):
        n = np.asarray(self.n, dtype=np.int64)
        loss = np.asarray(self.loss, dtype=np.float64)
        if n.ndim != 1 or n.shape != loss.shape:
            raise ValueError("n and loss must be 1-D arrays of equal length")
        if n.size == 0:
            raise ValueError("empty loss curve")
        if (n <= 0).any():
            raise ValueError("parameter counts must be positive")
        if not np.isfinite(loss).all() or (loss <= 0).any():
            raise ValueError("losses must be positive and finite")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "loss", loss)
        for name in ("width", "depth", "seed"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.asarray(arr, dtype=np.int64)
                if arr.shape != n.shape:
                    raise ValueError(f"{name} must match n in length")
                object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return self.n.size

    def take(self, idx) -> "LossCurve":
        return LossCurve(
            n=self.n[idx],
            loss=self.loss[idx],
            width=None if self.width is None else self.width[idx],
            depth=None if self.depth is None else self.depth[idx],
            seed=None if self.seed is None else self.seed[idx],
            loss_kind=self.loss_kind,
        )

    def sorted(self) -> "LossCurve":
        return self.take(np.lexsort((self.loss, self.n)))


@dataclass(frozen=True)
class PowerLawFit:
    """L(N) = c * N**(-alpha) fitted over a selected log-log-linear prefix."""

    alpha: float
    c: float
    n_points_used: int
    max_radius: float
    fit_range: tuple[float, float]  # (N_min, largest fitted N)
    residuals: np.ndarray
    loss_kind: str = ""

    def predict(self, n) -> np.ndarray:
        return self.c * np.asarray(n, dtype=np.float64) ** (-self.alpha)


@dataclass(frozen=True)
class NmaxResult:
    """Model size where the fitted law reaches a loss threshold."""

    n_max: float
    extrapolated: bool  # True when n_max lies beyond the largest fitted N


def fit_circle(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """Algebraic least-squares circle through 2-D points: (cx, cy, radius).

    Solves the linear system 2*cx*x + 2*cy*y + t = x^2 + y^2. Collinear (or
    numerically collinear) inputs have no finite best circle; they are
    detected by the conditioning of the design matrix and reported with the
    capped radius ``RADIUS_CAP``. Finite radii larger than the cap are capped
    as well, so "straighter than the cap" always compares equal.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size < 3:
        raise ValueError("circle fit needs at least 3 points")
    a = np.column_stack([2.0 * x, 2.0 * y, np.ones_like(x)])
    rhs = x * x + y * y
    # collinear points make the normal equations singular: cond(A^T A) is the
    # squared singular-value ratio, so this gate is cond(A^T A) > 1e16
    sv = np.linalg.svd(a, compute_uv=False)
    if sv[-1] <= 1e-8 * sv[0]:
        return np.nan, np.nan, RADIUS_CAP
    sol, *_ = np.linalg.lstsq(a, rhs, rcond=None)
    cx, cy, t = sol
    r2 = t + cx * cx + cy * cy
    if r2 <= 0:  # numerically degenerate
        return cx, cy, RADIUS_CAP
    return float(cx), float(cy), float(min(np.sqrt(r2), RADIUS_CAP))


def convex_hull_filter(curve: LossCurve) -> LossCurve:
    """Best-per-size points on the lower convex hull in (log N, log L).

    Keeps, for each parameter count, the row with the smallest loss; then
    keeps the lower-left convex hull in log-log space. Collinear points stay.
    """
    cur = curve.sorted()
    first_of_n = np.ones(len(cur), dtype=bool)
    first_of_n[1:] = cur.n[1:] != cur.n[:-1]
    cur = cur.take(np.flatnonzero(first_of_n))
    if len(cur) <= 2:
        return cur
    x = np.log(cur.n.astype(np.float64))
    y = np.log(cur.loss)
    hull: list[int] = []
    for i in range(len(cur)):
        while len(hull) >= 2:
            i0, i1 = hull[-2], hull[-1]
            t1 = (x[i1] - x[i0]) * (y[i] - y[i0])
            t2 = (y[i1] - y[i0]) * (x[i] - x[i0])
            # pop the middle point when it sits above the chord; the relative
            # tolerance keeps points that are collinear up to float rounding
            if t1 - t2 < -1e-12 * max(abs(t1), abs(t2)):
                hull.pop()
            else:
                break
        hull.append(i)
    return cur.take(np.array(hull))


def select_linear_prefix(curve: LossCurve) -> int:
    """Length of the most linear prefix of the (sorted) log-log curve.

    Fits a circle to the first n >= 3 points for every n and returns the n
    whose fitted radius is maximal (a straight run of points has an enormous
    best-fit circle). Ties prefer larger n, so exactly collinear data keeps
    every point.
    """
    if len(curve) < 3:
        raise ValueError("prefix selection needs at least 3 points")
    cur = curve.sorted()
    x = np.log(cur.n.astype(np.float64))
    y = np.log(cur.loss)
    best_n, best_r = 3, -np.inf
    for n in range(3, len(cur) + 1):
        _, _, r = fit_circle(x[:n], y[:n])
        if r >= best_r:
            best_n, best_r = n, r
    return best_n


def fit_power_law(
    curve: LossCurve, apply_hull: bool = True, n_min: float | None = None
) -> PowerLawFit:
    """Fit log L = -alpha log N + log c over the selected linear prefix.

    The pipeline: optional best-per-size + convex hull filtering, optional
    lower cutoff ``n_min`` on parameter counts, circle-based prefix
    selection, then ordinary least squares (Gaussian errors in log L).
    """
    cur = convex_hull_filter(curve) if apply_hull else curve.sorted()
    if n_min is not None:
        cur = cur.take(np.flatnonzero(cur.n >= n_min))
        if len(cur) == 0:
            raise ValueError(f"no points with N >= {n_min}")
    if len(cur) < 3:
        raise ValueError(f"need at least 3 points after filtering, got {len(cur)}")
    n_used = select_linear_prefix(cur)
    x = np.log(cur.n[:n_used].astype(np.float64))
    y = np.log(cur.loss[:n_used])
    if np.ptp(x) == 0.0:
        raise ValueError("zero variance in log N")
    _, _, max_radius = fit_circle(x[:n_used], y[:n_used]) if n_used >= 3 else (0, 0, 0)
    slope, intercept = np.polyfit(x, y, 1)
    residuals = y - (slope * x + intercept)
    return PowerLawFit(
        alpha=float(-slope),
        c=float(np.exp(intercept)),
        n_points_used=n_used,
        max_radius=max_radius,
        fit_range=(float(cur.n[0]), float(cur.n[n_used - 1])),
        residuals=residuals,
        loss_kind=curve.loss_kind,
    )


def n_max_at_loss_threshold(fit: PowerLawFit, loss_threshold: float) -> NmaxResult:
    """Size at which the fitted law reaches ``loss_threshold``.

    Inverts L = c * N**(-alpha): N_max = (c / L)**(1/alpha). The result is
    flagged extrapolated when it exceeds the largest N that entered the fit.
    """
    if loss_threshold <= 0:
        raise ValueError("loss threshold must be positive")
    if not np.isfinite(fit.alpha) or fit.alpha <= 0:
        raise ValueError(f"cannot invert a fit with alpha = {fit.alpha}")
    n_max = float((fit.c / loss_threshold) ** (1.0 / fit.alpha))
    return NmaxResult(n_max=n_max, extrapolated=n_max > fit.fit_range[1])


def n_max_empirical(curve: LossCurve, fit: PowerLawFit) -> float:
    """Largest model size inside the fitted power-law prefix."""
    if fit.fit_range[1] not in curve.n.astype(np.float64):
        raise ValueError("fit does not belong to this curve")
    return fit.fit_range[1]


@dataclass(frozen=True)
class DimensionReport:
    """Linear relations between the inverse exponent 4/alpha and dimension.

    ``rows`` holds (feature_count, d_hat, alpha) triples; the slope and
    intercept pairs describe least-squares lines of 4/alpha against the
    measured intrinsic dimension and against the feature count.
    """

    rows: tuple[tuple[float, float, float], ...]
    slope_vs_id: float
    intercept_vs_id: float
    slope_vs_features: float
    intercept_vs_features: float

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            fh.write("feature_count,d_hat,alpha,four_over_alpha\n")
            for k, d_hat, alpha in self.rows:
                fh.write(f"{k!r},{d_hat!r},{alpha!r},{4.0 / alpha!r}\n")


def alpha_vs_dimension_report(results) -> DimensionReport:
    """Fit 4/alpha against measured dimension and against feature count.

    ``results`` is a sequence of (feature_count, d_hat, alpha) triples; at
    least two are required and each regressor must actually vary.
    """
    rows = tuple((float(k), float(d), float(a)) for k, d, a in results)
    if len(rows) < 2:
        raise ValueError("need at least 2 (k, d_hat, alpha) entries")
    k = np.array([r[0] for r in rows])
    d = np.array([r[1] for r in rows])
    four_over_alpha = 4.0 / np.array([r[2] for r in rows])
    out = {}
    for name, xs in (("id", d), ("features", k)):
        if np.ptp(xs) == 0.0:
            raise ValueError(f"degenerate variance in {name} values")
        slope, intercept = np.polyfit(xs, four_over_alpha, 1)
        out[name] = (float(slope), float(intercept))
    return DimensionReport(
        rows=rows,
        slope_vs_id=out["id"][0],
        intercept_vs_id=out["id"][1],
        slope_vs_features=out["features"][0],
        intercept_vs_features=out["features"][1],
    )
