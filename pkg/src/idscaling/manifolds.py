"""Synthetic point clouds with known intrinsic dimension, plus CSV I/O.

These clouds are the ground truth for validating the nearest-neighbor
dimension estimators: a uniform sample of the unit hypercube has intrinsic
dimension equal to its ambient dimension, and a product of unit circles
embedded pairwise in the plane has intrinsic dimension equal to the number
of circle factors (half its ambient dimension).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import make_rng

__all__ = [
    "PointCloud",
    "CloudFormatError",
    "sample_hypercube",
    "sample_torus",
    "save_cloud",
    "load_cloud",
]


class CloudFormatError(ValueError):
    """Raised when a point-cloud file cannot be parsed into a valid cloud."""


@dataclass(frozen=True)
class PointCloud:
    """An ordered set of ``n`` points in ``D`` ambient dimensions.

    ``points`` is an (n, D) float64 array. Clouds are immutable after
    construction and safe to share across threads.
    """

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2:
            raise ValueError(f"points must be a 2-D array, got shape {pts.shape}")
        if pts.shape[0] < 2:
            raise ValueError("a point cloud needs at least 2 points")
        if pts.shape[1] < 1:
            raise ValueError("ambient dimension must be >= 1")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def ambient_dim(self) -> int:
        return self.points.shape[1]


def sample_hypercube(d: int, n: int, seed: int) -> PointCloud:
    """Sample ``n`` points i.i.d. uniform on the unit hypercube ``[0, 1]^d``.

    Parameters
    ----------
    d : int
        Dimension of the hypercube (also the ambient dimension).
    n : int
        Number of points, at least 2.
    seed : int
        Seed for the PCG64 generator; identical arguments give bit-identical
        clouds.
    """
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    if n < 2:
        raise ValueError(f"need at least 2 points, got {n}")
    rng = make_rng(seed)
    return PointCloud(rng.random((n, d)))


def sample_torus(d: int, n: int, seed: int) -> PointCloud:
    """Sample ``n`` points on a ``d``-torus embedded in ``2d`` dimensions.

    Each point concatenates ``d`` independent unit circles; circle ``i``
    occupies coordinates ``(2i, 2i+1)`` as ``(cos t, sin t)`` with ``t``
    uniform on ``[0, 2*pi)``. Each circle factor has radius 1.
    """
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    if n < 2:
        raise ValueError(f"need at least 2 points, got {n}")
    rng = make_rng(seed)
    theta = rng.random((n, d)) * (2.0 * np.pi)
    out = np.empty((n, 2 * d))
    out[:, 0::2] = np.cos(theta)
    out[:, 1::2] = np.sin(theta)
    return PointCloud(out)


def save_cloud(cloud: PointCloud, path) -> None:
    """Write a cloud as headerless CSV, one point per row.

    Values are rendered with Python's shortest round-trip float notation, so
    ``load_cloud(save_cloud(c))`` reproduces ``c`` bit-exactly.
    """
    with open(path, "w", encoding="ascii") as fh:
        for row in cloud.points:
            fh.write(",".join(repr(v) for v in row.tolist()))
            fh.write("\n")


def load_cloud(path) -> PointCloud:
    """Read a cloud written by :func:`save_cloud` (or any headerless float CSV).

    Raises
    ------
    CloudFormatError
        If a row has the wrong number of columns, contains a non-finite or
        unparsable value (the error names the offending 1-based row), or the
        file holds fewer than 2 points.
    """
    rows = []
    width = None
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            if width is None:
                width = len(fields)
            elif len(fields) != width:
                raise CloudFormatError(
                    f"row {lineno}: expected {width} columns, found {len(fields)}"
                )
            try:
                values = [float(f) for f in fields]
            except ValueError as exc:
                raise CloudFormatError(f"row {lineno}: {exc}") from None
            if not all(np.isfinite(values)):
                raise CloudFormatError(f"row {lineno}: non-finite value")
            rows.append(values)
    if len(rows) < 2:
        raise CloudFormatError(f"fewer than 2 points in {path}")
    return PointCloud(np.array(rows, dtype=np.float64))
