"""Lift roof-zone pixels into cleaned, oriented 3D point clouds.

Pixel (col, row) with intensity v becomes the point (col, row, v * z_scale).
XY stays on the pixel lattice so downstream interpolation can sample the
original values exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyPartError, InvalidInputError
from .raster import GrayRaster


@dataclass
class LiftParams:
    z_scale: float = 0.1
    h_min: float = 0.2
    outlier_k: int = 16
    outlier_mult: float = 2.0

    def __post_init__(self):
        if self.z_scale <= 0:
            raise InvalidInputError(f"z_scale must be positive, got {self.z_scale}")
        if self.outlier_k < 3:
            raise InvalidInputError(f"outlier_k must be >= 3, got {self.outlier_k}")


@dataclass
class PointCloud:
    points: np.ndarray
    normals: np.ndarray | None = None
    warnings: tuple[str, ...] = field(default=())

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.isfinite(self.points).all():
            raise InvalidInputError("point cloud contains non-finite coordinates")
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def xy(self) -> np.ndarray:
        return self.points[:, :2]

    @property
    def z(self) -> np.ndarray:
        return self.points[:, 2]


def lift_zone(bfe: GrayRaster, zone_pixels: np.ndarray, params: LiftParams | None = None) -> PointCloud:
    """One point per zone pixel: (col, row, intensity * z_scale)."""
    params = params or LiftParams()
    zone_pixels = np.asarray(zone_pixels, dtype=np.int64).reshape(-1, 2)
    if len(zone_pixels) == 0:
        raise EmptyPartError("zone has no pixels")
    xs = zone_pixels[:, 0]
    ys = zone_pixels[:, 1]
    if xs.min() < 0 or ys.min() < 0 or xs.max() >= bfe.width or ys.max() >= bfe.height:
        raise InvalidInputError("zone pixels outside the raster")
    zs = bfe.data[ys, xs].astype(np.float64) * params.z_scale
    return PointCloud(np.column_stack([xs.astype(np.float64), ys.astype(np.float64), zs]))


def remove_outliers(pc: PointCloud, k: int = 16, mult: float = 2.0) -> PointCloud:
    """Statistical outlier removal.

    Points whose mean distance to their k nearest neighbours exceeds the
    global mean by more than `mult` standard deviations are dropped. The
    cutoff is floored at twice the median so the corner points of tight
    lattices never count as outliers; without the floor a plain grid loses
    its corners and repeated passes keep nibbling. Clouds with too few points
    pass through unchanged, flagged with a warning.
    """
    if len(pc) <= k:
        return PointCloud(pc.points.copy(), pc.normals, pc.warnings + ("too few points for outlier removal",))
    tree = cKDTree(pc.points)
    dists, _ = tree.query(pc.points, k=k + 1)
    mean_knn = dists[:, 1:].mean(axis=1)  # first column is the point itself
    cutoff = max(mean_knn.mean() + mult * mean_knn.std(), 2.0 * float(np.median(mean_knn)))
    keep = mean_knn <= cutoff
    normals = pc.normals[keep] if pc.normals is not None else None
    return PointCloud(pc.points[keep], normals, pc.warnings)


def remove_ground(pc: PointCloud, h_min: float) -> PointCloud:
    """Drop every point with z below h_min."""
    keep = pc.z >= h_min
    normals = pc.normals[keep] if pc.normals is not None else None
    return PointCloud(pc.points[keep], normals, pc.warnings)


def estimate_normals(pc: PointCloud, k: int = 16) -> PointCloud:
    """Per-point normals from the smallest covariance eigenvector of the k-NN
    neighbourhood, oriented into the upper hemisphere (roofs face up).

    Degenerate (collinear) neighbourhoods fall back to (0, 0, 1) and add a
    warning flag.
    """
    n = len(pc)
    if n < 3:
        raise EmptyPartError(f"need at least 3 points for normals, got {n}")
    k = min(k, n)
    if k < 3:
        raise InvalidInputError("k must be >= 3")
    tree = cKDTree(pc.points)
    _, idx = tree.query(pc.points, k=k)
    neigh = pc.points[idx]  # (n, k, 3)
    centered = neigh - neigh.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    eigvals, eigvecs = np.linalg.eigh(cov)
    normals = eigvecs[:, :, 0]

    scale = max(float(np.ptp(pc.points, axis=0).max()), 1e-12)
    degenerate = eigvals[:, 1] < 1e-12 * scale * scale
    flip = normals[:, 2] < 0
    normals[flip] = -normals[flip]
    vertical = np.abs(normals[:, 2]) < 1e-9
    bad = degenerate | vertical
    normals[bad] = (0.0, 0.0, 1.0)
    warnings = pc.warnings
    if bad.any():
        warnings = warnings + (f"{int(bad.sum())} degenerate normal neighbourhoods defaulted to +z",)
    norms = np.linalg.norm(normals, axis=1, keepdims=True)
    normals = normals / norms
    return PointCloud(pc.points.copy(), normals, warnings)


def write_xyz(pc: PointCloud, path: str | Path) -> None:
    """ASCII debug dump: x y z [nx ny nz] per line."""
    with open(path, "w") as fh:
        for i, p in enumerate(pc.points):
            if pc.normals is not None:
                nx, ny, nz = pc.normals[i]
                fh.write(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} {nx:.6f} {ny:.6f} {nz:.6f}\n")
            else:
                fh.write(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f}\n")
