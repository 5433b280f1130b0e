"""Open roof surfaces: heightfield reconstruction over a fitted polygon and
roof-type-dependent fairing.

Reconstruction triangulates the polygon with an interior Steiner grid whose
spacing follows the resolution depth (cell = bounding-box side / 2^depth) and
assigns z by inverse-distance interpolation of the cleaned point cloud. When
grid vertices land exactly on cloud points the sample is exact, so lattice
clouds reproduce their pixels. The boundary loop lies on the polygon by
construction, which keeps later extrusion walls clean.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import shapely
from scipy.spatial import cKDTree

from .errors import EmptyPartError, GeometryError, InvalidInputError
from .lift import PointCloud
from .triangulation import (
    conforming_delaunay,
    densify_ring,
    ensure_ccw,
    ring_chain_indices,
    triangle_areas,
)
from .vectorize import RoofPolygon

#: roof taxonomy rows: (multi_piece, complexity, pitch); complexity is "n/a"
#: for flat roofs, where node degree carries no information.
ROOF_TYPE_TABLE: dict[int, tuple[bool, str, str]] = {
    1: (True, "complex", "pitched"),
    2: (True, "medium", "pitched"),
    3: (True, "simple", "pitched"),
    4: (True, "n/a", "flat"),
    5: (False, "complex", "pitched"),
    6: (False, "medium", "pitched"),
    7: (False, "simple", "pitched"),
    8: (False, "n/a", "flat"),
}


@dataclass(frozen=True)
class RoofTypeId:
    """One of the 8 roof classes: index plus its defining flags."""

    index: int

    def __post_init__(self):
        if self.index not in ROOF_TYPE_TABLE:
            raise InvalidInputError(f"roof type index must be 1..8, got {self.index}")

    @classmethod
    def from_flags(cls, multi_piece: bool, complexity: str, pitch: str) -> "RoofTypeId":
        if pitch == "flat":
            complexity = "n/a"
        for idx, row in ROOF_TYPE_TABLE.items():
            if row == (multi_piece, complexity, pitch):
                return cls(idx)
        raise InvalidInputError(f"no roof type for flags ({multi_piece}, {complexity}, {pitch})")

    @property
    def multi_piece(self) -> bool:
        return ROOF_TYPE_TABLE[self.index][0]

    @property
    def complexity(self) -> str:
        return ROOF_TYPE_TABLE[self.index][1]

    @property
    def pitch(self) -> str:
        return ROOF_TYPE_TABLE[self.index][2]

    @property
    def is_flat(self) -> bool:
        return self.pitch == "flat"


@dataclass
class OpenSurface:
    """Manifold-with-boundary triangle mesh with a single boundary loop.

    Triangles are CCW seen from above (normals have positive z); the boundary
    loop is an ordered index ring whose XY lies on the fitted polygon.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_loop: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        self.boundary_loop = np.asarray(self.boundary_loop, dtype=np.int64).ravel()

    def copy(self) -> "OpenSurface":
        return OpenSurface(self.vertices.copy(), self.triangles.copy(), self.boundary_loop.copy())

    @property
    def boundary_xy(self) -> np.ndarray:
        return self.vertices[self.boundary_loop][:, :2]

    @property
    def z_range(self) -> float:
        return float(self.vertices[:, 2].max() - self.vertices[:, 2].min())

    def interior_indices(self) -> np.ndarray:
        mask = np.ones(len(self.vertices), dtype=bool)
        mask[self.boundary_loop] = False
        return np.nonzero(mask)[0]


def reconstruct_open_surface(
    pc: PointCloud,
    polygon: RoofPolygon,
    resolution_depth: int = 6,
    idw_k: int = 8,
    idw_power: float = 2.0,
) -> OpenSurface:
    """Triangulated heightfield over the polygon, z interpolated from the cloud."""
    if len(pc) < 3:
        raise EmptyPartError(f"cloud has {len(pc)} points, need >= 3")
    ring = ensure_ccw(np.asarray(polygon.vertices, dtype=np.float64))
    shape = polygon.shapely()
    minx, miny, maxx, maxy = shape.bounds
    side = max(maxx - minx, maxy - miny)
    if side <= 0:
        raise EmptyPartError("polygon has no extent")

    cell = side / float(2**resolution_depth)
    if cell >= 1.0:
        spacing = float(round(cell))
        xs = np.arange(np.ceil(minx), np.floor(maxx) + 1, spacing)
        ys = np.arange(np.ceil(miny), np.floor(maxy) + 1, spacing)
    else:
        spacing = cell
        xs = np.arange(minx + spacing, maxx, spacing)
        ys = np.arange(miny + spacing, maxy, spacing)

    interior = np.zeros((0, 2))
    if len(xs) and len(ys):
        gx, gy = np.meshgrid(xs, ys)
        cand = np.column_stack([gx.ravel(), gy.ravel()])
        shrunk = shape.buffer(-0.35 * spacing)
        if not shrunk.is_empty:
            inside = shapely.contains_xy(shrunk, cand[:, 0], cand[:, 1])
            interior = cand[inside]

    boundary = densify_ring(ring, max_len=spacing)
    segments = [
        (tuple(boundary[i]), tuple(boundary[(i + 1) % len(boundary)]))
        for i in range(len(boundary))
    ]
    ct = conforming_delaunay(np.vstack([boundary, interior]) if len(interior) else boundary, segments)

    centroids = ct.points[ct.triangles].mean(axis=1)
    keep = shapely.contains_xy(shape, centroids[:, 0], centroids[:, 1])
    keep &= triangle_areas(ct.points, ct.triangles) > 1e-12
    tris = ct.triangles[keep]
    if len(tris) == 0:
        raise EmptyPartError("polygon too thin to triangulate")

    covered = triangle_areas(ct.points, tris).sum()
    if covered < 0.95 * shape.area:
        raise GeometryError(
            f"triangulation covers {covered:.1f} of {shape.area:.1f} polygon area"
        )

    used = np.unique(tris)
    remap = -np.ones(len(ct.points), dtype=np.int64)
    remap[used] = np.arange(len(used))
    pts2d = ct.points[used]
    tris = remap[tris]

    # boundary loop in ring order (with refinement points spliced in); every
    # consecutive pair must be a mesh edge
    loop = remap[ring_chain_indices(ct.points, boundary, ct.index_of)]
    if (loop < 0).any():
        raise GeometryError("boundary vertex missing from the triangulation")
    edge_set = set()
    for t in tris:
        for a, b in ((t[0], t[1]), (t[1], t[2]), (t[0], t[2])):
            edge_set.add((min(a, b), max(a, b)))
    for i in range(len(loop)):
        a, b = loop[i], loop[(i + 1) % len(loop)]
        if (min(a, b), max(a, b)) not in edge_set:
            raise GeometryError("boundary edge missing from the triangulation")

    z = _idw_heights(pts2d, pc, k=idw_k, power=idw_power)
    vertices = np.column_stack([pts2d, z])

    # orient CCW in XY so every triangle normal points up
    a = vertices[tris[:, 0], :2]
    b = vertices[tris[:, 1], :2]
    c = vertices[tris[:, 2], :2]
    cross = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    flip = cross < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]

    return OpenSurface(vertices, tris, loop)


def _idw_heights(pts2d: np.ndarray, pc: PointCloud, k: int, power: float) -> np.ndarray:
    tree = cKDTree(pc.xy)
    k = min(k, len(pc))
    dists, idx = tree.query(pts2d, k=k)
    if k == 1:
        dists = dists[:, None]
        idx = idx[:, None]
    z_neighbors = pc.z[idx]
    exact = dists[:, 0] < 1e-9
    with np.errstate(divide="ignore"):
        weights = 1.0 / np.power(dists, power)
    weights[~np.isfinite(weights)] = 0.0
    denom = weights.sum(axis=1)
    denom[denom == 0] = 1.0
    z = (weights * z_neighbors).sum(axis=1) / denom
    z[exact] = z_neighbors[exact, 0]
    return z


def fair_surface(s: OpenSurface, rt: RoofTypeId, iterations: int = 5) -> OpenSurface:
    """Roof-type-dependent fairing with a frozen boundary loop.

    Flat types snap every interior vertex onto the part's mean plane; pitched
    types run boundary-preserving Laplacian smoothing of z with lambda 0.5.
    """
    out = s.copy()
    interior = out.interior_indices()
    if len(interior) == 0 or iterations < 0:
        return out
    if rt.is_flat:
        out.vertices[interior, 2] = out.vertices[:, 2].mean()
        return out
    if iterations == 0:
        return out

    neighbors: dict[int, set[int]] = {int(i): set() for i in interior}
    for t in out.triangles:
        for i in range(3):
            a, b = int(t[i]), int(t[(i + 1) % 3])
            if a in neighbors:
                neighbors[a].add(b)
            if b in neighbors:
                neighbors[b].add(a)
    order = [int(i) for i in interior]
    neigh_idx = [np.fromiter(neighbors[i], dtype=np.int64) for i in order]
    z = out.vertices[:, 2].copy()
    lam = 0.5
    for _ in range(iterations):
        means = np.array([z[ni].mean() if len(ni) else z[i] for i, ni in zip(order, neigh_idx)])
        z[order] += lam * (means - z[order])
    out.vertices[:, 2] = z
    return out


def write_surface_obj(s: OpenSurface, path: str | Path) -> None:
    """Debug dump of an open surface as ASCII OBJ."""
    lines = ["# massing open-surface debug dump"]
    for v in s.vertices:
        lines.append(f"v {v[0]:.6f} {v[1]:.6f} {v[2]:.6f}")
    for t in s.triangles:
        lines.append(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}")
    Path(path).write_text("\n".join(lines) + "\n")
