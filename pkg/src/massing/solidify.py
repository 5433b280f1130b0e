"""Build watertight building solids out of open roof surfaces.

Every solid here is z-monotone: a footprint polygon, a piecewise-linear top
surface over it, and a flat bottom. Booleans therefore reduce to 2D polygon
clipping plus height compositing, which sidesteps general mesh CSG while
matching what the extrusion pipeline can produce. Walls, caps and tops share
their boundary triangulations by construction, so results are watertight up
to the 1e-6 vertex weld.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import matplotlib.tri as mtri
import numpy as np
import shapely
from scipy.spatial import cKDTree
from shapely.geometry import MultiPolygon, Polygon as ShapelyPolygon
from shapely.ops import unary_union

from .errors import EmptyPartError, GeometryError, InvalidInputError
from .surface import OpenSurface
from .triangulation import (
    conforming_delaunay,
    dedupe_ring,
    densify_ring,
    ear_clip,
    ensure_ccw,
    ring_chain_indices,
    signed_area,
    strip_collinear,
    triangle_areas,
)
from .vectorize import RoofPolygon

WELD_TOL = 1e-6
#: grid used to snap footprint coordinates before 2D boolean operations
FOOTPRINT_GRID = 1e-4


@dataclass
class BuildingParams:
    """Facade height, roof-height ratio p_b (h_roof = h_facade * p_b) and the
    XY dilation that closes polygon-fitting cracks."""

    h_facade: float = 10.0
    p_b: float = 0.5
    dilation_xy: float = 1.0

    def __post_init__(self):
        if self.h_facade < 0 or self.p_b < 0:
            raise InvalidInputError("h_facade and p_b must be non-negative")
        if self.h_facade == 0 and self.p_b == 0:
            raise InvalidInputError("h_facade and p_b cannot both be zero")

    @property
    def roof_height(self) -> float:
        return self.h_facade * self.p_b

    @property
    def total_height(self) -> float:
        return self.h_facade + self.roof_height


@dataclass
class PrismInfo:
    """Z-monotone bookkeeping attached to a Solid: footprint shape, flat
    bottom, and the top heightfield triangulation with its boundary rings."""

    footprint: shapely.Geometry
    bottom_z: float
    top_vertices: np.ndarray | None = None
    top_triangles: np.ndarray | None = None
    boundary_rings: list[np.ndarray] = field(default_factory=list)


@dataclass
class Solid:
    """Closed triangle mesh, outward-oriented, with optional prism metadata."""

    vertices: np.ndarray
    triangles: np.ndarray
    component_count: int = 1
    prism: PrismInfo | None = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)

    def signed_volume(self) -> float:
        a = self.vertices[self.triangles[:, 0]]
        b = self.vertices[self.triangles[:, 1]]
        c = self.vertices[self.triangles[:, 2]]
        return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)

    def footprint_shape(self) -> shapely.Geometry:
        if self.prism is None:
            raise GeometryError("solid carries no prismatic metadata")
        return self.prism.footprint


@dataclass
class WatertightReport:
    boundary_edges: int
    nonmanifold_edges: int
    orientation_flips: int
    degenerate_triangles: int
    self_intersections: int
    signed_volume: float
    component_count: int

    @property
    def is_watertight(self) -> bool:
        return (
            self.boundary_edges == 0
            and self.nonmanifold_edges == 0
            and self.orientation_flips == 0
            and self.signed_volume > 0
        )


# ---------------------------------------------------------------------------
# mesh assembly helpers


def weld_mesh(vertices: np.ndarray, triangles: np.ndarray, tol: float = WELD_TOL):
    """Merge vertices within tol and drop triangles that collapse."""
    vertices = np.asarray(vertices, dtype=np.float64)
    keys = np.round(vertices / tol).astype(np.int64)
    lookup: dict[tuple[int, int, int], int] = {}
    remap = np.zeros(len(vertices), dtype=np.int64)
    out_vertices = []
    for i, k in enumerate(map(tuple, keys)):
        idx = lookup.get(k)
        if idx is None:
            idx = len(out_vertices)
            lookup[k] = idx
            out_vertices.append(vertices[i])
        remap[i] = idx
    tris = remap[np.asarray(triangles, dtype=np.int64)]
    ok = (tris[:, 0] != tris[:, 1]) & (tris[:, 1] != tris[:, 2]) & (tris[:, 0] != tris[:, 2])
    return np.asarray(out_vertices), tris[ok]


def _component_count(n_vertices: int, triangles: np.ndarray) -> int:
    parent = list(range(n_vertices))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for t in triangles:
        a, b, c = int(t[0]), int(t[1]), int(t[2])
        ra, rb, rc = find(a), find(b), find(c)
        parent[rb] = ra
        parent[find(c)] = find(a)
    used = np.unique(triangles)
    return len({find(int(v)) for v in used})


class _MeshBuilder:
    """Vertex interning + triangle accumulation with deterministic ids."""

    def __init__(self):
        self.vertices: list[tuple[float, float, float]] = []
        self.triangles: list[tuple[int, int, int]] = []
        self._lookup: dict[tuple[int, int, int], int] = {}

    def vertex(self, xyz) -> int:
        key = (
            int(round(xyz[0] / WELD_TOL)),
            int(round(xyz[1] / WELD_TOL)),
            int(round(xyz[2] / WELD_TOL)),
        )
        idx = self._lookup.get(key)
        if idx is None:
            idx = len(self.vertices)
            self._lookup[key] = idx
            self.vertices.append((float(xyz[0]), float(xyz[1]), float(xyz[2])))
        return idx

    def triangle(self, a, b, c):
        if a != b and b != c and a != c:
            self.triangles.append((a, b, c))

    def arrays(self):
        return np.asarray(self.vertices, dtype=np.float64), np.asarray(self.triangles, dtype=np.int64)


def _build_prism_mesh(points2d, z_top, triangles, rings, bottom_z) -> tuple[np.ndarray, np.ndarray]:
    """Top heightfield + flat bottom + boundary walls, outward oriented.

    `rings` are ordered index rings (exterior CCW / holes CW) so the interior
    always lies on the left of each directed ring edge.
    """
    z_top = np.maximum(np.asarray(z_top, dtype=np.float64), bottom_z)
    if np.all(z_top <= bottom_z + 1e-12):
        raise GeometryError("solid has no height above the bottom plane")
    builder = _MeshBuilder()
    top_ids = [builder.vertex((points2d[i, 0], points2d[i, 1], z_top[i])) for i in range(len(points2d))]
    bot_ids = [builder.vertex((points2d[i, 0], points2d[i, 1], bottom_z)) for i in range(len(points2d))]
    for t in triangles:
        builder.triangle(top_ids[t[0]], top_ids[t[1]], top_ids[t[2]])
        builder.triangle(bot_ids[t[0]], bot_ids[t[2]], bot_ids[t[1]])
    for ring in rings:
        n = len(ring)
        for i in range(n):
            a = int(ring[i])
            b = int(ring[(i + 1) % n])
            at, bt = top_ids[a], top_ids[b]
            ab, bb = bot_ids[a], bot_ids[b]
            builder.triangle(at, ab, bb)
            builder.triangle(at, bb, bt)
    return builder.arrays()


def _polygon_rings(shape: ShapelyPolygon) -> list[np.ndarray]:
    """Exterior CCW first, interiors CW, as coordinate rings."""
    ext = ensure_ccw(dedupe_ring(np.asarray(shape.exterior.coords)[:-1]))
    rings = [ext]
    for hole in shape.interiors:
        ring = dedupe_ring(np.asarray(hole.coords)[:-1])
        if signed_area(ring) > 0:
            ring = ring[::-1]
        rings.append(ring)
    return rings


def _node_segments(segments: list) -> list:
    """Split a segment soup at mutual crossings (GEOS noding) so the
    conforming triangulation never sees intersecting constraints."""
    if not segments:
        return []
    from shapely.geometry import LineString

    merged = unary_union([LineString([a, b]) for a, b in segments])
    geoms = getattr(merged, "geoms", [merged])
    out = []
    for g in geoms:
        coords = list(g.coords)
        out.extend((coords[k], coords[k + 1]) for k in range(len(coords) - 1))
    return out


def _triangulate_region(
    shape: ShapelyPolygon,
    extra_points: np.ndarray | None = None,
    extra_segments: list | None = None,
    ring_spacing: float | None = None,
):
    """Conforming triangulation of a polygon (with holes).

    Returns (points2d, triangles, rings) where rings are index rings into
    points2d in the _polygon_rings order, including any vertices that noding
    or refinement inserted on ring edges.
    """
    coord_rings = _polygon_rings(shape)
    if ring_spacing is not None:
        coord_rings = [densify_ring(r, ring_spacing) for r in coord_rings]
    segments = []
    for ring in coord_rings:
        n = len(ring)
        segments.extend(
            (tuple(ring[i]), tuple(ring[(i + 1) % n])) for i in range(n)
        )
    if extra_segments:
        segments.extend(extra_segments)
    segments = _node_segments(segments)
    pts = np.vstack([r for r in coord_rings])
    if extra_points is not None and len(extra_points):
        pts = np.vstack([pts, extra_points])
    ct = conforming_delaunay(pts, segments)

    centroids = ct.points[ct.triangles].mean(axis=1)
    shapely.prepare(shape)
    keep = shapely.contains_xy(shape, centroids[:, 0], centroids[:, 1])
    keep &= triangle_areas(ct.points, ct.triangles) > 1e-12
    tris = ct.triangles[keep]
    if len(tris) == 0:
        raise EmptyPartError("region too thin to triangulate")

    used = np.unique(tris)
    remap = -np.ones(len(ct.points), dtype=np.int64)
    remap[used] = np.arange(len(used))
    points2d = ct.points[used]
    tris = remap[tris]
    rings = []
    for ring in coord_rings:
        idx = remap[ring_chain_indices(ct.points, ring, ct.index_of)]
        if (idx < 0).any():
            raise GeometryError("region boundary vertex missing from triangulation")
        rings.append(idx)
    # triangles oriented CCW so tops face up
    a = points2d[tris[:, 0]]
    b = points2d[tris[:, 1]]
    c = points2d[tris[:, 2]]
    cross = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    tris[cross < 0] = tris[cross < 0][:, [0, 2, 1]]
    return points2d, tris, rings


class _TopEvaluator:
    """Point-wise evaluation of a prismatic solid's piecewise-linear top."""

    def __init__(self, info: PrismInfo):
        if info.top_vertices is None or info.top_triangles is None:
            raise GeometryError("prism metadata lacks a top surface")
        self.v = info.top_vertices
        self.t = info.top_triangles
        tri = mtri.Triangulation(self.v[:, 0], self.v[:, 1], self.t)
        self._finder = tri.get_trifinder()
        self._kd = cKDTree(self.v[:, :2])

    def __call__(self, pts: np.ndarray, snap_tol: float = 1e-3) -> np.ndarray:
        pts = np.atleast_2d(pts)
        hit = self._finder(pts[:, 0], pts[:, 1])
        out = np.full(len(pts), np.nan)
        ok = hit >= 0
        if ok.any():
            tri = self.t[hit[ok]]
            a = self.v[tri[:, 0]]
            b = self.v[tri[:, 1]]
            c = self.v[tri[:, 2]]
            d = (b[:, 1] - c[:, 1]) * (a[:, 0] - c[:, 0]) + (c[:, 0] - b[:, 0]) * (a[:, 1] - c[:, 1])
            px = pts[ok, 0]
            py = pts[ok, 1]
            w0 = ((b[:, 1] - c[:, 1]) * (px - c[:, 0]) + (c[:, 0] - b[:, 0]) * (py - c[:, 1])) / d
            w1 = ((c[:, 1] - a[:, 1]) * (px - c[:, 0]) + (a[:, 0] - c[:, 0]) * (py - c[:, 1])) / d
            w2 = 1.0 - w0 - w1
            out[ok] = w0 * a[:, 2] + w1 * b[:, 2] + w2 * c[:, 2]
        miss = ~ok
        if miss.any():
            d, idx = self._kd.query(pts[miss])
            near = d <= snap_tol
            vals = np.full(miss.sum(), np.nan)
            vals[near] = self.v[idx[near], 2]
            out[miss] = vals
        return out


def _snap_polygon(vertices: np.ndarray) -> np.ndarray:
    return np.round(np.asarray(vertices, dtype=np.float64) / FOOTPRINT_GRID) * FOOTPRINT_GRID


# ---------------------------------------------------------------------------
# public operations


def scale_roof(
    s: OpenSurface, params: BuildingParams, z_range: tuple[float, float] | None = None
) -> OpenSurface:
    """Remap roof z so it spans [h_facade, h_facade + h_roof].

    Multi-part buildings pass the global z range through `z_range` so all
    parts share one mapping and keep their relative heights; flat surfaces
    (zero range) sit at facade height.
    """
    out = s.copy()
    z = out.vertices[:, 2]
    z_lo, z_hi = z_range if z_range is not None else (float(z.min()), float(z.max()))
    span = z_hi - z_lo
    if span <= 1e-12:
        out.vertices[:, 2] = params.h_facade
    else:
        out.vertices[:, 2] = params.h_facade + (z - z_lo) * (params.roof_height / span)
    return out


def extrude_roof_down(s: OpenSurface, z_bottom: float = 0.0) -> Solid:
    """Close an open roof surface into a solid: walls from the boundary loop
    down to z_bottom plus a flat bottom cap sharing the top triangulation."""
    xy = s.vertices[:, :2]
    keys = {tuple(k) for k in np.round(xy / 1e-9).astype(np.int64)}
    if len(keys) != len(xy):
        raise GeometryError("surface is not a height field (duplicate XY)")
    ring = s.vertices[s.boundary_loop][:, :2]
    footprint = ShapelyPolygon(ring)
    if not footprint.is_valid:
        raise GeometryError("boundary loop does not form a valid footprint polygon")
    vertices, triangles = _build_prism_mesh(
        xy, s.vertices[:, 2], s.triangles, [s.boundary_loop], z_bottom
    )
    info = PrismInfo(
        footprint=footprint,
        bottom_z=z_bottom,
        top_vertices=s.vertices.copy(),
        top_triangles=s.triangles.copy(),
        boundary_rings=[s.boundary_loop.copy()],
    )
    return Solid(vertices, triangles, 1, info)


def extrude_prism_up(poly, h_top: float) -> Solid:
    """Right prism over a simple polygon from z=0 to h_top."""
    if h_top <= 0:
        raise InvalidInputError(f"prism height must be positive, got {h_top}")
    vertices = poly.vertices if isinstance(poly, RoofPolygon) else np.asarray(poly, dtype=np.float64)
    ring = strip_collinear(_snap_polygon(vertices))
    if len(ring) < 3:
        raise GeometryError("polygon degenerates after cleaning")
    ring = ensure_ccw(ring)
    shape = ShapelyPolygon(ring)
    if not (shape.is_valid and shape.is_simple):
        raise GeometryError("polygon is self-intersecting")
    cap = np.array(ear_clip(ring), dtype=np.int64)
    z_top = np.full(len(ring), float(h_top))
    loop = np.arange(len(ring), dtype=np.int64)
    verts, tris = _build_prism_mesh(ring, z_top, cap, [loop], 0.0)
    info = PrismInfo(
        footprint=shape,
        bottom_z=0.0,
        top_vertices=np.column_stack([ring, z_top]),
        top_triangles=cap,
        boundary_rings=[loop],
    )
    return Solid(verts, tris, 1, info)


def _covers(outer: shapely.Geometry, inner: shapely.Geometry) -> bool:
    return outer.buffer(1e-9).covers(inner)


def intersect_prismatic(roof: Solid, prism: Solid) -> Solid:
    """Boolean intersection of two z-monotone solids.

    2D footprint clipping plus a min() of the two top heightfields over a
    common flat bottom (the higher of the two bottoms).
    """
    if roof.prism is None or prism.prism is None:
        raise GeometryError("intersection needs prismatic metadata on both solids")
    a, b = roof.prism, prism.prism
    inter = a.footprint.intersection(b.footprint)
    inter = _largest_polygon(inter)
    if inter is None or inter.area < 1e-9:
        raise EmptyPartError("footprints do not overlap")

    eval_a = _TopEvaluator(a)
    eval_b = _TopEvaluator(b)
    # superset fast path keeps the smaller solid bit-identical
    for small, big, eval_big in ((roof, b, eval_b), (prism, a, eval_a)):
        sp, bp = small.prism, big
        if _covers(bp.footprint, sp.footprint) and bp.bottom_z <= sp.bottom_z + 1e-9:
            top = eval_big(sp.top_vertices[:, :2])
            if not np.isnan(top).any() and np.all(top >= sp.top_vertices[:, 2] - 1e-9):
                return Solid(
                    small.vertices.copy(), small.triangles.copy(), small.component_count, sp
                )

    bottom = max(a.bottom_z, b.bottom_z)
    extras = []
    for info in (a, b):
        pts = info.top_vertices[:, :2]
        keep = shapely.contains_xy(inter, pts[:, 0], pts[:, 1])
        extras.append(pts[keep])
    extra_points = np.vstack(extras) if extras else None
    points2d, tris, rings = _triangulate_region(inter, extra_points=extra_points)
    za = eval_a(points2d)
    zb = eval_b(points2d)
    z = np.fmin(za, zb)
    if np.isnan(z).any():
        # fall back to the other side's sample where one top has no answer
        z = np.where(np.isnan(z), np.where(np.isnan(za), zb, za), z)
    if np.isnan(z).any():
        raise GeometryError("top evaluation failed inside the clipped footprint")
    if np.all(z <= bottom + 1e-9):
        raise EmptyPartError("intersection has no height")
    z = np.maximum(z, bottom + 1e-6)
    verts, mesh_tris = _build_prism_mesh(points2d, z, tris, rings, bottom)
    info = PrismInfo(
        footprint=inter,
        bottom_z=bottom,
        top_vertices=np.column_stack([points2d, z]),
        top_triangles=tris,
        boundary_rings=rings,
    )
    return Solid(verts, mesh_tris, 1, info)


def _largest_polygon(geom) -> ShapelyPolygon | None:
    if geom.is_empty:
        return None
    if isinstance(geom, ShapelyPolygon):
        return geom
    if isinstance(geom, MultiPolygon):
        return max(geom.geoms, key=lambda g: g.area)
    if hasattr(geom, "geoms"):
        polys = [g for g in geom.geoms if isinstance(g, ShapelyPolygon)]
        if polys:
            return max(polys, key=lambda g: g.area)
    return None


class _BoundaryHeight:
    """z along a footprint ring, linear between ring vertices by arc length."""

    def __init__(self, ring_xyz: np.ndarray):
        self.points = ring_xyz
        closed = np.vstack([ring_xyz, ring_xyz[:1]])
        seg = np.hypot(np.diff(closed[:, 0]), np.diff(closed[:, 1]))
        self.cum = np.concatenate([[0.0], np.cumsum(seg)])
        self.total = self.cum[-1]
        from shapely.geometry import LineString

        self.line = LineString(closed[:, :2])

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        from shapely.geometry import Point

        out = np.zeros(len(pts))
        for i, p in enumerate(pts):
            d = self.line.project(Point(p))
            k = int(np.searchsorted(self.cum, d, side="right")) - 1
            k = min(max(k, 0), len(self.points) - 1)
            seg_len = self.cum[k + 1] - self.cum[k]
            t = 0.0 if seg_len <= 0 else (d - self.cum[k]) / seg_len
            z0 = self.points[k, 2]
            z1 = self.points[(k + 1) % len(self.points), 2]
            out[i] = z0 + t * (z1 - z0)
        return out


def dilate_xy(s: Solid, amount: float = 1.0) -> Solid:
    """Offset the footprint outward (mitred, limit 2, then beveled) and extend
    the top by continuing the boundary height outward."""
    if amount < 0:
        raise InvalidInputError("dilation amount must be non-negative")
    if amount == 0:
        return s
    if s.prism is None or s.prism.top_vertices is None:
        raise GeometryError("dilation needs prismatic metadata")
    info = s.prism
    grown = info.footprint.buffer(amount, join_style="mitre", mitre_limit=2.0)
    grown = _largest_polygon(grown)
    if grown is None:
        raise GeometryError("dilation produced no footprint")

    eval_top = _TopEvaluator(info)
    ring_idx = info.boundary_rings[0]
    boundary_z = _BoundaryHeight(info.top_vertices[ring_idx])

    old_ring = info.top_vertices[ring_idx][:, :2]
    segments = [
        (tuple(old_ring[i]), tuple(old_ring[(i + 1) % len(old_ring)]))
        for i in range(len(old_ring))
    ]
    extra = np.vstack([info.top_vertices[:, :2], old_ring])
    points2d, tris, rings = _triangulate_region(grown, extra_points=extra, extra_segments=segments)

    z = eval_top(points2d)
    outside = np.isnan(z)
    if outside.any():
        z[outside] = boundary_z(points2d[outside])
    verts, mesh_tris = _build_prism_mesh(points2d, z, tris, rings, info.bottom_z)
    new_info = PrismInfo(
        footprint=grown,
        bottom_z=info.bottom_z,
        top_vertices=np.column_stack([points2d, z]),
        top_triangles=tris,
        boundary_rings=rings,
    )
    return Solid(verts, mesh_tris, 1, new_info)


def union_parts(solids: list[Solid]) -> Solid:
    """Union of z-monotone solids standing on one ground plane.

    Builds one conforming triangulation per union component, picks the
    dominant (highest-top) part per triangle and emits vertical walls where
    the dominant part changes, so cliffs between stacked parts stay sharp.
    """
    if not solids:
        raise InvalidInputError("union needs at least one solid")
    if len(solids) == 1:
        s = solids[0]
        return Solid(s.vertices.copy(), s.triangles.copy(), s.component_count, s.prism)
    infos = [s.prism for s in solids]
    if any(i is None or i.top_vertices is None for i in infos):
        raise GeometryError("union needs prismatic metadata on every solid")
    bottoms = {round(i.bottom_z / 1e-9) for i in infos}
    if len(bottoms) != 1:
        raise GeometryError("union parts must share one bottom plane")
    bottom = infos[0].bottom_z

    union_fp = unary_union([i.footprint for i in infos])
    components = list(union_fp.geoms) if isinstance(union_fp, MultiPolygon) else [union_fp]
    evaluators = [_TopEvaluator(i) for i in infos]

    builder = _MeshBuilder()
    for comp in components:
        part_ids = [
            k for k, i in enumerate(infos) if comp.intersection(i.footprint).area > 1e-9
        ]
        extra_segments = []
        extra_points = []
        for k in part_ids:
            for ring_idx in infos[k].boundary_rings:
                ring = infos[k].top_vertices[ring_idx][:, :2]
                extra_segments.extend(
                    (tuple(ring[i]), tuple(ring[(i + 1) % len(ring)]))
                    for i in range(len(ring))
                )
            extra_points.append(infos[k].top_vertices[:, :2])
        pts = np.vstack(extra_points)
        inside = shapely.contains_xy(comp.buffer(1e-7), pts[:, 0], pts[:, 1])
        points2d, tris, _rings = _triangulate_region(
            comp, extra_points=pts[inside], extra_segments=extra_segments
        )

        centroids = points2d[tris].mean(axis=1)
        tops = np.full((len(part_ids), len(tris)), -np.inf)
        for row, k in enumerate(part_ids):
            vals = evaluators[k](centroids)
            tops[row] = np.where(np.isnan(vals), -np.inf, vals)
        dominant_row = tops.argmax(axis=0)
        covered = np.isfinite(tops.max(axis=0))
        if not covered.all():
            tris = tris[covered]
            dominant_row = dominant_row[covered]

        # per-corner z from the dominant part; duplicated across cliffs
        corner_z = np.zeros((len(tris), 3))
        corner_pts = points2d[tris]  # (T, 3, 2)
        for row, k in enumerate(part_ids):
            sel = dominant_row == row
            if not sel.any():
                continue
            flat = corner_pts[sel].reshape(-1, 2)
            vals = evaluators[k](flat).reshape(-1, 3)
            if np.isnan(vals).any():
                # corner marginally outside the part: snap to nearest sample
                vals = np.where(
                    np.isnan(vals), evaluators[k](flat, snap_tol=1.0).reshape(-1, 3), vals
                )
            corner_z[sel] = vals
        if np.isnan(corner_z).any():
            raise GeometryError("union top evaluation failed")

        top_ids = np.zeros((len(tris), 3), dtype=np.int64)
        for ti in range(len(tris)):
            for ci in range(3):
                p = corner_pts[ti, ci]
                top_ids[ti, ci] = builder.vertex((p[0], p[1], corner_z[ti, ci]))
            builder.triangle(*top_ids[ti])

        bot_of: dict[int, int] = {}

        def bottom_vertex(vid2d):
            idx = bot_of.get(vid2d)
            if idx is None:
                p = points2d[vid2d]
                idx = builder.vertex((p[0], p[1], bottom))
                bot_of[vid2d] = idx
            return idx

        for t in tris:
            builder.triangle(
                bottom_vertex(int(t[0])), bottom_vertex(int(t[2])), bottom_vertex(int(t[1]))
            )

        # directed edge -> (corner z at start, corner z at end)
        edge_side: dict[tuple[int, int], tuple[float, float]] = {}
        for ti, t in enumerate(tris):
            for ci in range(3):
                a2, b2 = int(t[ci]), int(t[(ci + 1) % 3])
                edge_side[(a2, b2)] = (corner_z[ti, ci], corner_z[ti, (ci + 1) % 3])

        def emit_wall(a2, b2, z_top, z_bot):
            # interior of the upper side lies left of a->b
            pa, pb = points2d[a2], points2d[b2]
            zta, ztb = z_top
            zba, zbb = z_bot
            if zta - zba <= 1e-9 and ztb - zbb <= 1e-9:
                return
            at = builder.vertex((pa[0], pa[1], zta))
            ab = builder.vertex((pa[0], pa[1], zba))
            bt = builder.vertex((pb[0], pb[1], ztb))
            bb = builder.vertex((pb[0], pb[1], zbb))
            builder.triangle(at, ab, bb)
            builder.triangle(at, bb, bt)

        done = set()
        for (a2, b2), (zla, zlb) in edge_side.items():
            if (b2, a2) in done or (a2, b2) in done:
                continue
            done.add((a2, b2))
            other = edge_side.get((b2, a2))
            if other is None:
                emit_wall(a2, b2, (zla, zlb), (bottom, bottom))
                continue
            zrb, zra = other  # other side runs b->a
            da = zla - zra
            db = zlb - zrb
            if abs(da) <= 1e-9 and abs(db) <= 1e-9:
                continue
            if da >= -1e-9 and db >= -1e-9:
                emit_wall(a2, b2, (zla, zlb), (zra, zrb))
            elif da <= 1e-9 and db <= 1e-9:
                emit_wall(b2, a2, (zrb, zra), (zlb, zla))
            else:
                # tops cross along the edge: split the wall at the crossing
                t = da / (da - db)
                pa, pb = points2d[a2], points2d[b2]
                pm = pa + (pb - pa) * t
                zm = zla + (zlb - zla) * t
                if da > 0:
                    emit_wall_raw(builder, pa, pm, (zla, zm), (zra, zm))
                    emit_wall_raw(builder, pm, pb, (zm, zrb), (zm, zlb))
                else:
                    emit_wall_raw(builder, pm, pa, (zm, zra), (zm, zla))
                    emit_wall_raw(builder, pb, pm, (zlb, zm), (zrb, zm))

    vertices, triangles = builder.arrays()
    vertices, triangles = weld_mesh(vertices, triangles)
    info = PrismInfo(footprint=union_fp, bottom_z=bottom)
    return Solid(vertices, triangles, _component_count(len(vertices), triangles), info)


def emit_wall_raw(builder: _MeshBuilder, pa, pb, z_top, z_bot):
    zta, ztb = z_top
    zba, zbb = z_bot
    if zta - zba <= 1e-9 and ztb - zbb <= 1e-9:
        return
    at = builder.vertex((pa[0], pa[1], zta))
    ab = builder.vertex((pa[0], pa[1], zba))
    bt = builder.vertex((pb[0], pb[1], ztb))
    bb = builder.vertex((pb[0], pb[1], zbb))
    builder.triangle(at, ab, bb)
    builder.triangle(at, bb, bt)


# ---------------------------------------------------------------------------
# validation and export


def _edge_census(triangles: np.ndarray):
    from collections import Counter

    undirected = Counter()
    directed = Counter()
    for t in triangles:
        for a, b in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
            undirected[(min(a, b), max(a, b))] += 1
            directed[(a, b)] += 1
    return undirected, directed


def validate_watertight(s: Solid, check_self_intersections: bool = True) -> WatertightReport:
    """Diagnostic report: manifoldness, orientation, volume, intersections.

    Vertices are welded (1e-6) before counting so coincident-but-unindexed
    geometry is judged by position, not by bookkeeping.
    """
    vertices, triangles = weld_mesh(s.vertices, s.triangles)
    undirected, directed = _edge_census(triangles)
    boundary = sum(1 for c in undirected.values() if c == 1)
    nonmanifold = sum(1 for c in undirected.values() if c > 2)
    flips = 0
    for (a, b), count in undirected.items():
        if count == 2 and directed.get((a, b), 0) != 1:
            flips += 1

    a = vertices[triangles[:, 0]]
    b = vertices[triangles[:, 1]]
    c = vertices[triangles[:, 2]]
    areas = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
    degenerate = int((areas <= 1e-9).sum())
    volume = float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)

    intersections = (
        _count_self_intersections(vertices, triangles) if check_self_intersections else 0
    )
    return WatertightReport(
        boundary_edges=boundary,
        nonmanifold_edges=nonmanifold,
        orientation_flips=flips,
        degenerate_triangles=degenerate,
        self_intersections=intersections,
        signed_volume=volume,
        component_count=_component_count(len(vertices), triangles),
    )


def _count_self_intersections(vertices: np.ndarray, triangles: np.ndarray, limit: int = 1000) -> int:
    """Count crossing triangle pairs (shared-vertex pairs excluded)."""
    n = len(triangles)
    if n == 0:
        return 0
    tri_pts = vertices[triangles]
    lo = tri_pts.min(axis=1)
    hi = tri_pts.max(axis=1)
    cell = float(np.median(hi - lo, axis=0).max()) or 1.0
    grid: dict[tuple[int, int, int], list[int]] = {}
    for i in range(n):
        lo_c = np.floor(lo[i] / cell).astype(int)
        hi_c = np.floor(hi[i] / cell).astype(int)
        for gx in range(lo_c[0], hi_c[0] + 1):
            for gy in range(lo_c[1], hi_c[1] + 1):
                for gz in range(lo_c[2], hi_c[2] + 1):
                    grid.setdefault((gx, gy, gz), []).append(i)
    checked = set()
    count = 0
    for bucket in grid.values():
        for ii in range(len(bucket)):
            for jj in range(ii + 1, len(bucket)):
                i, j = bucket[ii], bucket[jj]
                if (i, j) in checked:
                    continue
                checked.add((i, j))
                if set(triangles[i]) & set(triangles[j]):
                    continue
                if (lo[i] > hi[j] + 1e-12).any() or (lo[j] > hi[i] + 1e-12).any():
                    continue
                if _tri_tri_intersect(tri_pts[i], tri_pts[j]):
                    count += 1
                    if count >= limit:
                        return count
    return count


def _tri_tri_intersect(t1: np.ndarray, t2: np.ndarray, eps: float = 1e-9) -> bool:
    """Interval-overlap triangle intersection (coplanar pairs via 2D overlap)."""

    def plane(t):
        n = np.cross(t[1] - t[0], t[2] - t[0])
        return n, -np.dot(n, t[0])

    n2, d2 = plane(t2)
    dist1 = t1 @ n2 + d2
    if (dist1 > eps).all() or (dist1 < -eps).all():
        return False
    n1, d1 = plane(t1)
    dist2 = t2 @ n1 + d1
    if (dist2 > eps).all() or (dist2 < -eps).all():
        return False

    norm1 = np.linalg.norm(n1)
    norm2 = np.linalg.norm(n2)
    if norm1 < 1e-30 or norm2 < 1e-30:
        return False
    if (np.abs(dist1) <= eps * norm2).all() and (np.abs(dist2) <= eps * norm1).all():
        return _coplanar_overlap(t1, t2, n1)

    direction = np.cross(n1, n2)
    axis = int(np.argmax(np.abs(direction)))

    def interval(t, dist):
        proj = t[:, axis]
        pts = []
        for i in range(3):
            j = (i + 1) % 3
            di, dj = dist[i], dist[j]
            if di * dj < 0 or (abs(di) <= eps) != (abs(dj) <= eps):
                if abs(di - dj) > 1e-30:
                    f = di / (di - dj)
                    pts.append(proj[i] + f * (proj[j] - proj[i]))
            if abs(di) <= eps:
                pts.append(proj[i])
        if not pts:
            return None
        return min(pts), max(pts)

    i1 = interval(t1, dist1 / norm2)
    i2 = interval(t2, dist2 / norm1)
    if i1 is None or i2 is None:
        return False
    lo = max(i1[0], i2[0])
    hi = min(i1[1], i2[1])
    return hi - lo > eps


def _coplanar_overlap(t1, t2, n) -> bool:
    axis = int(np.argmax(np.abs(n)))
    keep = [i for i in range(3) if i != axis]
    p1 = ShapelyPolygon(t1[:, keep])
    p2 = ShapelyPolygon(t2[:, keep])
    if not (p1.is_valid and p2.is_valid):
        return False
    return p1.intersection(p2).area > 1e-12


def topdown_zbuffer(s: Solid, width: int, height: int):
    """Max-z and coverage of the solid sampled at integer pixel centres.

    Mesh coordinates are assumed to be in pixel units already (1 px = 1 unit),
    the convention the lifting stage establishes.
    """
    zbuf = np.full((height, width), -np.inf)
    v = s.vertices
    for t in s.triangles:
        xs = v[t, 0]
        ys = v[t, 1]
        zs = v[t, 2]
        d = (ys[1] - ys[2]) * (xs[0] - xs[2]) + (xs[2] - xs[1]) * (ys[0] - ys[2])
        if abs(d) < 1e-12:
            continue  # vertical wall: no top-down footprint
        x0 = max(int(np.ceil(xs.min())), 0)
        x1 = min(int(np.floor(xs.max())), width - 1)
        y0 = max(int(np.ceil(ys.min())), 0)
        y1 = min(int(np.floor(ys.max())), height - 1)
        if x0 > x1 or y0 > y1:
            continue
        gx, gy = np.meshgrid(np.arange(x0, x1 + 1, dtype=np.float64), np.arange(y0, y1 + 1, dtype=np.float64))
        w0 = ((ys[1] - ys[2]) * (gx - xs[2]) + (xs[2] - xs[1]) * (gy - ys[2])) / d
        w1 = ((ys[2] - ys[0]) * (gx - xs[2]) + (xs[0] - xs[2]) * (gy - ys[2])) / d
        w2 = 1.0 - w0 - w1
        inside = (w0 >= -1e-9) & (w1 >= -1e-9) & (w2 >= -1e-9)
        depth = w0 * zs[0] + w1 * zs[1] + w2 * zs[2]
        patch = zbuf[y0 : y1 + 1, x0 : x1 + 1]
        np.maximum(patch, np.where(inside, depth, -np.inf), out=patch)
    coverage = np.isfinite(zbuf)
    return zbuf, coverage


def count_stripy_walls(s: Solid, max_step: float = 2.5) -> int:
    """Staircase artifact detector: corners where two short, roughly
    perpendicular wall segments meet. Clean mitred walls score ~0; walls
    trimmed at pixel resolution light up."""
    v = s.vertices
    segments: dict[tuple, set[tuple]] = {}
    for t in s.triangles:
        a, b, c = v[t[0]], v[t[1]], v[t[2]]
        n = np.cross(b - a, c - a)
        norm = np.linalg.norm(n)
        if norm < 1e-15 or abs(n[2]) / norm > 1e-6:
            continue  # not a vertical wall
        for p, q in ((a, b), (b, c), (c, a)):
            if abs(p[2] - q[2]) > 1e-9:
                continue  # keep only horizontal wall edges
            pk = (round(p[0], 6), round(p[1], 6))
            qk = (round(q[0], 6), round(q[1], 6))
            if pk == qk:
                continue
            segments.setdefault(pk, set()).add(qk)
            segments.setdefault(qk, set()).add(pk)
    corners = 0
    for point, neighbors in segments.items():
        if len(neighbors) != 2:
            continue
        (ax, ay), (bx, by) = neighbors
        u = np.array([ax - point[0], ay - point[1]])
        w = np.array([bx - point[0], by - point[1]])
        lu = np.linalg.norm(u)
        lw = np.linalg.norm(w)
        if lu > max_step or lw > max_step or lu < 1e-9 or lw < 1e-9:
            continue
        cos = abs(float(u @ w) / (lu * lw))
        if cos < 0.3:  # roughly perpendicular
            corners += 1
    return corners


def export_obj(s: Solid, generator: str = "massing 0.1.0") -> str:
    """ASCII OBJ, Z-up, right-handed, CCW-outward faces, 1-based indices."""
    lines = [
        f"# {generator}",
        "# units: map units (1 source pixel = 1 unit); Z-up, right-handed; CCW faces point outward",
    ]
    for v in s.vertices:
        lines.append(f"v {v[0]:.6f} {v[1]:.6f} {v[2]:.6f}")
    for t in s.triangles:
        lines.append(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}")
    return "\n".join(lines) + "\n"


def save_obj(s: Solid, path, generator: str = "massing 0.1.0") -> None:
    from pathlib import Path

    Path(path).write_text(export_obj(s, generator))
