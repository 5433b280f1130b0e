"""Separate a filtered height map into brightness zones and fit each zone's
exterior with a simple polygon.

Clustering is region growing on 4-neighbours: two adjacent non-zero pixels
belong to the same zone when their intensity difference stays below
256 / color_precision. Zone exteriors are traced as closed 8-connected pixel
contours and simplified Douglas-Peucker style.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from shapely.geometry import Polygon as ShapelyPolygon

from .errors import DegenerateZoneError, EmptyFootprintError, InvalidInputError
from .raster import GrayRaster
from .triangulation import ensure_ccw, signed_area


@dataclass
class VectorizeParams:
    color_precision: int = 6
    min_zone_area: int = 16
    simplify_tolerance: float = 1.5
    overlap_area_px: float = 2.0

    def __post_init__(self):
        if self.color_precision < 1:
            raise InvalidInputError(f"color_precision must be >= 1, got {self.color_precision}")


@dataclass
class ZoneLabelMap:
    """Zone ids per pixel (0 = background) plus the mean intensity per zone."""

    labels: np.ndarray
    zone_means: dict[int, float] = field(default_factory=dict)

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def zone_ids(self) -> list[int]:
        return sorted(self.zone_means)

    def zone_mask(self, zone_id: int) -> np.ndarray:
        return self.labels == zone_id

    def zone_pixels(self, zone_id: int) -> np.ndarray:
        """(N, 2) array of (x, y) pixel coordinates of one zone."""
        ys, xs = np.nonzero(self.labels == zone_id)
        return np.column_stack([xs, ys])


@dataclass
class RoofPolygon:
    """Simple CCW polygon fitted to one roof zone, in pixel units."""

    vertices: np.ndarray
    zone_id: int = 0
    mean_height: int = 0

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2 or len(self.vertices) < 3:
            raise DegenerateZoneError("polygon needs at least 3 planar vertices")
        if signed_area(self.vertices) <= 0:
            raise DegenerateZoneError("polygon must be CCW with positive area")

    @property
    def area(self) -> float:
        return signed_area(self.vertices)

    def shapely(self) -> ShapelyPolygon:
        return ShapelyPolygon(self.vertices)


def cluster_zones(
    bfe: GrayRaster, color_precision: int = 6, min_zone_area: int = 16
) -> ZoneLabelMap:
    """Group non-zero pixels into brightness zones.

    Zones smaller than min_zone_area are merged into the 4-adjacent zone with
    the closest mean intensity, or dropped when they touch nothing.
    """
    if color_precision < 1:
        raise InvalidInputError("color_precision must be >= 1")
    data = bfe.data.astype(np.int32)
    h, w = data.shape
    nonzero = data > 0
    flat = np.arange(h * w).reshape(h, w)

    rows = []
    cols = []
    threshold = 256.0 / color_precision
    # horizontal neighbours
    ok = nonzero[:, :-1] & nonzero[:, 1:] & (np.abs(data[:, :-1] - data[:, 1:]) < threshold)
    rows.append(flat[:, :-1][ok])
    cols.append(flat[:, 1:][ok])
    # vertical neighbours
    ok = nonzero[:-1, :] & nonzero[1:, :] & (np.abs(data[:-1, :] - data[1:, :]) < threshold)
    rows.append(flat[:-1, :][ok])
    cols.append(flat[1:, :][ok])

    n = h * w
    graph = coo_matrix(
        (np.ones(sum(len(r) for r in rows)), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    )
    _, comp = connected_components(graph, directed=False)
    comp = comp.reshape(h, w)
    comp[~nonzero] = -1

    labels = np.zeros((h, w), dtype=np.int32)
    order = {}
    ys, xs = np.nonzero(nonzero)
    for y, x in zip(ys, xs):  # first-scan order fixes the labelling
        c = comp[y, x]
        if c not in order:
            order[c] = len(order) + 1
        labels[y, x] = order[c]

    labels = _merge_small_zones(labels, data, min_zone_area)
    means = {
        int(z): float(data[labels == z].mean()) for z in np.unique(labels) if z != 0
    }
    return ZoneLabelMap(labels, means)


def _merge_small_zones(labels: np.ndarray, data: np.ndarray, min_area: int) -> np.ndarray:
    while True:
        ids, counts = np.unique(labels[labels > 0], return_counts=True)
        if len(ids) == 0:
            break
        small = [(c, z) for z, c in zip(ids, counts) if c < min_area]
        if not small:
            break
        _, zone = min(small)
        mask = labels == zone
        neigh = set()
        for shifted in (
            np.pad(labels, ((0, 1), (0, 0)))[1:, :][mask],
            np.pad(labels, ((1, 0), (0, 0)))[:-1, :][mask],
            np.pad(labels, ((0, 0), (0, 1)))[:, 1:][mask],
            np.pad(labels, ((0, 0), (1, 0)))[:, :-1][mask],
        ):
            neigh.update(int(v) for v in np.unique(shifted))
        neigh.discard(0)
        neigh.discard(zone)
        if neigh:
            mean = data[mask].mean()
            target = min(neigh, key=lambda z: (abs(data[labels == z].mean() - mean), z))
            labels[mask] = target
        else:
            labels[mask] = 0  # isolated speck: dropped
    # relabel contiguous from 1, in first-pixel order
    out = np.zeros_like(labels)
    remap = {}
    ys, xs = np.nonzero(labels)
    for y, x in zip(ys, xs):
        z = labels[y, x]
        if z not in remap:
            remap[z] = len(remap) + 1
        out[y, x] = remap[z]
    return out


def trace_boundary(zones: ZoneLabelMap, zone_id: int) -> np.ndarray:
    """Closed outer boundary of a zone as ordered (x, y) pixels, CCW.

    Walks the inter-pixel crack boundary keeping the zone on its right and
    emits the zone pixel of every crack edge; pixels whose only outside
    contact is diagonal (inner corners) are inserted between their crack
    neighbours, so every pixel with a non-zone 8-neighbour is visited.
    """
    mask = zones.zone_mask(zone_id)
    if not mask.any():
        raise InvalidInputError(f"zone {zone_id} does not exist")
    h, w = mask.shape

    def in_zone(x, y):
        return 0 <= x < w and 0 <= y < h and mask[y, x]

    ys, xs = np.nonzero(mask)
    y0 = int(ys.min())
    x0 = int(xs[ys == y0].min())
    if mask.sum() == 1:
        return np.array([(x0, y0)], dtype=np.int64)

    EAST, SOUTH, WEST, NORTH = (1, 0), (0, 1), (-1, 0), (0, -1)
    state = ((x0, y0), EAST)  # top edge of the topmost-leftmost pixel
    emitted: list[tuple[int, int]] = []
    c, d = state
    while True:
        cx, cy = c
        if d == EAST:
            emitted.append((cx, cy))
        elif d == SOUTH:
            emitted.append((cx - 1, cy))
        elif d == WEST:
            emitted.append((cx - 1, cy - 1))
        else:
            emitted.append((cx, cy - 1))
        hx, hy = cx + d[0], cy + d[1]
        if d == EAST:
            if in_zone(hx, hy - 1):
                d = NORTH
            elif not in_zone(hx, hy):
                d = SOUTH
        elif d == SOUTH:
            if in_zone(hx, hy):
                d = EAST
            elif not in_zone(hx - 1, hy):
                d = WEST
        elif d == WEST:
            if in_zone(hx - 1, hy):
                d = SOUTH
            elif not in_zone(hx - 1, hy - 1):
                d = NORTH
        else:  # NORTH
            if in_zone(hx - 1, hy - 1):
                d = WEST
            elif not in_zone(hx, hy - 1):
                d = EAST
        c = (hx, hy)
        if (c, d) == state:
            break
        if len(emitted) > 8 * mask.size + 16:
            raise DegenerateZoneError("boundary tracing did not close")

    # collapse repeated emissions at corners
    chain: list[tuple[int, int]] = []
    for p in emitted:
        if not chain or p != chain[-1]:
            chain.append(p)
    if len(chain) > 1 and chain[0] == chain[-1]:
        chain.pop()

    def is_boundary(x, y):
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                if (dx or dy) and not in_zone(x + dx, y + dy):
                    return True
        return False

    # inner corners touch the outside only diagonally: insert them between
    # their diagonal crack neighbours
    full: list[tuple[int, int]] = []
    n = len(chain)
    for i, p in enumerate(chain):
        full.append(p)
        q = chain[(i + 1) % n]
        if abs(p[0] - q[0]) == 1 and abs(p[1] - q[1]) == 1:
            for corner in ((p[0], q[1]), (q[0], p[1])):
                if corner in (p, q):
                    continue
                if in_zone(*corner) and is_boundary(*corner):
                    full.append(corner)
                    break

    seen = set()
    contour = []
    for p in full:
        if p not in seen:
            seen.add(p)
            contour.append(p)
    arr = np.array(contour, dtype=np.int64)
    if len(arr) >= 3 and signed_area(arr.astype(np.float64)) < 0:
        arr = arr[::-1]
    return arr


def _point_segment_distance(p, a, b):
    ab = b - a
    denom = float(ab[0] ** 2 + ab[1] ** 2)
    if denom == 0:
        return float(np.hypot(*(p - a)))
    t = np.clip(((p - a) @ ab) / denom, 0.0, 1.0)
    return float(np.hypot(*(p - (a + t * ab))))


def _douglas_peucker(points: np.ndarray, tolerance: float) -> list[int]:
    """Indices kept by DP simplification of an open polyline."""
    keep = {0, len(points) - 1}
    stack = [(0, len(points) - 1)]
    while stack:
        i, j = stack.pop()
        if j - i < 2:
            continue
        seg = points[i + 1 : j]
        a, b = points[i], points[j]
        dists = np.array([_point_segment_distance(p, a, b) for p in seg])
        k = int(np.argmax(dists))
        if dists[k] > tolerance:
            mid = i + 1 + k
            keep.add(mid)
            stack.append((i, mid))
            stack.append((mid, j))
    return sorted(keep)


def simplify_polygon(
    contour: np.ndarray,
    tolerance: float = 1.5,
    zone_id: int = 0,
    mean_height: int = 0,
) -> RoofPolygon:
    """Simplify a closed pixel contour into a simple CCW polygon.

    Splits the ring at its two most distant points and runs Douglas-Peucker on
    both halves, so every contour pixel stays within `tolerance` of the fitted
    polygon. Falls back to smaller tolerances if the simplification manages to
    self-intersect.
    """
    pts = np.asarray(contour, dtype=np.float64)
    if len(pts) < 3:
        raise DegenerateZoneError(f"contour has {len(pts)} points, need >= 3")

    # two-sweep farthest pair as split anchors
    d0 = np.hypot(*(pts - pts[0]).T)
    i = int(np.argmax(d0))
    di = np.hypot(*(pts - pts[i]).T)
    j = int(np.argmax(di))
    i, j = min(i, j), max(i, j)
    if i == j:
        raise DegenerateZoneError("contour is a single point")

    for tol in (tolerance, tolerance / 2, tolerance / 4, 0.0):
        half_a = pts[i : j + 1]
        half_b = np.vstack([pts[j:], pts[: i + 1]])
        ka = _douglas_peucker(half_a, tol)
        kb = _douglas_peucker(half_b, tol)
        ring = np.vstack([half_a[ka[:-1]], half_b[kb[:-1]]])
        if len(ring) < 3:
            continue
        ring = ensure_ccw(ring)
        if abs(signed_area(ring)) < 1e-9:
            continue
        poly = ShapelyPolygon(ring)
        if poly.is_valid and poly.is_simple:
            return RoofPolygon(ring, zone_id=zone_id, mean_height=mean_height)
    raise DegenerateZoneError("could not fit a simple polygon to the contour")


def extract_roof_parts(
    bfe: GrayRaster,
    params: VectorizeParams | None = None,
    return_zones: bool = False,
):
    """Vectorize a filtered height map into per-zone roof polygons.

    Polygons are returned sorted by mean intensity (lower layers first).
    Nested polygons are kept as independent parts; partial overlaps are
    resolved by clipping the brighter polygon against the darker one.
    """
    params = params or VectorizeParams()
    zones = cluster_zones(bfe, params.color_precision, params.min_zone_area)
    polygons: list[RoofPolygon] = []
    for zone_id in zones.zone_ids:
        contour = trace_boundary(zones, zone_id)
        if len(contour) < 3:
            continue  # sub-polygon zones cannot carry a roof part
        mean = int(round(zones.zone_means[zone_id]))
        try:
            polygons.append(
                simplify_polygon(contour, params.simplify_tolerance, zone_id, mean)
            )
        except DegenerateZoneError:
            continue
    polygons.sort(key=lambda p: (p.mean_height, p.zone_id))
    polygons = _resolve_partial_overlaps(polygons, params.overlap_area_px)
    if not polygons:
        raise EmptyFootprintError("no roof zones found in the height map")
    if return_zones:
        return polygons, zones
    return polygons


def _resolve_partial_overlaps(polygons: list[RoofPolygon], tol: float) -> list[RoofPolygon]:
    result: list[RoofPolygon] = []
    for poly in polygons:  # ascending mean: lower layers claim ground first
        shape = poly.shapely()
        for lower in result:
            lower_shape = lower.shapely()
            inter = shape.intersection(lower_shape).area
            if inter <= tol:
                continue
            if inter / shape.area > 0.98:
                break  # nested: upper layer entirely inside a lower one, keep as-is
            clipped = shape.difference(lower_shape)
            if clipped.geom_type == "MultiPolygon":
                clipped = max(clipped.geoms, key=lambda g: g.area)
            shape = clipped
        if shape.is_empty or shape.area < 1.0 or shape.geom_type != "Polygon":
            continue
        ring = np.asarray(shape.exterior.coords)[:-1]
        try:
            result.append(RoofPolygon(ensure_ccw(ring), poly.zone_id, poly.mean_height))
        except DegenerateZoneError:
            continue
    return result


def write_zones_svg(zones: ZoneLabelMap, polygons: list[RoofPolygon], path) -> None:
    """Debug dump: zone pixels as coloured rectangles plus fitted polygons."""
    palette = ["#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#b07aa1", "#edc948", "#76b7b2"]
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{zones.width}" '
        f'height="{zones.height}" viewBox="0 0 {zones.width} {zones.height}">',
        f'<rect width="{zones.width}" height="{zones.height}" fill="#111"/>',
    ]
    for zone_id in zones.zone_ids:
        color = palette[(zone_id - 1) % len(palette)]
        for x, y in zones.zone_pixels(zone_id):
            lines.append(f'<rect x="{x}" y="{y}" width="1" height="1" fill="{color}" fill-opacity="0.6"/>')
    for poly in polygons:
        pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in poly.vertices)
        lines.append(f'<polygon points="{pts}" fill="none" stroke="#fff" stroke-width="0.5"/>')
    lines.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(lines))
