"""Planar triangulation helpers shared by surface reconstruction and the
prismatic solid kernel: simple-polygon ear clipping and a conforming Delaunay
triangulation that guarantees a set of required segments appears as edges.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import Delaunay, cKDTree

from .errors import DegenerateZoneError, GeometryError

SNAP = 1e-7  # coordinate key resolution when deduplicating points


def signed_area(ring: np.ndarray) -> float:
    x = ring[:, 0]
    y = ring[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def ensure_ccw(ring: np.ndarray) -> np.ndarray:
    return ring if signed_area(ring) >= 0 else ring[::-1]


def dedupe_ring(ring: np.ndarray, eps: float = 1e-9) -> np.ndarray:
    """Drop consecutive duplicates and a repeated closing vertex."""
    ring = np.asarray(ring, dtype=np.float64)
    if len(ring) > 1 and np.allclose(ring[0], ring[-1], atol=eps):
        ring = ring[:-1]
    keep = [0]
    for i in range(1, len(ring)):
        if not np.allclose(ring[i], ring[keep[-1]], atol=eps):
            keep.append(i)
    return ring[keep]


def strip_collinear(ring: np.ndarray, eps: float = 1e-9) -> np.ndarray:
    """Remove vertices whose neighbours are exactly collinear with them."""
    ring = dedupe_ring(ring)
    changed = True
    while changed and len(ring) > 3:
        changed = False
        n = len(ring)
        keep = np.ones(n, dtype=bool)
        for i in range(n):
            a = ring[(i - 1) % n]
            b = ring[i]
            c = ring[(i + 1) % n]
            cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
            if abs(cross) <= eps:
                keep[i] = False
                changed = True
                break
        ring = ring[keep]
    return ring


def _point_in_triangle(p, a, b, c, eps=1e-12):
    d = (b[1] - c[1]) * (a[0] - c[0]) + (c[0] - b[0]) * (a[1] - c[1])
    if abs(d) < 1e-30:
        return False
    w0 = ((b[1] - c[1]) * (p[0] - c[0]) + (c[0] - b[0]) * (p[1] - c[1])) / d
    w1 = ((c[1] - a[1]) * (p[0] - c[0]) + (a[0] - c[0]) * (p[1] - c[1])) / d
    w2 = 1.0 - w0 - w1
    return w0 >= -eps and w1 >= -eps and w2 >= -eps


def ear_clip(ring: np.ndarray) -> list[tuple[int, int, int]]:
    """Triangulate a simple polygon into exactly n-2 triangles.

    Expects a CCW ring without duplicate or exactly-collinear vertices;
    returned index triples are CCW as well.
    """
    ring = np.asarray(ring, dtype=np.float64)
    n = len(ring)
    if n < 3:
        raise DegenerateZoneError(f"polygon needs >= 3 vertices, got {n}")
    if n == 3:
        return [(0, 1, 2)]

    scale = max(np.ptp(ring[:, 0]), np.ptp(ring[:, 1]), 1e-12)
    area_eps = 1e-12 * scale * scale
    idx = list(range(n))
    tris: list[tuple[int, int, int]] = []
    guard = 0
    while len(idx) > 3:
        guard += 1
        if guard > 4 * n * n:
            raise GeometryError("ear clipping failed to converge (polygon may self-intersect)")
        clipped = False
        m = len(idx)
        best_convex = None
        best_cross = -np.inf
        for k in range(m):
            i0, i1, i2 = idx[(k - 1) % m], idx[k], idx[(k + 1) % m]
            a, b, c = ring[i0], ring[i1], ring[i2]
            cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
            if cross <= area_eps:
                continue  # reflex or degenerate corner
            if cross > best_cross:
                best_cross = cross
                best_convex = k
            blocked = False
            for j in idx:
                if j in (i0, i1, i2):
                    continue
                if _point_in_triangle(ring[j], a, b, c):
                    blocked = True
                    break
            if blocked:
                continue
            tris.append((i0, i1, i2))
            idx.pop(k)
            clipped = True
            break
        if not clipped:
            # numerically stuck: clip the widest convex corner anyway
            if best_convex is None:
                raise GeometryError("no ear found (polygon may self-intersect)")
            k = best_convex
            m = len(idx)
            tris.append((idx[(k - 1) % m], idx[k], idx[(k + 1) % m]))
            idx.pop(k)
    tris.append((idx[0], idx[1], idx[2]))
    return tris


class ConformingTriangulation:
    """Delaunay triangulation of a point set refined until every required
    segment shows up as an edge (split at covering points or at midpoints)."""

    def __init__(self, points: np.ndarray, triangles: np.ndarray, index_of):
        self.points = points
        self.triangles = triangles
        self._index_of = index_of

    def index_of(self, xy) -> int:
        """Index of an input (or inserted) point; raises KeyError if absent."""
        return self._index_of(xy)


def _key(xy) -> tuple[int, int]:
    return (int(round(xy[0] / SNAP)), int(round(xy[1] / SNAP)))


def conforming_delaunay(
    points,
    segments=(),
    max_rounds: int = 16,
) -> ConformingTriangulation:
    """Triangulate `points` so that every segment (coordinate pair) is an edge.

    Segments already covered by collinear intermediate points are accepted as
    chains of sub-edges. Raises GeometryError when refinement does not
    converge, which indicates crossing constraints.
    """
    pts: list[np.ndarray] = []
    lookup: dict[tuple[int, int], int] = {}

    def add_point(xy) -> int:
        k = _key(xy)
        if k in lookup:
            return lookup[k]
        lookup[k] = len(pts)
        pts.append(np.asarray(xy, dtype=np.float64))
        return lookup[k]

    for p in points:
        add_point(p)
    seg_idx: list[tuple[int, int]] = []
    for a, b in segments:
        ia, ib = add_point(a), add_point(b)
        if ia != ib:
            seg_idx.append((ia, ib))

    tri = None
    for _ in range(max_rounds):
        arr = np.asarray(pts)
        tri = Delaunay(arr)
        edges = set()
        for s in tri.simplices:
            edges.add((min(s[0], s[1]), max(s[0], s[1])))
            edges.add((min(s[1], s[2]), max(s[1], s[2])))
            edges.add((min(s[0], s[2]), max(s[0], s[2])))
        next_segs: list[tuple[int, int]] = []
        missing = 0
        kd = cKDTree(arr)
        for ia, ib in seg_idx:
            if (min(ia, ib), max(ia, ib)) in edges:
                continue
            a, b = arr[ia], arr[ib]
            # points lying on the open segment split it into sub-segments
            length = float(np.hypot(*(b - a)))
            mid = (a + b) / 2.0
            cand = kd.query_ball_point(mid, length / 2.0 + 1e-7)
            on_seg = []
            for j in cand:
                if j in (ia, ib):
                    continue
                ap = arr[j] - a
                ab = b - a
                t = float(np.dot(ap, ab)) / (length * length)
                if t <= 1e-9 or t >= 1 - 1e-9:
                    continue
                dist = abs(ap[0] * ab[1] - ap[1] * ab[0]) / length
                if dist < 1e-7:
                    on_seg.append((t, j))
            if on_seg:
                chain = [ia] + [j for _, j in sorted(on_seg)] + [ib]
                for u, v in zip(chain[:-1], chain[1:]):
                    if (min(u, v), max(u, v)) not in edges:
                        next_segs.append((u, v))
                        missing += 1
            else:
                im = add_point(mid)
                next_segs.append((ia, im))
                next_segs.append((im, ib))
                missing += 1
        kept = [
            (ia, ib)
            for ia, ib in seg_idx
            if (min(ia, ib), max(ia, ib)) in edges
        ]
        seg_idx = kept + next_segs
        if missing == 0:
            break
    else:
        raise GeometryError("conforming triangulation did not converge (crossing constraints?)")

    arr = np.asarray(pts)

    def index_of(xy) -> int:
        return lookup[_key(xy)]

    return ConformingTriangulation(arr, np.array(tri.simplices, dtype=np.int64), index_of)


def densify_ring(ring: np.ndarray, max_len: float) -> np.ndarray:
    """Insert evenly spaced points along each ring edge so no sub-edge exceeds
    max_len. Original vertices are preserved exactly."""
    ring = np.asarray(ring, dtype=np.float64)
    out = []
    n = len(ring)
    for i in range(n):
        a = ring[i]
        b = ring[(i + 1) % n]
        out.append(a)
        seg_len = float(np.hypot(*(b - a)))
        pieces = int(np.ceil(seg_len / max_len)) if max_len > 0 else 1
        for k in range(1, pieces):
            out.append(a + (b - a) * (k / pieces))
    return np.asarray(out)


def ring_chain_indices(points: np.ndarray, ring: np.ndarray, index_of, tol: float = 1e-7) -> np.ndarray:
    """Indices of a coordinate ring within a triangulated point set, with any
    points that landed exactly on ring edges spliced in along the way.

    Needed because conforming refinement (and constraint noding) may insert
    vertices on ring edges; walls built from the ring must walk through them
    to stay watertight.
    """
    kd = cKDTree(points)
    chain: list[int] = []
    n = len(ring)
    for i in range(n):
        a = np.asarray(ring[i], dtype=np.float64)
        b = np.asarray(ring[(i + 1) % n], dtype=np.float64)
        chain.append(index_of(a))
        ab = b - a
        length = float(np.hypot(*ab))
        if length <= tol:
            continue
        mid = (a + b) / 2.0
        on_edge = []
        for j in kd.query_ball_point(mid, length / 2.0 + tol):
            t = float(np.dot(points[j] - a, ab)) / (length * length)
            if t <= 1e-9 or t >= 1 - 1e-9:
                continue
            dist = abs((points[j] - a)[0] * ab[1] - (points[j] - a)[1] * ab[0]) / length
            if dist < tol:
                on_edge.append((t, j))
        chain.extend(j for _, j in sorted(on_edge))
    # drop accidental duplicates while preserving order
    seen = set()
    out = []
    for idx in chain:
        if idx not in seen:
            seen.add(idx)
            out.append(idx)
    return np.array(out, dtype=np.int64)


def triangle_areas(points: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    a = points[triangles[:, 0]]
    b = points[triangles[:, 1]]
    c = points[triangles[:, 2]]
    return 0.5 * np.abs(
        (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    )
