"""Independent brute-force references used to freeze expected values.

Everything here is written for clarity, not speed, and deliberately avoids the
library code paths it is used to check.
"""

from __future__ import annotations

import math

import numpy as np


def block_mean_pool(data: np.ndarray, n_g: int) -> np.ndarray:
    """Direct double-summation block means, rounded half-to-even to 8 bit."""
    h, w = data.shape
    ph = ((h + n_g - 1) // n_g) * n_g
    pw = ((w + n_g - 1) // n_g) * n_g
    padded = np.zeros((ph, pw), dtype=np.float64)
    padded[:h, :w] = data
    ch, cw = ph // n_g, pw // n_g
    out = np.zeros((ph, pw), dtype=np.uint8)
    for i in range(n_g):
        for j in range(n_g):
            total = 0.0
            for y in range(i * ch, (i + 1) * ch):
                for x in range(j * cw, (j + 1) * cw):
                    total += padded[y, x]
            mean = total / (ch * cw)
            out[i * ch : (i + 1) * ch, j * cw : (j + 1) * cw] = min(255, max(0, round(mean)))
    return out


def bilateral(img: np.ndarray, filter_size: int, sigma_range: float, sigma_space: float) -> np.ndarray:
    """Double-loop bilateral filter with mirror ('reflect') border handling."""
    img = np.asarray(img, dtype=np.float64)
    r = filter_size // 2
    h, w = img.shape
    padded = np.pad(img, r, mode="reflect")
    out = np.zeros_like(img)
    for y in range(h):
        for x in range(w):
            center = img[y, x]
            acc = 0.0
            norm = 0.0
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    val = padded[y + dy + r, x + dx + r]
                    wgt = math.exp(
                        -(dx * dx + dy * dy) / (2.0 * sigma_space**2)
                        - (val - center) ** 2 / (2.0 * sigma_range**2)
                    )
                    acc += wgt * val
                    norm += wgt
            out[y, x] = acc / norm
    return out


def erode(mask: np.ndarray, radius: int) -> np.ndarray:
    """Min-filter erosion; everything outside the raster counts as background."""
    h, w = mask.shape
    out = np.zeros_like(mask, dtype=bool)
    for y in range(h):
        for x in range(w):
            keep = True
            for dy in range(-radius, radius + 1):
                for dx in range(-radius, radius + 1):
                    yy, xx = y + dy, x + dx
                    if yy < 0 or yy >= h or xx < 0 or xx >= w or not mask[yy, xx]:
                        keep = False
                        break
                if not keep:
                    break
            out[y, x] = keep
    return out


def iou(a: np.ndarray, b: np.ndarray) -> float:
    inter = 0
    union = 0
    for y in range(a.shape[0]):
        for x in range(a.shape[1]):
            if a[y, x] and b[y, x]:
                inter += 1
            if a[y, x] or b[y, x]:
                union += 1
    return 1.0 if union == 0 else inter / union


def knn_mean_distances(points: np.ndarray, k: int) -> np.ndarray:
    """Mean distance to the k nearest neighbours (excluding self), brute force."""
    n = len(points)
    out = np.zeros(n)
    for i in range(n):
        dists = sorted(math.dist(points[i], points[j]) for j in range(n) if j != i)
        out[i] = sum(dists[:k]) / k
    return out


def boundary_pixel_census(zone: np.ndarray) -> int:
    """Count zone pixels with at least one non-zone 8-neighbour (or on the border)."""
    h, w = zone.shape
    count = 0
    for y in range(h):
        for x in range(w):
            if not zone[y, x]:
                continue
            boundary = False
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    if dy == 0 and dx == 0:
                        continue
                    yy, xx = y + dy, x + dx
                    if yy < 0 or yy >= h or xx < 0 or xx >= w or not zone[yy, xx]:
                        boundary = True
            if boundary:
                count += 1
    return count


def mesh_volume_by_columns(vertices: np.ndarray, triangles: np.ndarray, resolution: int = 256) -> float:
    """Voxel-style volume estimate independent of any mesh bookkeeping.

    Casts a vertical ray through the centre of each of resolution^2 columns,
    collects triangle crossings, pairs them up, and discretises the occupied
    z-spans into `resolution` voxel layers.
    """
    v = np.asarray(vertices, dtype=np.float64)
    t = np.asarray(triangles, dtype=np.int64)
    lo = v.min(axis=0)
    hi = v.max(axis=0)
    span = np.maximum(hi - lo, 1e-12)
    pad = 1e-6 * span
    lo -= pad
    hi += pad
    span = hi - lo

    xs = lo[0] + (np.arange(resolution) + 0.5) / resolution * span[0]
    ys = lo[1] + (np.arange(resolution) + 0.5) / resolution * span[1]
    gx, gy = np.meshgrid(xs, ys)
    cols_x = gx.ravel()
    cols_y = gy.ravel()
    hits = [[] for _ in range(cols_x.size)]

    a = v[t[:, 0]]
    b = v[t[:, 1]]
    c = v[t[:, 2]]
    for i in range(len(t)):
        ax, ay, az = a[i]
        bx, by, bz = b[i]
        cx, cy, cz = c[i]
        min_x, max_x = min(ax, bx, cx), max(ax, bx, cx)
        min_y, max_y = min(ay, by, cy), max(ay, by, cy)
        sel = np.nonzero(
            (cols_x >= min_x) & (cols_x <= max_x) & (cols_y >= min_y) & (cols_y <= max_y)
        )[0]
        if sel.size == 0:
            continue
        d = (by - ay) * (cx - ax) - (bx - ax) * (cy - ay)
        if abs(d) < 1e-15:
            continue
        px = cols_x[sel]
        py = cols_y[sel]
        w1 = ((by - cy) * (px - cx) + (cx - bx) * (py - cy)) / -d
        w2 = ((cy - ay) * (px - cx) + (ax - cx) * (py - cy)) / -d
        w0 = 1.0 - w1 - w2
        inside = (w0 >= -1e-12) & (w1 >= -1e-12) & (w2 >= -1e-12)
        zs = w0 * az + w1 * bz + w2 * cz
        for j, z, ok in zip(sel, zs, inside):
            if ok:
                hits[j].append(z)

    layer = span[2] / resolution
    cell_area = (span[0] / resolution) * (span[1] / resolution)
    volume = 0.0
    for zlist in hits:
        if len(zlist) < 2:
            continue
        zlist.sort()
        # pair up crossings; duplicate hits at shared edges collapse first
        deduped = [zlist[0]]
        for z in zlist[1:]:
            if z - deduped[-1] > 1e-9:
                deduped.append(z)
        for k in range(0, len(deduped) - 1, 2):
            z0, z1 = deduped[k], deduped[k + 1]
            n_layers = round((z1 - z0) / layer)
            volume += n_layers * layer * cell_area
    return volume


def polygon_area(points) -> float:
    """Shoelace area (positive for counter-clockwise order)."""
    total = 0.0
    n = len(points)
    for i in range(n):
        x0, y0 = points[i]
        x1, y1 = points[(i + 1) % n]
        total += x0 * y1 - x1 * y0
    return total / 2.0


def point_in_polygon(x: float, y: float, points) -> bool:
    """Even-odd crossing test."""
    inside = False
    n = len(points)
    for i in range(n):
        x0, y0 = points[i]
        x1, y1 = points[(i + 1) % n]
        if (y0 > y) != (y1 > y):
            t = (y - y0) / (y1 - y0)
            if x < x0 + t * (x1 - x0):
                inside = not inside
    return inside
