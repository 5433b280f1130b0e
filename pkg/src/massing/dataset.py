"""Dataset tooling: roof wireframes, the 8-class roof taxonomy, orthographic
top-down depth rasterization, 8x augmentation, and training-pair assembly.

Wireframes are vertex/edge graphs (optionally with faces) as found in
city-scale roof reconstruction sets. Classification looks only at graph
topology and the z spread, so it is invariant under rigid XY motion.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidInputError
from .raster import BinaryMask, GrayRaster, PaletteConfig, apply_mask, pool_to_palette
from .surface import RoofTypeId
from .triangulation import ear_clip, ensure_ccw

#: per-class text prompts fed to generation backends (index follows RoofTypeId)
ROOF_PROMPTS: dict[int, str] = {
    1: "Grayscale depth-map, multiple parts of complex slopes and layers, in polygon shape, black background",
    2: "Grayscale depth map, multiple parts of slopes and layers, in polygon shape, black background",
    3: "Grayscale depth-map, multiple simple shed layers, in polygon shape, black background",
    4: "Grayscale depth-map, multiple flat layers, in polygon shape, black background",
    5: "Grayscale depth map, a joint part of complex combinations of slopes, in polygon shape, black background",
    6: "Grayscale depth map, a joint part of simple slopes, in polygon shape, black background",
    7: "Grayscale depth map, a simple shed layer, in polygon shape, black background",
    8: "Grayscale depth map, a flat layer, in polygon shape, black background",
}


@dataclass
class RoofWireframe:
    vertices: np.ndarray
    edges: np.ndarray
    faces: list[list[int]] | None = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        n = len(self.vertices)
        if len(self.edges) and (self.edges.min() < 0 or self.edges.max() >= n):
            raise InvalidInputError("edge indices out of range")
        if len(self.edges):
            lengths = np.linalg.norm(
                self.vertices[self.edges[:, 0]] - self.vertices[self.edges[:, 1]], axis=1
            )
            if (lengths < 1e-12).any():
                raise InvalidInputError("wireframe contains zero-length edges")
        if self.faces:
            for f in self.faces:
                if min(f) < 0 or max(f) >= n:
                    raise InvalidInputError("face indices out of range")

    @classmethod
    def from_obj(cls, path: str | Path) -> "RoofWireframe":
        """OBJ subset: `v x y z`, `l i j ...` polylines, optional `f` faces."""
        vertices = []
        edges = []
        faces = []
        for raw in Path(path).read_text().splitlines():
            parts = raw.strip().split()
            if not parts:
                continue
            if parts[0] == "v":
                vertices.append([float(x) for x in parts[1:4]])
            elif parts[0] == "l":
                idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
                edges.extend((idx[i], idx[i + 1]) for i in range(len(idx) - 1))
            elif parts[0] == "f":
                faces.append([int(p.split("/")[0]) - 1 for p in parts[1:]])
        if faces and not edges:
            for f in faces:
                edges.extend((f[i], f[(i + 1) % len(f)]) for i in range(len(f)))
        return cls(np.array(vertices), np.array(edges), faces or None)

    def rotated_xy(self, angle_rad: float) -> "RoofWireframe":
        c, s = np.cos(angle_rad), np.sin(angle_rad)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return RoofWireframe(self.vertices @ rot.T, self.edges.copy(), self.faces)


@dataclass
class TrainingPair:
    control: GrayRaster
    target: GrayRaster
    mask: BinaryMask
    prompt_index: int
    n_g: int
    seed: int

    @property
    def prompt(self) -> str:
        return ROOF_PROMPTS[self.prompt_index]


def classify_roof(w: RoofWireframe, flat_epsilon: float = 0.02) -> RoofTypeId:
    """Map a wireframe to its roof class by connectivity, node degree and
    z spread; flat roofs (z range under flat_epsilon of the bbox diagonal)
    ignore node degree."""
    if len(w.edges) == 0:
        raise InvalidInputError("wireframe has no edges")
    used = np.unique(w.edges)
    parent = {int(v): int(v) for v in used}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in w.edges:
        parent[find(int(a))] = find(int(b))
    components = len({find(int(v)) for v in used})

    degree: dict[int, int] = {}
    for a, b in w.edges:
        degree[int(a)] = degree.get(int(a), 0) + 1
        degree[int(b)] = degree.get(int(b), 0) + 1
    max_degree = max(degree.values())

    pts = w.vertices[used]
    diag = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
    z_range = float(pts[:, 2].max() - pts[:, 2].min())
    flat = diag == 0 or z_range < flat_epsilon * diag

    multi = components > 1
    if flat:
        return RoofTypeId.from_flags(multi, "n/a", "flat")
    if max_degree > 4:
        complexity = "complex"
    elif max_degree >= 3:
        complexity = "medium"
    else:
        complexity = "simple"
    return RoofTypeId.from_flags(multi, complexity, "pitched")


def _fit_plane(points: np.ndarray):
    centroid = points.mean(axis=0)
    _, _, vh = np.linalg.svd(points - centroid)
    normal = vh[2]
    spread = np.abs((points - centroid) @ normal)
    return centroid, normal, float(spread.max())


def insert_faces(w: RoofWireframe) -> RoofWireframe:
    """Fill face loops of a faceless wireframe.

    Cycles come from a networkx cycle basis; planar loops are kept as faces,
    non-planar ones are split by ear clipping on their best-fit plane.
    """
    if w.faces:
        return w
    import networkx as nx

    graph = nx.Graph()
    graph.add_edges_from((int(a), int(b)) for a, b in w.edges)
    diag = float(np.linalg.norm(np.ptp(w.vertices, axis=0))) or 1.0
    faces: list[list[int]] = []
    for cycle in nx.cycle_basis(graph):
        if len(cycle) < 3:
            continue
        pts = w.vertices[cycle]
        centroid, normal, spread = _fit_plane(pts)
        if spread <= 0.05 * diag:
            faces.append([int(i) for i in cycle])
        else:
            # split on the fitted plane
            basis = np.linalg.svd(pts - centroid)[2][:2]
            flat2d = ensure_ccw((pts - centroid) @ basis.T)
            try:
                for t in ear_clip(flat2d):
                    faces.append([int(cycle[t[0]]), int(cycle[t[1]]), int(cycle[t[2]])])
            except Exception:
                continue
    if not faces:
        raise InvalidInputError("no face loops could be inserted into the wireframe")
    return RoofWireframe(w.vertices, w.edges, faces)


def rasterize_topdown_depth(
    w: RoofWireframe,
    resolution: int = 512,
    z_range: tuple[float, float] | None = None,
    margin: float = 0.04,
) -> tuple[GrayRaster, BinaryMask]:
    """Orthographic top-down z-buffer of the (faced) wireframe.

    Pixel values are the maximum z under the pixel centre mapped to [1, 255]
    (auto-scaled unless z_range pins the mapping); uncovered pixels are 0 and
    the mask records coverage.
    """
    faced = w if w.faces else insert_faces(w)
    tris = []
    for f in faced.faces:
        for i in range(1, len(f) - 1):
            tris.append((f[0], f[i], f[i + 1]))
    tris = np.asarray(tris, dtype=np.int64)

    v = faced.vertices
    min_xy = v[:, :2].min(axis=0)
    max_xy = v[:, :2].max(axis=0)
    span = float(max(max_xy - min_xy))
    if span <= 0:
        raise InvalidInputError("wireframe has no XY extent")
    scale = resolution * (1 - 2 * margin) / span
    offset = min_xy - (resolution / scale - (max_xy - min_xy)) / 2.0

    zbuf = np.full((resolution, resolution), -np.inf)
    px = (v[:, 0] - offset[0]) * scale
    py = (v[:, 1] - offset[1]) * scale
    for t in tris:
        xs = px[t]
        ys = py[t]
        zs = v[t, 2]
        x0 = max(int(np.floor(xs.min() - 0.5)), 0)
        x1 = min(int(np.ceil(xs.max() + 0.5)), resolution - 1)
        y0 = max(int(np.floor(ys.min() - 0.5)), 0)
        y1 = min(int(np.ceil(ys.max() + 0.5)), resolution - 1)
        if x0 > x1 or y0 > y1:
            continue
        d = (ys[1] - ys[2]) * (xs[0] - xs[2]) + (xs[2] - xs[1]) * (ys[0] - ys[2])
        if abs(d) < 1e-12:
            continue
        gx, gy = np.meshgrid(
            np.arange(x0, x1 + 1) + 0.5, np.arange(y0, y1 + 1) + 0.5
        )
        w0 = ((ys[1] - ys[2]) * (gx - xs[2]) + (xs[2] - xs[1]) * (gy - ys[2])) / d
        w1 = ((ys[2] - ys[0]) * (gx - xs[2]) + (xs[0] - xs[2]) * (gy - ys[2])) / d
        w2 = 1.0 - w0 - w1
        inside = (w0 >= -1e-9) & (w1 >= -1e-9) & (w2 >= -1e-9)
        depth = w0 * zs[0] + w1 * zs[1] + w2 * zs[2]
        patch = zbuf[y0 : y1 + 1, x0 : x1 + 1]
        np.maximum(patch, np.where(inside, depth, -np.inf), out=patch)

    covered = np.isfinite(zbuf)
    data = np.zeros((resolution, resolution), dtype=np.uint8)
    if covered.any():
        if z_range is not None:
            z_lo, z_hi = z_range
        else:
            z_lo = float(zbuf[covered].min())
            z_hi = float(zbuf[covered].max())
        if z_hi - z_lo <= 1e-12:
            data[covered] = 255
        else:
            scaled = 1.0 + (zbuf[covered] - z_lo) / (z_hi - z_lo) * 254.0
            data[covered] = np.clip(np.round(scaled), 1, 255).astype(np.uint8)
    return GrayRaster(data), BinaryMask(covered)


def _resize_bilinear(arr: np.ndarray, out_side: int) -> np.ndarray:
    src = arr.astype(np.float64)
    h, w = src.shape
    ys = (np.arange(out_side) + 0.5) * (h / out_side) - 0.5
    xs = (np.arange(out_side) + 0.5) * (w / out_side) - 0.5
    ys = np.clip(ys, 0, h - 1)
    xs = np.clip(xs, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = src[np.ix_(y0, x0)] * (1 - fx) + src[np.ix_(y0, x1)] * fx
    bottom = src[np.ix_(y1, x0)] * (1 - fx) + src[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bottom * fy


def _resize_nearest(arr: np.ndarray, out_side: int) -> np.ndarray:
    h, w = arr.shape
    ys = np.clip(((np.arange(out_side) + 0.5) * (h / out_side)).astype(int), 0, h - 1)
    xs = np.clip(((np.arange(out_side) + 0.5) * (w / out_side)).astype(int), 0, w - 1)
    return arr[np.ix_(ys, xs)]


def augment8(
    pair: tuple[GrayRaster, BinaryMask], seed: int = 0, crop_min: float = 0.75
) -> list[tuple[GrayRaster, BinaryMask]]:
    """Exactly 8 deterministic variants: 4 rotations x {identity, h-flip},
    each followed by a seeded random crop (>= crop_min of the side) scaled
    back to the original resolution."""
    gray, mask = pair
    if gray.width != gray.height:
        raise InvalidInputError("augmentation expects square inputs")
    side = gray.width
    out = []
    for variant in range(8):
        rot = variant % 4
        flip = variant >= 4
        g = gray.data
        m = mask.data
        if flip:
            g = np.fliplr(g)
            m = np.fliplr(m)
        g = np.rot90(g, rot)
        m = np.rot90(m, rot)
        rng = np.random.default_rng(np.uint64(seed) ^ np.uint64(variant))
        crop = int(round(side * rng.uniform(crop_min, 1.0)))
        crop = max(1, min(side, crop))
        ox = int(rng.integers(0, side - crop + 1))
        oy = int(rng.integers(0, side - crop + 1))
        g = g[oy : oy + crop, ox : ox + crop]
        m = m[oy : oy + crop, ox : ox + crop]
        g = np.clip(np.round(_resize_bilinear(g, side)), 0, 255).astype(np.uint8)
        m = _resize_nearest(m, side)
        out.append((GrayRaster(g.copy()), BinaryMask(m.copy())))
    return out


def make_training_pair(
    depth: GrayRaster,
    mask: BinaryMask,
    seed: int,
    n_g: int | None = None,
    prompt_index: int | None = None,
    wireframe: RoofWireframe | None = None,
) -> TrainingPair:
    """Control/target pair: the control is the pooled-and-masked depth map.

    n_g is drawn uniformly from 5..9 unless overridden (inference allows much
    larger grids); the prompt comes from the classifier when a wireframe is
    available.
    """
    rng = np.random.default_rng(seed)
    drawn = int(rng.integers(5, 10))
    grid = n_g if n_g is not None else drawn
    palette = pool_to_palette(depth, PaletteConfig(side=depth.width, n_g=grid))
    if palette.data.shape != depth.data.shape:  # drop pooling pad
        palette = GrayRaster(palette.data[: depth.height, : depth.width], meta=palette.meta)
    control = apply_mask(palette, mask)
    if wireframe is not None:
        prompt = classify_roof(wireframe).index
    elif prompt_index is not None:
        prompt = prompt_index
    else:
        prompt = 8
    return TrainingPair(control, depth, mask, prompt, grid, seed)


def build_dataset(
    wireframe_paths: list,
    out_dir: str | Path,
    seed: int = 0,
    resolution: int = 512,
    augment: bool = True,
) -> Path:
    """Rasterize wireframes into (control, depth, mask) PNG triples plus a
    JSON-lines manifest; per-item seeds are base xor index, so parallel
    processing order can never change the output."""
    from . import pngio

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = out_dir / "manifest.jsonl"
    records = []
    for item_index, path in enumerate(sorted(str(p) for p in wireframe_paths)):
        item_seed = int(np.uint64(seed) ^ np.uint64(item_index))
        wf = RoofWireframe.from_obj(path)
        depth, mask = rasterize_topdown_depth(wf, resolution=resolution)
        prompt = classify_roof(wf).index
        variants = augment8((depth, mask), seed=item_seed) if augment else [(depth, mask)]
        for v_index, (g, m) in enumerate(variants):
            pair = make_training_pair(g, m, seed=int(np.uint64(item_seed) ^ np.uint64(101 + v_index)),
                                      prompt_index=prompt)
            stem = f"{Path(path).stem}_{v_index}"
            control_p = out_dir / f"{stem}_control.png"
            target_p = out_dir / f"{stem}_depth.png"
            mask_p = out_dir / f"{stem}_mask.png"
            pngio.write_gray(control_p, pair.control)
            pngio.write_gray(target_p, pair.target)
            pngio.write_mask(mask_p, pair.mask)
            records.append(
                {
                    "control": control_p.name,
                    "target": target_p.name,
                    "mask": mask_p.name,
                    "n_g": pair.n_g,
                    "prompt_index": pair.prompt_index,
                    "seed": pair.seed,
                    "source": Path(path).name,
                    "variant": v_index,
                }
            )
    with open(manifest_path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return manifest_path
