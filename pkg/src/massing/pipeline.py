"""End-to-end orchestration: footprint + sketch/height map in, watertight OBJ
plus footprint-preservation metrics out.

Stage order: palette pooling, masking, height-map provider, edge-preserving
filter + erosion, zone vectorization, per-part lifting and surface
reconstruction, height scaling, prismatic boolean assembly, validation and
export. Ablation switches disable individual stages to reproduce their
characteristic failure modes as measurable regressions.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import pngio
from .errors import (
    EmptyFootprintError,
    EmptyPartError,
    InvalidInputError,
    MassingError,
    StageError,
)
from .lift import LiftParams, estimate_normals, lift_zone, remove_ground, remove_outliers
from .providers import provide_heightmap
from .raster import (
    BilateralConfig,
    BinaryMask,
    GrayRaster,
    PaletteConfig,
    apply_mask,
    compose_bfe,
    compute_iou,
    pool_to_palette,
)
from .solidify import (
    BuildingParams,
    Solid,
    count_stripy_walls,
    dilate_xy,
    export_obj,
    extrude_prism_up,
    extrude_roof_down,
    intersect_prismatic,
    scale_roof,
    topdown_zbuffer,
    union_parts,
    validate_watertight,
)
from .surface import OpenSurface, RoofTypeId, fair_surface, reconstruct_open_surface
from .vectorize import (
    RoofPolygon,
    VectorizeParams,
    ZoneLabelMap,
    extract_roof_parts,
    simplify_polygon,
    trace_boundary,
    write_zones_svg,
)

ABLATIONS = ("image-processing", "polygon-fitting", "booleans")

#: parts whose pre-scale z spread stays below this (map units) count as flat
FLAT_AUTO_EPS = 0.5


@dataclass
class PipelineRequest:
    footprint: BinaryMask
    sketch: GrayRaster | None = None
    height_map: GrayRaster | None = None
    provider: str = "identity"
    remote_url: str | None = None
    roof_type: int | None = None  # None = auto
    palette: PaletteConfig = field(default_factory=PaletteConfig)
    bilateral: BilateralConfig = field(default_factory=BilateralConfig)
    building: BuildingParams = field(default_factory=BuildingParams)
    lift: LiftParams = field(default_factory=LiftParams)
    vectorize: VectorizeParams = field(default_factory=VectorizeParams)
    resolution_depth: int = 6
    fair_iterations: int = 5
    seed: int = 0
    threads: int = 1
    ablate: tuple[str, ...] = ()
    debug_dir: str | Path | None = None

    def __post_init__(self):
        source = self.sketch if self.sketch is not None else self.height_map
        if source is None:
            raise InvalidInputError("request needs a sketch or a height map")
        if self.provider == "identity" and self.height_map is None:
            raise InvalidInputError("identity provider needs an explicit height map")
        for raster in (self.sketch, self.height_map):
            if raster is not None and raster.data.shape != self.footprint.data.shape:
                raise InvalidInputError("all rasters must match the footprint dimensions")
        unknown = set(self.ablate) - set(ABLATIONS)
        if unknown:
            raise InvalidInputError(f"unknown ablation flags: {sorted(unknown)}")
        if self.roof_type is not None and self.roof_type not in range(1, 9):
            raise InvalidInputError("roof_type must be 1..8 or None for auto")
        if not self.footprint.data.any():
            raise EmptyFootprintError("footprint mask is empty")


@dataclass
class RoofPart:
    polygon: RoofPolygon
    surface: OpenSurface
    roof_type: RoofTypeId


@dataclass
class PipelineResult:
    mesh: Solid
    obj_text: str
    iou: float
    part_count: int
    timings: dict[str, float]
    metrics: dict
    artifacts: dict = field(default_factory=dict)


class _StageClock:
    def __init__(self):
        self.timings: dict[str, float] = {}

    def run(self, name: str, fn, artifacts=None):
        start = time.perf_counter()
        try:
            result = fn()
        except MassingError as exc:
            raise StageError(name, exc, artifacts or {}) from exc
        self.timings[name] = time.perf_counter() - start
        return result


def run_pipeline(req: PipelineRequest) -> PipelineResult:
    clock = _StageClock()
    artifacts: dict = {}
    debug_dir = Path(req.debug_dir) if req.debug_dir else None
    if debug_dir:
        debug_dir.mkdir(parents=True, exist_ok=True)

    source = req.sketch if req.sketch is not None else req.height_map

    def preprocess():
        palette = pool_to_palette(source, req.palette)
        if palette.data.shape != source.data.shape:
            palette = GrayRaster(
                palette.data[: source.height, : source.width], meta=palette.meta
            )
        masked = apply_mask(palette, req.footprint)
        return palette, masked

    palette, masked_palette = clock.run("preprocess", preprocess)
    artifacts["palette"] = palette
    artifacts["masked_palette"] = masked_palette

    def provide():
        return provide_heightmap(
            masked_palette,
            req.footprint,
            req.roof_type,
            req.provider,
            height_map=req.height_map,
            remote_url=req.remote_url,
        )

    height_map = clock.run("provide", provide, artifacts)
    artifacts["height_map"] = height_map

    def filter_stage():
        if "image-processing" in req.ablate:
            return apply_mask(height_map, req.footprint)
        return compose_bfe(height_map, req.footprint, req.bilateral)

    bfe = clock.run("filter", filter_stage, artifacts)
    artifacts["bfe"] = bfe

    def vectorize_stage():
        if "polygon-fitting" in req.ablate:
            zones = _single_zone(bfe)
            contour = trace_boundary(zones, 1)
            poly = simplify_polygon(
                contour, req.vectorize.simplify_tolerance, 1, int(round(zones.zone_means[1]))
            )
            return [poly], zones
        return extract_roof_parts(bfe, req.vectorize, return_zones=True)

    polygons, zones = clock.run("vectorize", vectorize_stage, artifacts)
    artifacts["polygons"] = polygons
    artifacts["zones"] = zones

    pixel_simplify = "booleans" in req.ablate
    multi_piece = len(polygons) > 1

    def build_part(poly: RoofPolygon):
        pixels = zones.zone_pixels(poly.zone_id)
        cloud = lift_zone(bfe, pixels, req.lift)
        cloud = remove_outliers(cloud, req.lift.outlier_k, req.lift.outlier_mult)
        cloud = remove_ground(cloud, req.lift.h_min)
        if len(cloud) < 3:
            raise EmptyPartError(f"zone {poly.zone_id} lost its points during cleaning")
        cloud = estimate_normals(cloud, k=min(req.lift.outlier_k, len(cloud)))
        shape_poly = poly
        if pixel_simplify:
            # trimming stand-in: walls follow the raw pixel staircase
            contour = trace_boundary(zones, poly.zone_id)
            shape_poly = simplify_polygon(contour, 0.0, poly.zone_id, poly.mean_height)
        surface = reconstruct_open_surface(cloud, shape_poly, req.resolution_depth)
        rt = _auto_roof_type(req.roof_type, surface, multi_piece)
        surface = fair_surface(surface, rt, req.fair_iterations)
        return RoofPart(shape_poly, surface, rt)

    def lift_and_reconstruct():
        parts: list[RoofPart] = []
        errors: list[Exception] = []
        if req.threads > 1:
            with ThreadPoolExecutor(max_workers=req.threads) as pool:
                results = list(pool.map(_safe_build, [build_part] * len(polygons), polygons))
        else:
            results = [_safe_build(build_part, p) for p in polygons]
        for res in results:
            if isinstance(res, RoofPart):
                parts.append(res)
            else:
                errors.append(res)
        if not parts:
            raise EmptyPartError(f"every roof part degenerated: {errors[:1]}")
        return parts

    parts = clock.run("reconstruct", lift_and_reconstruct, artifacts)

    def solidify_stage():
        z_lo = min(float(p.surface.vertices[:, 2].min()) for p in parts)
        z_hi = max(float(p.surface.vertices[:, 2].max()) for p in parts)
        solids = []
        for part in parts:
            scaled = scale_roof(part.surface, req.building, (z_lo, z_hi))
            roof_solid = extrude_roof_down(scaled, 0.0)
            if "booleans" in req.ablate:
                solids.append(roof_solid)
                continue
            prism = extrude_prism_up(part.polygon, req.building.total_height + 1.0)
            clipped = intersect_prismatic(roof_solid, prism)
            solids.append(dilate_xy(clipped, req.building.dilation_xy))
        if "booleans" in req.ablate:
            return _concatenate(solids)
        return union_parts(solids)

    mesh = clock.run("solidify", solidify_stage, artifacts)

    def validate_stage():
        report = validate_watertight(mesh, check_self_intersections=False)
        iou = _footprint_iou(mesh, req.footprint)
        return report, iou

    report, iou = clock.run("validate", validate_stage, artifacts)

    metrics = {
        "iou": iou,
        "part_count": len(parts),
        "volume": mesh.signed_volume(),
        "boundary_vertex_count": int(sum(len(p.polygon.vertices) for p in parts)),
        "stripy_wall_count": count_stripy_walls(mesh),
        "watertight": report.is_watertight,
        "boundary_edges": report.boundary_edges,
        "nonmanifold_edges": report.nonmanifold_edges,
        "orientation_flips": report.orientation_flips,
    }

    obj_text = export_obj(mesh)
    result = PipelineResult(
        mesh=mesh,
        obj_text=obj_text,
        iou=iou,
        part_count=len(parts),
        timings=dict(clock.timings),
        metrics=metrics,
        artifacts=artifacts if debug_dir else {},
    )
    if debug_dir:
        _dump_debug(debug_dir, req, result, parts)
    return result


def _safe_build(fn, poly):
    try:
        return fn(poly)
    except MassingError as exc:
        return exc


def _single_zone(bfe: GrayRaster) -> ZoneLabelMap:
    labels = (bfe.data > 0).astype(np.int32)
    if not labels.any():
        raise EmptyFootprintError("no non-zero pixels in the height map")
    return ZoneLabelMap(labels, {1: float(bfe.data[labels > 0].mean())})


def _auto_roof_type(requested: int | None, surface: OpenSurface, multi: bool) -> RoofTypeId:
    if requested is not None:
        return RoofTypeId(requested)
    flat = surface.z_range < FLAT_AUTO_EPS
    if flat:
        return RoofTypeId.from_flags(multi, "n/a", "flat")
    return RoofTypeId.from_flags(multi, "medium", "pitched")


def _concatenate(solids: list[Solid]) -> Solid:
    offset = 0
    verts = []
    tris = []
    for s in solids:
        verts.append(s.vertices)
        tris.append(s.triangles + offset)
        offset += len(s.vertices)
    from shapely.ops import unary_union

    footprint = unary_union([s.prism.footprint for s in solids if s.prism is not None])
    from .solidify import PrismInfo

    return Solid(
        np.vstack(verts),
        np.vstack(tris),
        component_count=len(solids),
        prism=PrismInfo(footprint=footprint, bottom_z=0.0),
    )


def _footprint_iou(mesh: Solid, footprint: BinaryMask) -> float:
    import shapely

    shape = mesh.footprint_shape()
    h, w = footprint.data.shape
    xs, ys = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    shapely.prepare(shape)
    covered = shapely.contains_xy(shape, xs.ravel(), ys.ravel()).reshape(h, w)
    return compute_iou(BinaryMask(covered), footprint)


def rasterize_roof_intensity(
    mesh: Solid, footprint: BinaryMask, building: BuildingParams, z_lo: float, z_hi: float, z_scale: float
) -> tuple[np.ndarray, np.ndarray]:
    """Re-rasterize the final roof top-down and invert the height scaling back
    to 8-bit intensity units, for fidelity checks against the filtered map."""
    h, w = footprint.data.shape
    zbuf, coverage = topdown_zbuffer(mesh, w, h)
    intensity = np.zeros((h, w), dtype=np.float64)
    span = z_hi - z_lo
    roof_h = building.roof_height
    if span <= 1e-12 or roof_h <= 1e-12:
        intensity[coverage] = z_hi / z_scale if z_scale > 0 else 0.0
    else:
        z = zbuf[coverage]
        intensity[coverage] = (z_lo + (z - building.h_facade) * (span / roof_h)) / z_scale
    return intensity, coverage


def _dump_debug(debug_dir: Path, req: PipelineRequest, result: PipelineResult, parts) -> None:
    from .lift import write_xyz
    from .surface import write_surface_obj

    art = result.artifacts
    pngio.write_gray(debug_dir / "palette.png", art["palette"])
    pngio.write_gray(debug_dir / "masked_palette.png", art["masked_palette"])
    pngio.write_gray(debug_dir / "height_map.png", art["height_map"])
    pngio.write_gray(debug_dir / "bfe.png", art["bfe"])
    write_zones_svg(art["zones"], art["polygons"], debug_dir / "zones.svg")
    for i, part in enumerate(parts):
        write_surface_obj(part.surface, debug_dir / f"part_{i}_surface.obj")
    (debug_dir / "mesh.obj").write_text(result.obj_text)
