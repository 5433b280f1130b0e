"""2D raster operations: palette pooling, masking, bilateral filtering, morphology,
affine alignment, and the footprint IoU metric.

Conventions used throughout the package:
  * rasters are 8-bit grayscale, row-major, indexed ``data[row, col]``;
  * planar points are ``(x, y)`` with ``x = col`` and ``y = row``;
  * fractional means round half-to-even before narrowing to 8 bits, so results
    are identical across platforms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import DegenerateConfigurationError, InvalidInputError


def _round_u8(values: np.ndarray) -> np.ndarray:
    """Round half-to-even and clip into the 8-bit range."""
    return np.clip(np.round(values), 0, 255).astype(np.uint8)


@dataclass
class GrayRaster:
    """8-bit grayscale image. ``data`` has shape (height, width)."""

    data: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.uint8)
        if self.data.ndim != 2 or self.data.shape[0] < 1 or self.data.shape[1] < 1:
            raise InvalidInputError(f"raster must be 2D and non-empty, got shape {self.data.shape}")

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    def astype_float(self) -> np.ndarray:
        return self.data.astype(np.float64)


@dataclass
class BinaryMask:
    """Boolean footprint mask. ``data`` has shape (height, width)."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=bool)
        if self.data.ndim != 2 or self.data.shape[0] < 1 or self.data.shape[1] < 1:
            raise InvalidInputError(f"mask must be 2D and non-empty, got shape {self.data.shape}")

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def count(self) -> int:
        return int(self.data.sum())


@dataclass
class PaletteConfig:
    """Brightness-palette pooling configuration.

    ``side`` is the nominal square source side length and ``n_g`` the number of
    grid cells per side. Inputs whose dimensions are not multiples of ``n_g``
    are zero-padded right/bottom to the next multiple.
    """

    side: int = 512
    n_g: int = 8

    def __post_init__(self):
        if self.n_g < 1:
            raise InvalidInputError(f"n_g must be >= 1, got {self.n_g}")
        if self.side < 1:
            raise InvalidInputError(f"side must be >= 1, got {self.side}")


@dataclass
class BilateralConfig:
    """Edge-preserving smoothing parameters: odd window side and the two sigmas
    (intensity units for range, pixels for space)."""

    filter_size: int = 7
    sigma_range: float = 9.0
    sigma_space: float = 55.0

    def __post_init__(self):
        if self.filter_size < 3 or self.filter_size % 2 == 0:
            raise InvalidInputError(f"filter_size must be odd and >= 3, got {self.filter_size}")
        if self.sigma_range <= 0 or self.sigma_space <= 0:
            raise InvalidInputError("bilateral sigmas must be positive")

    @property
    def radius(self) -> int:
        return self.filter_size // 2


@dataclass
class AffineTransform:
    """Planar affine map ``p -> M[:, :2] @ p + M[:, 2]`` with a 2x3 matrix."""

    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.shape != (2, 3):
            raise InvalidInputError(f"affine matrix must be 2x3, got {self.matrix.shape}")
        if abs(np.linalg.det(self.matrix[:, :2])) <= 1e-12:
            raise DegenerateConfigurationError("affine transform is singular")

    @classmethod
    def identity(cls) -> "AffineTransform":
        return cls(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))

    @classmethod
    def translation(cls, tx: float, ty: float) -> "AffineTransform":
        return cls(np.array([[1.0, 0.0, tx], [0.0, 1.0, ty]]))

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return pts @ self.matrix[:, :2].T + self.matrix[:, 2]

    def inverse(self) -> "AffineTransform":
        inv = np.linalg.inv(self.matrix[:, :2])
        return AffineTransform(np.hstack([inv, -inv @ self.matrix[:, 2:3]]))


def pool_to_palette(sketch: GrayRaster, cfg: PaletteConfig) -> GrayRaster:
    """Pool a grayscale sketch into an n_g x n_g brightness palette.

    Every pixel of a grid cell is replaced by the rounded mean of the source
    pixels in that cell, producing a blocky palette image of the same size.
    Dimensions not divisible by ``cfg.n_g`` are zero-padded right/bottom first;
    the padding amounts are recorded in the output metadata.
    """
    data = sketch.data
    h, w = data.shape
    pad_b = (-h) % cfg.n_g
    pad_r = (-w) % cfg.n_g
    if pad_b or pad_r:
        data = np.pad(data, ((0, pad_b), (0, pad_r)), mode="constant")
    ph, pw = data.shape
    ch, cw = ph // cfg.n_g, pw // cfg.n_g
    cells = data.reshape(cfg.n_g, ch, cfg.n_g, cw).astype(np.float64)
    means = cells.mean(axis=(1, 3))
    pooled = np.repeat(np.repeat(_round_u8(means), ch, axis=0), cw, axis=1)
    meta = dict(sketch.meta)
    meta.update({"n_g": cfg.n_g, "cell_shape": (ch, cw), "padded_bottom": pad_b, "padded_right": pad_r})
    return GrayRaster(pooled, meta=meta)


def apply_mask(image: GrayRaster, mask: BinaryMask) -> GrayRaster:
    """Hadamard product with a binary mask: pixels outside the mask become 0."""
    if image.data.shape != mask.data.shape:
        raise InvalidInputError(
            f"image {image.data.shape} and mask {mask.data.shape} dimensions differ"
        )
    return GrayRaster(np.where(mask.data, image.data, 0), meta=dict(image.meta))


def bilateral_filter_values(values: np.ndarray, cfg: BilateralConfig) -> np.ndarray:
    """Bilateral filter on a float64 array; returns float64.

    Spatial Gaussian on pixel distance, intensity Gaussian on value difference,
    mirror ('reflect') padding at the borders. Kept separate from the 8-bit
    wrapper so callers can compare against references before rounding.
    """
    img = np.asarray(values, dtype=np.float64)
    r = cfg.radius
    padded = np.pad(img, r, mode="reflect")
    inv2_sr = 1.0 / (2.0 * cfg.sigma_range**2)
    inv2_ss = 1.0 / (2.0 * cfg.sigma_space**2)
    acc = np.zeros_like(img)
    norm = np.zeros_like(img)
    h, w = img.shape
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            shifted = padded[r + dy : r + dy + h, r + dx : r + dx + w]
            weight = np.exp(-(dx * dx + dy * dy) * inv2_ss - (shifted - img) ** 2 * inv2_sr)
            acc += weight * shifted
            norm += weight
    return acc / norm


def bilateral_filter(image: GrayRaster, cfg: BilateralConfig) -> GrayRaster:
    """Edge-preserving smoothing of an 8-bit raster (deterministic)."""
    return GrayRaster(_round_u8(bilateral_filter_values(image.astype_float(), cfg)), meta=dict(image.meta))


def erode_mask(mask: BinaryMask, radius: int = 1) -> BinaryMask:
    """Morphological erosion with a (2r+1)^2 square structuring element.

    Pixels outside the raster count as background, so the footprint also
    shrinks along the image border.
    """
    if radius < 0:
        raise InvalidInputError(f"erosion radius must be >= 0, got {radius}")
    if radius == 0:
        return BinaryMask(mask.data.copy())
    structure = np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)
    return BinaryMask(ndimage.binary_erosion(mask.data, structure=structure, border_value=0))


def compose_bfe(height_map: GrayRaster, mask: BinaryMask, cfg: BilateralConfig | None = None) -> GrayRaster:
    """Bilateral-filter the height map, then mask it with the 1-pixel-eroded
    footprint. Removes bright spots that hug the footprint edges."""
    if height_map.data.shape != mask.data.shape:
        raise InvalidInputError(
            f"height map {height_map.data.shape} and mask {mask.data.shape} dimensions differ"
        )
    cfg = cfg or BilateralConfig()
    return apply_mask(bilateral_filter(height_map, cfg), erode_mask(mask, 1))


def compute_iou(a: BinaryMask, b: BinaryMask) -> float:
    """Intersection-over-union of two masks.

    Two empty masks agree vacuously and return 1.0.
    """
    if a.data.shape != b.data.shape:
        raise InvalidInputError(f"mask dimensions differ: {a.data.shape} vs {b.data.shape}")
    union = int(np.logical_or(a.data, b.data).sum())
    if union == 0:
        return 1.0
    inter = int(np.logical_and(a.data, b.data).sum())
    return inter / union


def solve_affine(src, dst) -> AffineTransform:
    """Solve the 2x3 affine matrix mapping three source points onto three
    destination points exactly (direct linear system, no least squares)."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != (3, 2) or dst.shape != (3, 2):
        raise InvalidInputError("solve_affine expects exactly three (x, y) pairs per side")
    m = np.hstack([src, np.ones((3, 1))])
    area2 = abs(np.linalg.det(m))
    span = max(np.ptp(src[:, 0]), np.ptp(src[:, 1]), 1.0)
    if area2 <= 1e-12 * span * span:
        raise DegenerateConfigurationError("source points are collinear")
    coeffs = np.linalg.solve(m, dst)  # columns: [a c; b d; tx ty]
    return AffineTransform(coeffs.T)


def warp_affine(image: GrayRaster, t: AffineTransform) -> GrayRaster:
    """Warp an image by an affine transform (forward semantics).

    Implemented as an inverse-mapped resample with bilinear interpolation;
    samples falling outside the source raster contribute zero, so content
    pushed off the canvas is clipped for good.
    """
    h, w = image.data.shape
    inv = t.inverse().matrix
    xs, ys = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    sx = inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]
    sy = inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]

    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = sx - x0
    fy = sy - y0
    src = image.astype_float()

    out = np.zeros((h, w), dtype=np.float64)
    for oy, ox, wgt in (
        (0, 0, (1 - fx) * (1 - fy)),
        (0, 1, fx * (1 - fy)),
        (1, 0, (1 - fx) * fy),
        (1, 1, fx * fy),
    ):
        tx = x0 + ox
        ty = y0 + oy
        valid = (tx >= 0) & (tx < w) & (ty >= 0) & (ty < h)
        vals = np.zeros((h, w), dtype=np.float64)
        vals[valid] = src[ty[valid], tx[valid]]
        out += wgt * vals
    return GrayRaster(_round_u8(out), meta=dict(image.meta))
