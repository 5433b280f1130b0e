"""Height-map providers.

The neural height-map generator sits behind this seam: a provider takes the
masked brightness palette (plus footprint and roof-type prompt) and returns
the full-resolution height map the geometry stages consume. Identity passes a
user-supplied map through, palette upsampling blends the palette grid, and
the remote provider calls an HTTP image service.
"""

from __future__ import annotations

import time

import numpy as np

from .dataset import ROOF_PROMPTS
from .errors import InvalidInputError, ProviderError
from .raster import BinaryMask, GrayRaster, apply_mask

PROVIDERS = ("identity", "upsample", "remote")


def provide_heightmap(
    palette: GrayRaster,
    mask: BinaryMask,
    roof_type: int | None,
    provider: str,
    height_map: GrayRaster | None = None,
    remote_url: str | None = None,
    timeout: float = 30.0,
    retries: int = 3,
    backoff: float = 0.5,
) -> GrayRaster:
    """Produce the height map for the geometry stages.

    identity   -> caller-supplied height_map, dimensions checked
    upsample   -> bilinear blend of the palette grid inside the mask
    remote     -> POST palette+mask+prompt to an HTTP service, with retries
    """
    if provider == "identity":
        if height_map is None:
            raise InvalidInputError("identity provider needs a height map")
        if height_map.data.shape != mask.data.shape:
            raise InvalidInputError("height map and footprint dimensions differ")
        return GrayRaster(height_map.data.copy(), meta=dict(height_map.meta))
    if provider == "upsample":
        return upsample_palette(palette, mask)
    if provider == "remote":
        if not remote_url:
            raise InvalidInputError("remote provider needs a URL")
        return _remote_heightmap(
            palette, mask, roof_type, remote_url, timeout=timeout, retries=retries, backoff=backoff
        )
    raise InvalidInputError(f"unknown provider '{provider}' (expected one of {PROVIDERS})")


def upsample_palette(palette: GrayRaster, mask: BinaryMask) -> GrayRaster:
    """Bilinear blend between palette cell centres, clipped to the footprint.

    A single-cell palette therefore becomes a constant map inside the mask.
    """
    n_g = palette.meta.get("n_g")
    ch, cw = palette.meta.get("cell_shape", (None, None))
    if n_g is None or ch is None:
        raise InvalidInputError("palette lacks pooling metadata (n_g, cell_shape)")
    cells = palette.data[ch // 2 :: ch, cw // 2 :: cw].astype(np.float64)[:n_g, :n_g]

    h, w = mask.data.shape
    ys = (np.arange(h) + 0.5) / ch - 0.5
    xs = (np.arange(w) + 0.5) / cw - 0.5
    ys = np.clip(ys, 0, n_g - 1)
    xs = np.clip(xs, 0, n_g - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, n_g - 1)
    x1 = np.minimum(x0 + 1, n_g - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    blended = (
        cells[np.ix_(y0, x0)] * (1 - fx) * (1 - fy)
        + cells[np.ix_(y0, x1)] * fx * (1 - fy)
        + cells[np.ix_(y1, x0)] * (1 - fx) * fy
        + cells[np.ix_(y1, x1)] * fx * fy
    )
    smoothed = GrayRaster(np.clip(np.round(blended), 0, 255).astype(np.uint8))
    return apply_mask(smoothed, mask)


def _remote_heightmap(
    palette: GrayRaster,
    mask: BinaryMask,
    roof_type: int | None,
    url: str,
    timeout: float,
    retries: int,
    backoff: float,
) -> GrayRaster:
    import requests

    from . import pngio

    prompt = ROOF_PROMPTS.get(roof_type or 8, ROOF_PROMPTS[8])
    files = {
        "palette": ("palette.png", pngio.encode_png_gray(palette.data), "image/png"),
        "mask": ("mask.png", pngio.encode_png_gray(np.where(mask.data, 255, 0).astype(np.uint8)), "image/png"),
    }
    data = {"prompt": prompt, "roof_type": str(roof_type or 8)}

    last_error: Exception | None = None
    for attempt in range(retries):
        if attempt:
            time.sleep(backoff * (2 ** (attempt - 1)))
        try:
            resp = requests.post(url, files=files, data=data, timeout=timeout)
        except requests.RequestException as exc:
            last_error = exc
            continue
        if resp.status_code != 200:
            last_error = ProviderError(f"remote service returned HTTP {resp.status_code}")
            continue
        try:
            raster = pngio.decode_gray(resp.content)
        except Exception as exc:
            last_error = ProviderError(f"remote response is not a decodable image: {exc}")
            continue
        _validate_remote_raster(raster, mask)
        return raster
    raise ProviderError(f"remote provider failed after {retries} attempts: {last_error}")


def _validate_remote_raster(raster: GrayRaster, mask: BinaryMask) -> None:
    if raster.data.shape != mask.data.shape:
        raise ProviderError(
            f"remote raster {raster.data.shape} does not match footprint {mask.data.shape}"
        )
    if not (raster.data[mask.data] > 0).any():
        raise ProviderError("remote raster has no support inside the footprint")
