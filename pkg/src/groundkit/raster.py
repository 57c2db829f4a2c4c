"""Raster I/O and the coordinate-encoded canvas used by synthetic datasets.

Rasters are numpy ``uint8`` arrays shaped ``(H, W)`` or ``(H, W, C)``.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import Point, Size

# 12 bits per axis fit in one RGB pixel
MAX_CANVAS_DIM = 4096


def load_image(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB", "RGBA"):
            im = im.convert("RGB")
        return np.asarray(im).copy()


def image_size(path: str | Path) -> Size:
    """Read only the header to get ``(w, h)``."""
    with Image.open(path) as im:
        return Size(*im.size)


def save_png(raster: np.ndarray, path: str | Path) -> None:
    Image.fromarray(raster).save(path, format="PNG")


def png_bytes(raster: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(raster)).save(buf, format="PNG")
    return buf.getvalue()


def coordinate_canvas(size: Size) -> np.ndarray:
    """RGB canvas whose every pixel encodes its own ``(x, y)``.

    R and G hold the low bytes of x and y, B holds their high nibbles. Any crop of
    the canvas therefore carries its origin in its top-left pixel, which is what
    lets test backends know where a submitted sub-image came from.
    """
    if size.w > MAX_CANVAS_DIM or size.h > MAX_CANVAS_DIM:
        raise ValueError(f"canvas dims must be <= {MAX_CANVAS_DIM}, got {size.w}x{size.h}")
    xs = np.arange(size.w, dtype=np.uint32)[None, :]
    ys = np.arange(size.h, dtype=np.uint32)[:, None]
    canvas = np.empty((size.h, size.w, 3), dtype=np.uint8)
    canvas[..., 0] = xs & 0xFF
    canvas[..., 1] = ys & 0xFF
    canvas[..., 2] = (xs >> 8) | ((ys >> 8) << 4)
    return canvas


def decode_origin(raster: np.ndarray) -> Point:
    """Recover the canvas position of a crop's top-left pixel.

    Raises:
        ValueError: if the raster is not a crop of :func:`coordinate_canvas`.
    """
    if raster.ndim != 3 or raster.shape[2] < 3:
        raise ValueError("raster is not a coordinate canvas crop")
    r, g, b = (int(v) for v in raster[0, 0, :3])
    x = r | ((b & 0x0F) << 8)
    y = g | ((b >> 4) << 8)
    h, w = raster.shape[:2]
    # the far corner must agree, otherwise this is not a canvas crop
    r2, g2, b2 = (int(v) for v in raster[h - 1, w - 1, :3])
    x2 = r2 | ((b2 & 0x0F) << 8)
    y2 = g2 | ((b2 >> 4) << 8)
    if (x2, y2) != (x + w - 1, y + h - 1):
        raise ValueError("raster is not a coordinate canvas crop")
    return Point(x, y)
