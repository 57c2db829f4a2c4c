"""Cropping-based resampling of hard grounding samples.

A sample is replaced by a smaller crop that still fully contains its target box.
Candidate crops are scanned on a lattice whose stride is ``crop - box`` per axis,
so consecutive windows overlap by exactly the box extent and some window always
fits the box. Each retry shrinks the crop by the scaling factor again.
"""

from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Callable, Sequence

import numpy as np

from .geometry import (
    BBox,
    CropWindow,
    GeometryError,
    Point,
    Size,
    bbox_contained_in_window,
    floor_scale,
    translate_bbox,
)

if TYPE_CHECKING:
    from .evalharness import GroundingRecord

log = logging.getLogger(__name__)


class BypassResampling(Exception):
    """The box does not fit strictly inside the crop; resampling is skipped."""


@dataclass(frozen=True)
class ResampleConfig:
    scaling_factor: float = 0.6
    max_attempts: int = 4

    def __post_init__(self):
        if not 0 < self.scaling_factor < 1:
            raise ValueError(f"scaling_factor must be in (0, 1), got {self.scaling_factor}")
        if isinstance(self.max_attempts, bool) or not isinstance(self.max_attempts, int) or self.max_attempts < 1:
            raise ValueError(f"max_attempts must be an int >= 1, got {self.max_attempts}")


@dataclass(frozen=True)
class ResampleResult:
    window: CropWindow
    translated_bbox: BBox
    attempt_index: int


def _check_fits(bbox: BBox, crop: Size) -> None:
    if bbox.width >= crop.w or bbox.height >= crop.h:
        raise BypassResampling(
            f"box {bbox.width}x{bbox.height} does not fit inside crop {crop.w}x{crop.h}"
        )


def _axis_origins(extent: int, lo: int, hi: int, crop: int, step: int) -> list[int]:
    # lattice origins o = k*step with o < extent, o <= lo and hi <= o + crop
    first = max(0, hi - crop)
    k_first = -(-first // step)
    k_last = min(lo // step, (extent - 1) // step)
    return [k * step for k in range(k_first, k_last + 1)]


def windows_for_crop(image: Size, bbox: BBox, crop: Size) -> list[tuple[CropWindow, BBox]]:
    """All scan windows of size ``crop`` that contain ``bbox``, in scan order.

    Scan order is x-major: the outer loop walks the horizontal origins. Windows
    running past the image edge are clipped to it.
    """
    if not bbox.within(image):
        raise GeometryError(f"box {bbox.as_list()} is outside image {image.w}x{image.h}")
    if crop.w > image.w or crop.h > image.h:
        raise GeometryError(f"crop {crop.w}x{crop.h} exceeds image {image.w}x{image.h}")
    _check_fits(bbox, crop)
    step_x = crop.w - bbox.width
    step_y = crop.h - bbox.height
    xs = _axis_origins(image.w, bbox.x1, bbox.x2, crop.w, step_x)
    ys = _axis_origins(image.h, bbox.y1, bbox.y2, crop.h, step_y)
    out = []
    for x in xs:
        w = min(x + crop.w, image.w) - x
        for y in ys:
            h = min(y + crop.h, image.h) - y
            window = CropWindow(Point(x, y), Size(w, h))
            assert bbox_contained_in_window(bbox, window)
            out.append((window, translate_bbox(bbox, window.origin)))
    return out


def crop_size(image: Size, scaling_factor: float, attempt: int = 1) -> Size:
    w = floor_scale(image.w, scaling_factor, attempt)
    h = floor_scale(image.h, scaling_factor, attempt)
    if w < 1 or h < 1:
        raise BypassResampling(f"attempt {attempt} crop of {image.w}x{image.h} is empty")
    return Size(w, h)


def enumerate_valid_windows(image: Size, bbox: BBox, f: float) -> list[tuple[CropWindow, BBox]]:
    """Scan the image with crops of ``floor(dim * f)`` and keep those containing ``bbox``.

    Returns ``(window, bbox translated into the window)`` pairs in scan order.

    Raises:
        BypassResampling: the box is at least as wide or tall as the crop.
    """
    if not 0 < f < 1:
        raise ValueError(f"scaling factor must be in (0, 1), got {f}")
    return windows_for_crop(image, bbox, crop_size(image, f))


def resample_attempt_schedule(image: Size, bbox: BBox, cfg: ResampleConfig) -> list[Size]:
    """Crop sizes for attempts ``1..max_attempts``, cut at the first one the box cannot fit."""
    sizes = []
    for k in range(1, cfg.max_attempts + 1):
        try:
            size = crop_size(image, cfg.scaling_factor, k)
            _check_fits(bbox, size)
        except BypassResampling:
            break
        sizes.append(size)
    return sizes


def pick_resample(image: Size, bbox: BBox, cfg: ResampleConfig, attempt: int) -> ResampleResult:
    """First valid window at the given 1-based attempt.

    Raises:
        ValueError: ``attempt`` is outside ``1..cfg.max_attempts``.
        BypassResampling: the box no longer fits at this attempt's crop size.
    """
    if not 1 <= attempt <= cfg.max_attempts:
        raise ValueError(f"attempt must be in 1..{cfg.max_attempts}, got {attempt}")
    schedule = resample_attempt_schedule(image, bbox, cfg)
    if attempt > len(schedule):
        raise BypassResampling(
            f"schedule for box {bbox.as_list()} stops after {len(schedule)} attempt(s)"
        )
    window, local = windows_for_crop(image, bbox, schedule[attempt - 1])[0]
    return ResampleResult(window=window, translated_bbox=local, attempt_index=attempt)


def crop_raster(image: np.ndarray, window: CropWindow) -> np.ndarray:
    h, w = image.shape[:2]
    if not window.fits_in(Size(w, h)):
        raise GeometryError(
            f"window {window.to_dict()} is outside raster {w}x{h}"
        )
    y0, x0 = window.origin.y, window.origin.x
    return image[y0 : y0 + window.size.h, x0 : x0 + window.size.w].copy()


_UNSAFE = re.compile(r"[^A-Za-z0-9_.-]+")


def transform_records(
    records: Sequence["GroundingRecord"],
    out_dir: str | Path,
    attempt: int,
    cfg: ResampleConfig,
    *,
    load_image: Callable[[Path], np.ndarray] | None = None,
    max_workers: int = 1,
) -> tuple[list[dict], list[dict]]:
    """Crop every record's image for ``attempt`` and write the crops as PNG.

    Returns ``(rows, errors)``. ``rows`` are record dicts in input order; a bypassed
    record is passed through unchanged with ``"bypassed": true``. A record whose
    image cannot be read lands in ``errors`` and the rest of the batch continues.
    """
    from . import raster

    load = load_image or raster.load_image
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def one(rec):
        try:
            pixels = load(rec.image_path)
        except Exception as exc:  # unreadable image is a per-record error
            return None, {"id": rec.id, "error": f"{type(exc).__name__}: {exc}"}
        size = Size.of_array(pixels)
        row = rec.to_dict()
        try:
            picked = pick_resample(size, rec.bbox, cfg, attempt)
        except BypassResampling as exc:
            row["bypassed"] = True
            log.info("record %s bypassed: %s", rec.id, exc)
            return row, None
        name = f"{_UNSAFE.sub('_', rec.id)}_attempt{attempt}.png"
        raster.save_png(crop_raster(pixels, picked.window), out_dir / name)
        row.update(
            image_path=name,
            image_size=[picked.window.size.w, picked.window.size.h],
            bbox=picked.translated_bbox.as_list(),
            attempt_index=attempt,
            bypassed=False,
            source_image=str(rec.image_path),
            crop_origin=[picked.window.origin.x, picked.window.origin.y],
        )
        return row, None

    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
        results = list(pool.map(one, records))
    rows = [r for r, _ in results if r is not None]
    errors = [e for _, e in results if e is not None]
    return rows, errors
