"""Synthetic grounding datasets on coordinate-encoded canvases.

Records share a few canvas images (one per screen size), which keeps datasets of
hundreds of records cheap to write while still letting oracle backends locate
every crop they are shown.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .decomposer import TilingConfig, plan_tiles
from .geometry import BBox, Size, bbox_contained_in_window
from .raster import coordinate_canvas, save_png

SCREEN_SIZES = ((1920, 1080), (2560, 1440), (3840, 2160))
GROUPS = ("CAD", "Creative", "Dev", "OS", "Office", "Scientific")


def fits_some_tile(bbox: BBox, image: Size, cfg: TilingConfig) -> bool:
    return any(bbox_contained_in_window(bbox, t.window) for t in plan_tiles(image, cfg))


def sample_boxes(
    rng: np.random.Generator,
    image: Size,
    n: int,
    cfg: TilingConfig,
    *,
    min_size: tuple[int, int] = (16, 12),
    max_size: tuple[int, int] = (120, 80),
) -> list[BBox]:
    """Uniformly placed boxes, each fully inside at least one tile."""
    boxes = []
    while len(boxes) < n:
        w = int(rng.integers(min_size[0], max_size[0] + 1))
        h = int(rng.integers(min_size[1], max_size[1] + 1))
        x1 = int(rng.integers(0, image.w - w))
        y1 = int(rng.integers(0, image.h - h))
        box = BBox(x1, y1, x1 + w, y1 + h)
        if fits_some_tile(box, image, cfg):
            boxes.append(box)
    return boxes


def make_synthetic_dataset(
    out_dir: str | Path,
    n_records: int = 200,
    seed: int = 0,
    *,
    sizes: Sequence[tuple[int, int]] = SCREEN_SIZES,
    tiling: TilingConfig | None = None,
) -> Path:
    """Write canvases plus ``records.jsonl`` into ``out_dir``; returns the records path."""
    tiling = tiling or TilingConfig()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    screens = [Size(w, h) for w, h in sizes]
    for s in screens:
        name = out / f"canvas_{s.w}x{s.h}.png"
        if not name.exists():
            save_png(coordinate_canvas(s), name)
    rows = []
    for i in range(n_records):
        screen = screens[i % len(screens)]
        (box,) = sample_boxes(rng, screen, 1, tiling)
        ui_type = "text" if rng.random() < 0.5 else "icon"
        rows.append({
            "id": f"syn-{i:04d}",
            "image_path": f"canvas_{screen.w}x{screen.h}.png",
            "instruction": f"select {ui_type} element syn-{i:04d}",
            "bbox": box.as_list(),
            "ui_type": ui_type,
            "group": GROUPS[int(rng.integers(len(GROUPS)))],
            "platform": "synthetic",
            "image_size": [screen.w, screen.h],
        })
    path = out / "records.jsonl"
    path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in rows))
    return path
