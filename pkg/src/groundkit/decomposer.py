"""Decomposed grounding with selection.

High-resolution screenshots are split into four overlapping tiles; the grounding
backend answers on each tile independently, a small element image is cut around
every candidate point, a scorer rates each element image against the
instruction, and the best candidate is mapped back to screenshot coordinates.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence, TypeVar

import numpy as np

from .backend.base import BackendError, GroundingBackend, ScoringFailure, SelectionScorer
from .backend.parsing import parse_point_xy
from .geometry import CropWindow, Point, Size, floor_scale, remap_point
from .resampler import crop_raster

log = logging.getLogger(__name__)

MODES = ("direct", "decomposed")
COORDINATE_MODES = ("pixel", "normalized_1000")


class TilingConfigError(ValueError):
    pass


class PipelineError(RuntimeError):
    """A pipeline stage could not produce any usable output."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass(frozen=True)
class TilingConfig:
    tile_scale: float = 0.6
    overlap_frac: float = 0.10
    element_frac: float = 0.14
    # how backends express coordinates: pixels of the submitted image, or a 0-1000 grid
    coordinate_mode: str = "pixel"

    def __post_init__(self):
        if not 0 < self.tile_scale <= 1:
            raise TilingConfigError(f"tile_scale must be in (0, 1], got {self.tile_scale}")
        if not 0 <= self.overlap_frac < 1:
            raise TilingConfigError(f"overlap_frac must be in [0, 1), got {self.overlap_frac}")
        if not 0 < self.element_frac < 1:
            raise TilingConfigError(f"element_frac must be in (0, 1), got {self.element_frac}")
        if self.tile_scale <= self.overlap_frac:
            raise TilingConfigError("tile_scale must exceed overlap_frac")
        if (self.tile_scale - self.overlap_frac) + self.tile_scale < 1:
            raise TilingConfigError("tiles would leave an uncovered gap")
        if self.coordinate_mode not in COORDINATE_MODES:
            raise TilingConfigError(f"coordinate_mode must be one of {COORDINATE_MODES}")


@dataclass(frozen=True)
class Tile:
    index: int
    window: CropWindow


@dataclass(frozen=True)
class Candidate:
    tile_index: int
    local_point: Point
    global_point: Point
    raw_response: str
    element_window: CropWindow | None = None
    score: float | None = None

    @property
    def element_origin_global(self) -> Point:
        """Element window's origin in screenshot coordinates."""
        offset = Point(
            self.global_point.x - self.local_point.x,
            self.global_point.y - self.local_point.y,
        )
        return remap_point(self.element_window.origin, offset)

    def to_dict(self) -> dict:
        return {
            "tile_index": self.tile_index,
            "local_point": list(self.local_point.as_tuple()),
            "global_point": list(self.global_point.as_tuple()),
            "element_window": None if self.element_window is None else self.element_window.to_dict(),
            "score": _json_score(self.score),
            "raw_response": self.raw_response,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Candidate":
        ew = d.get("element_window")
        score = d.get("score")
        return cls(
            tile_index=d["tile_index"],
            local_point=Point(*d["local_point"]),
            global_point=Point(*d["global_point"]),
            raw_response=d["raw_response"],
            element_window=None if ew is None else CropWindow.from_dict(ew),
            score=float(score) if isinstance(score, str) else score,
        )


def _json_score(score):
    if score is not None and math.isinf(score):
        return "-inf" if score < 0 else "inf"
    return score


@dataclass
class CandidateSet:
    instruction: str
    candidates: list[Candidate]
    selected: int | None = None
    degraded: bool = False
    mode: str = "decomposed"
    diagnostics: list[dict] = field(default_factory=list)

    @property
    def answer(self) -> Point | None:
        if self.selected is None:
            return None
        return self.candidates[self.selected].global_point

    def to_dict(self) -> dict:
        return {
            "instruction": self.instruction,
            "mode": self.mode,
            "candidates": [c.to_dict() for c in self.candidates],
            "selected": self.selected,
            "answer": None if self.answer is None else list(self.answer.as_tuple()),
            "degraded": self.degraded,
            "diagnostics": list(self.diagnostics),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CandidateSet":
        return cls(
            instruction=d["instruction"],
            candidates=[Candidate.from_dict(c) for c in d["candidates"]],
            selected=d.get("selected"),
            degraded=d.get("degraded", False),
            mode=d.get("mode", "decomposed"),
            diagnostics=list(d.get("diagnostics", [])),
        )


def _axis_spans(dim: int, cfg: TilingConfig) -> list[tuple[int, int]]:
    near = floor_scale(dim, cfg.tile_scale)
    far_origin = near - floor_scale(dim, cfg.overlap_frac)
    if near < 1 or far_origin <= 0 or far_origin >= dim:
        raise TilingConfigError(
            f"tiling of a {dim}px axis with scale {cfg.tile_scale} and overlap {cfg.overlap_frac} "
            "does not give two distinct tiles"
        )
    # the far tile runs to the image edge
    return [(0, near), (far_origin, dim - far_origin)]


def plan_tiles(image: Size, cfg: TilingConfig) -> list[Tile]:
    """Four overlapping tiles in a 2x2 grid, indexed row-major from the top-left.

    Per axis the near tile spans ``floor(dim * tile_scale)`` pixels and the far
    tile starts ``floor(dim * overlap_frac)`` pixels before the near tile ends,
    then runs to the image edge.
    """
    if image.w < 2 or image.h < 2:
        raise TilingConfigError(f"image must be at least 2x2, got {image.w}x{image.h}")
    xs = _axis_spans(image.w, cfg)
    ys = _axis_spans(image.h, cfg)
    tiles = []
    for oy, h in ys:
        for ox, w in xs:
            tiles.append(Tile(len(tiles), CropWindow(Point(ox, oy), Size(w, h))))
    return tiles


def direct_tile(image: Size) -> Tile:
    return Tile(0, CropWindow(Point(0, 0), image))


T = TypeVar("T")
R = TypeVar("R")


def _ordered_map(fn: Callable[[T], R], items: Sequence[T], max_concurrency: int) -> list[R]:
    if max_concurrency <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(max_concurrency, len(items))) as pool:
        return list(pool.map(fn, items))


def decode_local_point(xy: tuple[float, float], tile: Size, coordinate_mode: str = "pixel") -> tuple[Point, bool]:
    """Convert parsed coordinates to an in-tile pixel; returns ``(point, was_clamped)``."""
    x, y = xy
    if coordinate_mode == "normalized_1000":
        x, y = x * tile.w / 1000, y * tile.h / 1000
        px, py = int(math.floor(x)), int(math.floor(y))
    else:
        px, py = int(math.floor(x + 0.5)), int(math.floor(y + 0.5))
    cx = min(max(px, 0), tile.w - 1)
    cy = min(max(py, 0), tile.h - 1)
    return Point(cx, cy), (cx, cy) != (px, py)


def generate_candidates(
    image: np.ndarray,
    instruction: str,
    tiles: Sequence[Tile],
    backend: GroundingBackend,
    *,
    coordinate_mode: str = "pixel",
    max_concurrency: int = 1,
) -> tuple[list[Candidate], list[dict]]:
    """Ground the instruction on every tile independently.

    Returns the candidates (ordered by tile index) and per-tile diagnostics for
    tiles that failed or answered without a coordinate.

    Raises:
        PipelineError: no tile produced a candidate.
    """

    def run(tile: Tile):
        sub = crop_raster(image, tile.window)
        try:
            text = backend.ground(sub, instruction)
        except BackendError as exc:
            return None, {"stage": "candidate_generation", "tile_index": tile.index,
                          "message": f"{type(exc).__name__}: {exc}"}
        xy = parse_point_xy(text)
        if xy is None:
            return None, {"stage": "candidate_generation", "tile_index": tile.index,
                          "message": "no coordinate in response", "response": text}
        local, clamped = decode_local_point(xy, tile.window.size, coordinate_mode)
        note = None
        if clamped:
            note = {"stage": "candidate_generation", "tile_index": tile.index,
                    "message": f"point {xy} clamped into tile"}
        cand = Candidate(
            tile_index=tile.index,
            local_point=local,
            global_point=remap_point(local, tile.window.origin),
            raw_response=text,
        )
        return cand, note

    results = _ordered_map(run, list(tiles), max_concurrency)
    candidates = [c for c, _ in results if c is not None]
    diagnostics = [d for _, d in results if d is not None]
    if not candidates:
        raise PipelineError("candidate_generation", f"all {len(tiles)} tile(s) failed: {diagnostics}")
    return candidates, diagnostics


def extract_element_window(local_point: Point, tile_size: Size, cfg: TilingConfig) -> CropWindow:
    """Window of ``element_frac`` of the tile, centered on the point.

    Near a tile edge the window is shifted inward, never shrunk.
    """
    w = max(1, floor_scale(tile_size.w, cfg.element_frac))
    h = max(1, floor_scale(tile_size.h, cfg.element_frac))
    x = min(max(local_point.x - w // 2, 0), tile_size.w - w)
    y = min(max(local_point.y - h // 2, 0), tile_size.h - h)
    return CropWindow(Point(x, y), Size(w, h))


def select_candidate(
    candidates: Sequence[Candidate],
    instruction: str,
    scorer: SelectionScorer,
    image: np.ndarray,
    *,
    max_concurrency: int = 1,
    mode: str = "decomposed",
) -> CandidateSet:
    """Score each candidate's element image and keep the best.

    Ties go to the lowest tile index. A candidate whose scoring fails gets
    ``-inf``; if every scoring fails the lowest-index candidate is returned with
    ``degraded`` set. A lone candidate is selected without scoring.
    """
    if not candidates:
        raise PipelineError("selection", "no candidates to select from")
    ordered = sorted(candidates, key=lambda c: c.tile_index)
    if len(ordered) == 1:
        return CandidateSet(instruction, list(ordered), selected=0, mode=mode)

    def run(c: Candidate):
        if c.element_window is None:
            raise ValueError("candidate has no element window")
        window = CropWindow(c.element_origin_global, c.element_window.size)
        try:
            s = float(scorer.score(crop_raster(image, window), instruction))
        except ScoringFailure as exc:
            return float("-inf"), {"stage": "selection", "tile_index": c.tile_index,
                                   "message": f"scoring failed: {exc}"}
        except BackendError as exc:
            return float("-inf"), {"stage": "selection", "tile_index": c.tile_index,
                                   "message": f"{type(exc).__name__}: {exc}"}
        if not math.isfinite(s):
            return float("-inf"), {"stage": "selection", "tile_index": c.tile_index,
                                   "message": f"non-finite score {s}"}
        return s, None

    results = _ordered_map(run, ordered, max_concurrency)
    scored = [replace(c, score=s) for c, (s, _) in zip(ordered, results)]
    diagnostics = [d for _, d in results if d is not None]
    if all(s == float("-inf") for s, _ in results):
        return CandidateSet(instruction, scored, selected=0, degraded=True, mode=mode,
                            diagnostics=diagnostics)
    best = max(range(len(scored)), key=lambda i: (scored[i].score, -i))
    return CandidateSet(instruction, scored, selected=best, mode=mode, diagnostics=diagnostics)


@contextmanager
def _timed(timings: dict | None, stage: str):
    start = time.perf_counter()
    try:
        yield
    finally:
        if timings is not None:
            timings[stage] = timings.get(stage, 0.0) + time.perf_counter() - start


def grounded_predict(
    image: np.ndarray,
    instruction: str,
    cfg: TilingConfig,
    backend: GroundingBackend,
    scorer: SelectionScorer | None,
    *,
    mode: str = "decomposed",
    max_concurrency: int = 1,
    timings: dict | None = None,
) -> CandidateSet:
    """Run the whole pipeline on one screenshot.

    ``mode="direct"`` sends the full screenshot once and skips selection, which is
    the untiled baseline. Stage wall-clock seconds are added into ``timings``.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    size = Size.of_array(image)
    with _timed(timings, "decomposition"):
        tiles = [direct_tile(size)] if mode == "direct" else plan_tiles(size, cfg)
    with _timed(timings, "candidate_generation"):
        candidates, diagnostics = generate_candidates(
            image, instruction, tiles, backend,
            coordinate_mode=cfg.coordinate_mode, max_concurrency=max_concurrency,
        )
    with _timed(timings, "element_extraction"):
        sizes = {t.index: t.window.size for t in tiles}
        candidates = [
            replace(c, element_window=extract_element_window(c.local_point, sizes[c.tile_index], cfg))
            for c in candidates
        ]
    with _timed(timings, "selection"):
        if len(candidates) > 1 and scorer is None:
            raise PipelineError("selection", "decomposed mode needs a selection scorer")
        result = select_candidate(
            candidates, instruction, scorer, image, max_concurrency=max_concurrency, mode=mode
        )
    result.diagnostics = diagnostics + result.diagnostics
    return result
