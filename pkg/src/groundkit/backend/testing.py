"""Deterministic backends for hermetic runs.

``ScriptedBackend`` replays a fixed response table keyed by :func:`request_key`.
``OracleBackend`` and ``IntersectOracleScorer`` know the ground truth and locate
each submitted crop through the coordinate-encoded canvas (see
:func:`groundkit.raster.coordinate_canvas`).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from ..geometry import BBox, Point, Size
from ..raster import decode_origin
from .base import BackendError, ScoringFailure, TransportError, request_key

NOT_VISIBLE = "The requested element is not visible in this screenshot."

NOISE_MODES = ("none", "uniform", "peripheral")
COORDINATE_MODES = ("pixel", "normalized_1000")


class ScriptedBackend:
    """Replays canned responses.

    Table values are response strings; a ``BaseException`` instance is raised
    instead, which is how tests script transport failures.
    """

    def __init__(self, table: Mapping[str, object] | None = None, default: str | None = None):
        self.table = dict(table or {})
        self.default = default
        self.calls: list[str] = []

    @classmethod
    def from_dir(cls, path: str | Path, default: str | None = None) -> "ScriptedBackend":
        """Load ``<request_key>.json`` files holding ``{"response": ...}`` or ``{"error": ...}``."""
        table: dict[str, object] = {}
        for f in sorted(Path(path).glob("*.json")):
            data = json.loads(f.read_text())
            if "error" in data:
                table[f.stem] = TransportError(str(data["error"]), status=data.get("status"))
            else:
                table[f.stem] = data["response"]
        return cls(table, default=default)

    def ground(self, image: np.ndarray, instruction: str) -> str:
        key = request_key(image, instruction)
        self.calls.append(key)
        if key in self.table:
            value = self.table[key]
        elif self.default is not None:
            value = self.default
        else:
            raise BackendError(f"no scripted response for request {key[:12]}")
        if isinstance(value, BaseException):
            raise value
        return str(value)

    def describe(self) -> str:
        return f"scripted({len(self.table)} responses)"


@dataclass(frozen=True)
class NoiseConfig:
    """Pixel noise added by :class:`OracleBackend`.

    ``uniform`` offsets each axis by U(-noise_px, noise_px). ``peripheral`` widens
    that range by ``noise_gain`` pixels per pixel of distance between the target
    and the center of the submitted image, so far-off-center targets degrade most.
    """

    mode: str = "none"
    noise_px: float = 0.0
    noise_gain: float = 0.0

    def __post_init__(self):
        if self.mode not in NOISE_MODES:
            raise ValueError(f"noise mode must be one of {NOISE_MODES}, got {self.mode!r}")
        if self.noise_px < 0 or self.noise_gain < 0:
            raise ValueError("noise magnitudes must be >= 0")

    def magnitude(self, target: tuple[float, float], image: Size) -> float:
        if self.mode == "none":
            return 0.0
        if self.mode == "uniform":
            return self.noise_px
        dist = math.hypot(target[0] - image.w / 2, target[1] - image.h / 2)
        return self.noise_px + self.noise_gain * dist


def encode_point(p: Point, image: Size, coordinate_mode: str = "pixel") -> tuple[int, int]:
    if coordinate_mode == "pixel":
        return p.x, p.y
    return (
        min(999, int(p.x * 1000 / image.w)),
        min(999, int(p.y * 1000 / image.h)),
    )


class OracleBackend:
    """Answers with the target's center whenever the whole box is in view."""

    def __init__(
        self,
        truth: Mapping[str, BBox],
        noise: NoiseConfig | None = None,
        seed: int = 0,
        *,
        locate: Callable[[np.ndarray], Point] = decode_origin,
        coordinate_mode: str = "pixel",
    ):
        if coordinate_mode not in COORDINATE_MODES:
            raise ValueError(f"unknown coordinate mode {coordinate_mode!r}")
        self.truth = dict(truth)
        self.noise = noise or NoiseConfig()
        self.seed = seed
        self.locate = locate
        self.coordinate_mode = coordinate_mode

    def _rng(self, image: np.ndarray, instruction: str) -> np.random.Generator:
        key = request_key(image, instruction)
        return np.random.default_rng(np.random.SeedSequence([self.seed, int(key[:16], 16)]))

    def ground(self, image: np.ndarray, instruction: str) -> str:
        if instruction not in self.truth:
            raise BackendError(f"oracle has no ground truth for {instruction!r}")
        bbox = self.truth[instruction]
        try:
            origin = self.locate(image)
        except ValueError as exc:
            raise BackendError(str(exc)) from exc
        size = Size.of_array(image)
        if not (
            origin.x <= bbox.x1 and origin.y <= bbox.y1
            and bbox.x2 <= origin.x + size.w and bbox.y2 <= origin.y + size.h
        ):
            return NOT_VISIBLE
        cx = (bbox.x1 + bbox.x2) / 2 - origin.x
        cy = (bbox.y1 + bbox.y2) / 2 - origin.y
        m = self.noise.magnitude((cx, cy), size)
        if m > 0:
            dx, dy = self._rng(image, instruction).uniform(-m, m, size=2)
            cx, cy = cx + dx, cy + dy
        x = min(max(int(math.floor(cx)), 0), size.w - 1)
        y = min(max(int(math.floor(cy)), 0), size.h - 1)
        ex, ey = encode_point(Point(x, y), size, self.coordinate_mode)
        return f"click({ex}, {ey})"

    def describe(self) -> str:
        n = self.noise
        return f"oracle(noise={n.mode},px={n.noise_px},gain={n.noise_gain},seed={self.seed})"


class IntersectOracleScorer:
    """Scores 1.0 when the element image overlaps the target box, else 0.0."""

    def __init__(self, truth: Mapping[str, BBox], *, locate: Callable[[np.ndarray], Point] = decode_origin):
        self.truth = dict(truth)
        self.locate = locate

    def score(self, image: np.ndarray, instruction: str) -> float:
        bbox = self.truth.get(instruction)
        if bbox is None:
            raise ScoringFailure(f"no ground truth for {instruction!r}")
        try:
            origin = self.locate(image)
        except ValueError as exc:
            raise ScoringFailure(str(exc)) from exc
        h, w = image.shape[:2]
        hit = (
            origin.x <= bbox.x2 and bbox.x1 < origin.x + w
            and origin.y <= bbox.y2 and bbox.y1 < origin.y + h
        )
        return 1.0 if hit else 0.0

    def describe(self) -> str:
        return "intersect_oracle"


class ConstantScorer:
    def __init__(self, value: float = 0.0):
        self.value = float(value)

    def score(self, image: np.ndarray, instruction: str) -> float:
        return self.value

    def describe(self) -> str:
        return f"constant({self.value})"
