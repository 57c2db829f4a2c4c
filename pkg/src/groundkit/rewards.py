"""Reward functions for grounding rollouts.

* :func:`grounding_reward` scores a predicted click against the target box,
  peaking at the box center and dropping to 0 outside the box.
* :func:`length_reward` is a piecewise-cosine preference over reasoning length.
* :func:`think_reward` gates the length score (plus a completeness bonus) on a
  positive grounding reward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

from .geometry import BBox, DegenerateBoxError, Point, chebyshev_norm_dist, contains


class LengthUnit(str, Enum):
    CHARACTERS = "characters"
    WHITESPACE_TOKENS = "whitespace_tokens"


@dataclass(frozen=True)
class RewardConfig:
    l_min: float = 10
    l_ideal_start: float = 20
    l_ideal_end: float = 60
    l_max: float = 100
    r_bonus: float = 0.1
    length_unit: LengthUnit = LengthUnit.CHARACTERS

    def __post_init__(self):
        object.__setattr__(self, "length_unit", LengthUnit(self.length_unit))
        if not 0 <= self.l_min < self.l_ideal_start <= self.l_ideal_end < self.l_max:
            raise ValueError(
                "reward lengths must satisfy 0 <= l_min < l_ideal_start <= l_ideal_end < l_max, got "
                f"{self.l_min}, {self.l_ideal_start}, {self.l_ideal_end}, {self.l_max}"
            )
        if self.r_bonus < 0:
            raise ValueError(f"r_bonus must be >= 0, got {self.r_bonus}")


@dataclass(frozen=True)
class ThoughtText:
    text: str

    def length(self, unit: LengthUnit | str = LengthUnit.CHARACTERS) -> int:
        unit = LengthUnit(unit)
        if unit is LengthUnit.CHARACTERS:
            return len(self.text.strip())
        return len(self.text.split())


def grounding_reward(p: Point, b: BBox) -> float:
    """``1 + exp(-4 d^2)`` inside the box (d = normalized Chebyshev distance), else 0."""
    if b.is_degenerate:
        raise DegenerateBoxError(f"box {b.as_list()} has zero extent")
    if not contains(b, p):
        return 0.0
    d = chebyshev_norm_dist(p, b)
    return 1.0 + math.exp(-4.0 * d * d)


def length_reward(length: float, cfg: RewardConfig) -> float:
    if length < 0:
        raise ValueError(f"length must be >= 0, got {length}")
    if cfg.l_ideal_start < length <= cfg.l_ideal_end:
        return 1.0
    if cfg.l_min < length <= cfg.l_ideal_start:
        t = (length - cfg.l_min) / (cfg.l_ideal_start - cfg.l_min)
        return 0.5 * (1.0 - math.cos(math.pi * t))
    if cfg.l_ideal_end < length < cfg.l_max:
        t = (length - cfg.l_ideal_end) / (cfg.l_max - cfg.l_ideal_end)
        return 0.5 * (1.0 + math.cos(math.pi * t))
    return 0.0


# stripped before looking for terminal punctuation
_TRAILING_CLOSERS = "\"')]}»”’*`"
_TERMINALS = (".", "!", "?")


def is_syntactically_complete(t: ThoughtText | str) -> bool:
    text = t.text if isinstance(t, ThoughtText) else t
    stripped = text.rstrip().rstrip(_TRAILING_CLOSERS + " \t\r\n")
    return stripped.endswith(_TERMINALS)


def think_reward(t: ThoughtText | str, grounding_r: float, cfg: RewardConfig) -> float:
    if grounding_r < 0:
        raise ValueError(f"grounding reward must be >= 0, got {grounding_r}")
    if grounding_r <= 0:
        return 0.0
    if isinstance(t, str):
        t = ThoughtText(t)
    score = length_reward(t.length(cfg.length_unit), cfg)
    if is_syntactically_complete(t):
        score += cfg.r_bonus
    return score
