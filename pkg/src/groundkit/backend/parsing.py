"""Extracting a click point and the reasoning segment from model responses."""

from __future__ import annotations

import json
import math
import re

from ..geometry import Point
from ..rewards import ThoughtText

THINK_OPEN = "<think>"
THINK_CLOSE = "</think>"

_NUM = r"(\d+(?:\.\d+)?)"
_JSON_OBJECT = re.compile(r"\{[^{}]*\}")
_CALL = re.compile(
    r"\b[A-Za-z_]\w*\s*\(\s*(?:x\s*=\s*)?" + _NUM + r"\s*,\s*(?:y\s*=\s*)?" + _NUM + r"\s*\)"
)
_BARE = re.compile(
    r"\(\s*" + _NUM + r"\s*,\s*" + _NUM + r"\s*\)|\[\s*" + _NUM + r"\s*,\s*" + _NUM + r"\s*\]"
)


def _to_pixel(v: float) -> int:
    return int(math.floor(v + 0.5))


def _json_matches(text: str):
    for m in _JSON_OBJECT.finditer(text):
        try:
            obj = json.loads(m.group(0))
        except ValueError:
            continue
        x, y = obj.get("x"), obj.get("y")
        if all(isinstance(v, (int, float)) and not isinstance(v, bool) and v >= 0 for v in (x, y)):
            return m, (float(x), float(y))
    return None


def _regex_match(pattern: re.Pattern, text: str):
    m = pattern.search(text)
    if m is None:
        return None
    nums = [g for g in m.groups() if g is not None]
    return m, (float(nums[0]), float(nums[1]))


def _find_action(text: str):
    """Earliest-ending match across the grammars; grammar priority breaks ties.

    Ranking by end position means appending text can never displace a match that
    was already complete.
    """
    found = []
    for priority, hit in enumerate(
        (_json_matches(text), _regex_match(_CALL, text), _regex_match(_BARE, text))
    ):
        if hit is not None:
            m, xy = hit
            found.append((m.end(), priority, m.start(), xy))
    if not found:
        return None
    _, _, start, xy = min(found)
    return start, xy


def _has_leading_think(text: str) -> bool:
    return text.lstrip().startswith(THINK_OPEN)


def split_think_answer(response_text: str) -> tuple[ThoughtText, str]:
    """Split a response into its reasoning segment and the answer remainder.

    A response opening with ``<think>`` uses the delimited content as the thought;
    an unclosed block makes the whole text the thought with an empty answer.
    Otherwise the thought is whatever precedes the first parseable action.
    """
    if _has_leading_think(response_text):
        body = response_text.lstrip()[len(THINK_OPEN):]
        end = body.find(THINK_CLOSE)
        if end < 0:
            return ThoughtText(body.strip()), ""
        return ThoughtText(body[:end].strip()), body[end + len(THINK_CLOSE):].strip()
    hit = _find_action(response_text)
    if hit is None:
        return ThoughtText(response_text.strip()), ""
    start = hit[0]
    return ThoughtText(response_text[:start].strip()), response_text[start:].strip()


def parse_point_xy(response_text: str) -> tuple[float, float] | None:
    """Raw (possibly fractional) coordinates of the first action, or None."""
    text = response_text
    if _has_leading_think(text):
        _, text = split_think_answer(text)
    hit = _find_action(text)
    return None if hit is None else hit[1]


def parse_point(response_text: str) -> Point | None:
    """First coordinate pair in a response, rounded to pixels; None if there is none.

    Recognized forms: a JSON object with ``x``/``y`` fields, a call such as
    ``click(x, y)`` or ``click(x=.., y=..)``, and a bare ``(x, y)`` or ``[x, y]``.
    """
    xy = parse_point_xy(response_text)
    if xy is None:
        return None
    return Point(_to_pixel(xy[0]), _to_pixel(xy[1]))
