"""Benchmark records and metrics.

Grounding records are JSONL, one object per line::

    {"id": "pro-0001", "image_path": "img/0001.png", "instruction": "open the layers panel",
     "bbox": [x1, y1, x2, y2], "ui_type": "icon", "group": "Creative", "platform": "macos",
     "image_size": [3840, 2160]}

``image_size`` is optional; without it the image header is read to validate the box.
Agent step records carry a ``gold_action`` of the form
``{"action_type": "click", "args": {"x": 10, "y": 20}}``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .geometry import BBox, GeometryError, Point, Size, contains
from .raster import image_size

log = logging.getLogger(__name__)

UI_TYPES = ("text", "icon")
GR_RADIUS_FRAC = Fraction(14, 100)


class DatasetError(ValueError):
    def __init__(self, message: str, errors: list[dict] | None = None):
        super().__init__(message)
        self.errors = errors or []


@dataclass(frozen=True)
class GroundingRecord:
    id: str
    image_path: str
    instruction: str
    bbox: BBox
    ui_type: str = "text"
    group: str = "default"
    platform: str = ""
    image_size: Size | None = None

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None) -> "GroundingRecord":
        missing = [k for k in ("id", "image_path", "instruction", "bbox") if k not in d]
        if missing:
            raise ValueError(f"missing field(s): {', '.join(missing)}")
        ui_type = str(d.get("ui_type", "text")).lower()
        if ui_type not in UI_TYPES:
            raise ValueError(f"ui_type must be one of {UI_TYPES}, got {ui_type!r}")
        if not isinstance(d["bbox"], (list, tuple)) or len(d["bbox"]) != 4:
            raise ValueError("bbox must be [x1, y1, x2, y2]")
        if any(not isinstance(v, (int, float)) or isinstance(v, bool) or v != int(v) for v in d["bbox"]):
            raise ValueError(f"bbox must hold integer pixels, got {d['bbox']}")
        bbox = BBox.from_list(d["bbox"])
        path = str(d["image_path"])
        if base_dir is not None and not Path(path).is_absolute():
            path = str(base_dir / path)
        size = Size(*map(int, d["image_size"])) if d.get("image_size") else None
        return cls(
            id=str(d["id"]),
            image_path=path,
            instruction=str(d["instruction"]),
            bbox=bbox,
            ui_type=ui_type,
            group=str(d.get("group", "default")),
            platform=str(d.get("platform", "")),
            image_size=size,
        )

    def to_dict(self) -> dict:
        d = {
            "id": self.id,
            "image_path": self.image_path,
            "instruction": self.instruction,
            "bbox": self.bbox.as_list(),
            "ui_type": self.ui_type,
            "group": self.group,
            "platform": self.platform,
        }
        if self.image_size is not None:
            d["image_size"] = [self.image_size.w, self.image_size.h]
        return d


def _validate_bbox(rec: GroundingRecord) -> GroundingRecord:
    if rec.bbox.is_degenerate:
        raise ValueError(f"degenerate bbox {rec.bbox.as_list()}")
    size = rec.image_size
    if size is None:
        size = image_size(rec.image_path)
        rec = replace(rec, image_size=size)
    if not rec.bbox.within(size):
        raise ValueError(f"bbox {rec.bbox.as_list()} exceeds image {size.w}x{size.h}")
    return rec


def _jsonl(path: Path) -> Iterable[tuple[int, dict | None, str | None]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except ValueError as exc:
                yield lineno, None, f"invalid JSON: {exc}"
                continue
            if not isinstance(obj, dict):
                yield lineno, None, "line is not a JSON object"
                continue
            yield lineno, obj, None


def load_grounding_dataset(
    path: str | Path, images_dir: str | Path | None = None
) -> tuple[list[GroundingRecord], list[dict]]:
    """Read and validate a grounding JSONL file.

    Returns ``(records, errors)``; each error is ``{"line", "id", "reason"}``.
    Relative image paths resolve against ``images_dir`` or else the file's folder.

    Raises:
        DatasetError: no line produced a valid record.
    """
    path = Path(path)
    base = Path(images_dir) if images_dir is not None else path.parent
    records: list[GroundingRecord] = []
    errors: list[dict] = []
    seen: set[str] = set()
    for lineno, obj, problem in _jsonl(path):
        rid = obj.get("id") if obj else None
        if problem is None:
            try:
                rec = _validate_bbox(GroundingRecord.from_dict(obj, base))
                if rec.id in seen:
                    raise ValueError(f"duplicate id {rec.id!r}")
            except (ValueError, GeometryError, OSError, TypeError) as exc:
                problem = str(exc)
        if problem is not None:
            errors.append({"line": lineno, "id": rid, "reason": problem})
            continue
        seen.add(rec.id)
        records.append(rec)
    if errors:
        log.warning("%s: rejected %d line(s)", path, len(errors))
    if not records:
        raise DatasetError(f"{path}: no valid grounding records", errors)
    return records, errors


def adapt_screenspot(obj: dict, *, bbox_format: str = "xyxy", index: int | None = None) -> dict:
    """Map a ScreenSpot-style annotation onto the grounding record schema.

    Handles both the ``xywh`` boxes of the mobile/desktop/web releases and the
    ``xyxy`` boxes of the professional release.
    """
    x, y, a, b = obj["bbox"]
    bbox = [x, y, x + a, y + b] if bbox_format == "xywh" else [x, y, a, b]
    out = {
        "id": str(obj.get("id") or obj.get("img_filename", "") + (f"#{index}" if index is not None else "")),
        "image_path": obj.get("img_filename") or obj["image_path"],
        "instruction": obj["instruction"],
        "bbox": [int(round(v)) for v in bbox],
        "ui_type": obj.get("ui_type") or obj.get("data_type", "text"),
        "group": obj.get("group") or obj.get("application") or obj.get("data_source", "default"),
        "platform": obj.get("platform", ""),
    }
    if obj.get("img_size"):
        out["image_size"] = list(obj["img_size"])
    return out


# ---------------------------------------------------------------- agent steps

ACTION_ARGS: dict[str, tuple[str, ...]] = {
    "click": ("x", "y"),
    "long_press": ("x", "y"),
    "scroll": ("direction",),
    "input_text": ("text",),
    "open_app": ("app_name",),
    "navigate": ("target",),
    "navigate_back": (),
    "navigate_home": (),
    "wait": (),
    "done": (),
}
COORD_ACTIONS = frozenset(k for k, v in ACTION_ARGS.items() if v == ("x", "y"))


@dataclass(frozen=True)
class ActionSpec:
    action_type: str
    args: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.action_type not in ACTION_ARGS:
            raise ValueError(f"unsupported action type {self.action_type!r}")
        missing = [k for k in ACTION_ARGS[self.action_type] if k not in self.args]
        if missing:
            raise ValueError(f"{self.action_type} needs arg(s) {missing}")
        object.__setattr__(self, "args", dict(self.args))

    @property
    def has_coordinates(self) -> bool:
        return self.action_type in COORD_ACTIONS

    @classmethod
    def from_dict(cls, d: dict) -> "ActionSpec":
        return cls(d["action_type"], d.get("args") or {})

    def to_dict(self) -> dict:
        return {"action_type": self.action_type, "args": dict(self.args)}


@dataclass(frozen=True)
class AgentStepRecord:
    id: str
    image_path: str
    instruction: str
    gold_action: ActionSpec
    history: tuple[str, ...] = ()

    @classmethod
    def from_dict(cls, d: dict) -> "AgentStepRecord":
        return cls(
            id=str(d["id"]),
            image_path=str(d.get("image_path", "")),
            instruction=str(d["instruction"]),
            gold_action=ActionSpec.from_dict(d["gold_action"]),
            history=tuple(d.get("history", ())),
        )


def load_agent_dataset(path: str | Path) -> tuple[list[AgentStepRecord], list[dict]]:
    records, errors = [], []
    for lineno, obj, problem in _jsonl(Path(path)):
        if problem is None:
            try:
                records.append(AgentStepRecord.from_dict(obj))
                continue
            except (KeyError, ValueError, TypeError) as exc:
                problem = f"{type(exc).__name__}: {exc}"
        errors.append({"line": lineno, "id": obj.get("id") if obj else None, "reason": problem})
    if not records:
        raise DatasetError(f"{path}: no valid agent step records", errors)
    return records, errors


def within_radius(pred: ActionSpec, gold: ActionSpec, screen: Size) -> bool:
    """Predicted coordinates within 14% of the screen width of the gold ones (inclusive)."""
    if not (pred.has_coordinates and gold.has_coordinates):
        return False
    dx = Fraction(pred.args["x"]) - Fraction(gold.args["x"])
    dy = Fraction(pred.args["y"]) - Fraction(gold.args["y"])
    radius = GR_RADIUS_FRAC * screen.w
    return dx * dx + dy * dy <= radius * radius


def _arg_equal(a, b) -> bool:
    if isinstance(a, str) and isinstance(b, str):
        return a.strip() == b.strip()
    return a == b


def step_success(pred: ActionSpec, gold: ActionSpec, screen: Size) -> bool:
    if pred.action_type != gold.action_type:
        return False
    if gold.has_coordinates:
        return within_radius(pred, gold, screen)
    return all(k in pred.args and _arg_equal(pred.args[k], v) for k, v in gold.args.items())


@dataclass(frozen=True)
class AgentMetrics:
    type_acc: float
    gr_acc: float | None
    sr_acc: float
    n_steps: int
    n_grounding: int
    type_hits: int
    gr_hits: int
    sr_hits: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def agent_metrics(predicted: Sequence[ActionSpec], gold: Sequence[AgentStepRecord], screen: Size) -> AgentMetrics:
    """Type / GR / SR over aligned step lists.

    GR only counts steps whose gold action carries coordinates; it is ``None`` when
    there are none.
    """
    if len(predicted) != len(gold):
        raise ValueError(f"{len(predicted)} predictions for {len(gold)} gold steps")
    if not gold:
        raise ValueError("no steps to score")
    type_hits = gr_hits = sr_hits = n_ground = 0
    for pred, rec in zip(predicted, gold):
        g = rec.gold_action
        type_hits += pred.action_type == g.action_type
        if g.has_coordinates:
            n_ground += 1
            gr_hits += within_radius(pred, g, screen)
        sr_hits += step_success(pred, g, screen)
    n = len(gold)
    return AgentMetrics(
        type_acc=type_hits / n,
        gr_acc=gr_hits / n_ground if n_ground else None,
        sr_acc=sr_hits / n,
        n_steps=n,
        n_grounding=n_ground,
        type_hits=type_hits,
        gr_hits=gr_hits,
        sr_hits=sr_hits,
    )


# ---------------------------------------------------------------- grounding metrics

@dataclass
class MetricsReport:
    label: str = ""
    total: int = 0
    correct: int = 0
    # group -> ui_type -> {"correct": n, "total": n}
    per_category: dict[str, dict[str, dict[str, int]]] = field(default_factory=dict)
    pass_at_4: float | None = None
    pass_at_4_hits: int | None = None
    agent: dict | None = None
    record_errors: list[dict] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def accuracy(self) -> float:
        return self.correct / self.total if self.total else 0.0

    def category_accuracy(self, group: str, ui_type: str) -> float | None:
        cell = self.per_category.get(group, {}).get(ui_type)
        if not cell or not cell["total"]:
            return None
        return cell["correct"] / cell["total"]

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "total": self.total,
            "correct": self.correct,
            "accuracy": self.accuracy,
            "per_category": self.per_category,
            "pass_at_4": self.pass_at_4,
            "pass_at_4_hits": self.pass_at_4_hits,
            "agent": self.agent,
            "record_errors": self.record_errors,
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(
            label=d.get("label", ""),
            total=d["total"],
            correct=d["correct"],
            per_category=d.get("per_category", {}),
            pass_at_4=d.get("pass_at_4"),
            pass_at_4_hits=d.get("pass_at_4_hits"),
            agent=d.get("agent"),
            record_errors=list(d.get("record_errors", [])),
            metadata=d.get("metadata", {}),
        )


def _index(records: Sequence[GroundingRecord]) -> dict[str, GroundingRecord]:
    return {r.id: r for r in records}


def grounding_accuracy(
    predictions: Mapping[str, Point | None] | Iterable[tuple[str, Point | None]],
    records: Sequence[GroundingRecord],
) -> MetricsReport:
    """Fraction of predictions inside their record's box, overall and per (group, ui_type).

    A ``None`` prediction counts as a miss.

    Raises:
        KeyError: a prediction names an id that is not among the records.
    """
    by_id = _index(records)
    items = predictions.items() if isinstance(predictions, Mapping) else predictions
    report = MetricsReport()
    for rid, point in items:
        if rid not in by_id:
            raise KeyError(f"prediction for unknown record id {rid!r}")
        rec = by_id[rid]
        hit = point is not None and contains(rec.bbox, point)
        cell = report.per_category.setdefault(rec.group, {}).setdefault(
            rec.ui_type, {"correct": 0, "total": 0}
        )
        cell["total"] += 1
        cell["correct"] += hit
        report.total += 1
        report.correct += hit
    return report


def pass_at_4(candidate_sets: Mapping[str, object], records: Sequence[GroundingRecord]) -> float:
    """Fraction of records where at least one tile candidate lands inside the box.

    Values are candidate sets (anything with ``.candidates``); ``None`` or an empty
    set counts as a failure.
    """
    hits, total = pass_at_4_counts(candidate_sets, records)
    return hits / total if total else 0.0


def pass_at_4_counts(candidate_sets: Mapping[str, object], records: Sequence[GroundingRecord]) -> tuple[int, int]:
    by_id = _index(records)
    hits = 0
    for rid, cs in candidate_sets.items():
        if rid not in by_id:
            raise KeyError(f"candidate set for unknown record id {rid!r}")
        bbox = by_id[rid].bbox
        cands = getattr(cs, "candidates", None) or []
        hits += any(contains(bbox, c.global_point) for c in cands)
    return hits, len(candidate_sets)


# ---------------------------------------------------------------- report output

def _pct(value: float | None) -> str:
    return "-" if value is None else f"{100 * value:.1f}"


def _markdown(report: MetricsReport) -> str:
    groups = sorted(report.per_category)
    header = ["Model"] + [f"{g} {t.capitalize()}" for g in groups for t in UI_TYPES] + ["Avg", "pass@4"]
    row = [report.label or "-"]
    for g in groups:
        for t in UI_TYPES:
            row.append(_pct(report.category_accuracy(g, t)))
    row.append(_pct(report.accuracy if report.total else None))
    row.append(_pct(report.pass_at_4))
    lines = [
        "| " + " | ".join(header) + " |",
        "|" + "|".join(["---"] + [":---:"] * (len(header) - 1)) + "|",
        "| " + " | ".join(row) + " |",
        "",
        f"records: {report.total}, correct: {report.correct}, errors: {len(report.record_errors)}",
    ]
    if report.agent:
        a = report.agent
        lines += [
            "",
            "| Type | GR | SR |",
            "|:---:|:---:|:---:|",
            f"| {_pct(a.get('type_acc'))} | {_pct(a.get('gr_acc'))} | {_pct(a.get('sr_acc'))} |",
        ]
    return "\n".join(lines) + "\n"


def emit_report(report: MetricsReport, fmt: str = "json") -> bytes:
    """Serialize deterministically: sorted JSON, or a markdown table of groups x {Text, Icon}."""
    if fmt == "json":
        return (json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n").encode("utf-8")
    if fmt in ("markdown", "markdown_table", "md"):
        return _markdown(report).encode("utf-8")
    raise ValueError(f"unknown report format {fmt!r}")
