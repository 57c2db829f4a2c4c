import json
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from groundkit.decomposer import Candidate, CandidateSet
from groundkit.evalharness import (
    ActionSpec,
    AgentStepRecord,
    DatasetError,
    GroundingRecord,
    MetricsReport,
    adapt_screenspot,
    agent_metrics,
    emit_report,
    grounding_accuracy,
    load_agent_dataset,
    load_grounding_dataset,
    pass_at_4,
    within_radius,
)
from groundkit.geometry import BBox, Point, Size
from groundkit.raster import save_png


def write_jsonl(path, rows):
    path.write_text("".join((r if isinstance(r, str) else json.dumps(r)) + "\n" for r in rows))
    return path


def rec(i, box, group="Dev", ui="text"):
    return GroundingRecord(f"r{i}", "img.png", f"find {i}", BBox(*box), ui, group, "", Size(100, 100))


def test_loader_keeps_valid_lines(tmp_path):
    save_png(np.zeros((50, 80, 3), np.uint8), tmp_path / "s.png")
    rows = [
        {"id": "a", "image_path": "s.png", "instruction": "x", "bbox": [1, 1, 5, 5]},
        {"id": "b", "image_path": "s.png", "instruction": "y", "bbox": [1, 1, 5, 5], "ui_type": "Icon"},
        {"id": "c", "image_path": "s.png", "instruction": "z", "bbox": [70, 40, 90, 45]},
        {"id": "d", "image_path": "s.png", "instruction": "z", "bbox": [3, 3, 3, 9]},
        {"id": "a", "image_path": "s.png", "instruction": "dup", "bbox": [1, 1, 5, 5]},
        "{not json",
        {"id": "e", "image_path": "missing.png", "instruction": "q", "bbox": [0, 0, 1, 1]},
        {"id": "f", "image_path": "s.png", "instruction": "w", "bbox": [0, 0, 1, 1], "ui_type": "widget"},
    ]
    records, errors = load_grounding_dataset(write_jsonl(tmp_path / "r.jsonl", rows))
    assert [r.id for r in records] == ["a", "b"]
    assert records[1].ui_type == "icon" and records[0].image_size == Size(80, 50)
    assert [e["line"] for e in errors] == [3, 4, 5, 6, 7, 8]
    assert "exceeds image" in errors[0]["reason"]


def test_loader_empty_file_is_error(tmp_path):
    (tmp_path / "e.jsonl").write_text("")
    with pytest.raises(DatasetError):
        load_grounding_dataset(tmp_path / "e.jsonl")


def test_screenspot_adapter():
    obj = {"img_filename": "a.png", "bbox": [10, 20, 30, 40], "instruction": "open",
           "data_type": "icon", "data_source": "macos"}
    row = adapt_screenspot(obj, bbox_format="xywh", index=3)
    assert row["bbox"] == [10, 20, 40, 60] and row["group"] == "macos" and row["id"] == "a.png#3"
    assert adapt_screenspot(dict(obj, application="vscode"))["bbox"] == [10, 20, 30, 40]
    GroundingRecord.from_dict(row)


def test_accuracy_examples():
    records = [rec(0, (0, 0, 10, 10)), rec(1, (20, 20, 30, 30), ui="icon"),
               rec(2, (0, 0, 4, 4), group="CAD"), rec(3, (50, 50, 60, 60), group="CAD", ui="icon")]
    centers = {r.id: Point(int(r.bbox.center[0]), int(r.bbox.center[1])) for r in records}
    assert grounding_accuracy(centers, records).accuracy == 1.0
    outside = {r.id: Point(99, 99) for r in records}
    assert grounding_accuracy(outside, records).accuracy == 0.0
    mixed = dict(centers, r3=None)
    report = grounding_accuracy(mixed, records)
    assert report.accuracy == 0.75
    assert report.category_accuracy("CAD", "icon") == 0.0
    assert report.category_accuracy("CAD", "text") == 1.0
    assert report.category_accuracy("Dev", "icon") == 1.0
    assert report.category_accuracy("Office", "text") is None
    with pytest.raises(KeyError):
        grounding_accuracy({"zz": Point(0, 0)}, records)


@settings(max_examples=50)
@given(st.lists(st.tuples(st.integers(0, 80), st.integers(0, 80), st.integers(0, 99), st.integers(0, 99),
                          st.sampled_from(["A", "B"]), st.sampled_from(["text", "icon"])), min_size=1, max_size=100))
def test_accuracy_matches_recount(rows):
    records = [rec(i, (x, y, x + 15, y + 15), g, u) for i, (x, y, _, _, g, u) in enumerate(rows)]
    preds = {f"r{i}": Point(px, py) for i, (_, _, px, py, _, _) in enumerate(rows)}
    report = grounding_accuracy(preds, records)
    hits = sum(x <= px <= x + 15 and y <= py <= y + 15 for x, y, px, py, _, _ in rows)
    assert report.correct == hits and report.total == len(rows)
    assert sum(c["total"] for g in report.per_category.values() for c in g.values()) == len(rows)


def cand(i, gp):
    return Candidate(i, Point(0, 0), Point(*gp), "")


def test_pass_at_4_adversarial():
    records = [rec(i, (10, 10, 20, 20)) for i in range(5)]
    sets = {r.id: CandidateSet(r.instruction, [cand(0, (50, 50)), cand(1, (15, 15))], selected=0) for r in records}
    assert pass_at_4(sets, records) == 1.0
    assert grounding_accuracy({k: v.answer for k, v in sets.items()}, records).accuracy == 0.0


def test_pass_at_4_empty_sets():
    records = [rec(0, (10, 10, 20, 20))]
    assert pass_at_4({"r0": None}, records) == 0.0
    assert pass_at_4({"r0": CandidateSet("x", [])}, records) == 0.0


@given(st.lists(st.lists(st.tuples(st.integers(0, 40), st.integers(0, 40)), min_size=1, max_size=4),
                min_size=1, max_size=30), st.randoms())
def test_selected_accuracy_below_pass_at_4(cands, rnd):
    records = [rec(i, (10, 10, 25, 25)) for i in range(len(cands))]
    sets = {}
    for r, pts in zip(records, cands):
        cs = [cand(i, p) for i, p in enumerate(pts)]
        sets[r.id] = CandidateSet(r.instruction, cs, selected=rnd.randrange(len(cs)))
    acc = grounding_accuracy({k: v.answer for k, v in sets.items()}, records).accuracy
    assert acc <= pass_at_4(sets, records)


# ---------------------------------------------------------------- agent metrics

SCREEN = Size(1000, 2000)


def step(i, action):
    return AgentStepRecord(f"s{i}", "", "do it", action)


def click(x, y):
    return ActionSpec("click", {"x": x, "y": y})


def test_agent_identity():
    gold = [step(0, click(10, 10)), step(1, ActionSpec("scroll", {"direction": "down"})),
            step(2, ActionSpec("input_text", {"text": "hi"}))]
    m = agent_metrics([g.gold_action for g in gold], gold, SCREEN)
    assert (m.type_acc, m.gr_acc, m.sr_acc) == (1.0, 1.0, 1.0)


def test_agent_radius_and_type_miss():
    gold = [step(0, click(100, 100)), step(1, ActionSpec("scroll", {"direction": "up"}))]
    pred = [click(250, 100), click(5, 5)]
    m = agent_metrics(pred, gold, SCREEN)
    assert (m.type_hits, m.gr_hits, m.sr_hits, m.n_grounding) == (1, 0, 0, 1)
    assert m.gr_acc == 0.0


def test_radius_boundary_inclusive():
    assert within_radius(click(240, 100), click(100, 100), SCREEN)
    assert not within_radius(click(241, 100), click(100, 100), SCREEN)
    # 3-4-5 triangle exactly on the 140 px circle
    assert within_radius(click(184, 212), click(100, 100), SCREEN)


def test_text_arg_trimmed_exact():
    gold = [step(0, ActionSpec("input_text", {"text": "Hello"}))]
    assert agent_metrics([ActionSpec("input_text", {"text": " Hello "})], gold, SCREEN).sr_acc == 1.0
    assert agent_metrics([ActionSpec("input_text", {"text": "hello"})], gold, SCREEN).sr_acc == 0.0


def test_agent_misaligned_and_bad_actions():
    with pytest.raises(ValueError):
        agent_metrics([], [step(0, click(1, 1))], SCREEN)
    with pytest.raises(ValueError):
        ActionSpec("teleport", {})
    with pytest.raises(ValueError):
        ActionSpec("click", {"x": 1})


def test_agent_loader(tmp_path):
    rows = [{"id": "a", "instruction": "x", "gold_action": {"action_type": "wait"}},
            {"id": "b", "instruction": "x", "gold_action": {"action_type": "fly"}}]
    records, errors = load_agent_dataset(write_jsonl(tmp_path / "a.jsonl", rows))
    assert [r.id for r in records] == ["a"] and errors[0]["line"] == 2


@given(st.lists(st.tuples(st.integers(0, 999), st.integers(0, 999), st.integers(0, 999), st.integers(0, 999),
                          st.booleans()), min_size=1, max_size=40))
def test_sr_never_exceeds_type_or_gr(rows):
    gold = [step(i, click(gx, gy)) for i, (gx, gy, _, _, _) in enumerate(rows)]
    pred = [click(px, py) if same else ActionSpec("wait") for _, _, px, py, same in rows]
    m = agent_metrics(pred, gold, SCREEN)
    assert m.sr_acc <= m.type_acc and m.sr_acc <= m.gr_acc


# ---------------------------------------------------------------- reports


def sample_report():
    records = [rec(0, (0, 0, 10, 10)), rec(1, (0, 0, 10, 10), group="CAD", ui="icon")]
    report = grounding_accuracy({"r0": Point(5, 5), "r1": Point(50, 50)}, records)
    report.label = "m"
    report.pass_at_4 = 0.5
    report.metadata = {"config_hash": "abc"}
    return report


def test_report_json_roundtrip_and_determinism():
    a = emit_report(sample_report(), "json")
    assert a == emit_report(sample_report(), "json")
    back = MetricsReport.from_dict(json.loads(a))
    assert emit_report(back, "json") == a


def test_report_markdown():
    md = emit_report(sample_report(), "markdown").decode()
    header, _, row = md.splitlines()[:3]
    assert header == "| Model | CAD Text | CAD Icon | Dev Text | Dev Icon | Avg | pass@4 |"
    assert row == "| m | - | 0.0 | 100.0 | - | 50.0 | 50.0 |"
    with pytest.raises(ValueError):
        emit_report(sample_report(), "xml")


def test_random_agent_fixture_counts():
    rnd = random.Random(7)
    gold, pred = [], []
    for i in range(30):
        gold.append(step(i, click(rnd.randrange(1000), rnd.randrange(2000))))
        pred.append(click(rnd.randrange(1000), rnd.randrange(2000)))
    m = agent_metrics(pred, gold, SCREEN)
    hits = sum((p.args["x"] - g.gold_action.args["x"]) ** 2 + (p.args["y"] - g.gold_action.args["y"]) ** 2
               <= 140 ** 2 for p, g in zip(pred, gold))
    assert m.gr_hits == hits == m.sr_hits
