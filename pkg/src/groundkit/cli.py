"""Command-line entry point: ``groundkit <command> ...``.

Exit codes: 0 success, 1 accuracy below ``--threshold``, 2 bad input or config,
3 pipeline failure in ``ground``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .backend import BackendError, parse_point, split_think_answer
from .bench import bench_from_config, build_backends
from .config import ConfigError, GlobalConfig, load_config
from .decomposer import MODES, PipelineError, grounded_predict
from .evalharness import DatasetError, GroundingRecord, emit_report, load_grounding_dataset
from .raster import load_image
from .resampler import transform_records
from .rewards import grounding_reward, think_reward
from .synthetic import make_synthetic_dataset

log = logging.getLogger("groundkit")


class UsageError(Exception):
    pass


def _effective_config(args) -> GlobalConfig:
    cfg = load_config(args.config)
    return cfg.with_overrides(
        mode=getattr(args, "mode", None),
        seed=getattr(args, "seed", None),
        max_concurrency=getattr(args, "max_concurrency", None),
    )


def _read_jsonl(path: str | Path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except ValueError as exc:
                raise UsageError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
    return rows


def _write_jsonl(rows, path: str | Path | None) -> None:
    text = "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows)
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


# ---------------------------------------------------------------- commands

def cmd_reward_eval(args) -> int:
    cfg = _effective_config(args)
    responses = _read_jsonl(args.responses)
    try:
        records = [GroundingRecord.from_dict(d) for d in _read_jsonl(args.records)]
    except ValueError as exc:
        raise UsageError(f"{args.records}: {exc}") from exc
    by_id = {r.id: r for r in records}
    resp_ids = [str(r.get("id")) for r in responses]
    missing = [i for i in resp_ids if i not in by_id]
    unanswered = sorted(set(by_id) - set(resp_ids))
    if missing or unanswered or len(set(resp_ids)) != len(resp_ids):
        dupes = sorted({i for i in resp_ids if resp_ids.count(i) > 1})
        raise UsageError(
            "responses and records are not aligned: "
            f"unknown ids {missing}, ids without response {unanswered}, duplicate ids {dupes}"
        )
    rows = []
    for resp in responses:
        rec = by_id[str(resp["id"])]
        text = str(resp.get("response", ""))
        thought, _ = split_think_answer(text)
        point = parse_point(text)
        gr = grounding_reward(point, rec.bbox) if point is not None else 0.0
        rows.append({
            "id": rec.id,
            "point": None if point is None else list(point.as_tuple()),
            "grounding_reward": gr,
            "thought_length": thought.length(cfg.reward.length_unit),
            "think_reward": think_reward(thought, gr, cfg.reward),
        })
    _write_jsonl(rows, args.out)
    gr_values = np.array([r["grounding_reward"] for r in rows], dtype=float)
    tr_values = np.array([r["think_reward"] for r in rows], dtype=float)
    if rows:
        print(
            f"responses: {len(rows)}  hit rate: {np.mean(gr_values > 0):.3f}  "
            f"mean grounding reward: {gr_values.mean():.4f}  mean think reward: {tr_values.mean():.4f}",
            file=sys.stderr,
        )
    return 0


def cmd_resample(args) -> int:
    cfg = _effective_config(args)
    records, bad = load_grounding_dataset(args.records, args.images_dir)
    for err in bad:
        log.warning("skipped line %s (%s): %s", err["line"], err["id"], err["reason"])
    out_dir = Path(args.out_dir)
    rows, errors = transform_records(
        records, out_dir, args.attempt, cfg.resample, max_workers=cfg.runtime.max_concurrency
    )
    _write_jsonl(rows, out_dir / "records.jsonl")
    for err in errors:
        log.warning("record %s failed: %s", err["id"], err["error"])
    if errors:
        _write_jsonl(errors, out_dir / "errors.jsonl")
    bypassed = sum(bool(r.get("bypassed")) for r in rows)
    print(
        f"attempt {args.attempt}: {len(rows) - bypassed} cropped, {bypassed} bypassed, "
        f"{len(errors)} failed, {len(bad)} invalid lines",
        file=sys.stderr,
    )
    return 0


def cmd_ground(args) -> int:
    cfg = _effective_config(args)
    records = []
    if args.records:
        records, _ = load_grounding_dataset(args.records)
    backend, scorer = build_backends(cfg, records)
    image = load_image(args.image)
    timings: dict[str, float] = {}
    try:
        cs = grounded_predict(
            image, args.instruction, cfg.tiling, backend, scorer,
            mode=cfg.runtime.mode, max_concurrency=cfg.runtime.max_concurrency, timings=timings,
        )
    except PipelineError as exc:
        print(f"error in stage {exc.stage}: {exc}", file=sys.stderr)
        return 3
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return 3
    p = cs.answer
    print(f"{p.x} {p.y}" + ("  (degraded)" if cs.degraded else ""))
    if args.diagnostics:
        diag = cs.to_dict()
        diag["timings"] = timings
        print(json.dumps(diag, sort_keys=True, indent=2))
    return 0


def cmd_bench(args) -> int:
    cfg = _effective_config(args)
    records, bad = load_grounding_dataset(args.records, args.images_dir)
    for err in bad:
        log.warning("skipped line %s (%s): %s", err["line"], err["id"], err["reason"])
    result = bench_from_config(records, cfg, label=args.label or cfg.runtime.mode)
    report = result.report
    report.record_errors = [{"line": e["line"], "id": e["id"], "stage": "load", "error": e["reason"]} for e in bad] \
        + report.record_errors
    summary = f"accuracy {report.accuracy:.4f} ({report.correct}/{report.total})"
    if report.pass_at_4 is not None:
        summary += f"  pass@4 {report.pass_at_4:.4f}"
    summary += f"  errors {len(report.record_errors)}"
    print(summary)
    print("stage seconds: " + ", ".join(f"{k}={v:.3f}" for k, v in result.timings.items()), file=sys.stderr)
    if args.report:
        path = Path(args.report)
        fmt = "markdown" if path.suffix.lower() in (".md", ".markdown") else "json"
        path.write_bytes(emit_report(report, fmt))
        # run-specific facts live beside the report so the report itself stays reproducible
        sidecar = path.with_name(path.name + ".run.json")
        sidecar.write_text(json.dumps({
            "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
            "stage_seconds": result.timings,
        }, sort_keys=True, indent=2) + "\n")
    if args.diagnostics:
        _write_jsonl(
            [{"id": rid, "candidate_set": cs.to_dict() if cs else None} for rid, cs in result.candidate_sets.items()],
            args.diagnostics,
        )
    if args.threshold is not None and report.accuracy < args.threshold:
        print(f"accuracy {report.accuracy:.4f} below threshold {args.threshold}", file=sys.stderr)
        return 1
    return 0


def cmd_synth(args) -> int:
    cfg = load_config(args.config)
    path = make_synthetic_dataset(args.out_dir, args.n, args.seed, tiling=cfg.tiling)
    print(path)
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="groundkit", description="GUI grounding rewards, resampling and inference.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, runtime=True):
        p.add_argument("--config", help="JSON config file")
        if runtime:
            p.add_argument("--seed", type=int)
            p.add_argument("--max-concurrency", type=int, dest="max_concurrency")

    p = sub.add_parser("reward-eval", help="score model responses against records")
    p.add_argument("responses", help="JSONL of {id, response}")
    p.add_argument("records", help="grounding records JSONL")
    p.add_argument("--out", help="output JSONL (default stdout)")
    common(p, runtime=False)
    p.set_defaults(func=cmd_reward_eval)

    p = sub.add_parser("resample", help="crop records for one resampling attempt")
    p.add_argument("records")
    p.add_argument("out_dir")
    p.add_argument("--images-dir", dest="images_dir")
    p.add_argument("--attempt", type=int, default=1)
    common(p)
    p.set_defaults(func=cmd_resample)

    p = sub.add_parser("ground", help="locate one element in one screenshot")
    p.add_argument("image")
    p.add_argument("instruction")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--records", help="records JSONL supplying oracle ground truth")
    p.add_argument("--diagnostics", action="store_true", help="dump the candidate set as JSON")
    common(p)
    p.set_defaults(func=cmd_ground)

    p = sub.add_parser("bench", help="evaluate grounding accuracy on a dataset")
    p.add_argument("records")
    p.add_argument("--images-dir", dest="images_dir")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--report", help="report path (.json or .md)")
    p.add_argument("--threshold", type=float, help="exit 1 when accuracy is below this")
    p.add_argument("--diagnostics", help="write per-record candidate sets to this JSONL file")
    p.add_argument("--label")
    common(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("synth", help="write a synthetic coordinate-canvas dataset")
    p.add_argument("out_dir")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ConfigError, DatasetError, UsageError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
