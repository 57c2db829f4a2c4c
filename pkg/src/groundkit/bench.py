"""Benchmark runner: pipeline over a grounding dataset, then metrics."""

from __future__ import annotations

import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .backend import (
    BackendError,
    ConstantScorer,
    HttpClient,
    HttpGroundingBackend,
    HttpYesScorer,
    IntersectOracleScorer,
    OracleBackend,
    ScriptedBackend,
    describe,
)
from .config import ConfigError, GlobalConfig
from .decomposer import CandidateSet, PipelineError, TilingConfig, grounded_predict
from .evalharness import GroundingRecord, MetricsReport, grounding_accuracy, pass_at_4_counts
from .geometry import BBox
from .raster import load_image

STAGES = ("image_load", "decomposition", "candidate_generation", "element_extraction", "selection")


def oracle_truth(records: Sequence[GroundingRecord]) -> dict[str, BBox]:
    truth: dict[str, BBox] = {}
    for r in records:
        if truth.get(r.instruction, r.bbox) != r.bbox:
            raise ConfigError(f"oracle needs unique instructions; {r.instruction!r} has two boxes")
        truth[r.instruction] = r.bbox
    return truth


def build_backends(cfg: GlobalConfig, records: Sequence[GroundingRecord] = ()):
    """Instantiate (grounding backend, selection scorer) from the runtime section.

    Both HTTP roles share one client, so ``backend.max_concurrency`` bounds the
    total number of requests in flight.
    """
    rt = cfg.runtime
    client = HttpClient(cfg.backend) if "http" in (rt.grounding, rt.scorer) else None
    if rt.grounding == "http":
        backend = HttpGroundingBackend(cfg.backend, client)
    elif rt.grounding == "scripted":
        if rt.fixture_dir:
            backend = ScriptedBackend.from_dir(rt.fixture_dir, default=rt.scripted_default)
        else:
            backend = ScriptedBackend({}, default=rt.scripted_default)
    else:
        backend = OracleBackend(
            oracle_truth(records), rt.noise, rt.seed, coordinate_mode=cfg.tiling.coordinate_mode
        )
    if rt.scorer == "http":
        scorer = HttpYesScorer(cfg.backend, client)
    elif rt.scorer == "intersect_oracle":
        scorer = IntersectOracleScorer(oracle_truth(records))
    else:
        scorer = ConstantScorer(rt.constant_score)
    return backend, scorer


class _CachedLoader:
    """Loads each image path once even when many records ask at the same time."""

    def __init__(self, maxsize: int = 8):
        self._load = lru_cache(maxsize=maxsize)(load_image)
        self._locks: dict[str, threading.Lock] = {}
        self._guard = threading.Lock()

    def __call__(self, path: str) -> np.ndarray:
        with self._guard:
            lock = self._locks.setdefault(path, threading.Lock())
        with lock:
            return self._load(path)


@dataclass
class BenchResult:
    report: MetricsReport
    candidate_sets: dict[str, CandidateSet | None]
    # summed wall-clock seconds per stage, plus "total"
    timings: dict[str, float] = field(default_factory=dict)


def run_bench(
    records: Sequence[GroundingRecord],
    backend,
    scorer,
    tiling: TilingConfig,
    *,
    mode: str = "decomposed",
    max_concurrency: int = 1,
    label: str = "",
    metadata: dict | None = None,
    loader: Callable[[str], np.ndarray] | None = None,
) -> BenchResult:
    """Ground every record; a failing record is logged and scored as a miss.

    Records run concurrently (up to ``max_concurrency``); tiles within one record
    run sequentially so the bound holds for backends without their own limiter.
    """
    load = loader or _CachedLoader()
    lock = threading.Lock()
    timings = dict.fromkeys(STAGES, 0.0)

    def run(rec: GroundingRecord):
        local: dict[str, float] = {}
        stage = "image_load"
        try:
            t0 = time.perf_counter()
            image = load(rec.image_path)
            local["image_load"] = time.perf_counter() - t0
            stage = "pipeline"
            cs = grounded_predict(image, rec.instruction, tiling, backend, scorer, mode=mode, timings=local)
            return cs, None
        except PipelineError as exc:
            return None, {"id": rec.id, "stage": exc.stage, "error": str(exc)}
        except (BackendError, OSError, ValueError) as exc:
            return None, {"id": rec.id, "stage": stage, "error": f"{type(exc).__name__}: {exc}"}
        finally:
            with lock:
                for k, v in local.items():
                    timings[k] = timings.get(k, 0.0) + v

    start = time.perf_counter()
    with ThreadPoolExecutor(max_workers=max(1, max_concurrency)) as pool:
        outcomes = list(pool.map(run, records))
    timings["total"] = time.perf_counter() - start

    sets = {rec.id: cs for rec, (cs, _) in zip(records, outcomes)}
    report = grounding_accuracy([(rid, cs.answer if cs else None) for rid, cs in sets.items()], records)
    if mode == "decomposed":
        hits, total = pass_at_4_counts(sets, records)
        report.pass_at_4_hits = hits
        report.pass_at_4 = hits / total if total else 0.0
    report.label = label
    report.record_errors = [err for _, err in outcomes if err is not None]
    report.metadata = {
        "mode": mode,
        "backend": describe(backend),
        "scorer": describe(scorer) if mode == "decomposed" else None,
        "degraded": sorted(rid for rid, cs in sets.items() if cs is not None and cs.degraded),
        **(metadata or {}),
    }
    return BenchResult(report, sets, timings)


def bench_from_config(
    records: Sequence[GroundingRecord], cfg: GlobalConfig, *, label: str = ""
) -> BenchResult:
    backend, scorer = build_backends(cfg, records)
    rt = cfg.runtime
    meta = {"config_hash": cfg.config_hash(), "config": cfg.to_dict()}
    return run_bench(
        records, backend, scorer, cfg.tiling,
        mode=rt.mode, max_concurrency=rt.max_concurrency, label=label, metadata=meta,
    )
