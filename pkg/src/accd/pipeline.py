"""End-to-end detection run: causal influence scan, behavioral annotation,
causal validation, and the experience feedback that tunes future runs.

Stage order is fixed; stages parallelize internally but never overlap. Every
run leaves a self-describing artifact directory (report, candidate edges,
effect reports, per-user annotations, checksummed manifest) that `replay`
can verify and reload without recomputation.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import classify, cluster, validate
from .ccm import CcmEngine, InfluenceEdge
from .config import PipelineConfig
from .embed import DelayEmbedding, embed_series
from .errors import AccdError, ChecksumError, NotFound
from .ingest import ActivitySeries, EventRecord, PipelineContext, bin_activity, extract_context
from .memory import ParamMemory, select_params
from .classify import LabelStore

logger = logging.getLogger(__name__)

EDGES_FILE = "edges.jsonl"
EFFECTS_FILE = "effects.jsonl"
LABELS_FILE = "labels.jsonl"
REPORT_FILE = "report.json"
MANIFEST_FILE = "manifest.json"


class StageError(AccdError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class Stores:
    """Long-term state shared across runs."""

    memory: ParamMemory
    labels: LabelStore
    calibration_path: Optional[Path] = None

    @classmethod
    def open(cls, root: str | Path) -> "Stores":
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        return cls(
            memory=ParamMemory(root / "memory"),
            labels=LabelStore(root / "labels.jsonl"),
            calibration_path=root / "calibration.json",
        )

    @classmethod
    def ephemeral(cls) -> "Stores":
        return cls(memory=ParamMemory(None), labels=LabelStore(None), calibration_path=None)


@dataclass
class ShortTermMemory:
    """Per-run caches: user manifolds, the cross-map rho cache (inside the
    engine), and intermediate cluster statistics."""

    embeddings: dict[str, DelayEmbedding] = field(default_factory=dict)
    engine: Optional[CcmEngine] = None
    stats: list[cluster.ActivityStats] = field(default_factory=list)


@dataclass
class DetectionRun:
    run_id: str
    context: PipelineContext
    chosen_params: tuple[int, int]
    candidate_edges: list[InfluenceEdge]
    validated_pairs: list[tuple[str, str, dict]]
    metrics: dict

    def to_report(self) -> dict:
        return {
            "run_id": self.run_id,
            "context": {
                "user_count": self.context.user_count,
                "mean_activity": self.context.mean_activity,
                "window_span": self.context.window_span,
                "bucket_key": self.context.bucket_key,
            },
            "chosen_params": list(self.chosen_params),
            "n_candidates": len(self.candidate_edges),
            "n_validated": len(self.validated_pairs),
            "metrics": self.metrics,
        }


def derive_window(events: Sequence[EventRecord], bin_width: int) -> tuple[int, int]:
    ts = [e.timestamp for e in events]
    start = (min(ts) // bin_width) * bin_width
    end = start + ((max(ts) - start) // bin_width + 1) * bin_width
    return int(start), int(end)


def feasible_grid(grid, n_bins: int, l_max: int) -> list[tuple[int, int]]:
    return [(e, t) for e, t in grid if (e - 1) * t + l_max <= n_bins]


def score_pairs(
    engine: CcmEngine,
    embeddings: dict[str, DelayEmbedding],
    series: dict[str, ActivitySeries],
    pairs: Sequence[tuple[str, str]],
    workers: Optional[int] = None,
) -> list[InfluenceEdge]:
    """Influence edges for ordered (source, target) pairs; parallel and
    order-independent (each edge is a pure function of its pair)."""

    def one(pair: tuple[str, str]) -> InfluenceEdge:
        src, dst = pair
        return engine.influence_edge(embeddings[src], series[dst].values, src, dst)

    workers = workers or os.cpu_count() or 1
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, pairs, chunksize=256))
    return [one(p) for p in pairs]


def run_detection(
    events: Sequence[EventRecord],
    config: PipelineConfig = PipelineConfig(),
    stores: Optional[Stores] = None,
    out_dir: Optional[str | Path] = None,
    run_id: Optional[str] = None,
) -> DetectionRun:
    stores = stores if stores is not None else Stores.ephemeral()
    timings: dict[str, float] = {}
    metrics: dict = {"timings": timings}
    run_id = run_id or time.strftime("run_%Y%m%d_%H%M%S")

    if not events:
        run = DetectionRun(run_id, PipelineContext(1, 0.0, max(1, config.bin_width)), (0, 0), [], [], {"timings": {}, "empty_input": True})
        if out_dir is not None:
            _write_artifacts(run, [], config, out_dir)
        return run

    stm = ShortTermMemory()
    annotations: list[dict] = []
    results: list[tuple[InfluenceEdge, validate.ValidationResult]] = []
    candidates: list[InfluenceEdge] = []
    try:
        # ---- stage 1: adaptive causal detection --------------------------------
        t0 = time.perf_counter()
        window = config.window or derive_window(events, config.bin_width)
        grid = config.selection_policy().candidate_grid
        max_e = max(e for e, _ in grid)
        max_t = max(t for _, t in grid)
        series = bin_activity(events, window, config.bin_width, min_bins_hint=max_e * max_t + 10)
        context = extract_context(series)
        n = len(next(iter(series.values())))

        usable = feasible_grid(grid, n, config.l_max)
        if not usable:
            raise AccdError(f"no (E, tau) pair fits {n} bins with library length {config.l_max}; widen the window or shrink bins")
        policy = config.selection_policy()
        if len(usable) < len(grid):
            logger.warning("grid restricted to %d of %d pairs by the %d-bin window", len(usable), len(grid), n)
            policy = type(policy)(policy.alpha, policy.beta, tuple(usable))
        E, tau = select_params(context.bucket_key, policy, stores.memory)

        stm.engine = CcmEngine(config.crossmap_config(), kernel_backend=config.kernel_backend)
        stm.embeddings = {uid: embed_series(s, E, tau) for uid, s in series.items()}

        events_by_user: dict[str, list[int]] = {}
        for e in events:
            if window[0] <= e.timestamp < window[1]:
                events_by_user.setdefault(e.user_id, []).append(e.timestamp)
        stm.stats = [cluster.compute_stats(s, events_by_user.get(uid, ())) for uid, s in series.items()]
        k = config.clusters or cluster.default_k(len(series))
        assignment = cluster.agglomerate(stm.stats, min(k, len(series)))
        pairs = cluster.schedule_pairs(assignment, config.cross_fraction, seed=config.seed)
        metrics["scheduled_pairs"] = len(pairs)
        metrics["cluster_sizes"] = assignment.sizes()

        edges = score_pairs(stm.engine, stm.embeddings, series, pairs, workers=config.workers)
        candidates = sorted(
            (e for e in edges if not e.degenerate and e.score >= config.influence_floor),
            key=lambda e: (e.source, e.target),
        )
        metrics["knn_queries"] = stm.engine.knn_queries
        timings["stage1"] = time.perf_counter() - t0
    except Exception as exc:
        _persist_partial(run_id, config, out_dir, candidates, results, annotations, metrics, "stage1", exc)
        raise StageError("stage1", exc) from exc

    try:
        # ---- stage 2: semi-supervised classification ---------------------------
        t0 = time.perf_counter()
        features = classify.features_for_users(events, window, config.bin_width)
        pool = [features[uid] for uid in sorted(features)]
        labeled = [(r["user"], r["label"]) for r in stores.labels.items() if r["user"] in features]
        model = None
        if len(labeled) >= 10:
            X = np.stack([features[u].values for u, _ in labeled])
            y = np.array([classify.CLASSES.index(lbl) for _, lbl in labeled])
            if len(np.unique(y)) >= 2:
                model = classify.train(X, y, config.train_config(seed_offset=1))

        queue = classify.next_queries(model, [fv for fv in pool if stores.labels.get(fv.user_id) is None], config.queue_size)
        metrics["queue_size"] = len(queue)
        if model is not None:
            unlabeled = [fv for fv in pool if stores.labels.get(fv.user_id) is None]
            metrics["pseudo_added"] = classify.harvest_pseudo_labels(model, unlabeled, stores.labels, config.pseudo_confidence)
            metrics["oob_accuracy"] = model.oob_accuracy

        for fv in pool:
            rec = stores.labels.get(fv.user_id)
            row = {"user": fv.user_id, "label": rec["label"] if rec else None, "label_source": rec["source"] if rec else None}
            if model is not None:
                proba = classify.predict_proba(model, fv.values)
                top = max(proba, key=proba.get)
                row.update({"predicted": top, "uncertainty": round(1.0 - proba[top], 6)})
            else:
                row.update({"predicted": None, "uncertainty": classify.MAX_UNCERTAINTY})
            annotations.append(row)
        timings["stage2"] = time.perf_counter() - t0
    except Exception as exc:
        _persist_partial(run_id, config, out_dir, candidates, results, annotations, metrics, "stage2", exc)
        raise StageError("stage2", exc) from exc

    try:
        # ---- stage 3: adaptive causal validation -------------------------------
        t0 = time.perf_counter()
        calibration = validate.calibrate_estimators(cache_path=stores.calibration_path)
        for idx, edge in enumerate(candidates):
            frame = validate.frame_from_series(series[edge.source], series[edge.target], config.covariate_lags)
            try:
                result = validate.ensemble_validate(
                    frame,
                    validate.ESTIMATORS,
                    frame.profile(),
                    stores.memory,
                    theta_base=config.theta_base,
                    gamma=config.threshold_gamma,
                    threshold_sign=config.threshold_sign,
                    score_weights=config.score_weights,
                    level=config.confidence_level,
                    overlap_top=config.ci_overlap_top,
                    require_refutations=config.require_refutations,
                    calibration=calibration,
                    seed=config.seed + idx,
                )
            except validate.AllEstimatorsFailed:
                continue
            results.append((edge, result))
        validated = [(e.source, e.target, r.ensemble.to_dict()) for e, r in results if r.validated]
        metrics["precision_proxy"] = len(validated) / len(candidates) if candidates else 0.0
        timings["stage3"] = time.perf_counter() - t0
    except Exception as exc:
        _persist_partial(run_id, config, out_dir, candidates, results, annotations, metrics, "stage3", exc)
        raise StageError("stage3", exc) from exc

    # ---- experience feedback: exactly one memory update per run ----------------
    if candidates:
        stores.memory.update_precision(context.bucket_key, (E, tau), len(validated), len(candidates))

    run = DetectionRun(run_id, context, (E, tau), candidates, validated, metrics)
    if out_dir is not None:
        _write_artifacts(run, results, config, out_dir, annotations)
    return run


def _effect_rows(results) -> list[dict]:
    return [
        {"source": e.source, "target": e.target, "validated": r.validated, **r.to_dict()}
        for e, r in results
    ]


def _persist_partial(run_id, config, out_dir, candidates, results, annotations, metrics, stage, exc) -> None:
    if out_dir is None:
        return
    try:
        metrics = dict(metrics)
        metrics["failed_stage"] = stage
        metrics["error"] = str(exc)
        run = DetectionRun(run_id, PipelineContext(1, 0.0, 1), (0, 0), list(candidates), [], metrics)
        _write_artifacts(run, results, config, out_dir, annotations)
    except Exception:
        logger.exception("failed to persist partial results for %s", run_id)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_artifacts(
    run: DetectionRun,
    results,
    config: PipelineConfig,
    out_dir: str | Path,
    annotations: Optional[list[dict]] = None,
) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    with (out / EDGES_FILE).open("w") as fh:
        for edge in run.candidate_edges:
            fh.write(json.dumps(edge.to_dict()) + "\n")
    with (out / EFFECTS_FILE).open("w") as fh:
        for row in _effect_rows(results):
            fh.write(json.dumps(row) + "\n")
    with (out / LABELS_FILE).open("w") as fh:
        for row in annotations or []:
            fh.write(json.dumps(row) + "\n")

    report = run.to_report()
    report["config"] = config.to_dict()
    (out / REPORT_FILE).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")

    manifest = {
        "run_id": run.run_id,
        "files": {name: _sha256(out / name) for name in (EDGES_FILE, EFFECTS_FILE, LABELS_FILE, REPORT_FILE)},
    }
    (out / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


def replay(run_dir: str | Path) -> DetectionRun:
    """Reload a persisted run, verifying the manifest checksums."""
    run_dir = Path(run_dir)
    manifest_path = run_dir / MANIFEST_FILE
    if not run_dir.exists() or not manifest_path.exists():
        raise NotFound(f"no run artifacts at {run_dir}")
    manifest = json.loads(manifest_path.read_text())
    for name, digest in manifest["files"].items():
        path = run_dir / name
        if not path.exists():
            raise NotFound(f"missing artifact {name}")
        if _sha256(path) != digest:
            raise ChecksumError(f"{name} does not match its manifest checksum")

    report = json.loads((run_dir / REPORT_FILE).read_text())
    edges = []
    with (run_dir / EDGES_FILE).open() as fh:
        for line in fh:
            obj = json.loads(line)
            edges.append(
                InfluenceEdge(
                    source=obj["source"],
                    target=obj["target"],
                    score=obj["score"],
                    curve=tuple((int(l), float(r)) for l, r in obj["curve"]),
                    params=(obj["E"], obj["tau"]),
                    degenerate=obj.get("degenerate", False),
                )
            )
    validated = []
    with (run_dir / EFFECTS_FILE).open() as fh:
        for line in fh:
            obj = json.loads(line)
            if obj.get("validated"):
                validated.append((obj["source"], obj["target"], obj["ensemble"]))

    ctx = report["context"]
    return DetectionRun(
        run_id=report["run_id"],
        context=PipelineContext(ctx["user_count"], ctx["mean_activity"], ctx["window_span"], ctx["bucket_key"]),
        chosen_params=tuple(report["chosen_params"]),
        candidate_edges=edges,
        validated_pairs=validated,
        metrics=report["metrics"],
    )
