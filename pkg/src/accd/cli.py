"""Command-line surface for the toolkit.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__, bench, classify, ingest, kernels, pipeline, synthgen, validate
from .config import PipelineConfig
from .errors import AccdError, ParseError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); we map usage to 1
        raise UsageError(message)


def build_parser() -> Parser:
    p = Parser(prog="accd", description="Adaptive coordination detection toolkit")
    p.add_argument("--version", action="version", version=f"accd {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    def add_config_flags(sp):
        sp.add_argument("--config", help="json config file (flags override it)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--bin-width", type=int, dest="bin_width")
        sp.add_argument("--clusters", type=int)
        sp.add_argument("--cross-fraction", type=float, dest="cross_fraction")
        sp.add_argument("--influence-floor", type=float, dest="influence_floor")
        sp.add_argument("--workers", type=int)
        sp.add_argument("--kernel", choices=["cython", "numpy"], dest="kernel_backend")

    sp = sub.add_parser("ingest", help="bin events into per-user activity series")
    sp.add_argument("--events", required=True)
    sp.add_argument("--format", choices=["jsonl", "csv"], default="jsonl")
    sp.add_argument("--out", help="series dump path (default: stdout summary only)")
    add_config_flags(sp)

    sp = sub.add_parser("detect", help="run the full three-stage detection pipeline")
    sp.add_argument("--events", required=True)
    sp.add_argument("--format", choices=["jsonl", "csv"], default="jsonl")
    sp.add_argument("--out", required=True, help="run artifact directory")
    sp.add_argument("--store", help="long-term store directory (memory, labels)")
    add_config_flags(sp)

    sp = sub.add_parser("classify", help="train the behavioral classifier from stored labels")
    sp.add_argument("--events", required=True)
    sp.add_argument("--format", choices=["jsonl", "csv"], default="jsonl")
    sp.add_argument("--store", required=True, help="store directory with labels.jsonl")
    sp.add_argument("--out", required=True, help="output directory (model, queue, predictions)")
    add_config_flags(sp)

    sp = sub.add_parser("validate", help="validate candidate edges against event data")
    sp.add_argument("--events", required=True)
    sp.add_argument("--format", choices=["jsonl", "csv"], default="jsonl")
    sp.add_argument("--edges", required=True, help="edges.jsonl of candidate pairs")
    sp.add_argument("--out", required=True, help="effects.jsonl output path")
    sp.add_argument("--store", help="long-term store directory for history")
    add_config_flags(sp)

    sp = sub.add_parser("synth", help="generate synthetic datasets with ground truth")
    kind = sp.add_subparsers(dest="kind", required=True)
    c = kind.add_parser("campaign", help="poisson background + planted coordination group")
    c.add_argument("--users", type=int, default=210)
    c.add_argument("--coordinated", type=int, default=10)
    c.add_argument("--lag", type=int, default=1)
    c.add_argument("--bins", type=int, default=240)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", required=True)
    c = kind.add_parser("coupled", help="coupled logistic maps (x forces y)")
    c.add_argument("--steps", type=int, default=400)
    c.add_argument("--coupling", type=float, default=0.1)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", required=True)
    c = kind.add_parser("frame", help="causal frame with known treatment effect")
    c.add_argument("--n", type=int, default=1000)
    c.add_argument("--effect", type=float, default=2.0)
    c.add_argument("--confounding", type=float, default=1.0)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", required=True)
    c = kind.add_parser("blobs", help="4-class gaussian feature blobs")
    c.add_argument("--n", type=int, default=2000)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", required=True)

    sp = sub.add_parser("bench", help="clustered-vs-naive speedup study and kernel comparison")
    sp.add_argument("--users", type=int, default=1000)
    sp.add_argument("--clusters", type=int, default=10)
    sp.add_argument("--cross-fraction", type=float, dest="cross_fraction", default=0.05)
    sp.add_argument("--bins", type=int, default=120)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--workers", type=int, default=2)
    sp.add_argument("--skip-naive", action="store_true")
    sp.add_argument("--kernels", action="store_true", help="also compare kernel backends")
    sp.add_argument("--kernel", choices=["cython", "numpy"], dest="kernel_backend")
    sp.add_argument("--out", help="write the json report here as well")

    sp = sub.add_parser("serve", help="serve the label-queue API and annotation UI")
    sp.add_argument("--events", required=True)
    sp.add_argument("--format", choices=["jsonl", "csv"], default="jsonl")
    sp.add_argument("--store", required=True)
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=8765)
    sp.add_argument("--ui-dir", dest="ui_dir", help="static assets directory for the annotation UI")
    add_config_flags(sp)

    sp = sub.add_parser("replay", help="reload and verify a persisted run")
    sp.add_argument("--run", required=True)
    return p


CONFIG_FLAG_KEYS = (
    "seed",
    "bin_width",
    "clusters",
    "cross_fraction",
    "influence_floor",
    "workers",
    "kernel_backend",
)


def load_config(args: argparse.Namespace) -> PipelineConfig:
    try:
        config = PipelineConfig.from_file(args.config) if getattr(args, "config", None) else PipelineConfig()
    except FileNotFoundError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise UsageError(f"bad config file: {exc}") from exc
    overrides = {k: getattr(args, k, None) for k in CONFIG_FLAG_KEYS}
    return config.override(**overrides)


def _load_events(args) -> list:
    return ingest.load_events(args.events, args.format)


def cmd_ingest(args) -> int:
    config = load_config(args)
    events = _load_events(args)
    if not events:
        print(json.dumps({"users": 0, "events": 0}))
        return EXIT_OK
    window = config.window or pipeline.derive_window(events, config.bin_width)
    series = ingest.bin_activity(events, window, config.bin_width)
    context = ingest.extract_context(series)
    if args.out:
        ingest.dump_series(series, args.out)
    print(
        json.dumps(
            {
                "users": context.user_count,
                "events": len(events),
                "window": list(window),
                "bins": len(next(iter(series.values()))),
                "mean_activity": context.mean_activity,
                "bucket_key": context.bucket_key,
            }
        )
    )
    return EXIT_OK


def cmd_detect(args) -> int:
    config = load_config(args)
    events = _load_events(args)
    stores = pipeline.Stores.open(args.store) if args.store else pipeline.Stores.ephemeral()
    run = pipeline.run_detection(events, config, stores, out_dir=args.out)
    print(json.dumps(run.to_report()))
    return EXIT_OK


def cmd_classify(args) -> int:
    config = load_config(args)
    events = _load_events(args)
    stores = pipeline.Stores.open(args.store)
    window = config.window or pipeline.derive_window(events, config.bin_width)
    features = classify.features_for_users(events, window, config.bin_width)

    labeled = [(r["user"], r["label"]) for r in stores.labels.items() if r["user"] in features]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model = None
    if len(labeled) >= 10:
        X = np.stack([features[u].values for u, _ in labeled])
        y = np.array([classify.CLASSES.index(lbl) for _, lbl in labeled])
        if len(np.unique(y)) >= 2:
            model = classify.train(X, y, config.train_config(seed_offset=1))
            classify.save_model(model, out / "model.bin")

    pool = [features[u] for u in sorted(features)]
    queue = classify.next_queries(model, [fv for fv in pool if stores.labels.get(fv.user_id) is None], config.queue_size)
    with (out / "queue.jsonl").open("w") as fh:
        for item in queue:
            fh.write(json.dumps({"user": item.user_id, "uncertainty": item.uncertainty}) + "\n")
    with (out / "predictions.jsonl").open("w") as fh:
        for fv in pool:
            row = {"user": fv.user_id, "features": fv.as_dict()}
            if model is not None:
                proba = classify.predict_proba(model, fv.values)
                row["predicted"] = max(proba, key=proba.get)
                row["proba"] = proba
            fh.write(json.dumps(row) + "\n")
    print(json.dumps({"users": len(pool), "labeled": len(labeled), "trained": model is not None, "queued": len(queue), "oob_accuracy": model.oob_accuracy if model else None}))
    return EXIT_OK


def cmd_validate(args) -> int:
    config = load_config(args)
    events = _load_events(args)
    stores = pipeline.Stores.open(args.store) if args.store else pipeline.Stores.ephemeral()
    window = config.window or pipeline.derive_window(events, config.bin_width)
    series = ingest.bin_activity(events, window, config.bin_width)

    edges = []
    with Path(args.edges).open() as fh:
        for line in fh:
            if line.strip():
                edges.append(json.loads(line))
    calibration = validate.calibrate_estimators(cache_path=stores.calibration_path)
    n_validated = 0
    with Path(args.out).open("w") as fh:
        for idx, obj in enumerate(edges):
            src, dst = obj["source"], obj["target"]
            if src not in series or dst not in series:
                raise AccdError(f"edge {src}->{dst} references unknown users")
            frame = validate.frame_from_series(series[src], series[dst], config.covariate_lags)
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
            n_validated += result.validated
            fh.write(json.dumps({"source": src, "target": dst, "validated": result.validated, **result.to_dict()}) + "\n")
    print(json.dumps({"edges": len(edges), "validated": n_validated, "out": str(args.out)}))
    return EXIT_OK


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "campaign":
        events, truth = synthgen.gen_campaign(args.users, args.coordinated, args.lag, args.seed, n_bins=args.bins)
        with (out / "events.jsonl").open("w") as fh:
            for e in events:
                fh.write(
                    json.dumps(
                        {
                            "user_id": e.user_id,
                            "timestamp": e.timestamp,
                            "action_type": e.action_type,
                            "hashtags": list(e.hashtags),
                            "sentiment": e.sentiment,
                            "target_user": e.target_user,
                        }
                    )
                    + "\n"
                )
        (out / "truth.json").write_text(json.dumps(truth.to_dict(), indent=2) + "\n")
        print(json.dumps({"events": len(events), "planted_pairs": len(truth.planted_pairs), "out": str(out)}))
    elif args.kind == "coupled":
        x, y, label = synthgen.gen_coupled_logistic(args.steps, args.coupling, args.seed)
        ingest.dump_series({"x": x, "y": y}, out / "series.jsonl")
        (out / "truth.json").write_text(json.dumps({"direction": label, "coupling": args.coupling, "steps": args.steps, "seed": args.seed}, indent=2) + "\n")
        print(json.dumps({"direction": label, "out": str(out)}))
    elif args.kind == "frame":
        frame, truth = synthgen.gen_causal_frame(args.n, args.effect, args.confounding, args.seed)
        with (out / "frame.jsonl").open("w") as fh:
            for i in range(len(frame)):
                fh.write(
                    json.dumps(
                        {
                            "treatment": int(frame.treatment[i]),
                            "outcome": float(frame.outcome[i]),
                            "covariates": [float(v) for v in frame.covariates[i]],
                        }
                    )
                    + "\n"
                )
        (out / "truth.json").write_text(json.dumps(truth, indent=2) + "\n")
        print(json.dumps({"rows": len(frame), "out": str(out)}))
    else:
        X, y = synthgen.gen_class_blobs(args.n, args.seed)
        with (out / "blobs.jsonl").open("w") as fh:
            for row, label in zip(X, y):
                fh.write(json.dumps({"features": [float(v) for v in row], "label": int(label)}) + "\n")
        (out / "truth.json").write_text(json.dumps({"n": args.n, "classes": 4, "seed": args.seed}, indent=2) + "\n")
        print(json.dumps({"rows": len(X), "out": str(out)}))
    return EXIT_OK


def cmd_bench(args) -> int:
    report = bench.bench_stage1(
        users=args.users,
        clusters=args.clusters,
        cross_fraction=args.cross_fraction,
        bins=args.bins,
        seed=args.seed,
        workers=args.workers,
        skip_naive=args.skip_naive,
        kernel_backend=args.kernel_backend,
    )
    if args.kernels:
        report["kernel_comparison"] = bench.bench_kernels(seed=args.seed)
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import build_state, create_app

    config = load_config(args)
    events = _load_events(args)
    stores = pipeline.Stores.open(args.store)
    state = build_state(events, config, stores)
    app = create_app(state, ui_dir=args.ui_dir)
    logger.info("serving on http://%s:%d (kernel backend: %s)", args.host, args.port, kernels.ACTIVE_BACKEND)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def cmd_replay(args) -> int:
    run = pipeline.replay(args.run)
    print(json.dumps(run.to_report(), indent=2))
    return EXIT_OK


COMMANDS = {
    "ingest": cmd_ingest,
    "detect": cmd_detect,
    "classify": cmd_classify,
    "validate": cmd_validate,
    "synth": cmd_synth,
    "bench": cmd_bench,
    "serve": cmd_serve,
    "replay": cmd_replay,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, FileNotFoundError, IOError, AccdError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # pragma: no cover - defensive
        logger.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
