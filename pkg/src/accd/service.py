"""Local HTTP API for the human-in-the-loop labeling session.

Five JSON endpoints (documented in docs/api.md): the uncertainty-ranked
label queue, label submission, retraining, progress, and health. Label
mutations funnel through the store's single writer; retraining runs on one
background worker guarded by a busy flag. The annotation UI is served as
static assets from the same process.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from . import classify, pipeline
from .classify import CLASSES, FeatureVector, TreeEnsemble
from .config import PipelineConfig
from .ingest import ActivitySeries, EventRecord, bin_activity

logger = logging.getLogger(__name__)


class LabelRequest(BaseModel):
    user_id: str
    label: str


@dataclass
class ServiceState:
    config: PipelineConfig
    stores: pipeline.Stores
    features: dict[str, FeatureVector]
    series: dict[str, ActivitySeries]
    model: Optional[TreeEnsemble] = None
    validation_accuracy: Optional[float] = None
    curriculum_stage: Optional[int] = None
    _retrain_lock: threading.Lock = field(default_factory=threading.Lock)
    _retraining: bool = False

    @property
    def retraining(self) -> bool:
        return self._retraining

    def pending_features(self) -> list[FeatureVector]:
        return [fv for uid, fv in sorted(self.features.items()) if self.stores.labels.get(uid) is None]

    def labeled_arrays(self, sources=("human", "pseudo")) -> tuple[np.ndarray, np.ndarray, list[str]]:
        rows, labels, users = [], [], []
        for rec in self.stores.labels.items():
            if rec["source"] in sources and rec["user"] in self.features:
                rows.append(self.features[rec["user"]].values)
                labels.append(CLASSES.index(rec["label"]))
                users.append(rec["user"])
        if not rows:
            return np.empty((0, classify.N_FEATURES)), np.empty(0, dtype=int), []
        return np.stack(rows), np.array(labels), users

    def try_bootstrap_model(self) -> None:
        X, y, _ = self.labeled_arrays()
        if len(X) >= 10 and len(np.unique(y)) >= 2:
            self.model = classify.train(X, y, self.config.train_config(seed_offset=1))

    def curriculum_split(self) -> Optional[tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]:
        """Deterministic train/validation split: a quarter of the human labels
        (at least 2) validate, the rest plus all pseudo labels train. None when
        the training side cannot support a model."""
        X_h, y_h, _ = self.labeled_arrays(sources=("human",))
        X_p, y_p, _ = self.labeled_arrays(sources=("pseudo",))
        n_val = max(2, len(X_h) // 4)
        if len(X_h) - n_val < 2:
            return None
        rng = np.random.default_rng(self.config.seed)
        order = rng.permutation(len(X_h))
        val_idx, train_idx = order[:n_val], order[n_val:]
        X_train = np.concatenate([X_h[train_idx], X_p]) if len(X_p) else X_h[train_idx]
        y_train = np.concatenate([y_h[train_idx], y_p]) if len(y_p) else y_h[train_idx]
        if len(X_train) < 10 or len(np.unique(y_train)) < 2:
            return None
        return X_train, y_train, X_h[val_idx], y_h[val_idx]

    def run_curriculum(self) -> None:
        try:
            split = self.curriculum_split()
            if split is None:
                logger.warning("retrain requested without a viable train/validation split")
                return
            X_train, y_train, X_val, y_val = split
            model, logs = classify.curriculum_train(
                X_train,
                y_train,
                X_val,
                y_val,
                self.config.train_config(seed_offset=2),
                thresholds=self.config.curriculum_thresholds,
                gate=self.config.validation_gate,
                patience=self.config.stage_patience,
            )
            self.model = model
            trained = [log for log in logs if log.outcome != "skipped"]
            if trained:
                self.validation_accuracy = trained[-1].val_accuracy
                self.curriculum_stage = trained[-1].stage
            pending = self.pending_features()
            if pending:
                added = classify.harvest_pseudo_labels(model, pending, self.stores.labels, self.config.pseudo_confidence)
                logger.info("retrain complete; %d pseudo labels banked", added)
        except Exception:
            logger.exception("retraining failed")
        finally:
            self._retraining = False


def build_state(events: Sequence[EventRecord], config: PipelineConfig, stores: pipeline.Stores) -> ServiceState:
    window = config.window or pipeline.derive_window(events, config.bin_width)
    series = bin_activity(events, window, config.bin_width)
    features = classify.features_for_users(events, window, config.bin_width)
    state = ServiceState(config=config, stores=stores, features=features, series=series)
    state.try_bootstrap_model()
    return state


def _queue_items(state: ServiceState, n: int) -> list[dict]:
    pending = state.pending_features()
    items = classify.next_queries(state.model, pending, n)
    out = []
    for item in items:
        if state.model is not None:
            votes = classify.predict_proba(state.model, item.features.values)
        else:
            votes = {c: 1.0 / len(CLASSES) for c in CLASSES}
        series = state.series.get(item.user_id)
        out.append(
            {
                "user_id": item.user_id,
                "uncertainty": item.uncertainty,
                "status": item.status,
                "votes": votes,
                "features": item.features.as_dict(),
                "activity": [float(v) for v in series.values] if series is not None else [],
            }
        )
    return out


def create_app(state: ServiceState, ui_dir: Optional[str | Path] = None) -> FastAPI:
    app = FastAPI(title="accd label service", version="1")

    @app.get("/api/health")
    def health() -> dict:
        return {
            "status": "ok",
            "users": len(state.features),
            "model_version": state.model.version if state.model else None,
        }

    @app.get("/api/queue")
    def queue(n: int = 20) -> dict:
        if n < 1:
            raise HTTPException(status_code=422, detail="n must be >= 1")
        return {"items": _queue_items(state, n), "pending_total": len(state.pending_features())}

    @app.post("/api/labels")
    def post_label(body: LabelRequest) -> dict:
        if body.user_id not in state.features:
            raise HTTPException(status_code=404, detail=f"unknown user {body.user_id}")
        if body.label not in CLASSES:
            raise HTTPException(status_code=422, detail={"message": f"unknown label {body.label}", "allowed": list(CLASSES)})
        rec = state.stores.labels.set_label(body.user_id, body.label, "human")
        if rec is None:  # idempotent repeat of the same human label
            rec = state.stores.labels.get(body.user_id)
        return {"user_id": rec["user"], "label": rec["label"], "source": rec["source"], "rev": rec["rev"]}

    @app.post("/api/retrain")
    def retrain() -> dict:
        with state._retrain_lock:
            if state._retraining:
                raise HTTPException(status_code=409, detail="retraining already in progress")
            if state.curriculum_split() is None:
                raise HTTPException(status_code=400, detail="not enough labels for a train/validation split (need ~14 human labels across 2 classes)")
            state._retraining = True
        thread = threading.Thread(target=state.run_curriculum, name="accd-retrain", daemon=True)
        thread.start()
        return {"started": True}

    @app.get("/api/progress")
    def progress() -> dict:
        counts = state.stores.labels.counts_by_source()
        return {
            "labeled": counts,
            "validation_accuracy": state.validation_accuracy,
            "validation_gate": state.config.validation_gate,
            "curriculum_stage": state.curriculum_stage,
            "curriculum_stages_total": len(state.config.curriculum_thresholds),
            "retraining": state.retraining,
            "queue_remaining": len(state.pending_features()),
            "model_version": state.model.version if state.model else None,
        }

    if ui_dir is None:
        default_ui = Path(__file__).resolve().parents[2] / "frontend" / "dist"
        ui_dir = default_ui if default_ui.exists() else None
    if ui_dir is not None and Path(ui_dir).exists():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")
    return app
