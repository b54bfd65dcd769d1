"""Behavioral user classification with a label-efficient training loop.

A bootstrap ensemble of decision trees votes over four account categories;
class probability is the vote fraction and uncertainty is one minus the top
vote. Annotation effort goes where uncertainty is highest, training follows a
difficulty curriculum, and confident predictions are banked as pseudo-labels
that never displace a human decision.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import pickle
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from sklearn.tree import DecisionTreeClassifier

from .cluster import burstiness_coefficient, shannon_entropy_bits
from .errors import InsufficientData
from .ingest import EventRecord, n_bins

logger = logging.getLogger(__name__)

CLASSES = ("Fake", "Org", "Political", "Individual")

FEATURE_NAMES = (
    "posting_rate",
    "retweet_ratio",
    "reply_ratio",
    "mention_ratio",
    "distinct_hashtag_rate",
    "mean_sentiment",
    "sentiment_variance",
    "burstiness",
    "entropy",
    "night_activity_fraction",
    "mean_inter_event_gap",
    "activity_span_fraction",
)
N_FEATURES = len(FEATURE_NAMES)

NIGHT_SECONDS = 6 * 3600
MODEL_FORMAT = "accd-tree-ensemble"
MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class FeatureVector:
    user_id: str
    values: np.ndarray
    empty: bool = False

    def as_dict(self) -> dict:
        return {name: float(v) for name, v in zip(FEATURE_NAMES, self.values)}


@dataclass
class LabelQueueItem:
    user_id: str
    features: FeatureVector
    uncertainty: float
    status: str = "pending"
    assigned_label: Optional[str] = None
    source: Optional[str] = None


def extract_features(events: Sequence[EventRecord], window: tuple[int, int], bin_width: int = 300) -> FeatureVector:
    """Twelve per-user activity descriptors over [start, end).

    posting_rate: events per bin. *_ratio: fraction of events of that action
    type. distinct_hashtag_rate: distinct hashtags per event. Sentiment stats
    cover only events that carry a sentiment (0 when none do). burstiness and
    entropy as in the clustering stats. night_activity_fraction: events whose
    time-of-day falls in [00:00, 06:00) UTC. mean_inter_event_gap: mean gap as
    a fraction of the window span. activity_span_fraction: (last active bin -
    first active bin + 1) / total bins.
    """
    start, end = window
    bins = n_bins(start, end, bin_width)
    span = end - start
    in_window = [e for e in events if start <= e.timestamp < end]
    if not in_window:
        return FeatureVector(events[0].user_id if events else "", np.zeros(N_FEATURES), empty=True)

    uid = in_window[0].user_id
    ts = np.sort(np.array([e.timestamp for e in in_window], dtype=np.float64))
    n = len(in_window)
    counts = np.zeros(bins)
    for e in in_window:
        counts[(e.timestamp - start) // bin_width] += 1

    actions = [e.action_type for e in in_window]
    hashtags = {h for e in in_window for h in e.hashtags}
    sentiments = np.array([e.sentiment for e in in_window if e.sentiment is not None], dtype=np.float64)
    active = np.flatnonzero(counts)

    values = np.array(
        [
            n / bins,
            actions.count("retweet") / n,
            actions.count("reply") / n,
            actions.count("mention") / n,
            len(hashtags) / n,
            float(sentiments.mean()) if len(sentiments) else 0.0,
            float(sentiments.var()) if len(sentiments) >= 2 else 0.0,
            burstiness_coefficient(ts),
            shannon_entropy_bits(counts),
            float(np.mean((ts % 86400) < NIGHT_SECONDS)),
            float(np.diff(ts).mean() / span) if n >= 2 else 0.0,
            (active[-1] - active[0] + 1) / bins,
        ]
    )
    return FeatureVector(uid, values)


def features_for_users(
    events: Iterable[EventRecord], window: tuple[int, int], bin_width: int = 300
) -> dict[str, FeatureVector]:
    by_user: dict[str, list[EventRecord]] = {}
    for e in events:
        by_user.setdefault(e.user_id, []).append(e)
    return {uid: extract_features(by_user[uid], window, bin_width) for uid in sorted(by_user)}


# -- tree ensemble ---------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    n_trees: int = 100
    max_depth: int = 12
    min_leaf: int = 2
    seed: int = 0


class TreeEnsemble:
    """Bagged decision trees with vote-fraction class probabilities."""

    def __init__(self, trees: list, version: str, oob_accuracy: Optional[float], config: TrainConfig):
        self.trees = trees
        self.version = version
        self.oob_accuracy = oob_accuracy
        self.config = config

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def predict_votes(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        votes = np.zeros((len(X), len(CLASSES)))
        for tree in self.trees:
            pred = tree.predict(X).astype(int)
            votes[np.arange(len(X)), pred] += 1.0
        return votes

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return self.predict_votes(X) / self.n_trees

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.predict_proba(X).argmax(axis=1)

    def uncertainty(self, X: np.ndarray) -> np.ndarray:
        return 1.0 - self.predict_proba(X).max(axis=1)

    def accuracy(self, X: np.ndarray, y: np.ndarray) -> float:
        return float((self.predict(X) == np.asarray(y)).mean())


def _model_fingerprint(X: np.ndarray, y: np.ndarray, config: TrainConfig) -> str:
    h = hashlib.sha256()
    h.update(repr((config.n_trees, config.max_depth, config.min_leaf, config.seed)).encode())
    h.update(np.ascontiguousarray(X).tobytes())
    h.update(np.ascontiguousarray(y).tobytes())
    return h.hexdigest()[:12]


def train(X: np.ndarray, y: np.ndarray, config: TrainConfig = TrainConfig()) -> TreeEnsemble:
    """Fit the bagged ensemble; deterministic for a fixed config seed.

    Each tree sees a bootstrap resample and considers ceil(sqrt(F)) features
    per split. Out-of-bag accuracy is recorded when every class keeps at
    least one out-of-bag vote.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=int)
    if len(X) < 10:
        raise InsufficientData(f"need at least 10 labeled samples, got {len(X)}")
    if len(np.unique(y)) < 2:
        raise InsufficientData("need at least 2 distinct classes")

    n = len(X)
    max_features = math.ceil(math.sqrt(X.shape[1]))
    seeds = np.random.SeedSequence(config.seed).generate_state(config.n_trees)
    trees = []
    oob_votes = np.zeros((n, len(CLASSES)))
    for tree_seed in seeds:
        rng = np.random.default_rng(tree_seed)
        idx = rng.integers(0, n, size=n)
        tree = DecisionTreeClassifier(
            max_depth=config.max_depth,
            min_samples_leaf=config.min_leaf,
            max_features=max_features,
            random_state=int(tree_seed % (2**31 - 1)),
        )
        tree.fit(X[idx], y[idx])
        trees.append(tree)
        oob = np.ones(n, dtype=bool)
        oob[idx] = False
        if oob.any():
            oob_votes[np.flatnonzero(oob), tree.predict(X[oob]).astype(int)] += 1.0

    covered = oob_votes.sum(axis=1) > 0
    oob_accuracy = float((oob_votes[covered].argmax(axis=1) == y[covered]).mean()) if covered.any() else None
    model = TreeEnsemble(trees, _model_fingerprint(X, y, config), oob_accuracy, config)
    logger.debug("trained %d trees on %d samples, oob accuracy %s", config.n_trees, n, oob_accuracy)
    return model


def predict_proba(model: TreeEnsemble, x: np.ndarray) -> dict[str, float]:
    proba = model.predict_proba(np.atleast_2d(x))[0]
    return {c: float(p) for c, p in zip(CLASSES, proba)}


def uncertainty(model: TreeEnsemble, x: np.ndarray) -> float:
    return float(model.uncertainty(np.atleast_2d(x))[0])


def save_model(model: TreeEnsemble, path: str | Path) -> None:
    header = {
        "format": MODEL_FORMAT,
        "format_version": MODEL_FORMAT_VERSION,
        "model_version": model.version,
        "n_trees": model.n_trees,
        "classes": list(CLASSES),
        "oob_accuracy": model.oob_accuracy,
        "config": {"n_trees": model.config.n_trees, "max_depth": model.config.max_depth, "min_leaf": model.config.min_leaf, "seed": model.config.seed},
    }
    with Path(path).open("wb") as fh:
        fh.write(json.dumps(header).encode() + b"\n")
        pickle.dump(model.trees, fh)


def load_model(path: str | Path) -> TreeEnsemble:
    with Path(path).open("rb") as fh:
        header = json.loads(fh.readline())
        if header.get("format") != MODEL_FORMAT:
            raise ValueError(f"{path} is not a {MODEL_FORMAT} file")
        trees = pickle.load(fh)
    cfg = header["config"]
    return TreeEnsemble(trees, header["model_version"], header.get("oob_accuracy"), TrainConfig(cfg["n_trees"], cfg["max_depth"], cfg["min_leaf"], cfg["seed"]))


# -- active learning --------------------------------------------------------------

MAX_UNCERTAINTY = 1.0 - 1.0 / len(CLASSES)  # untrained models sit at the cap


def next_queries(model: Optional[TreeEnsemble], pool: Sequence[FeatureVector], n: int) -> list[LabelQueueItem]:
    """Top-n pool items by uncertainty, descending; ties resolve by user_id."""
    if not pool or n <= 0:
        return []
    if model is None:
        unc = np.full(len(pool), MAX_UNCERTAINTY)
    else:
        unc = model.uncertainty(np.stack([fv.values for fv in pool]))
    order = sorted(range(len(pool)), key=lambda i: (-unc[i], pool[i].user_id))
    return [LabelQueueItem(pool[i].user_id, pool[i], float(unc[i])) for i in order[:n]]


class LabelStore:
    """Append-only jsonl store of user labels with provenance.

    Human labels always win: a pseudo label never replaces a human one, and
    pseudo writes are idempotent per (user, model version). Revisions increase
    monotonically per user so concurrent writers resolve to last-writer-wins.
    """

    def __init__(self, path: str | Path | None = None):
        self._path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        self._records: dict[str, dict] = {}
        if self._path is not None and self._path.exists():
            with self._path.open() as fh:
                for line in fh:
                    line = line.strip()
                    if line:
                        rec = json.loads(line)
                        self._records[rec["user"]] = rec

    def __len__(self) -> int:
        return len(self._records)

    def get(self, user_id: str) -> Optional[dict]:
        return self._records.get(user_id)

    def items(self) -> list[dict]:
        return [self._records[u] for u in sorted(self._records)]

    def counts_by_source(self) -> dict[str, int]:
        out = {"human": 0, "pseudo": 0}
        for rec in self._records.values():
            out[rec["source"]] = out.get(rec["source"], 0) + 1
        return out

    def set_label(self, user_id: str, label: str, source: str, model_version: Optional[str] = None) -> Optional[dict]:
        """Record a label; returns the stored record, or None when the write
        was suppressed (pseudo over human, or repeated pseudo for the same
        model version)."""
        if label not in CLASSES:
            raise ValueError(f"label must be one of {CLASSES}, got {label!r}")
        if source not in ("human", "pseudo"):
            raise ValueError(f"source must be human or pseudo, got {source!r}")
        with self._lock:
            prev = self._records.get(user_id)
            if prev is not None:
                if source == "pseudo":
                    if prev["source"] == "human":
                        return None
                    if prev.get("model_version") == model_version and prev["label"] == label:
                        return None
                elif prev["source"] == "human" and prev["label"] == label:
                    return None  # idempotent repeat of the same human label
            rec = {
                "user": user_id,
                "label": label,
                "source": source,
                "ts": time.time(),
                "rev": (prev["rev"] + 1) if prev else 1,
            }
            if model_version is not None:
                rec["model_version"] = model_version
            self._records[user_id] = rec
            if self._path is not None:
                with self._path.open("a") as fh:
                    fh.write(json.dumps(rec) + "\n")
            return rec


def harvest_pseudo_labels(model: TreeEnsemble, pool: Sequence[FeatureVector], store: LabelStore, confidence: float = 0.9) -> int:
    """Bank predictions whose top vote fraction strictly exceeds the gate."""
    if not pool:
        return 0
    proba = model.predict_proba(np.stack([fv.values for fv in pool]))
    added = 0
    for fv, p in zip(pool, proba):
        top = float(p.max())
        if top > confidence:
            rec = store.set_label(fv.user_id, CLASSES[int(p.argmax())], "pseudo", model_version=model.version)
            if rec is not None:
                added += 1
    return added


# -- curriculum -------------------------------------------------------------------


@dataclass
class StageLog:
    stage: int
    threshold: float
    n_samples: int
    rounds: int
    val_accuracy: Optional[float]
    outcome: str  # "gate", "patience", "skipped"


DEFAULT_CURRICULUM = (0.3, 0.5, 0.7, 1.0)


def curriculum_train(
    X: np.ndarray,
    y: np.ndarray,
    X_val: np.ndarray,
    y_val: np.ndarray,
    config: TrainConfig = TrainConfig(),
    thresholds: Sequence[float] = DEFAULT_CURRICULUM,
    gate: float = 0.85,
    patience: int = 5,
) -> tuple[TreeEnsemble, list[StageLog]]:
    """Train through difficulty stages: stage s admits samples whose
    uncertainty under the previous stage's model is at or below threshold s
    (admission is cumulative, so the training set never shrinks). A stage
    advances when validation accuracy beats the gate, or after `patience`
    reseeded retrains with a warning.
    """
    if patience < 1:
        raise ValueError("patience must be >= 1")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=int)
    bootstrap = train(X, y, config)
    scores = bootstrap.uncertainty(X)

    model = bootstrap
    admitted = np.zeros(len(X), dtype=bool)
    logs: list[StageLog] = []
    for stage, threshold in enumerate(thresholds, start=1):
        admitted |= scores <= threshold
        idx = np.flatnonzero(admitted)
        if len(idx) == 0:
            logger.warning("curriculum stage %d (<=%.2f) has no samples; skipping", stage, threshold)
            logs.append(StageLog(stage, threshold, 0, 0, None, "skipped"))
            continue
        outcome = "patience"
        val_acc: Optional[float] = None
        rounds = 0
        for attempt in range(patience):
            rounds = attempt + 1
            stage_config = TrainConfig(config.n_trees, config.max_depth, config.min_leaf, config.seed + 1000 * stage + attempt)
            try:
                candidate = train(X[idx], y[idx], stage_config)
            except InsufficientData as exc:
                logger.warning("curriculum stage %d cannot train (%s); skipping", stage, exc)
                logs.append(StageLog(stage, threshold, len(idx), rounds - 1, None, "skipped"))
                candidate = None
                break
            model = candidate
            val_acc = model.accuracy(X_val, y_val)
            if val_acc > gate:
                outcome = "gate"
                break
        if candidate is None:
            continue
        if outcome == "patience":
            logger.warning("curriculum stage %d stuck at accuracy %.3f after %d rounds; advancing", stage, val_acc or 0.0, rounds)
        logs.append(StageLog(stage, threshold, len(idx), rounds, val_acc, outcome))
        scores = model.uncertainty(X)
    return model, logs


# -- label-efficiency experiment ----------------------------------------------------


def labels_to_reach(
    X: np.ndarray,
    y: np.ndarray,
    strategy: str,
    seed: int,
    target_accuracy: float = 0.85,
    initial: int = 20,
    batch: int = 20,
    val_fraction: float = 0.25,
    config: Optional[TrainConfig] = None,
) -> int:
    """Labels consumed before a held-out validation accuracy target is met,
    querying by model uncertainty or uniformly at random. Returns the pool
    size + 1 when the target is never reached."""
    if strategy not in ("uncertainty", "random"):
        raise ValueError(f"unknown strategy {strategy!r}")
    rng = np.random.default_rng(seed)
    n = len(X)
    order = rng.permutation(n)
    n_val = int(n * val_fraction)
    val_idx, pool_idx = order[:n_val], order[n_val:]
    X_val, y_val = X[val_idx], y[val_idx]

    labeled = list(pool_idx[:initial])
    unlabeled = list(pool_idx[initial:])
    config = config or TrainConfig(seed=seed)

    while True:
        try:
            model = train(X[labeled], y[labeled], config)
        except InsufficientData:
            model = None  # degenerate seed set; grow it randomly
        if model is not None and model.accuracy(X_val, y_val) >= target_accuracy:
            return len(labeled)
        if not unlabeled:
            return len(pool_idx) + 1
        take = min(batch, len(unlabeled))
        if strategy == "random" or model is None:
            chosen = rng.choice(len(unlabeled), size=take, replace=False)
        else:
            unc = model.uncertainty(X[unlabeled])
            chosen = np.argsort(-unc, kind="stable")[:take]
        chosen_set = {int(c) for c in chosen}
        labeled.extend(unlabeled[c] for c in sorted(chosen_set))
        unlabeled = [u for i, u in enumerate(unlabeled) if i not in chosen_set]
