"""Ground-truth generators backing every property and acceptance test.

All generators are pure functions of their seed and emit the ground truth
alongside the data; none of them call into the detection code they exercise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .ingest import ActivitySeries, EventRecord
from .validate import PairCausalFrame

LOGISTIC_R_DRIVER = 3.8
LOGISTIC_R_RESPONDER = 3.5


def _as_series(user_id: str, values: np.ndarray, bin_width: int = 1) -> ActivitySeries:
    values = np.asarray(values, dtype=np.float64)
    shifted = values - min(0.0, float(values.min()))  # guard: activity is non-negative
    return ActivitySeries(user_id, 0, len(values) * bin_width, bin_width, shifted)


def gen_coupled_logistic(
    n: int, coupling: float, seed: int = 0, burn_in: int = 100
) -> tuple[ActivitySeries, ActivitySeries, str]:
    """Two logistic maps where x unidirectionally forces y (coupling 0 means
    independent); returns (x series, y series, direction label)."""
    rng = np.random.default_rng(seed)
    x = float(rng.uniform(0.2, 0.8))
    y = float(rng.uniform(0.2, 0.8))
    xs = np.empty(n)
    ys = np.empty(n)
    for t in range(burn_in + n):
        x_next = x * (LOGISTIC_R_DRIVER - LOGISTIC_R_DRIVER * x)
        y_next = y * (LOGISTIC_R_RESPONDER - LOGISTIC_R_RESPONDER * y - coupling * x)
        x, y = x_next, y_next
        if t >= burn_in:
            xs[t - burn_in] = x
            ys[t - burn_in] = y
    label = "x->y" if coupling != 0.0 else "independent"
    return _as_series("x", xs), _as_series("y", ys), label


@dataclass(frozen=True)
class CampaignTruth:
    planted_pairs: tuple[tuple[str, str], ...]
    coordinated_users: tuple[str, ...]
    background_users: tuple[str, ...]
    window: tuple[int, int]
    bin_width: int

    def to_dict(self) -> dict:
        return {
            "planted_pairs": [list(p) for p in self.planted_pairs],
            "coordinated_users": list(self.coordinated_users),
            "background_users": list(self.background_users),
            "window": list(self.window),
            "bin_width": self.bin_width,
        }


def _memoryless_schedule(rng: np.random.Generator, n_bins: int, on_prob: float, tol: float = 0.05, attempts: int = 200) -> np.ndarray:
    """Bernoulli on/off schedule whose sample lag-1 autocorrelation is near 0.

    The ground truth declares that bursts do not predict future bursts; a draw
    whose realized autocorrelation is large violates that in-sample and would
    make every follower pair look causal at once, so draws are rejected until
    the realization honors the design (deterministic under the seed).
    """
    best: np.ndarray | None = None
    best_rho = np.inf
    for _ in range(attempts):
        on = rng.random(n_bins) < on_prob
        x = on.astype(np.float64)
        if x.std() == 0.0:
            continue
        rho = abs(float(np.corrcoef(x[:-1], x[1:])[0, 1]))
        if rho < best_rho:
            best, best_rho = on, rho
        if best_rho <= tol:
            break
    assert best is not None
    return best


def gen_campaign(
    n_users: int,
    n_coordinated: int,
    lag_bins: int = 1,
    seed: int = 0,
    n_bins: int = 240,
    bin_width: int = 300,
    on_prob: float = 0.35,
    on_rate: float = 6.0,
    off_rate: float = 0.2,
    follow_prob: float = 1.0,
    jitter_frac: float = 0.0,
) -> tuple[list[EventRecord], CampaignTruth]:
    """Poisson background plus one coordinated group driven by the leader's
    burst schedule.

    The leader posts on an on/off schedule drawn independently bin by bin;
    each follower independently echoes the schedule `lag_bins` later, sitting
    out an on-burst with probability 1 - follow_prob, with event timing
    jittered uniformly inside the coordination bin (jitter_frac > 0 adds
    gaussian noise that may leak events into neighboring bins). Because the
    schedule has no memory, a follower's bursts predict other followers'
    *current* behavior but nobody's future, so the only causally valid
    directed edges are leader -> follower; those are the planted ground
    truth. All coordinated users share one activity law, which keeps them
    statistically indistinguishable to the clustering step.
    """
    if n_coordinated < 0 or n_users < n_coordinated:
        raise ValueError("need 0 <= n_coordinated <= n_users")
    rng = np.random.default_rng(seed)
    window = (0, n_bins * bin_width)
    events: list[EventRecord] = []

    n_background = n_users - n_coordinated
    background = [f"bg{idx:04d}" for idx in range(n_background)]
    coordinated = [f"co{idx:04d}" for idx in range(n_coordinated)]
    action_mix = ("post", "retweet", "reply", "mention")
    action_probs = (0.6, 0.2, 0.1, 0.1)

    def emit(uid: str, b: int, count: int, action: str, target: Optional[str] = None) -> None:
        for _ in range(count):
            ts = int(b * bin_width + rng.integers(0, bin_width) + rng.normal(0.0, jitter_frac * bin_width))
            if window[0] <= ts < window[1]:
                events.append(EventRecord(uid, ts, action, target_user=target))

    for uid in background:
        rate = rng.uniform(0.4, 2.0)
        counts = rng.poisson(rate, size=n_bins)
        for b in np.flatnonzero(counts):
            action = str(rng.choice(action_mix, p=action_probs))
            emit(uid, int(b), int(counts[b]), action)

    planted: list[tuple[str, str]] = []
    if n_coordinated >= 1:
        leader = coordinated[0]
        on = _memoryless_schedule(rng, n_bins, on_prob)
        leader_counts = rng.poisson(np.where(on, on_rate, off_rate))
        for b in np.flatnonzero(leader_counts):
            emit(leader, int(b), int(leader_counts[b]), "post")

        echo_on = np.zeros(n_bins, dtype=bool)
        if lag_bins < n_bins:
            echo_on[lag_bins:] = on[: n_bins - lag_bins]
        for follower in coordinated[1:]:
            planted.append((leader, follower))
            participate = echo_on & (rng.random(n_bins) < follow_prob)
            counts = rng.poisson(np.where(participate, on_rate, off_rate))
            for b in np.flatnonzero(counts):
                if participate[b]:
                    emit(follower, int(b), int(counts[b]), "retweet", target=leader)
                else:
                    emit(follower, int(b), int(counts[b]), "post")

    events.sort(key=lambda e: (e.timestamp, e.user_id))
    truth = CampaignTruth(
        planted_pairs=tuple(planted),
        coordinated_users=tuple(coordinated),
        background_users=tuple(background),
        window=window,
        bin_width=bin_width,
    )
    return events, truth


def gen_causal_frame(
    n: int, true_effect: float, confounding: float, seed: int = 0, n_covariates: int = 3
) -> tuple[PairCausalFrame, dict]:
    """Frame with known additive treatment effect; the first covariate both
    drives treatment uptake (through a sigmoid) and shifts the outcome."""
    rng = np.random.default_rng(seed)
    covariates = rng.standard_normal((n, n_covariates))
    p_treat = 1.0 / (1.0 + np.exp(-confounding * covariates[:, 0]))
    treatment = (rng.random(n) < p_treat).astype(np.float64)
    outcome = true_effect * treatment + covariates[:, 0] + rng.standard_normal(n)
    frame = PairCausalFrame("synthetic_source", "synthetic_target", treatment, outcome, covariates, temporal_coverage=float(n) * 300.0)
    truth = {"true_effect": float(true_effect), "confounding": float(confounding), "n": n, "seed": seed}
    return frame, truth


def gen_class_blobs(
    n: int,
    seed: int = 0,
    n_features: int = 12,
    separation: float = 2.6,
    majority_separation: float = 2.4,
    minority_fraction: float = 0.15,
) -> tuple[np.ndarray, np.ndarray]:
    """Four overlapping Gaussian classes in feature space; labels 0..3.

    Two majority classes (0, 1) overlap along the first axis; two minority
    classes (2, 3) sit in their own region of feature space but overlap each
    other along a diagonal direction, unit isotropic noise throughout. The
    majority boundary carries irreducible confusion while the minority pair
    is where labels actually buy accuracy, so blanket labeling wastes most of
    its budget on the bulk mass.
    """
    rng = np.random.default_rng(seed)
    diag = np.zeros(n_features)
    diag[2:] = 1.0 / np.sqrt(n_features - 2)
    means = np.zeros((4, n_features))
    means[0, 0] = majority_separation / 2.0
    means[1, 0] = -majority_separation / 2.0
    means[2] = separation / 2.0 * diag
    means[3] = -separation / 2.0 * diag
    means[2, 1] = means[3, 1] = 5.0  # the minority region is easy to find, hard to split
    p_minor = minority_fraction / 2.0
    y = rng.choice(4, size=n, p=[0.5 - p_minor, 0.5 - p_minor, p_minor, p_minor])
    X = means[y] + rng.standard_normal((n, n_features))
    return X, y
