"""Experience-driven causal validation of candidate coordination pairs.

A candidate pair becomes a per-bin causal frame (treatment = source active in
a bin, outcome = target activity in the following bin, covariates = the
target's three preceding bins). A small roster of estimators produces effect
reports; a multi-objective score turns them into ensemble weights; the
significance cutoff adapts with the historical success rate of similar
datasets; refutation tests probe robustness.

The adaptive cutoff theta_base * exp(gamma * success_rate) is applied exactly
as specified (it relaxes as history improves); a sign flag lets deployments
invert the exponent if they want the cutoff to tighten instead.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats as sps

from .errors import AllEstimatorsFailed, DegenerateArm, SubsetDegenerate, ZeroStderr
from .ingest import ActivitySeries
from .memory import CausalCase, ParamMemory

logger = logging.getLogger(__name__)

ESTIMATORS = ("diff_in_means", "regression_adjusted", "knn_matching")
REFUTATION_TESTS = ("placebo_treatment", "random_subset", "temporal_holdout")

DEFAULT_SCORE_WEIGHTS = (0.4, 0.3, 0.3)
DEFAULT_THRESHOLD_GAMMA = 0.2
NEUTRAL_PRECISION_RECALL = 0.5  # used when neither history nor calibration resolves


@dataclass(frozen=True)
class DatasetProfile:
    sample_size: int
    treatment_ratio: float
    temporal_coverage: float  # seconds
    profile_key: str = field(default="")

    def __post_init__(self):
        if not self.profile_key:
            object.__setattr__(self, "profile_key", make_profile_key(self.sample_size, self.treatment_ratio, self.temporal_coverage))


def make_profile_key(sample_size: int, treatment_ratio: float, temporal_coverage: float) -> str:
    n = math.floor(math.log2(max(1, sample_size)))
    r = min(8, math.floor(max(0.0, treatment_ratio) * 8))
    hours = temporal_coverage / 3600.0
    c = math.floor(math.log2(hours + 1.0))
    return f"n{n}-r{r}-c{c}"


@dataclass(frozen=True)
class PairCausalFrame:
    source: str
    target: str
    treatment: np.ndarray  # (n,) 0/1
    outcome: np.ndarray  # (n,)
    covariates: np.ndarray  # (n, c)
    temporal_coverage: float = 0.0

    def __post_init__(self):
        if not (len(self.treatment) == len(self.outcome) == len(self.covariates)):
            raise ValueError("frame columns must have equal length")

    def __len__(self) -> int:
        return len(self.treatment)

    def profile(self) -> DatasetProfile:
        ratio = float(self.treatment.mean()) if len(self) else 0.0
        return DatasetProfile(len(self), ratio, self.temporal_coverage)

    def subset(self, rows: np.ndarray) -> "PairCausalFrame":
        return PairCausalFrame(
            self.source, self.target, self.treatment[rows], self.outcome[rows], self.covariates[rows], self.temporal_coverage
        )


@dataclass(frozen=True)
class EffectReport:
    estimator_name: str
    effect: float
    stderr: float
    ci_low: float
    ci_high: float
    p_value: float
    score: float = 0.0
    refutations: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator_name,
            "effect": self.effect,
            "stderr": self.stderr,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "p_value": self.p_value,
            "score": self.score,
            "refutations": dict(sorted(self.refutations.items())),
        }


def frame_from_series(source: ActivitySeries, target: ActivitySeries, n_lags: int = 3) -> PairCausalFrame:
    """Rows indexed by bin t: treatment = source active in t, outcome = target
    in t+1, covariates = target at t, t-1, ..., t-n_lags+1."""
    s = np.asarray(source.values, dtype=np.float64)
    g = np.asarray(target.values, dtype=np.float64)
    n = min(len(s), len(g))
    first = n_lags - 1
    last = n - 2
    if last < first:
        raise ValueError(f"series too short for a causal frame: {n} bins")
    idx = np.arange(first, last + 1)
    covariates = np.stack([g[idx - lag] for lag in range(n_lags)], axis=1)
    return PairCausalFrame(
        source=source.user_id,
        target=target.user_id,
        treatment=(s[idx] > 0).astype(np.float64),
        outcome=g[idx + 1],
        covariates=covariates,
        temporal_coverage=float(source.window_end - source.window_start),
    )


# -- adaptive threshold (history-driven) -------------------------------------


def success_rate(profile: DatasetProfile, history: ParamMemory) -> float:
    cases = history.cases_for(profile.profile_key)
    if not cases:
        return 0.0
    return float(np.mean([c.precision for c in cases]))


def adaptive_threshold(
    theta_base: float,
    profile: DatasetProfile,
    history: ParamMemory,
    gamma: float = DEFAULT_THRESHOLD_GAMMA,
    sign: int = 1,
) -> float:
    if theta_base <= 0:
        raise ValueError("theta_base must be > 0")
    return theta_base * math.exp(sign * gamma * success_rate(profile, history))


def score_model(stderr: float, precision: float, recall: float, weights: Sequence[float] = DEFAULT_SCORE_WEIGHTS) -> float:
    if stderr <= 0:
        raise ZeroStderr(f"stderr must be > 0 to score, got {stderr}")
    w_err, w_prec, w_rec = weights
    # grouping the bounded terms keeps decimal spot values exact
    return w_err / stderr + (w_prec * precision + w_rec * recall)


# -- effect estimators --------------------------------------------------------


def _z_value(level: float) -> float:
    return float(sps.norm.ppf(0.5 + level / 2.0))


def _report(name: str, effect: float, stderr: float, level: float) -> EffectReport:
    if not np.isfinite(effect) or not np.isfinite(stderr) or stderr < 0:
        raise DegenerateArm(f"{name}: non-finite estimate (effect={effect}, stderr={stderr})")
    z = _z_value(level)
    if stderr == 0.0:
        # both arms constant; keep the effect but significance saturates
        p = 1.0 if effect == 0.0 else 0.0
    else:
        p = float(2.0 * sps.norm.sf(abs(effect) / stderr))
    return EffectReport(name, float(effect), float(stderr), float(effect - z * stderr), float(effect + z * stderr), p)


def _diff_in_means(frame: PairCausalFrame, level: float) -> EffectReport:
    treated = frame.outcome[frame.treatment > 0]
    control = frame.outcome[frame.treatment <= 0]
    if len(treated) < 2 or len(control) < 2:
        raise DegenerateArm(f"arm sizes ({len(treated)}, {len(control)}) too small for a variance")
    effect = treated.mean() - control.mean()
    stderr = math.sqrt(treated.var(ddof=1) / len(treated) + control.var(ddof=1) / len(control))
    return _report("diff_in_means", effect, stderr, level)


def _regression_adjusted(frame: PairCausalFrame, level: float) -> EffectReport:
    n = len(frame)
    n_treated = int((frame.treatment > 0).sum())
    if n_treated == 0 or n_treated == n:
        raise DegenerateArm("one treatment arm is empty")
    X = np.column_stack([np.ones(n), frame.treatment, frame.covariates])
    p = X.shape[1]
    if n <= p:
        raise DegenerateArm(f"{n} rows cannot support {p} regression parameters")
    gram = X.T @ X
    try:
        gram_inv = np.linalg.inv(gram)
    except np.linalg.LinAlgError as exc:
        raise DegenerateArm(f"singular design matrix: {exc}") from exc
    beta = gram_inv @ (X.T @ frame.outcome)
    resid = frame.outcome - X @ beta
    sigma2 = float(resid @ resid) / (n - p)
    stderr = math.sqrt(max(0.0, sigma2 * gram_inv[1, 1]))
    return _report("regression_adjusted", beta[1], stderr, level)


def _knn_matching(frame: PairCausalFrame, level: float) -> EffectReport:
    treated = frame.treatment > 0
    control = ~treated
    if treated.sum() < 2 or control.sum() < 2:
        raise DegenerateArm("one treatment arm is (nearly) empty")
    cov_t = frame.covariates[treated]
    cov_c = frame.covariates[control]
    y_t = frame.outcome[treated]
    y_c = frame.outcome[control]

    def nearest(rows: np.ndarray, pool: np.ndarray) -> np.ndarray:
        d2 = ((rows[:, None, :] - pool[None, :, :]) ** 2).sum(-1)
        return d2.argmin(axis=1)

    # match both directions so every unit contributes one treated-minus-control difference
    m_tc = nearest(cov_t, cov_c)
    m_ct = nearest(cov_c, cov_t)
    diffs = np.concatenate([y_t - y_c[m_tc], y_t[m_ct] - y_c])
    n_matches = len(diffs)
    effect = float(diffs.mean())

    # matching reuses units, so the naive sd(diffs)/sqrt(n) understates the
    # paired stderr; write the estimate as a weighted sum of outcomes and
    # propagate within-arm variances through the reuse counts
    w_t = np.ones(len(y_t)) + np.bincount(m_ct, minlength=len(y_t))
    w_c = -(np.ones(len(y_c)) + np.bincount(m_tc, minlength=len(y_c)))
    var_t = float(y_t.var(ddof=1))
    var_c = float(y_c.var(ddof=1))
    variance = (float(np.sum(w_t**2)) * var_t + float(np.sum(w_c**2)) * var_c) / n_matches**2
    stderr = math.sqrt(variance)
    return _report("knn_matching", effect, stderr, level)


_ESTIMATOR_FNS: dict[str, Callable[[PairCausalFrame, float], EffectReport]] = {
    "diff_in_means": _diff_in_means,
    "regression_adjusted": _regression_adjusted,
    "knn_matching": _knn_matching,
}


def register_estimator(name: str, fn: Callable[[PairCausalFrame, float], EffectReport]) -> None:
    """Hook for additional estimators; they join scoring and the ensemble."""
    _ESTIMATOR_FNS[name] = fn


def estimate_effect(frame: PairCausalFrame, estimator: str, level: float = 0.95) -> EffectReport:
    try:
        fn = _ESTIMATOR_FNS[estimator]
    except KeyError:
        raise ValueError(f"unknown estimator {estimator!r}; known: {sorted(_ESTIMATOR_FNS)}")
    return fn(frame, level)


# -- refutation tests ----------------------------------------------------------


def _cis_overlap(a: EffectReport, b: EffectReport) -> bool:
    return a.ci_low <= b.ci_high and b.ci_low <= a.ci_high


def refute(
    frame: PairCausalFrame,
    estimator: str,
    test: str,
    seed: int = 0,
    level: float = 0.95,
    base: Optional[EffectReport] = None,
) -> str:
    """Run one robustness check; returns "pass" or "fail"."""
    if base is None:
        base = estimate_effect(frame, estimator, level)
    rng = np.random.default_rng(seed)

    if test == "placebo_treatment":
        shuffled = replace(frame, treatment=rng.permutation(frame.treatment))
        try:
            placebo = estimate_effect(shuffled, estimator, level)
        except DegenerateArm as exc:
            raise SubsetDegenerate(str(exc)) from exc
        ok = abs(placebo.effect) < 0.5 * abs(base.effect) and placebo.p_value > 0.1
        return "pass" if ok else "fail"

    if test == "random_subset":
        rows = np.sort(rng.choice(len(frame), size=len(frame) // 2, replace=False))
        try:
            sub = estimate_effect(frame.subset(rows), estimator, level)
        except DegenerateArm as exc:
            raise SubsetDegenerate(str(exc)) from exc
        return "pass" if _cis_overlap(sub, base) else "fail"

    if test == "temporal_holdout":
        split = int(len(frame) * 0.7)
        head = np.arange(split)
        tail = np.arange(split, len(frame))
        try:
            early = estimate_effect(frame.subset(head), estimator, level)
            late = estimate_effect(frame.subset(tail), estimator, level)
        except DegenerateArm as exc:
            raise SubsetDegenerate(str(exc)) from exc
        return "pass" if _cis_overlap(early, late) else "fail"

    raise ValueError(f"unknown refutation test {test!r}")


# -- estimator calibration (cold-start precision/recall) -----------------------


def calibrate_estimators(
    estimators: Sequence[str] = ESTIMATORS,
    seed: int = 20240501,
    n: int = 400,
    cache_path: Optional[str | Path] = None,
    level: float = 0.95,
    alpha: float = 0.05,
) -> dict[str, tuple[float, float]]:
    """Precision/recall of "effect detected" (p < alpha) on synthetic frames
    with known ground truth; cached as json when a path is given."""
    if cache_path is not None:
        cache_path = Path(cache_path)
        if cache_path.exists():
            cached = json.loads(cache_path.read_text())
            if all(e in cached for e in estimators):
                return {e: (cached[e][0], cached[e][1]) for e in estimators}

    from . import synthgen  # local import; generators stay independent of this module

    scenarios = []
    for i, effect in enumerate([0.0, 0.0, 0.0, 2.0, 2.0, 2.0]):
        for j, conf in enumerate([0.0, 1.0]):
            scenarios.append((effect, conf, seed + 13 * i + j))

    out: dict[str, tuple[float, float]] = {}
    for est in estimators:
        tp = fp = fn = tn = 0
        for effect, conf, s in scenarios:
            frame, truth = synthgen.gen_causal_frame(n, effect, conf, s)
            try:
                report = estimate_effect(frame, est, level)
            except DegenerateArm:
                continue
            detected = report.p_value < alpha
            if truth["true_effect"] != 0.0:
                tp += detected
                fn += not detected
            else:
                fp += detected
                tn += not detected
        precision = tp / (tp + fp) if (tp + fp) else NEUTRAL_PRECISION_RECALL
        recall = tp / (tp + fn) if (tp + fn) else NEUTRAL_PRECISION_RECALL
        out[est] = (precision, recall)

    if cache_path is not None:
        cache_path.parent.mkdir(parents=True, exist_ok=True)
        cache_path.write_text(json.dumps({e: list(v) for e, v in out.items()}, indent=2))
    return out


# -- ensemble validation --------------------------------------------------------


@lru_cache(maxsize=8)
def _default_calibration(estimators: tuple[str, ...]) -> dict[str, tuple[float, float]]:
    return calibrate_estimators(estimators)


@dataclass(frozen=True)
class ValidationResult:
    ensemble: EffectReport
    members: tuple[EffectReport, ...]
    validated: bool
    threshold: float

    def to_dict(self) -> dict:
        return {
            "ensemble": self.ensemble.to_dict(),
            "members": [m.to_dict() for m in self.members],
            "validated": self.validated,
            "threshold": self.threshold,
        }


def _precision_recall_for(
    estimator: str,
    profile: DatasetProfile,
    history: Optional[ParamMemory],
    calibration: dict[str, tuple[float, float]],
) -> tuple[float, float]:
    if history is not None:
        cases = [c for c in history.cases_for(profile.profile_key) if c.estimator_name == estimator]
        if cases:
            hist_precision = float(np.mean([c.precision for c in cases]))
            _, cal_recall = calibration.get(estimator, (NEUTRAL_PRECISION_RECALL, NEUTRAL_PRECISION_RECALL))
            return hist_precision, cal_recall
    return calibration.get(estimator, (NEUTRAL_PRECISION_RECALL, NEUTRAL_PRECISION_RECALL))


def ensemble_validate(
    frame: PairCausalFrame,
    estimators: Sequence[str] = ESTIMATORS,
    profile: Optional[DatasetProfile] = None,
    history: Optional[ParamMemory] = None,
    *,
    theta_base: float = 0.05,
    gamma: float = DEFAULT_THRESHOLD_GAMMA,
    threshold_sign: int = 1,
    score_weights: Sequence[float] = DEFAULT_SCORE_WEIGHTS,
    level: float = 0.95,
    overlap_top: int = 2,
    run_refutations: bool = True,
    require_refutations: bool = False,
    calibration: Optional[dict[str, tuple[float, float]]] = None,
    seed: int = 0,
    record_history: bool = True,
) -> ValidationResult:
    """Score the estimator roster, form the weighted ensemble, and decide
    retention: ensemble p below the adaptive cutoff and overlapping CIs among
    the top-`overlap_top` scoring members (optionally all refutations passing).
    Appends one CausalCase per member to history.
    """
    if profile is None:
        profile = frame.profile()
    if calibration is None:
        calibration = _default_calibration(tuple(estimators))

    members: list[EffectReport] = []
    for est in estimators:
        try:
            report = estimate_effect(frame, est, level)
        except DegenerateArm as exc:
            logger.debug("estimator %s failed on %s->%s: %s", est, frame.source, frame.target, exc)
            continue
        precision, recall = _precision_recall_for(est, profile, history, calibration)
        stderr_for_score = report.stderr if report.stderr > 0 else 1e-12
        score = score_model(stderr_for_score, precision, recall, score_weights)
        members.append(replace(report, score=score))
    if len(members) < 2:
        raise AllEstimatorsFailed(f"only {len(members)} of {len(estimators)} estimators produced a report")

    if run_refutations:
        scored: list[EffectReport] = []
        for idx, report in enumerate(members):
            verdicts = {}
            for t_idx, test in enumerate(REFUTATION_TESTS):
                try:
                    verdicts[test] = refute(frame, report.estimator_name, test, seed=seed + 101 * t_idx + idx, level=level, base=report)
                except SubsetDegenerate:
                    verdicts[test] = "fail"
            scored.append(replace(report, refutations=verdicts))
        members = scored

    total = sum(m.score for m in members)
    weights = [m.score / total for m in members]
    effect = float(sum(w * m.effect for w, m in zip(weights, members)))
    # members see the same rows, so their errors are strongly correlated;
    # the weighted-mean stderr is the right bound, not the independence one
    stderr = float(sum(w * m.stderr for w, m in zip(weights, members)))
    z = _z_value(level)
    p_value = float(2.0 * sps.norm.sf(abs(effect) / stderr)) if stderr > 0 else (1.0 if effect == 0.0 else 0.0)

    threshold = adaptive_threshold(theta_base, profile, history, gamma, threshold_sign) if history is not None else theta_base
    top = sorted(members, key=lambda m: (-m.score, m.estimator_name))[:overlap_top]
    overlap_ok = all(_cis_overlap(a, b) for i, a in enumerate(top) for b in top[i + 1 :])
    validated = p_value < threshold and overlap_ok
    if require_refutations and run_refutations:
        validated = validated and all(v == "pass" for m in members for v in m.refutations.values())

    ens_refutations = dict(top[0].refutations) if top and top[0].refutations else {}
    ensemble = EffectReport(
        "ensemble", effect, stderr, float(effect - z * stderr), float(effect + z * stderr), p_value,
        score=float(total), refutations=ens_refutations,
    )

    if history is not None and record_history:
        for m in members:
            if m.refutations:
                precision = sum(v == "pass" for v in m.refutations.values()) / len(m.refutations)
            else:
                precision = 1.0 if validated else 0.0
            history.add_case(CausalCase(profile.profile_key, m.estimator_name, precision))

    return ValidationResult(ensemble, tuple(members), validated, threshold)
