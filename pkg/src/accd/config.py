"""Run configuration: one dataclass holding every tunable the pipeline,
bench, and service read, loadable from a json file and overridable by CLI
flags. Defaults follow the shipped detection recipe.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from .ccm import CrossMapConfig
from .classify import TrainConfig
from .memory import DEFAULT_GRID, SelectionPolicy


@dataclass(frozen=True)
class PipelineConfig:
    # ingest
    bin_width: int = 300
    window: Optional[tuple[int, int]] = None  # None: derive from the event span

    # parameter memory (exploitation/exploration selection)
    alpha: float = 0.8
    beta: float = 0.1
    param_grid: tuple[tuple[int, int], ...] = DEFAULT_GRID

    # cross mapping
    l_min: int = 10
    l_max: int = 50
    l_step: int = 10
    k_neighbors: Optional[int] = None  # None: E + 1
    exclusion_radius: Optional[int] = None  # None: tau
    influence_floor: float = 0.5

    # clustering
    clusters: Optional[int] = None  # None: max(1, round(sqrt(U/10)))
    cross_fraction: float = 0.05

    # classification
    n_trees: int = 100
    max_depth: int = 12
    min_leaf: int = 2
    queue_size: int = 50
    pseudo_confidence: float = 0.9
    curriculum_thresholds: tuple[float, ...] = (0.3, 0.5, 0.7, 1.0)
    validation_gate: float = 0.85
    stage_patience: int = 5

    # validation
    theta_base: float = 0.05
    threshold_gamma: float = 0.2
    threshold_sign: int = 1
    score_weights: tuple[float, float, float] = (0.4, 0.3, 0.3)
    confidence_level: float = 0.95
    ci_overlap_top: int = 2
    require_refutations: bool = False
    covariate_lags: int = 3

    # execution
    seed: int = 0
    workers: Optional[int] = None  # None: cpu count
    kernel_backend: Optional[str] = None  # None: best available

    def selection_policy(self) -> SelectionPolicy:
        return SelectionPolicy(self.alpha, self.beta, tuple(tuple(p) for p in self.param_grid))

    def crossmap_config(self) -> CrossMapConfig:
        return CrossMapConfig(self.l_min, self.l_max, self.l_step, self.k_neighbors, self.exclusion_radius)

    def train_config(self, seed_offset: int = 0) -> TrainConfig:
        return TrainConfig(self.n_trees, self.max_depth, self.min_leaf, self.seed + seed_offset)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["param_grid"] = [list(p) for p in self.param_grid]
        out["curriculum_thresholds"] = list(self.curriculum_thresholds)
        out["score_weights"] = list(self.score_weights)
        out["window"] = list(self.window) if self.window else None
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(data)
        if kwargs.get("param_grid") is not None:
            kwargs["param_grid"] = tuple(tuple(p) for p in kwargs["param_grid"])
        if kwargs.get("curriculum_thresholds") is not None:
            kwargs["curriculum_thresholds"] = tuple(kwargs["curriculum_thresholds"])
        if kwargs.get("score_weights") is not None:
            kwargs["score_weights"] = tuple(kwargs["score_weights"])
        if kwargs.get("window") is not None:
            kwargs["window"] = tuple(kwargs["window"])
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def override(self, **kwargs) -> "PipelineConfig":
        provided = {k: v for k, v in kwargs.items() if v is not None}
        return replace(self, **provided) if provided else self
