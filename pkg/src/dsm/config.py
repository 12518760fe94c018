"""Pipeline configuration: one flat record, JSON in and out.

The same record drives detection, description, matching and diffusion, and a
snapshot of it is embedded in every index file so a stored index carries the
parameters it was built with.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .errors import DataError
from .features import FeatureCaps
from .matching import MatchParams


@dataclass
class PipelineConfig:
    pooling: str = "gem"          # "gem" or "mac"
    gem_p: float = 3.0
    budget: int = 512
    caps: dict = field(default_factory=lambda: {"query": 20, "database": 10})
    delta_fraction: float = 0.6   # quantile of activations used as the level step
    nms_iou: float = 0.2
    rerank_top: int = 100
    err_px: float = 2.0
    scale_max: float = 3.0
    knn_k: int = 50
    alpha: float = 0.99
    gamma: float = 3.0
    seeds_pool: int = 10
    seeds_top: int = 5

    def __post_init__(self):
        if self.pooling not in ("gem", "mac"):
            raise DataError(f"pooling must be 'gem' or 'mac', got {self.pooling!r}")
        if not 0.0 < self.delta_fraction < 1.0:
            raise DataError(f"delta_fraction must be in (0,1), got {self.delta_fraction}")
        if self.budget <= 0 or self.rerank_top < 0:
            raise DataError("budget must be positive and rerank_top non-negative")
        if set(self.caps) != {"query", "database"}:
            raise DataError(f"caps must have exactly the keys query/database, got {sorted(self.caps)}")

    # -- derived parameter bundles ------------------------------------------

    def feature_caps(self) -> FeatureCaps:
        return FeatureCaps(
            max_per_channel_query=int(self.caps["query"]),
            max_per_channel_db=int(self.caps["database"]),
            nms_iou=self.nms_iou,
            budget=self.budget,
        )

    def match_params(self) -> MatchParams:
        return MatchParams(err_px=self.err_px, scale_factor_max=self.scale_max)

    @property
    def aggregation(self) -> str:
        """Scale aggregation paired with the pooling mode: GeM pooling
        aggregates by GeM, MAC pooling by plain averaging."""
        return "gem" if self.pooling == "gem" else "average"

    # -- JSON ----------------------------------------------------------------

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))

    @staticmethod
    def from_dict(data: dict) -> "PipelineConfig":
        known = {f for f in PipelineConfig.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise DataError(f"unknown config keys: {sorted(unknown)}")
        return PipelineConfig(**data)

    @staticmethod
    def from_json(text: str) -> "PipelineConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DataError(f"bad config JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise DataError("config JSON must be an object")
        return PipelineConfig.from_dict(data)


def load_config(path) -> PipelineConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return PipelineConfig.from_json(fh.read())
