"""Ellipse features from extremal regions, with caps, NMS and budgeting.

A detected region becomes the tuple (center, shape, strength): first and
second moments of its pixel set plus a pooled activation value.  Channels act
as visual words, so features stay grouped per channel.  Database images go
through cross-channel non-maxima suppression; queries do not, they keep every
detection.  A global strength budget then limits the collection size.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .mser import DetectorParams, Region, detect_msers
from .tensors import TensorSet

ROLE_QUERY = "query"
ROLE_DATABASE = "database"

# Variance of a uniform distribution over a unit pixel; added to both axes so
# even a single-pixel region has an invertible shape matrix.
PIXEL_VARIANCE = 1.0 / 12.0


@dataclass(frozen=True, eq=False)
class LocalFeature:
    """One elliptical feature: center ``mu`` (col,row), shape ``sigma`` (2x2),
    pooled ``strength``, plus the channel and scale it came from."""

    mu: np.ndarray
    sigma: np.ndarray
    strength: float
    channel: int
    scale_index: int

    def bbox(self, n_sigma: float = 2.0) -> tuple[float, float, float, float]:
        """Axis-aligned (x0, y0, x1, y1) box at ``n_sigma`` standard deviations."""
        hx = n_sigma * float(np.sqrt(self.sigma[0, 0]))
        hy = n_sigma * float(np.sqrt(self.sigma[1, 1]))
        return (self.mu[0] - hx, self.mu[1] - hy, self.mu[0] + hx, self.mu[1] + hy)


@dataclass
class FeatureCaps:
    """Role caps, NMS threshold and the global strength budget."""

    max_per_channel_query: int = 20
    max_per_channel_db: int = 10
    nms_iou: float = 0.2
    budget: int = 512

    def cap_for(self, role: str) -> int:
        if role == ROLE_QUERY:
            return self.max_per_channel_query
        if role == ROLE_DATABASE:
            return self.max_per_channel_db
        raise DataError(f"unknown role {role!r}")


@dataclass
class FeatureCollection:
    """All features of one image, grouped per channel."""

    image_id: str
    role: str
    per_channel: list[list[LocalFeature]] = field(default_factory=list)

    @property
    def channels(self) -> int:
        return len(self.per_channel)

    @property
    def total_count(self) -> int:
        return sum(len(fs) for fs in self.per_channel)

    def flat(self) -> list[LocalFeature]:
        return [f for fs in self.per_channel for f in fs]

    def split_by_scale(self) -> dict[int, "FeatureCollection"]:
        """Single-scale sub-collections keyed by scale index."""
        out: dict[int, FeatureCollection] = {}
        for f in self.flat():
            sub = out.get(f.scale_index)
            if sub is None:
                sub = FeatureCollection(
                    self.image_id, self.role, [[] for _ in range(self.channels)]
                )
                out[f.scale_index] = sub
            sub.per_channel[f.channel].append(f)
        return out


def pool_strength(values: np.ndarray, mode: str, gem_p: float = 3.0) -> float:
    if mode == "max":
        return float(values.max())
    if mode == "mean":
        return float(values.mean())
    if mode == "gem":
        return float(np.mean(np.asarray(values, dtype=np.float64) ** gem_p) ** (1.0 / gem_p))
    raise DataError(f"unknown pooling mode {mode!r}")


def fit_ellipse(
    region: Region,
    grid: np.ndarray,
    pool_mode: str = "max",
    *,
    channel: int = 0,
    scale_index: int = 0,
    gem_p: float = 3.0,
) -> LocalFeature:
    """Moment-matched ellipse for one region of one channel map.

    Center is the pixel-coordinate mean, shape the population covariance of
    the pixel set plus a unit-pixel floor on both axes, strength the pooled
    activation over the region support.
    """
    if not region.pixels:
        raise DataError("empty region")
    pts = np.array(sorted(region.pixels), dtype=np.float64)  # (n, 2) as (col,row)
    mu = pts.mean(axis=0)
    centered = pts - mu
    sigma = (centered.T @ centered) / len(pts) + PIXEL_VARIANCE * np.eye(2)
    grid = np.asarray(grid)
    values = grid[pts[:, 1].astype(int), pts[:, 0].astype(int)]
    strength = pool_strength(values, pool_mode, gem_p)
    mu.setflags(write=False)
    sigma.setflags(write=False)
    return LocalFeature(mu=mu, sigma=sigma, strength=strength, channel=channel, scale_index=scale_index)


def box_iou(a: tuple[float, float, float, float], b: tuple[float, float, float, float]) -> float:
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    if inter == 0.0:
        return 0.0
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


def _rank_key(f: LocalFeature):
    return (-f.strength, f.scale_index, f.channel, f.mu[0], f.mu[1])


def nms_cross_channel(features: list[LocalFeature], iou_threshold: float = 0.2) -> list[LocalFeature]:
    """Greedy strength-ordered suppression across all channels of one scale.

    A feature is dropped only when its 2-sigma bounding box overlaps an
    already-kept feature with IoU strictly above the threshold, so boxes at
    exactly the threshold coexist.  Idempotent.
    """
    kept: list[LocalFeature] = []
    boxes: list[tuple[float, float, float, float]] = []
    for f in sorted(features, key=_rank_key):
        box = f.bbox()
        if all(box_iou(box, other) <= iou_threshold for other in boxes):
            kept.append(f)
            boxes.append(box)
    return kept


def select_budget(features: list[LocalFeature], budget: int) -> list[LocalFeature]:
    """Strongest ``budget`` features across all scales, deterministically tied."""
    if budget <= 0:
        raise DataError(f"budget must be positive, got {budget}")
    return sorted(features, key=_rank_key)[:budget]


def detect_features(
    tset: TensorSet,
    det_params: DetectorParams,
    role: str,
    caps: FeatureCaps,
    pool_mode: str = "max",
    gem_p: float = 3.0,
) -> FeatureCollection:
    """Full per-image detection: regions -> ellipses -> caps -> NMS -> budget.

    Per (scale, channel) map: detect regions and fit ellipses, but drop the
    whole channel at that scale when its region count exceeds the role cap
    (such channels fire on texture, not structure).  Database features then
    pass cross-channel NMS per scale.  Finally the global budget keeps the
    strongest features over all scales, and the result is regrouped per
    channel.
    """
    cap = caps.cap_for(role)
    k = tset.channels
    selected: list[LocalFeature] = []
    for si, (_, tensor) in enumerate(tset.scales):
        scale_feats: list[LocalFeature] = []
        for j in range(k):
            grid = tensor.channel_map(j)
            if grid.max() == grid.min():
                continue
            regions = detect_msers(grid, det_params)
            if not regions or len(regions) > cap:
                continue
            for region in regions:
                scale_feats.append(
                    fit_ellipse(region, grid, pool_mode, channel=j, scale_index=si, gem_p=gem_p)
                )
        if role == ROLE_DATABASE:
            scale_feats = nms_cross_channel(scale_feats, caps.nms_iou)
        selected.extend(scale_feats)

    per_channel: list[list[LocalFeature]] = [[] for _ in range(k)]
    for f in select_budget(selected, caps.budget):
        per_channel[f.channel].append(f)
    for fs in per_channel:
        fs.sort(key=lambda f: (f.scale_index, f.mu[0], f.mu[1], -f.strength))
    return FeatureCollection(image_id=tset.image_id, role=role, per_channel=per_channel)
