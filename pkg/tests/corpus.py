"""Planted retrieval corpus with known geometry and engineered confusion.

Ten scene groups, each a fixed set of Gaussian blobs in three signature
channels.  Every group contributes four database images that are 5-dof warps
of its scene (the fourth with a larger scale change and inflated blob
shapes) and one query.  Ten distractors spread blobs over many channels with
unrelated geometry, so they sit far from every group in descriptor space.
Queries additionally carry diffuse high-mass blobs in two other groups'
channels: these dominate pooled descriptors (dragging cosine ranking toward
the wrong groups) but yield only single large features that cannot form
consistent transforms, so spatial verification is unaffected.

The result is a corpus where cosine ranking is mediocre, spatial re-ranking
recovers all four warps, and diffusion from the verified seeds keeps them on
top because within-group descriptor affinity dominates the graph.
"""

from __future__ import annotations

import numpy as np

from dsm.config import PipelineConfig
from dsm.evaluation import GroundTruth, QueryGroundTruth
from dsm.matching import Transform5
from dsm.tensors import DEFAULT_SCALE_FACTORS, TensorSet, synth_tensor

K = 64
GRID = 48
N_GROUPS = 10
N_POS = 4
N_DISTRACTORS = 10
BLOBS_PER_CHANNEL = 4

#: amplitude of the diffuse confusion blobs planted in query tensors;
#: calibrated so the cosine-only stage ranks the confusion groups' images
#: above roughly half the true positives
CORRUPT_AMP = 1.0
CORRUPT_COV = 25.0


def _render(blobs, image_id: str) -> TensorSet:
    """Render one blob list at the three standard scales."""
    scales = []
    for factor in DEFAULT_SCALE_FACTORS:
        h = w = max(4, round(GRID * factor))
        scaled = [
            (c, (cx * factor, cy * factor), np.asarray(cov) * factor * factor, amp)
            for c, (cx, cy), cov, amp in blobs
        ]
        scales.append((factor, synth_tensor(scaled, K, h, w)))
    return TensorSet(image_id=image_id, network_tag="planted", scales=scales)


def _small_cov(rng) -> np.ndarray:
    a = rng.normal(size=(2, 2)) * 0.6
    return a @ a.T + 0.9 * np.eye(2)


def _scene(rng, channels) -> list:
    """Separated small blobs across the given signature channels."""
    blobs = []
    centers: list[np.ndarray] = []
    for channel in channels:
        for _ in range(BLOBS_PER_CHANNEL):
            while True:
                p = rng.uniform(8.0, 30.0, size=2)
                if all(np.linalg.norm(p - q) >= 5.0 for q in centers):
                    break
            centers.append(p)
            blobs.append((channel, (p[0], p[1]), _small_cov(rng), rng.uniform(1.2, 2.0)))
    return blobs


def _in_bounds(blobs) -> bool:
    return all(1.5 <= cx <= GRID - 2.5 and 1.5 <= cy <= GRID - 2.5 for _, (cx, cy), _, _ in blobs)


def _warp(blobs, t: Transform5, cov_scale: float = 1.0, amp_scale: float = 1.0) -> list:
    m = t.matrix
    out = []
    for channel, (cx, cy), cov, amp in blobs:
        nx, ny = t.apply(np.array([cx, cy]))
        warped_cov = m @ cov @ m.T
        warped_cov = 0.5 * (warped_cov + warped_cov.T)  # restore exact symmetry
        out.append((channel, (nx, ny), cov_scale * warped_cov, amp_scale * amp))
    return out


def _sample_warp(rng, blobs, hard: bool) -> list:
    """A random in-bounds 5-dof warp; the hard variant also inflates blob
    shapes so single-correspondence hypotheses predict wrong positions."""
    while True:
        if hard:
            t = Transform5(
                a=rng.uniform(1.25, 1.4),
                b=rng.uniform(-0.1, 0.1),
                c=rng.uniform(1.25, 1.4),
                tx=rng.uniform(-2, 2),
                ty=rng.uniform(-2, 2),
            )
            warped = _warp(blobs, t, cov_scale=2.5, amp_scale=0.7)
        else:
            t = Transform5(
                a=rng.uniform(0.8, 1.2),
                b=rng.uniform(-0.12, 0.12),
                c=rng.uniform(0.8, 1.2),
                tx=rng.uniform(-3, 3),
                ty=rng.uniform(-3, 3),
            )
            warped = _warp(blobs, t, amp_scale=float(rng.uniform(0.9, 1.1)))
        if _in_bounds(warped):
            return warped


def _clutter(rng) -> list:
    """Weak blobs in the two non-signature channels (30, 31)."""
    out = []
    for channel in (K - 2, K - 1):
        p = rng.uniform(6.0, 40.0, size=2)
        out.append((channel, (p[0], p[1]), _small_cov(rng) * 2.0, rng.uniform(0.3, 0.8)))
    return out


def _corruption(rng, group: int) -> list:
    """Diffuse high-mass blobs in two other groups' signature channels."""
    out = []
    for other in ((group + 1) % N_GROUPS, (group + 2) % N_GROUPS):
        for channel in range(3 * other, 3 * other + 3):
            p = rng.uniform(12.0, 35.0, size=2)
            out.append((channel, (p[0], p[1]), CORRUPT_COV * np.eye(2), CORRUPT_AMP))
    return out


def make_planted_corpus(seed: int = 7):
    """Build the full corpus; deterministic in the seed.

    Returns a dict with db_sets (50), query_sets (10), gt, pairs and config.
    """
    rng = np.random.default_rng(seed)
    db_sets: list[TensorSet] = []
    query_sets: list[TensorSet] = []
    queries: dict[str, QueryGroundTruth] = {}
    pairs: list[tuple[str, str]] = []

    for g in range(N_GROUPS):
        channels = list(range(3 * g, 3 * g + 3))
        base = _scene(rng, channels)
        pos_ids = []
        for p in range(N_POS):
            warped = _sample_warp(rng, base, hard=(p == N_POS - 1))
            image_id = f"g{g}p{p}"
            pos_ids.append(image_id)
            db_sets.append(_render(warped + _clutter(rng), image_id))
        query_sets.append(_render(base + _corruption(rng, g) + _clutter(rng), f"q{g}"))
        queries[f"q{g}"] = QueryGroundTruth(
            easy=set(pos_ids[: N_POS - 1]), hard={pos_ids[N_POS - 1]}, junk=set()
        )
        for i in range(N_POS):
            for j in range(i + 1, N_POS):
                pairs.append((pos_ids[i], pos_ids[j]))

    for d in range(N_DISTRACTORS):
        # mass spread over many channels: close to no single group cluster
        channels = sorted(rng.choice(3 * N_GROUPS, size=10, replace=False).tolist())
        blobs = []
        taken: list[np.ndarray] = []
        for channel in channels:
            for _ in range(2):
                while True:
                    p = rng.uniform(6.0, 40.0, size=2)
                    if all(np.linalg.norm(p - q) >= 4.0 for q in taken):
                        break
                taken.append(p)
                blobs.append((channel, (p[0], p[1]), _small_cov(rng), rng.uniform(1.0, 1.7)))
        db_sets.append(_render(blobs + _clutter(rng), f"d{d}"))

    gt = GroundTruth(queries=queries, database={t.image_id for t in db_sets})
    return {
        "db_sets": db_sets,
        "query_sets": query_sets,
        "gt": gt,
        "pairs": pairs,
        "config": PipelineConfig(),
    }
