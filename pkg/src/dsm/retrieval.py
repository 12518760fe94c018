"""Index construction and the three-stage query pipeline.

Build: detect database features and pooled descriptors per image, fit and
apply whitening, build the diffusion graph.  Query: rank by cosine
similarity, spatially verify the top of the list and re-rank it by inlier
count, then optionally diffuse seed mass from the verified images through
the graph and re-rank everything.

Tensors are consumed during the build and never stored; everything the index
keeps is rounded through f32 so that persisting and reloading it changes
nothing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import PipelineConfig
from .descriptors import WhiteningTransform, aggregate_scales, apply_whitening, pool
from .diffusion import build_knn_graph, cosine_seeds, diffuse, seed_scores
from .errors import DataError
from .features import ROLE_DATABASE, ROLE_QUERY, FeatureCollection, LocalFeature, detect_features
from .index_store import Index
from .matching import match_multiscale
from .mser import DetectorParams, compute_delta
from .tensors import TensorSet

PROV_COSINE = "cosine"
PROV_SPATIAL = "spatial"
PROV_DIFFUSION = "diffusion"


@dataclass
class QueryOptions:
    rerank_top: int = 100
    diffuse: bool = False


@dataclass
class RankedEntry:
    image_id: str
    score: float
    provenance: str


@dataclass
class RankedList:
    """Full database ordering for one query, best first."""

    query_id: str
    entries: list[RankedEntry] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def ids(self) -> list[str]:
        return [e.image_id for e in self.entries]

    def to_dict(self) -> dict:
        return {
            "query": self.query_id,
            "results": [
                {"id": e.image_id, "score": e.score, "stage": e.provenance}
                for e in self.entries
            ],
        }


# ---------------------------------------------------------------------------
# per-image processing
# ---------------------------------------------------------------------------


def _detector_params(tset: TensorSet, config: PipelineConfig) -> DetectorParams | None:
    """Per-image detector parameters; None when the image has no signal."""
    sample = np.concatenate([t.values.ravel() for _, t in tset.scales])
    if sample.max() == 0.0:
        return None
    return DetectorParams(delta=compute_delta(sample, config.delta_fraction))


def image_features(tset: TensorSet, role: str, config: PipelineConfig) -> FeatureCollection:
    """Detect an image's features, or an empty collection if it is blank."""
    params = _detector_params(tset, config)
    if params is None:
        return FeatureCollection(
            image_id=tset.image_id, role=role, per_channel=[[] for _ in range(tset.channels)]
        )
    return detect_features(tset, params, role, config.feature_caps(), gem_p=config.gem_p)


def image_descriptor(tset: TensorSet, config: PipelineConfig) -> np.ndarray | None:
    """Aggregated raw descriptor of one image, or None for a blank image."""
    per_scale = [pool(t, config.pooling, config.gem_p) for _, t in tset.scales]
    if all(not np.any(v) for v in per_scale):
        return None
    return aggregate_scales(per_scale, config.aggregation, config.gem_p).values


def _f32(arr: np.ndarray) -> np.ndarray:
    out = np.asarray(arr, dtype=np.float32).astype(np.float64)
    out.setflags(write=False)
    return out


def _quantize_collection(col: FeatureCollection) -> FeatureCollection:
    """Round every stored feature field through f32 so the collection is
    bit-identical before and after index persistence."""
    per_channel = [
        [
            LocalFeature(
                mu=_f32(f.mu),
                sigma=_f32(f.sigma),
                strength=float(np.float32(f.strength)),
                channel=f.channel,
                scale_index=f.scale_index,
            )
            for f in fs
        ]
        for fs in col.per_channel
    ]
    return FeatureCollection(image_id=col.image_id, role=col.role, per_channel=per_channel)


# ---------------------------------------------------------------------------
# index construction
# ---------------------------------------------------------------------------


def build_index(
    tensor_sets,
    config: PipelineConfig | None = None,
    matching_pairs: list[tuple[str, str]] | None = None,
) -> Index:
    """Build a searchable index from an iterable of tensor sets.

    Input order is normalized by image id, so any enumeration order of the
    same images produces the same index.  Whitening is discriminative when
    ``matching_pairs`` (image-id pairs) are given, plain PCA when the
    database is large enough (n > k), and the identity otherwise.
    """
    config = config or PipelineConfig()
    sets = sorted(tensor_sets, key=lambda t: t.image_id)
    if not sets:
        raise DataError("cannot build an index from zero tensor sets")
    for a, b in zip(sets, sets[1:]):
        if a.image_id == b.image_id:
            raise DataError(f"duplicate image id {a.image_id!r}")
    k = sets[0].channels
    for t in sets:
        if t.channels != k:
            raise DataError(
                f"inconsistent channel count: {t.image_id!r} has {t.channels}, expected {k}"
            )

    image_ids = [t.image_id for t in sets]
    features = []
    raw = np.zeros((len(sets), k))
    for i, tset in enumerate(sets):
        features.append(_quantize_collection(image_features(tset, ROLE_DATABASE, config)))
        vec = image_descriptor(tset, config)
        if vec is not None:
            raw[i] = vec

    whitening = _fit_index_whitening(raw, image_ids, matching_pairs)
    whitening = WhiteningTransform(
        _f32(whitening.mean), _f32(whitening.projection), kind=whitening.kind
    )

    descriptors = np.zeros((len(sets), k))
    for i in range(len(sets)):
        if np.any(raw[i]):
            descriptors[i] = apply_whitening(whitening, raw[i]).values
    descriptors = _f32(descriptors)

    graph = None
    if len(sets) >= 2:
        graph = build_knn_graph(descriptors, k=config.knn_k, gamma=config.gamma)
    return Index(
        image_ids=image_ids,
        descriptors=descriptors,
        whitening=whitening,
        features=features,
        graph=graph,
        config=config,
    )


def _fit_index_whitening(raw, image_ids, matching_pairs) -> WhiteningTransform:
    from .descriptors import fit_whitening

    n, k = raw.shape
    if matching_pairs is not None:
        position = {image_id: i for i, image_id in enumerate(image_ids)}
        index_pairs = []
        for a, b in matching_pairs:
            if a not in position or b not in position:
                missing = a if a not in position else b
                raise DataError(f"matching pair references unknown image id {missing!r}")
            index_pairs.append((position[a], position[b]))
        return fit_whitening(raw, index_pairs)
    if n > k:
        return fit_whitening(raw)
    return WhiteningTransform.identity(k)


# ---------------------------------------------------------------------------
# querying
# ---------------------------------------------------------------------------


def query(index: Index, query_set: TensorSet, options: QueryOptions | None = None) -> RankedList:
    """Rank the whole database for one query tensor set."""
    options = options or QueryOptions()
    config = index.config
    n = index.size
    if n == 0:
        return RankedList(query_id=query_set.image_id)
    if query_set.channels != index.dim:
        raise DataError(
            f"query has {query_set.channels} channels, index expects {index.dim}"
        )

    raw = image_descriptor(query_set, config)
    if raw is None:
        scores = np.zeros(n)
    else:
        scores = index.descriptors @ apply_whitening(index.whitening, raw).values
    order = [int(i) for i in np.lexsort((np.arange(n), -scores))]

    ranked = RankedList(query_id=query_set.image_id)
    provenance = {i: PROV_COSINE for i in order}
    stage_score = {i: float(scores[i]) for i in order}

    inliers: dict[int, int] = {}
    if options.rerank_top > 0:
        qfeats = image_features(query_set, ROLE_QUERY, config)
        position = {i: r for r, i in enumerate(order)}
        top = order[: options.rerank_top]
        for i in top:
            result = match_multiscale(qfeats, index.features[i], config.match_params())
            inliers[i] = result.similarity
        top.sort(key=lambda i: (-inliers[i], -scores[i], position[i]))
        order = top + order[len(top):]
        for i in top:
            provenance[i] = PROV_SPATIAL
            stage_score[i] = float(inliers[i])

    if options.diffuse and index.graph is not None:
        verified = [(i, inliers[i], float(scores[i])) for i in order if inliers.get(i, 0) > 0]
        y = seed_scores(verified, n, top_m=config.seeds_top, pool=config.seeds_pool)
        if not np.any(y):
            y = cosine_seeds(scores, top_m=config.seeds_top)
        if np.any(y):
            f, converged = diffuse(index.graph, y, alpha=config.alpha)
            if not converged:
                ranked.warnings.append("diffusion did not converge; using best iterate")
            position = {i: r for r, i in enumerate(order)}
            order.sort(key=lambda i: (-f[i], position[i]))
            for i in order:
                provenance[i] = PROV_DIFFUSION
                stage_score[i] = float(f[i])

    ranked.entries = [
        RankedEntry(image_id=index.image_ids[i], score=stage_score[i], provenance=provenance[i])
        for i in order
    ]
    return ranked


def match_pair(a: TensorSet, b: TensorSet, config: PipelineConfig | None = None):
    """Spatially match two tensor sets (a as query, b as database)."""
    config = config or PipelineConfig()
    fa = image_features(a, ROLE_QUERY, config)
    fb = image_features(b, ROLE_DATABASE, config)
    return match_multiscale(fa, fb, config.match_params()), fa, fb
