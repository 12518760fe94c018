"""Sparse local features from CNN activation tensors.

Detection of stable extremal regions on activation maps, elliptical feature
fitting with channels as visual words, fast 5-dof spatial verification,
global-descriptor retrieval with whitening, and diffusion re-ranking seeded
by verified matches.
"""

from .config import PipelineConfig, load_config
from .descriptors import (
    GlobalDescriptor,
    WhiteningTransform,
    aggregate_scales,
    apply_whitening,
    cosine_rank,
    fit_whitening,
    pool,
)
from .diffusion import KnnGraph, build_knn_graph, diffuse, seed_scores
from .errors import DataError, FormatError
from .evaluation import GroundTruth, evaluate_rankings
from .features import (
    FeatureCaps,
    FeatureCollection,
    LocalFeature,
    ROLE_DATABASE,
    ROLE_QUERY,
    detect_features,
)
from .index_store import Index, load_index, load_index_file, persist_index, save_index
from .matching import (
    Correspondence,
    MatchParams,
    MatchResult,
    Transform5,
    hypothesis_from_correspondence,
    match,
    match_multiscale,
    similarity,
    tentative_correspondences,
)
from .mser import DetectorParams, Region, compute_delta, detect_msers
from .render import render_match_svg
from .retrieval import QueryOptions, RankedEntry, RankedList, build_index, match_pair, query
from .tensors import (
    DEFAULT_SCALE_FACTORS,
    FeatureTensor,
    TensorSet,
    load_tensor_set,
    read_tensor_set,
    save_tensor_set,
    synth_tensor,
    write_tensor_set,
)

__all__ = [
    "PipelineConfig",
    "load_config",
    "GlobalDescriptor",
    "WhiteningTransform",
    "aggregate_scales",
    "apply_whitening",
    "cosine_rank",
    "fit_whitening",
    "pool",
    "KnnGraph",
    "build_knn_graph",
    "diffuse",
    "seed_scores",
    "DataError",
    "FormatError",
    "GroundTruth",
    "evaluate_rankings",
    "FeatureCaps",
    "FeatureCollection",
    "LocalFeature",
    "ROLE_DATABASE",
    "ROLE_QUERY",
    "detect_features",
    "Index",
    "load_index",
    "load_index_file",
    "persist_index",
    "save_index",
    "Correspondence",
    "MatchParams",
    "MatchResult",
    "Transform5",
    "hypothesis_from_correspondence",
    "match",
    "match_multiscale",
    "similarity",
    "tentative_correspondences",
    "DetectorParams",
    "Region",
    "compute_delta",
    "detect_msers",
    "render_match_svg",
    "QueryOptions",
    "RankedEntry",
    "RankedList",
    "build_index",
    "match_pair",
    "query",
    "DEFAULT_SCALE_FACTORS",
    "FeatureTensor",
    "TensorSet",
    "load_tensor_set",
    "read_tensor_set",
    "save_tensor_set",
    "synth_tensor",
    "write_tensor_set",
]

__version__ = "0.1.0"
