"""Global descriptors: spatial pooling, scale aggregation, whitening, ranking.

One image yields one k-vector per scale (per-channel MAC or GeM over the
activation grid), the scales are aggregated element-wise, and the result is
l2-normalized.  Whitening is fitted on database descriptors, either plain PCA
or a discriminative variant that additionally uses matching-pair differences,
and cosine similarity over whitened descriptors produces the first-stage
ranking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .tensors import FeatureTensor

POOL_MAC = "mac"
POOL_GEM = "gem"

#: Shrinkage added to covariance diagonals before inversion, as a fraction
#: of the mean eigenvalue (trace / k).
SHRINKAGE = 1e-6


@dataclass(eq=False)
class GlobalDescriptor:
    """A k-vector image representation, optionally l2-normalized."""

    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if self.normalized:
            norm = float(np.linalg.norm(self.values))
            if abs(norm - 1.0) > 1e-6:
                raise DataError(f"descriptor marked normalized but |z| = {norm}")

    @property
    def dim(self) -> int:
        return self.values.shape[0]


@dataclass(eq=False)
class WhiteningTransform:
    """Affine projection z -> P (z - mean), fitted on database descriptors."""

    mean: np.ndarray
    projection: np.ndarray
    kind: str = "pca"

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        self.projection = np.asarray(self.projection, dtype=np.float64)
        k = self.mean.shape[0]
        if self.projection.shape != (k, k):
            raise DataError(
                f"projection shape {self.projection.shape} does not match mean dim {k}"
            )
        if not np.all(np.isfinite(self.projection)):
            raise DataError("projection contains non-finite values")

    @staticmethod
    def identity(k: int) -> "WhiteningTransform":
        return WhiteningTransform(np.zeros(k), np.eye(k), kind="identity")


def pool(tensor: FeatureTensor, mode: str, gem_p: float = 3.0) -> np.ndarray:
    """Pool one activation tensor into a raw (unnormalized) k-vector.

    ``mac`` takes the per-channel maximum; ``gem`` the generalized mean
    ((1/|grid|) * sum A^p)^(1/p) with p >= 1, which interpolates between the
    arithmetic mean (p=1) and the maximum (p -> inf).
    """
    flat = tensor.values.reshape(tensor.channels, -1).astype(np.float64)
    if mode == POOL_MAC:
        return flat.max(axis=1)
    if mode == POOL_GEM:
        if gem_p < 1.0:
            raise DataError(f"gem exponent must be >= 1, got {gem_p}")
        return np.mean(flat ** gem_p, axis=1) ** (1.0 / gem_p)
    raise DataError(f"unknown pooling mode {mode!r}")


def l2_normalize(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise DataError("degenerate descriptor")
    return v / norm


def aggregate_scales(per_scale: list[np.ndarray], mode: str, gem_p: float = 3.0) -> GlobalDescriptor:
    """Combine per-scale vectors element-wise and l2-normalize the result.

    ``gem`` applies the generalized mean across scales (the natural companion
    of GeM spatial pooling); ``average`` the arithmetic mean (companion of
    MAC).
    """
    if not per_scale:
        raise DataError("no scales to aggregate")
    stack = np.stack([np.asarray(v, dtype=np.float64) for v in per_scale])
    if mode == "average":
        combined = stack.mean(axis=0)
    elif mode == POOL_GEM:
        if gem_p < 1.0:
            raise DataError(f"gem exponent must be >= 1, got {gem_p}")
        combined = np.mean(stack ** gem_p, axis=0) ** (1.0 / gem_p)
    else:
        raise DataError(f"unknown aggregation mode {mode!r}")
    return GlobalDescriptor(l2_normalize(combined), normalized=True)


def _eigh_descending(sym: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix, eigenvalues descending,
    each eigenvector's largest-magnitude component made positive so the
    decomposition is sign-deterministic."""
    vals, vecs = np.linalg.eigh(sym)
    order = np.argsort(vals)[::-1]
    vals = vals[order]
    vecs = vecs[:, order]
    flips = np.sign(vecs[np.abs(vecs).argmax(axis=0), np.arange(vecs.shape[1])])
    flips[flips == 0] = 1.0
    return vals, vecs * flips


def _regularize(cov: np.ndarray) -> np.ndarray:
    k = cov.shape[0]
    eps = SHRINKAGE * float(np.trace(cov)) / k
    return cov + eps * np.eye(k)


def _inv_sqrt(cov: np.ndarray, what: str) -> np.ndarray:
    """Symmetric inverse square root of a regularized covariance."""
    vals, vecs = _eigh_descending(_regularize(cov))
    if vals[-1] <= 0.0:
        raise DataError(f"rank deficiency after regularization ({what})")
    return (vecs * (vals ** -0.5)) @ vecs.T


def fit_whitening(
    descriptors: np.ndarray, matching_pairs: list[tuple[int, int]] | None = None
) -> WhiteningTransform:
    """Fit a whitening transform on an n-by-k descriptor matrix.

    Without pairs: PCA whitening, P = Lambda^{-1/2} U^T of the regularized
    covariance; requires n > k.  With pairs: the intra-pair difference
    covariance C_S replaces the isotropic metric, and the projection is
    P = R C_S^{-1/2}, R being the rotation that diagonalizes the total
    covariance in the C_S-whitened space (descending variance); requires at
    least k pairs.
    """
    z = np.asarray(descriptors, dtype=np.float64)
    if z.ndim != 2:
        raise DataError(f"descriptor matrix must be 2-d, got shape {z.shape}")
    n, k = z.shape
    mean = z.mean(axis=0)
    centered = z - mean
    total_cov = (centered.T @ centered) / n

    if matching_pairs is None:
        if n <= k:
            raise DataError(f"pca whitening needs n > k, got n={n}, k={k}")
        vals, vecs = _eigh_descending(_regularize(total_cov))
        if vals[-1] <= 0.0:
            raise DataError("rank deficiency after regularization (pca)")
        proj = (vecs * (vals ** -0.5)).T
        return WhiteningTransform(mean, proj, kind="pca")

    if len(matching_pairs) < k:
        raise DataError(
            f"supervised whitening needs at least k={k} pairs, got {len(matching_pairs)}"
        )
    diffs = np.stack([z[i] - z[j] for i, j in matching_pairs])
    pair_cov = (diffs.T @ diffs) / len(diffs)
    inv_sqrt_s = _inv_sqrt(pair_cov, "pair covariance")
    projected = inv_sqrt_s @ total_cov @ inv_sqrt_s
    _, rot = _eigh_descending(0.5 * (projected + projected.T))
    proj = rot.T @ inv_sqrt_s
    return WhiteningTransform(mean, proj, kind="supervised")


def apply_whitening(t: WhiteningTransform, z: np.ndarray) -> GlobalDescriptor:
    """Whiten and re-normalize one descriptor; errors on a zero projection."""
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    if z.shape != t.mean.shape:
        raise DataError(f"descriptor dim {z.shape[0]} does not match transform {t.mean.shape[0]}")
    return GlobalDescriptor(l2_normalize(t.projection @ (z - t.mean)), normalized=True)


def cosine_rank(query: GlobalDescriptor, db: list[GlobalDescriptor]) -> tuple[np.ndarray, np.ndarray]:
    """Rank database descriptors by cosine similarity to the query.

    Returns ``(order, scores)``: the database indices sorted by descending
    dot product (ties broken by ascending index, so the result is a stable
    permutation), and the score of each database item in original order.
    """
    if not query.normalized:
        raise DataError("query descriptor must be normalized")
    if not db:
        return np.array([], dtype=np.int64), np.array([])
    for i, d in enumerate(db):
        if not d.normalized:
            raise DataError(f"database descriptor {i} must be normalized")
    mat = np.stack([d.values for d in db])
    scores = mat @ query.values
    order = np.argsort(-scores, kind="stable")
    return order.astype(np.int64), scores
