"""Graph diffusion over database descriptors, seeded by verified matches.

The database is connected by a mutual-max kNN graph with affinities
max(0, cos)^gamma, degree-normalized into S = D^{-1/2} W D^{-1/2} so that
its spectrum lies in [-1, 1].  A query seeds a sparse non-negative vector y
(products of inlier counts and cosine scores of its spatially verified
neighbors) and the ranking score is the solution of (I - alpha*S) f = y,
obtained by conjugate gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.linalg import LinearOperator, cg

from .errors import DataError


@dataclass(eq=False)
class KnnGraph:
    """Symmetrized kNN graph plus its degree-normalized adjacency."""

    n: int
    k: int
    #: per node: its own directed top-k picks, sorted by affinity desc, index asc
    choices: list[list[tuple[int, float]]] = field(default_factory=list)
    #: per node: symmetrized neighbor list (union of directed edges), same order
    neighbors: list[list[tuple[int, float]]] = field(default_factory=list)
    #: S = D^{-1/2} W D^{-1/2}, exactly symmetric
    normalized_adjacency: csr_matrix | None = None


def graph_from_choices(n: int, k: int, choices: list[list[tuple[int, float]]]) -> KnnGraph:
    """Assemble the symmetrized graph from per-node directed edge picks.

    Cosine affinity is symmetric, so taking the max over the two directions
    of an edge reduces to a plain union; an edge survives if either endpoint
    picked it.
    """
    weights: dict[tuple[int, int], float] = {}
    for i, picks in enumerate(choices):
        for j, aff in picks:
            if aff <= 0.0 or j == i:
                continue
            key = (min(i, j), max(i, j))
            prev = weights.get(key)
            if prev is None or aff > prev:
                weights[key] = aff

    rows, cols, vals = [], [], []
    for (i, j), aff in weights.items():
        rows += [i, j]
        cols += [j, i]
        vals += [aff, aff]
    w = csr_matrix((vals, (rows, cols)), shape=(n, n))

    degree = np.asarray(w.sum(axis=1)).reshape(-1)
    inv_sqrt = np.zeros(n)
    nz = degree > 0
    inv_sqrt[nz] = degree[nz] ** -0.5
    d_half = csr_matrix((inv_sqrt, (np.arange(n), np.arange(n))), shape=(n, n))
    s = d_half @ w @ d_half
    s = 0.5 * (s + s.T)  # guarantee exact symmetry under float summation order

    neighbors: list[list[tuple[int, float]]] = [[] for _ in range(n)]
    for (i, j), aff in weights.items():
        neighbors[i].append((j, aff))
        neighbors[j].append((i, aff))
    for lst in neighbors:
        lst.sort(key=lambda e: (-e[1], e[0]))
    return KnnGraph(n=n, k=k, choices=choices, neighbors=neighbors, normalized_adjacency=s)


def build_knn_graph(descs: np.ndarray, k: int = 50, gamma: float = 3.0) -> KnnGraph:
    """Build the diffusion graph from an n-by-d matrix of normalized rows.

    Each node keeps edges to its k nearest neighbors by cosine similarity
    with affinity max(0, cos)^gamma; an edge present in either direction is
    kept with the larger affinity, so W is symmetric by construction.  Nodes
    whose candidate affinities are all zero stay isolated (zero row in S).
    """
    z = np.asarray(descs, dtype=np.float64)
    n = z.shape[0]
    if n < 2:
        raise DataError(f"graph needs at least 2 nodes, got {n}")
    norms = np.linalg.norm(z, axis=1)
    # all-zero rows are allowed (blank images become isolated nodes)
    if np.any((np.abs(norms - 1.0) > 1e-6) & (norms != 0.0)):
        raise DataError("graph rows must be l2-normalized")

    sims = z @ z.T
    np.fill_diagonal(sims, -np.inf)  # no self loops
    k_eff = min(k, n - 1)

    choices: list[list[tuple[int, float]]] = []
    for i in range(n):
        row = sims[i]
        # k_eff best neighbors, deterministic under ties: sort by (-sim, index)
        nearest = np.lexsort((np.arange(n), -row))[:k_eff]
        picks = []
        for j in nearest:
            # round through f32: affinities persist as f32, and a graph must
            # behave identically before and after an index round-trip
            aff = float(np.float32(max(0.0, float(row[j])) ** gamma))
            if aff > 0.0:
                picks.append((int(j), aff))
        picks.sort(key=lambda e: (-e[1], e[0]))
        choices.append(picks)
    return graph_from_choices(n, k, choices)


def seed_scores(
    verified: list[tuple[int, int, float]], n: int, top_m: int = 5, pool: int = 10
) -> np.ndarray:
    """Sparse seed vector from (index, inlier count, cosine score) triples.

    Candidates are scored by inliers * cosine; the ``top_m`` best of the
    given pool keep that product as their seed mass, everything else is
    zero.  An empty or all-zero list yields the zero vector, which callers
    treat as "fall back to cosine-only seeding".
    """
    y = np.zeros(n)
    scored = []
    for index, inliers, cosine in verified[:pool]:
        product = float(inliers) * float(cosine)
        if product > 0.0:
            scored.append((product, int(index)))
    scored.sort(key=lambda e: (-e[0], e[1]))
    for product, index in scored[:top_m]:
        y[index] = product
    return y


def cosine_seeds(scores: np.ndarray, top_m: int = 5) -> np.ndarray:
    """Fallback seeding when no spatially verified image exists: the top_m
    cosine neighbors, weighted by their (positive) cosine scores."""
    scores = np.asarray(scores, dtype=np.float64)
    y = np.zeros_like(scores)
    order = np.lexsort((np.arange(scores.shape[0]), -scores))[:top_m]
    for i in order:
        if scores[i] > 0.0:
            y[i] = scores[i]
    return y


def diffuse(
    graph: KnnGraph,
    y: np.ndarray,
    alpha: float = 0.99,
    tol: float = 1e-6,
    max_iter: int = 200,
) -> tuple[np.ndarray, bool]:
    """Solve (I - alpha*S) f = y by conjugate gradient.

    Returns ``(f, converged)``.  The system matrix is symmetric positive
    definite for 0 <= alpha < 1 because the spectrum of S lies in [-1, 1],
    so CG applies directly.  On non-convergence within ``max_iter`` the best
    iterate is returned with ``converged = False``.
    """
    if not 0.0 <= alpha < 1.0:
        raise DataError(f"alpha must be in [0, 1), got {alpha}")
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.shape[0] != graph.n:
        raise DataError(f"seed length {y.shape[0]} does not match graph size {graph.n}")
    if alpha == 0.0 or not np.any(y):
        return y.copy(), True

    s = graph.normalized_adjacency

    def matvec(v):
        return v - alpha * (s @ v)

    op = LinearOperator((graph.n, graph.n), matvec=matvec, dtype=np.float64)
    f, info = cg(op, y, rtol=tol, atol=0.0, maxiter=max_iter)
    return f, info == 0
