"""Maximally stable extremal region detection on a single 2-d response map.

Only bright regions are extracted: activation maps are post-ReLU, so peaks of
interest are always brighter than their surroundings.  The map is quantized
into uniform level bins, a component tree of the upper level sets is built
with union-find, and regions are selected by the stability criterion, a
diversity test against nested near-duplicates, and location non-maxima
suppression.

Conventions fixed here (the map format leaves them open):

* 4-connectivity;
* upper level set ``U_l = {p : level(p) >= l}``; the level-0 component is the
  whole grid;
* variation of a component ``R`` at level ``l`` is
  ``(|R_minus| - |R_plus|) / |R|`` where ``R_minus`` is the component of
  ``U_{l-delta}`` containing ``R`` (the whole grid once ``l - delta <= 0``)
  and ``R_plus`` is the largest component of ``U_{l+delta}`` inside ``R``
  (zero area above the top level);
* a region is reported where its variation is a local minimum along its
  branch (non-strict against both parent and children).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class Region:
    """One detected extremal region.

    ``pixels`` are (col, row) tuples forming a single 4-connected component;
    ``level`` is the quantized threshold at which the region is reported and
    ``variation`` its stability score (lower is more stable).
    """

    pixels: frozenset
    level: int
    variation: float

    @property
    def area(self) -> int:
        return len(self.pixels)


@dataclass
class DetectorParams:
    """Detection knobs.  ``delta`` is in activation units (see compute_delta)."""

    delta: float
    min_diversity: float = 0.7
    max_variation: float = 0.5
    min_area_px: int = 1
    level_count: int = 64

    def __post_init__(self):
        if not self.delta > 0:
            raise DataError(f"delta must be positive, got {self.delta}")
        if not 0.0 <= self.min_diversity <= 1.0:
            raise DataError(f"min_diversity must be in [0,1], got {self.min_diversity}")
        if not self.max_variation > 0:
            raise DataError(f"max_variation must be positive, got {self.max_variation}")
        if self.min_area_px < 1:
            raise DataError(f"min_area_px must be >= 1, got {self.min_area_px}")
        if self.level_count < 2:
            raise DataError(f"level_count must be >= 2, got {self.level_count}")


def compute_delta(value_sample, fraction: float = 0.6) -> float:
    """Level step from the empirical ``fraction``-quantile of sampled values.

    The quantile is floored at machine-epsilon times the sample maximum so a
    heavily zero-dominated sample still yields a usable positive step.
    Raises on an all-zero sample, which carries no level structure at all.
    """
    sample = np.asarray(value_sample, dtype=np.float64).ravel()
    if sample.size == 0:
        raise DataError("empty activation sample")
    if not 0.0 < fraction < 1.0:
        raise DataError(f"fraction must be in (0,1), got {fraction}")
    vmax = float(sample.max())
    if vmax <= 0.0:
        raise DataError("degenerate activations: sample is all zero")
    q = float(np.quantile(sample, fraction))
    return max(q, float(np.finfo(np.float64).eps) * vmax)


def quantize_map(grid: np.ndarray, level_count: int) -> tuple[np.ndarray, float]:
    """Quantize a non-negative map into ``level_count`` uniform bins.

    Returns (integer level map in [0, level_count), bin width).  Bin width is
    ``max / level_count``; the maximum value lands in the top bin.
    """
    vmax = float(grid.max())
    bin_width = vmax / level_count
    levels = np.minimum((grid / bin_width).astype(np.int64), level_count - 1)
    return levels, bin_width


def detect_msers(grid, params: DetectorParams) -> list[Region]:
    """Detect bright MSERs on a 2-d map; returns regions, most-level first.

    Output regions are mutually nested or disjoint, ordered by reporting
    level descending then minimum raveled pixel index.  Flat maps (all-zero
    or constant) produce an empty list.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2:
        raise DataError(f"map must be 2-d, got shape {grid.shape}")
    if grid.size == 0:
        raise DataError("map is empty")
    if not np.all(np.isfinite(grid)):
        raise DataError("map contains non-finite values")
    if np.any(grid < 0):
        raise DataError("map contains negative values")
    if grid.max() == grid.min():
        return []

    levels, bin_width = quantize_map(grid, params.level_count)
    delta_bins = max(1, int(round(params.delta / bin_width)))
    tree = _build_tree(levels, params.level_count)
    chosen = _select_regions(tree, delta_bins, params)
    regions = _extract_regions(levels, tree, chosen)
    h, w = grid.shape
    regions.sort(key=lambda r: (-r.level, min(p[1] * w + p[0] for p in r.pixels)))
    return regions


class _Tree:
    """Level-indexed component tree: one node per (component, level) pair."""

    __slots__ = ("level", "area", "parent", "root_pixel", "shape")

    def __init__(self):
        self.level: list[int] = []
        self.area: list[int] = []
        self.parent: list[int] = []
        self.root_pixel: list[int] = []
        self.shape: tuple[int, int] = (0, 0)


def _build_tree(levels: np.ndarray, level_count: int) -> _Tree:
    """Union-find construction over pixels with level >= 1.

    Pixels are merged brightest level first; after each level the live roots
    are snapshotted as tree nodes.  The level-0 node is always the full grid
    (every pixel satisfies level >= 0), so only active pixels take part in
    the union-find.
    """
    h, w = levels.shape
    n_px = h * w
    flat = levels.ravel()

    uf_parent = np.full(n_px, -1, dtype=np.int64)
    uf_size = np.zeros(n_px, dtype=np.int64)

    def find(x: int) -> int:
        root = x
        while uf_parent[root] != root:
            root = uf_parent[root]
        while uf_parent[x] != root:
            uf_parent[x], x = root, uf_parent[x]
        return root

    # Raveled pixel ids grouped by level, descending.
    order = np.argsort(-flat, kind="stable")
    order = order[flat[order] >= 1]

    tree = _Tree()
    tree.shape = (h, w)
    roots: set[int] = set()
    node_of_root: dict[int, int] = {}
    pos = 0
    top = int(flat.max(initial=0))

    for lvl in range(min(top, level_count - 1), 0, -1):
        while pos < order.size and flat[order[pos]] == lvl:
            p = int(order[pos])
            pos += 1
            uf_parent[p] = p
            uf_size[p] = 1
            roots.add(p)
            r = p // w
            c = p % w
            for q in (
                p - w if r > 0 else -1,
                p + w if r < h - 1 else -1,
                p - 1 if c > 0 else -1,
                p + 1 if c < w - 1 else -1,
            ):
                if q < 0 or uf_parent[q] < 0:
                    continue
                ra, rb = find(p), find(q)
                if ra == rb:
                    continue
                if uf_size[ra] < uf_size[rb] or (uf_size[ra] == uf_size[rb] and ra > rb):
                    ra, rb = rb, ra
                uf_parent[rb] = ra
                uf_size[ra] += uf_size[rb]
                roots.discard(rb)
        new_node_of_root: dict[int, int] = {}
        for root in sorted(roots):
            node = len(tree.level)
            tree.level.append(lvl)
            tree.area.append(int(uf_size[root]))
            tree.parent.append(-1)
            tree.root_pixel.append(root)
            new_node_of_root[root] = node
        for old_root, old_node in node_of_root.items():
            tree.parent[old_node] = new_node_of_root[find(old_root)]
        node_of_root = new_node_of_root

    # Level-0 node: the whole grid as one component.
    root_node = len(tree.level)
    tree.level.append(0)
    tree.area.append(n_px)
    tree.parent.append(-1)
    tree.root_pixel.append(-1)
    for old_node in node_of_root.values():
        tree.parent[old_node] = root_node
    return tree


def _node_variations(tree: _Tree, delta_bins: int) -> np.ndarray:
    n = len(tree.level)
    area = np.asarray(tree.area, dtype=np.float64)

    # Area of the containing component delta levels below (whole grid at 0).
    a_minus = np.empty(n)
    for i in range(n):
        anc = i
        for _ in range(delta_bins):
            if tree.parent[anc] == -1:
                break
            anc = tree.parent[anc]
        a_minus[i] = tree.area[anc]

    # Largest component exactly delta levels above, inside each node.
    a_plus = np.zeros(n)
    for i in range(n):
        if tree.level[i] < delta_bins:
            continue
        anc = i
        for _ in range(delta_bins):
            anc = tree.parent[anc]
        if tree.area[i] > a_plus[anc]:
            a_plus[anc] = tree.area[i]

    return (a_minus - a_plus) / area


def _select_regions(tree: _Tree, delta_bins: int, params: DetectorParams) -> list[tuple[int, float]]:
    """Apply stability, deduplication and diversity; return (node, variation)."""
    n = len(tree.level)
    q = _node_variations(tree, delta_bins)

    child_min = np.full(n, np.inf)
    for i in range(n):
        p = tree.parent[i]
        if p != -1 and q[i] < child_min[p]:
            child_min[p] = q[i]

    is_candidate = [False] * n
    for i in range(n):
        # Level 0 is the whole grid at threshold zero, never a bright region.
        if tree.level[i] == 0:
            continue
        if q[i] > params.max_variation or tree.area[i] < params.min_area_px:
            continue
        p = tree.parent[i]
        if p != -1 and q[i] > q[p]:
            continue
        if q[i] > child_min[i]:
            continue
        is_candidate[i] = True

    # Group nodes that share the same pixel set: a node equals its parent's
    # set exactly when their areas agree.
    group = [-1] * n
    n_groups = 0
    for i in sorted(range(n), key=lambda j: tree.level[j]):
        p = tree.parent[i]
        if p != -1 and tree.area[i] == tree.area[p]:
            group[i] = group[p]
        else:
            group[i] = n_groups
            n_groups += 1

    # One representative per group: lowest variation, ties to higher level.
    rep: dict[int, int] = {}
    for i in range(n):
        if not is_candidate[i]:
            continue
        g = group[i]
        if g not in rep:
            rep[g] = i
        else:
            j = rep[g]
            if (q[i], -tree.level[i]) < (q[j], -tree.level[j]):
                rep[g] = i

    # Diversity: drop a region when a surviving ancestor of nearly the same
    # area is at least as stable.  Ancestors are decided first (lower levels).
    survived: dict[int, int] = {}
    for g, i in sorted(rep.items(), key=lambda kv: (tree.level[kv[1]], kv[1])):
        anc = tree.parent[i]
        keep = True
        while anc != -1:
            ga = group[anc]
            if ga != g and ga in survived:
                j = survived[ga]
                if (tree.area[j] - tree.area[i]) / tree.area[j] < params.min_diversity and q[j] <= q[i]:
                    keep = False
                break
            anc = tree.parent[anc]
        if keep:
            survived[g] = i
    return [(i, float(q[i])) for i in survived.values()]


def _extract_regions(levels: np.ndarray, tree: _Tree, chosen: list[tuple[int, float]]) -> list[Region]:
    """Materialize pixel sets by flood fill, then location non-maxima suppression."""
    h, w = levels.shape
    flat = levels.ravel()
    out = []
    for node, variation in chosen:
        lvl = tree.level[node]
        if lvl == 0:
            pixels = frozenset((c, r) for r in range(h) for c in range(w))
        else:
            seed = tree.root_pixel[node]
            seen = {seed}
            stack = [seed]
            while stack:
                p = stack.pop()
                r, c = p // w, p % w
                for nb in (
                    p - w if r > 0 else -1,
                    p + w if r < h - 1 else -1,
                    p - 1 if c > 0 else -1,
                    p + 1 if c < w - 1 else -1,
                ):
                    if nb >= 0 and nb not in seen and flat[nb] >= lvl:
                        seen.add(nb)
                        stack.append(nb)
            pixels = frozenset((p % w, p // w) for p in seen)
        out.append(Region(pixels=pixels, level=lvl, variation=variation))

    # Among regions whose centroids round to the same pixel keep the most
    # stable one (ties: higher level, then smaller first pixel).
    best: dict[tuple[int, int], Region] = {}
    for region in out:
        cols = [p[0] for p in region.pixels]
        rows = [p[1] for p in region.pixels]
        key = (
            int(np.floor(sum(cols) / len(cols) + 0.5)),
            int(np.floor(sum(rows) / len(rows) + 0.5)),
        )
        other = best.get(key)
        if other is None or _nms_rank(region, w) < _nms_rank(other, w):
            best[key] = region
    return list(best.values())


def _nms_rank(region: Region, w: int):
    return (region.variation, -region.level, min(p[1] * w + p[0] for p in region.pixels))
