"""Independent reference implementations used to cross-check the package.

Everything here is deliberately brute force: per-level thresholding instead
of an incremental component tree, exhaustive assignment search instead of a
greedy matcher, dense linear algebra instead of sparse iterative solvers.
Slow and obvious beats fast and clever for an oracle.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage


# ---------------------------------------------------------------------------
# Extremal-region oracle: threshold at every quantized level independently.
# ---------------------------------------------------------------------------


def mser_reference(grid, delta, min_diversity=0.7, max_variation=0.5,
                   min_area_px=1, level_count=64):
    """Bright MSERs by explicit per-level labeling.

    Returns a list of (frozenset of (col,row), level, variation) sorted by
    level descending then smallest raveled pixel index, mirroring the
    conventions the detector commits to.
    """
    grid = np.asarray(grid, dtype=np.float64)
    h, w = grid.shape
    if grid.max() == grid.min():
        return []

    bin_width = grid.max() / level_count
    levels = np.minimum((grid / bin_width).astype(np.int64), level_count - 1)
    delta_bins = max(1, int(round(delta / bin_width)))
    top = int(levels.max())

    # components[l] = list of frozensets of (col,row); level 0 is the grid.
    everything = frozenset((c, r) for r in range(h) for c in range(w))
    components = {0: [everything]}
    for lvl in range(1, top + 1):
        labeled, count = ndimage.label(levels >= lvl)
        comps = []
        for idx in range(1, count + 1):
            rows, cols = np.nonzero(labeled == idx)
            comps.append(frozenset(zip(cols.tolist(), rows.tolist())))
        components[lvl] = comps

    def containing(lvl, pixels):
        """Area of the component at ``lvl`` that contains ``pixels``."""
        probe = next(iter(pixels))
        for comp in components[lvl]:
            if probe in comp:
                return len(comp)
        raise AssertionError("nesting violated")

    nodes = []  # (level, pixels, variation)
    for lvl in range(0, top + 1):
        for pixels in components[lvl]:
            lo = max(lvl - delta_bins, 0)
            a_minus = containing(lo, pixels)
            hi = lvl + delta_bins
            a_plus = 0
            if hi <= top:
                for comp in components[hi]:
                    if next(iter(comp)) in pixels and len(comp) > a_plus:
                        a_plus = len(comp)
            nodes.append((lvl, pixels, (a_minus - a_plus) / len(pixels)))

    def variation_of(lvl, pixels):
        for nl, np_, q in nodes:
            if nl == lvl and np_ == pixels:
                return q
        raise AssertionError("missing node")

    candidates = []
    for lvl, pixels, q in nodes:
        if lvl == 0 or q > max_variation or len(pixels) < min_area_px:
            continue
        parent_pixels = None
        probe = next(iter(pixels))
        for comp in components[lvl - 1]:
            if probe in comp:
                parent_pixels = comp
        if q > variation_of(lvl - 1, parent_pixels):
            continue
        child_ok = True
        if lvl + 1 <= top:
            for comp in components[lvl + 1]:
                if next(iter(comp)) in pixels and q > variation_of(lvl + 1, comp):
                    child_ok = False
        if child_ok:
            candidates.append((lvl, pixels, q))

    # Collapse identical pixel sets: keep lowest variation, then top level.
    by_set = {}
    for lvl, pixels, q in candidates:
        prev = by_set.get(pixels)
        if prev is None or (q, -lvl) < (prev[1], -prev[0]):
            by_set[pixels] = (lvl, q)
    reps = [(lvl, pixels, q) for pixels, (lvl, q) in by_set.items()]

    def min_index(pixels):
        return min(r * w + c for c, r in pixels)

    # Diversity: ancestors (strict supersets) are decided first.
    survivors = []
    for lvl, pixels, q in sorted(reps, key=lambda t: (t[0], min_index(t[1]))):
        ancestors = [s for s in survivors if pixels < s[1]]
        keep = True
        if ancestors:
            alvl, apx, aq = min(ancestors, key=lambda s: len(s[1]))
            if (len(apx) - len(pixels)) / len(apx) < min_diversity and aq <= q:
                keep = False
        if keep:
            survivors.append((lvl, pixels, q))

    # Location NMS on rounded centroids.
    best = {}
    for lvl, pixels, q in survivors:
        cx = sum(c for c, _ in pixels) / len(pixels)
        cy = sum(r for _, r in pixels) / len(pixels)
        key = (int(np.floor(cx + 0.5)), int(np.floor(cy + 0.5)))
        rank = (q, -lvl, min_index(pixels))
        if key not in best or rank < best[key][0]:
            best[key] = (rank, (pixels, lvl, q))
    out = [entry for _, entry in best.values()]
    out.sort(key=lambda t: (-t[1], min_index(t[0])))
    return out


# ---------------------------------------------------------------------------
# Matching oracle: every hypothesis, exact maximum one-to-one assignment.
# ---------------------------------------------------------------------------


def _max_assignment(edges, n_left):
    """Size of the largest one-to-one subset of (left, right) candidate edges,
    by plain recursion.  Fine for the tiny instances oracle tests use."""

    def rec(i, used_left, used_right):
        if i == len(edges):
            return 0
        best = rec(i + 1, used_left, used_right)
        l, r = edges[i]
        if l not in used_left and r not in used_right:
            best = max(best, 1 + rec(i + 1, used_left | {l}, used_right | {r}))
        return best

    return rec(0, frozenset(), frozenset())


def match_count_oracle(p1, p2, err_px=2.0, scale_factor_max=3.0):
    """Best inlier count over all single-correspondence hypotheses.

    Correspondences pair features of the same channel only.  Each hypothesis
    maps ellipse 1 onto ellipse 2 through their Cholesky factors; inlier
    candidacy uses the position error and the relative-scale gate; the count
    per hypothesis is the exact maximum one-to-one assignment.
    """
    corrs = []
    for j in range(len(p1.per_channel)):
        for f1 in p1.per_channel[j]:
            for f2 in p2.per_channel[j]:
                corrs.append((f1, f2))
    feats1 = list({id(f): f for f, _ in corrs}.values())
    feats2 = list({id(f): f for _, f in corrs}.values())
    index1 = {id(f): i for i, f in enumerate(feats1)}
    index2 = {id(f): i for i, f in enumerate(feats2)}

    best = 0
    for g1, g2 in corrs:
        l1 = np.linalg.cholesky(g1.sigma)
        l2 = np.linalg.cholesky(g2.sigma)
        m = l2 @ np.linalg.inv(l1)
        s = np.sqrt(np.linalg.det(m))
        if s > scale_factor_max or s < 1.0 / scale_factor_max:
            continue
        edges = []
        for f1, f2 in corrs:
            pred = m @ (np.asarray(f1.mu) - np.asarray(g1.mu)) + np.asarray(g2.mu)
            err = np.linalg.norm(pred - np.asarray(f2.mu))
            ratio = (np.linalg.det(f2.sigma) / np.linalg.det(f1.sigma)) ** 0.25
            rel = ratio / s
            if err <= err_px and 1.0 / scale_factor_max <= rel <= scale_factor_max:
                edges.append((index1[id(f1)], index2[id(f2)]))
        best = max(best, _max_assignment(edges, len(feats1)))
    return best


# ---------------------------------------------------------------------------
# Diffusion oracle: dense direct solve of the regularized linear system.
# ---------------------------------------------------------------------------


def dense_diffusion(graph, y, alpha):
    """Solve (I - alpha*S) f = y with a dense direct solver."""
    s = np.asarray(graph.normalized_adjacency.todense())
    return np.linalg.solve(np.eye(graph.n) - alpha * s, np.asarray(y, dtype=np.float64))
