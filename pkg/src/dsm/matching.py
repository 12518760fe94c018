"""Spatial verification between two per-channel feature collections.

Channels act as visual words: tentative correspondences pair features only
within the same channel.  Every correspondence proposes one 5-dof upright
transform (anisotropic scale, vertical shear, translation — no rotation),
obtained by mapping both ellipses to the unit circle while keeping the
y-direction.  All hypotheses are evaluated exhaustively; promising ones are
polished by least-squares refits on their inliers.  The similarity of two
images is simply the best hypothesis' inlier count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .features import FeatureCollection, LocalFeature


@dataclass(frozen=True)
class Transform5:
    """Upright affine map (x,y) -> (a*x + tx, b*x + c*y + ty).

    The linear part [[a,0],[b,c]] is lower-triangular with positive diagonal,
    which encodes exactly translation + anisotropic scale + vertical shear.
    """

    a: float
    b: float
    c: float
    tx: float
    ty: float

    @staticmethod
    def identity() -> "Transform5":
        return Transform5(1.0, 0.0, 1.0, 0.0, 0.0)

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.a, 0.0], [self.b, self.c]])

    @property
    def scale(self) -> float:
        """sqrt of the determinant of the linear part."""
        return math.sqrt(self.a * self.c)

    def apply(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        out = np.empty_like(pts, dtype=np.float64)
        out[..., 0] = self.a * pts[..., 0] + self.tx
        out[..., 1] = self.b * pts[..., 0] + self.c * pts[..., 1] + self.ty
        return out

    def compose(self, other: "Transform5") -> "Transform5":
        """self after other: x -> self(other(x)).  Closed under composition."""
        return Transform5(
            a=self.a * other.a,
            b=self.b * other.a + self.c * other.b,
            c=self.c * other.c,
            tx=self.a * other.tx + self.tx,
            ty=self.b * other.tx + self.c * other.ty + self.ty,
        )

    def invert(self) -> "Transform5":
        ia = 1.0 / self.a
        ic = 1.0 / self.c
        ib = -self.b / (self.a * self.c)
        return Transform5(a=ia, b=ib, c=ic, tx=-(ia * self.tx), ty=-(ib * self.tx + ic * self.ty))


@dataclass(frozen=True, eq=False)
class Correspondence:
    channel: int
    p1: LocalFeature
    p2: LocalFeature


@dataclass
class MatchParams:
    err_px: float = 2.0
    scale_factor_max: float = 3.0
    lo_rounds: int = 3


@dataclass
class MatchResult:
    """Winning transform plus its one-to-one inlier correspondences per channel."""

    transform: Transform5
    inliers_by_channel: list[list[Correspondence]] = field(default_factory=list)
    residual: float = 0.0
    scale_pair: tuple[int, int] | None = None

    @property
    def similarity(self) -> int:
        return sum(len(m) for m in self.inliers_by_channel)

    def all_inliers(self) -> list[Correspondence]:
        return [c for ms in self.inliers_by_channel for c in ms]


def similarity(result: MatchResult) -> int:
    """Total inlier count over all channels."""
    return result.similarity


def _canonical_key(f: LocalFeature):
    return (-f.strength, f.scale_index, f.channel, f.mu[0], f.mu[1])


def tentative_correspondences(p1: FeatureCollection, p2: FeatureCollection) -> list[Correspondence]:
    """All within-channel feature pairs, strongest first.

    Both sides are sorted canonically before taking the product, so the
    output (and everything downstream) is invariant to input permutation.
    """
    if p1.channels != p2.channels:
        raise DataError(f"channel counts differ: {p1.channels} vs {p2.channels}")
    out: list[Correspondence] = []
    for j in range(p1.channels):
        left = sorted(p1.per_channel[j], key=_canonical_key)
        right = sorted(p2.per_channel[j], key=_canonical_key)
        for f1 in left:
            for f2 in right:
                out.append(Correspondence(channel=j, p1=f1, p2=f2))
    return out


def _cholesky2(s: np.ndarray) -> tuple[float, float, float]:
    """Lower Cholesky factor (l11, l21, l22) of a symmetric PD 2x2 matrix."""
    s11 = float(s[0, 0])
    if s11 <= 0.0:
        raise DataError("sigma not positive definite")
    l11 = math.sqrt(s11)
    l21 = float(s[0, 1]) / l11
    rest = float(s[1, 1]) - l21 * l21
    if rest <= 0.0:
        raise DataError("sigma not positive definite")
    return l11, l21, math.sqrt(rest)


def hypothesis_from_correspondence(
    corr: Correspondence, scale_factor_max: float = 3.0
) -> Transform5 | None:
    """5-dof transform from a single correspondence, or None if the implied
    scale change exceeds the gate.

    Both ellipses are mapped to the unit circle by their inverse Cholesky
    factors (lower-triangular, so the y-direction is preserved); chaining
    image-1 -> circle -> image-2 gives the linear part M = L2 L1^-1.
    """
    a1, b1, c1 = _cholesky2(corr.p1.sigma)
    a2, b2, c2 = _cholesky2(corr.p2.sigma)
    a = a2 / a1
    b = (b2 - c2 * b1 / c1) / a1
    c = c2 / c1
    s = math.sqrt(a * c)
    if s > scale_factor_max or s < 1.0 / scale_factor_max:
        return None
    mu1, mu2 = corr.p1.mu, corr.p2.mu
    tx = float(mu2[0] - a * mu1[0])
    ty = float(mu2[1] - (b * mu1[0] + c * mu1[1]))
    return Transform5(a=a, b=b, c=c, tx=tx, ty=ty)


class _CorrArrays:
    """Flat numpy views of a correspondence list, shared by all evaluations.

    Position gates run in float32: at activation-grid magnitudes the rounding
    is ~1e-5 px, far below the 2 px threshold, and using one precision for
    both the bulk screen and the refit recounts keeps them consistent.
    """

    __slots__ = (
        "n", "n1", "n2", "i1", "i2", "x1", "y1", "x2", "y2", "ratio",
        "fx1", "fy1", "chol1", "chol2", "mu1", "mu2", "feats1", "feats2",
        "ch1",
    )

    def __init__(self, corrs: list[Correspondence]):
        n = self.n = len(corrs)
        feats1: list[LocalFeature] = []
        feats2: list[LocalFeature] = []
        seen1: dict[int, int] = {}
        seen2: dict[int, int] = {}
        i1 = np.empty(n, dtype=np.int32)
        i2 = np.empty(n, dtype=np.int32)
        for t, c in enumerate(corrs):
            key = id(c.p1)
            idx = seen1.get(key)
            if idx is None:
                idx = seen1[key] = len(feats1)
                feats1.append(c.p1)
            i1[t] = idx
            key = id(c.p2)
            idx = seen2.get(key)
            if idx is None:
                idx = seen2[key] = len(feats2)
                feats2.append(c.p2)
            i2[t] = idx
        self.i1, self.i2 = i1, i2
        self.n1, self.n2 = len(feats1), len(feats2)
        self.feats1, self.feats2 = feats1, feats2
        self.ch1 = np.array([f.channel for f in feats1], dtype=np.int64)

        self.mu1 = np.array([f.mu for f in feats1], dtype=np.float64).reshape(-1, 2)
        self.mu2 = np.array([f.mu for f in feats2], dtype=np.float64).reshape(-1, 2)
        sig1 = np.array([f.sigma for f in feats1], dtype=np.float64).reshape(-1, 2, 2)
        sig2 = np.array([f.sigma for f in feats2], dtype=np.float64).reshape(-1, 2, 2)
        self.chol1 = _cholesky2_batch(sig1)
        self.chol2 = _cholesky2_batch(sig2)
        det1 = sig1[:, 0, 0] * sig1[:, 1, 1] - sig1[:, 0, 1] * sig1[:, 1, 0]
        det2 = sig2[:, 0, 0] * sig2[:, 1, 1] - sig2[:, 0, 1] * sig2[:, 1, 0]

        self.fx1 = self.mu1[:, 0].astype(np.float32)
        self.fy1 = self.mu1[:, 1].astype(np.float32)
        self.x1 = self.fx1[i1]
        self.y1 = self.fy1[i1]
        self.x2 = self.mu2[i2, 0].astype(np.float32)
        self.y2 = self.mu2[i2, 1].astype(np.float32)
        self.ratio = ((det2[i2] / det1[i1]) ** 0.25).astype(np.float32)


def _cholesky2_batch(sig: np.ndarray) -> np.ndarray:
    """(n,3) lower Cholesky factors (l11, l21, l22) of (n,2,2) PD matrices."""
    l11 = np.sqrt(sig[:, 0, 0])
    l21 = sig[:, 0, 1] / l11
    rest = sig[:, 1, 1] - l21 * l21
    if np.any(rest <= 0) or np.any(sig[:, 0, 0] <= 0):
        raise DataError("sigma not positive definite")
    return np.stack([l11, l21, np.sqrt(rest)], axis=1)


class _HypTable:
    """All accepted hypotheses as flat parameter arrays, in corr order."""

    __slots__ = ("corr_index", "a", "b", "c", "tx", "ty", "s", "m")

    def __init__(self, arr: _CorrArrays, scale_factor_max: float):
        c1 = arr.chol1[arr.i1]
        c2 = arr.chol2[arr.i2]
        a = c2[:, 0] / c1[:, 0]
        b = (c2[:, 1] - c2[:, 2] * c1[:, 1] / c1[:, 2]) / c1[:, 0]
        c = c2[:, 2] / c1[:, 2]
        s = np.sqrt(a * c)
        keep = (s <= scale_factor_max) & (s * scale_factor_max >= 1.0)
        self.corr_index = np.nonzero(keep)[0]
        x1 = arr.mu1[arr.i1[self.corr_index]]
        x2 = arr.mu2[arr.i2[self.corr_index]]
        self.a = a[self.corr_index]
        self.b = b[self.corr_index]
        self.c = c[self.corr_index]
        self.s = s[self.corr_index]
        self.tx = x2[:, 0] - self.a * x1[:, 0]
        self.ty = x2[:, 1] - (self.b * x1[:, 0] + self.c * x1[:, 1])
        self.m = len(self.corr_index)

    def transform(self, row: int) -> Transform5:
        return Transform5(
            a=float(self.a[row]), b=float(self.b[row]), c=float(self.c[row]),
            tx=float(self.tx[row]), ty=float(self.ty[row]),
        )


def _greedy_assign(arr: _CorrArrays, err2_row: np.ndarray, cand_row: np.ndarray):
    """One-to-one inlier extraction: lowest position error claims first."""
    idx = np.nonzero(cand_row)[0]
    if idx.size == 0:
        return [], 0.0
    idx = idx[np.argsort(err2_row[idx], kind="stable")]
    used1 = np.zeros(arr.n1, dtype=bool)
    used2 = np.zeros(arr.n2, dtype=bool)
    chosen: list[int] = []
    residual = 0.0
    e = err2_row
    i1, i2 = arr.i1, arr.i2
    for i in idx.tolist():
        k1 = i1[i]
        k2 = i2[i]
        if used1[k1] or used2[k2]:
            continue
        used1[k1] = True
        used2[k2] = True
        chosen.append(i)
        residual += float(e[i])
    return chosen, residual


def _evaluate(arr: _CorrArrays, t: Transform5, err_px: float, scale_factor_max: float):
    """Gate + greedy assignment for a single transform."""
    ex = np.float32(t.a) * arr.x1 + np.float32(t.tx) - arr.x2
    ey = np.float32(t.b) * arr.x1 + np.float32(t.c) * arr.y1 + np.float32(t.ty) - arr.y2
    err2 = ex * ex + ey * ey
    rel = arr.ratio / np.float32(t.scale)
    cand = (err2 <= np.float32(err_px * err_px))
    cand &= rel <= np.float32(scale_factor_max)
    cand &= rel >= np.float32(1.0 / scale_factor_max)
    return _greedy_assign(arr, err2, cand)


def count_inliers(
    t: Transform5,
    corrs: list[Correspondence],
    err_px: float = 2.0,
    scale_factor_max: float = 3.0,
) -> tuple[list[Correspondence], float]:
    """Inliers of ``t`` among ``corrs`` and their summed squared error.

    A correspondence qualifies when its transformed center lands within
    ``err_px`` of the target center and its feature scale ratio agrees with
    the hypothesis scale within ``scale_factor_max``; each feature is then
    used at most once, lowest-error pairs claiming first.
    """
    if not corrs:
        return [], 0.0
    arr = _CorrArrays(corrs)
    chosen, residual = _evaluate(arr, t, err_px, scale_factor_max)
    return [corrs[i] for i in chosen], residual


def refine_lsq(inliers: list[Correspondence]) -> Transform5 | None:
    """Least-squares refit of the transform on inlier centers.

    The x equation fits (a, tx) from x1 alone; the y equation fits
    (b, c, ty) from (x1, y1).  Returns None (keep the previous transform)
    when either system is rank-deficient or the fit loses orientation.
    """
    if len(inliers) < 3:
        return None
    x1 = np.array([c.p1.mu[0] for c in inliers])
    y1 = np.array([c.p1.mu[1] for c in inliers])
    x2 = np.array([c.p2.mu[0] for c in inliers])
    y2 = np.array([c.p2.mu[1] for c in inliers])

    ax = np.stack([x1, np.ones_like(x1)], axis=1)
    if np.linalg.matrix_rank(ax) < 2:
        return None
    (a, tx), *_ = np.linalg.lstsq(ax, x2, rcond=None)

    ay = np.stack([x1, y1, np.ones_like(x1)], axis=1)
    if np.linalg.matrix_rank(ay) < 3:
        return None
    (b, c, ty), *_ = np.linalg.lstsq(ay, y2, rcond=None)

    if a <= 0.0 or c <= 0.0:
        return None
    return Transform5(a=float(a), b=float(b), c=float(c), tx=float(tx), ty=float(ty))


_BATCH = 48

# Work buffers are recycled across match() calls (thread-locally, so
# concurrent matches stay independent): reallocating tens of MB per call
# costs more in page faults than the arithmetic itself.
_scratch = __import__("threading").local()


def _pool(kind: str, shapes: tuple) -> tuple:
    store = getattr(_scratch, kind, None)
    if store is None:
        store = {}
        setattr(_scratch, kind, store)
    got = store.get(shapes)
    if got is None:
        if len(store) > 6:
            store.clear()
        got = tuple(np.empty(shape, dtype) for shape, dtype in shapes)
        store[shapes] = got
    return got


def _eval_buffers(rows: int, n: int):
    return _pool("eval_bufs", (
        ((rows, n), np.float32),  # err2
        ((rows, n), np.float32),  # ey
        ((rows, n), bool),        # cand
        ((rows, n), bool),        # tmp
    ))


def _feat_buffers(m: int, f: int):
    return _pool("feat_bufs", (
        ((m, f), np.float32),  # px
        ((m, f), np.float32),  # py
        ((m, f), np.float32),  # scratch
        ((m, f), np.int32),    # cell index accumulator
        ((m, f), np.int32),    # cast / gather scratch
    ))


class _CellCounter:
    """Per-channel histogram of target centers in coarse grid cells.

    ``bound(...)`` sums, per hypothesis, the 3x3-neighborhood counts at every
    transformed source center.  With cells at least twice the inlier radius,
    each source feature's true candidates all land inside that neighborhood,
    so the sum can never undercount: it upper-bounds the candidate count of
    the full evaluation and is safe for pruning.
    """

    def __init__(self, arr: "_CorrArrays", channels1: np.ndarray, err_px: float):
        fx2 = np.array([f.mu[0] for f in arr.feats2], dtype=np.float32)
        fy2 = np.array([f.mu[1] for f in arr.feats2], dtype=np.float32)
        ch2 = np.array([f.channel for f in arr.feats2], dtype=np.int64)
        k = int(max(channels1.max(), ch2.max())) + 1

        cell = max(2.0 * err_px, 4.0)
        self.inv_x = np.float32(1.0 / cell)
        self.inv_y = np.float32(1.0 / cell)
        xmin = float(fx2.min())
        ymin = float(fy2.min())
        # One pad cell below the data so the 3x3 window never leaves the grid.
        self.off_x = np.float32(1.0 - xmin / cell)
        self.off_y = np.float32(1.0 - ymin / cell)
        gx = int(np.floor((float(fx2.max()) - xmin) / cell)) + 3
        gy = int(np.floor((float(fy2.max()) - ymin) / cell)) + 3
        self.gx, self.gy = gx, gy

        cx = ((fx2 - np.float32(xmin)) * self.inv_x).astype(np.int64) + 1
        cy = ((fy2 - np.float32(ymin)) * self.inv_y).astype(np.int64) + 1
        hist = np.zeros((k, gy, gx), dtype=np.int32)
        np.add.at(hist, (ch2, cy, cx), 1)
        padded = np.zeros((k, gy + 2, gx + 2), dtype=np.int32)
        padded[:, 1:-1, 1:-1] = hist
        window = np.zeros((k, gy, gx), dtype=np.int32)
        for dy in range(3):
            for dx in range(3):
                window += padded[:, dy:dy + gy, dx:dx + gx]
        self.flat = np.ascontiguousarray(window.reshape(-1))
        self.ch_base = (channels1.astype(np.int32) * np.int32(gy * gx))

    def bound(self, px: np.ndarray, py: np.ndarray, fbuf: np.ndarray,
              ib1: np.ndarray, ib2: np.ndarray) -> np.ndarray:
        np.multiply(py, self.inv_y, out=fbuf)
        fbuf += self.off_y
        np.clip(fbuf, 0.0, self.gy - 1, out=fbuf)
        ib1[...] = fbuf
        ib1 *= np.int32(self.gx)
        np.multiply(px, self.inv_x, out=fbuf)
        fbuf += self.off_x
        np.clip(fbuf, 0.0, self.gx - 1, out=fbuf)
        ib2[...] = fbuf
        ib1 += ib2
        ib1 += self.ch_base[None, :]
        np.take(self.flat, ib1, out=ib2)
        return ib2.sum(axis=1, dtype=np.int64)


def match(p1: FeatureCollection, p2: FeatureCollection, params: MatchParams | None = None) -> MatchResult:
    """Exhaustive single-correspondence matching with local optimization.

    Every tentative correspondence contributes one hypothesis; hypotheses are
    scored by inlier count, and any that beats the running best gets up to
    ``lo_rounds`` refit-and-recount rounds.  Ties resolve by lower residual,
    then by earlier hypothesis.  With no usable hypothesis the result is the
    identity transform with no inliers.
    """
    params = params or MatchParams()
    corrs = tentative_correspondences(p1, p2)
    k = p1.channels
    if not corrs:
        return MatchResult(Transform5.identity(), [[] for _ in range(k)])

    arr = _CorrArrays(corrs)
    hyp = _HypTable(arr, params.scale_factor_max)
    m, n, n1 = hyp.m, arr.n, arr.n1

    err_sq = np.float32(params.err_px * params.err_px)
    smax = np.float32(params.scale_factor_max)
    smin = np.float32(1.0 / params.scale_factor_max)

    best_count = 0
    best_residual = 0.0
    best_fullres = 0.0
    best_index = -1
    best_transform = Transform5.identity()
    best_chosen: list[int] = []

    # Stage 1 (vectorized over all hypotheses): predicted source centers and
    # a cheap inlier-count upper bound from coarse position histograms.
    m_round = -(-max(m, 1) // 1024) * 1024
    px_b, py_b, fs_b, ib1_b, ib2_b = _feat_buffers(m_round, n1)
    px, py, fs = px_b[:m], py_b[:m], fs_b[:m]
    a32 = hyp.a.astype(np.float32)
    b32 = hyp.b.astype(np.float32)
    c32 = hyp.c.astype(np.float32)
    tx32 = hyp.tx.astype(np.float32)
    ty32 = hyp.ty.astype(np.float32)
    s32 = hyp.s.astype(np.float32)
    np.multiply(a32[:, None], arr.fx1[None, :], out=px)
    px += tx32[:, None]
    np.multiply(b32[:, None], arr.fx1[None, :], out=py)
    np.multiply(c32[:, None], arr.fy1[None, :], out=fs)
    py += fs
    py += ty32[:, None]

    # The histogram bound only prunes once the incumbent count clearly
    # exceeds what a random placement would score (the expected 3x3-window
    # sum over all source features), so its cost is deferred until then.
    ub: list | None = None
    cell = max(2.0 * params.err_px, 4.0)
    gx = int(np.floor((arr.mu2[:, 0].max() - arr.mu2[:, 0].min()) / cell)) + 3
    gy = int(np.floor((arr.mu2[:, 1].max() - arr.mu2[:, 1].min()) / cell)) + 3
    ub_threshold = 1.3 * 9.0 * n / float(gx * gy)

    # Near-duplicate dedup keys.  Scoring runs in float32, so transforms that
    # agree below float32-visible resolution score identically; rounding the
    # parameters collapses such duplicates onto one key, and the later copy
    # could only ever tie (losing on hypothesis index).
    ra = np.round(hyp.a, 9).tolist()
    rb = np.round(hyp.b, 9).tolist()
    rc = np.round(hyp.c, 9).tolist()
    rtx = np.round(hyp.tx, 6).tolist()
    rty = np.round(hyp.ty, 6).tolist()
    seen_params: set[tuple] = set()

    # Stage 2: full correspondence-space evaluation, batched, only for
    # hypotheses whose bound still reaches the incumbent count.
    err2_b, ey_b, cand_b, tmp_b = _eval_buffers(_BATCH, n)
    pending: list[int] = []

    def flush() -> None:
        nonlocal best_count, best_residual, best_fullres, best_index
        nonlocal best_transform, best_chosen, ub
        rows = len(pending)
        sel = np.asarray(pending, dtype=np.int64)
        err2 = err2_b[:rows]
        ey = ey_b[:rows]
        cand = cand_b[:rows]
        tmp = tmp_b[:rows]
        np.take(px[sel], arr.i1, axis=1, out=err2)
        err2 -= arr.x2[None, :]
        np.square(err2, out=err2)
        np.take(py[sel], arr.i1, axis=1, out=ey)
        ey -= arr.y2[None, :]
        np.square(ey, out=ey)
        err2 += ey
        np.less_equal(err2, err_sq, out=cand)
        # Scale gate: ratio within [s/max, s*max], without materializing the
        # ratio/s matrix.
        srow = s32[sel][:, None]
        np.less_equal(arr.ratio[None, :], smax * srow, out=tmp)
        cand &= tmp
        np.greater_equal(arr.ratio[None, :], smin * srow, out=tmp)
        cand &= tmp
        bounds = np.count_nonzero(cand, axis=1)

        for row in range(rows):
            # The candidate count bounds the one-to-one count from above, so
            # rows below the best are skipped outright.  A row tying the
            # bound can only win by using every candidate, making its
            # residual the full candidate-error sum; comparing that against
            # both the incumbent's residual and its own full sum skips the
            # row while staying exact for bitwise-duplicate hypotheses.
            bnd = int(bounds[row])
            if bnd < best_count:
                continue
            fr = None
            if bnd == best_count:
                fr = float(err2[row][cand[row]].sum(dtype=np.float64))
                if fr >= best_fullres and fr >= best_residual:
                    continue
            g = pending[row]
            chosen, residual = _greedy_assign(arr, err2[row], cand[row])
            count = len(chosen)
            if count == 0:
                continue
            hyp_index = int(hyp.corr_index[g])
            if not _beats(count, residual, hyp_index, best_count, best_residual, best_index):
                continue

            t = hyp.transform(g)
            current = (t, chosen, residual, count)
            for _ in range(params.lo_rounds):
                refined = refine_lsq([corrs[i] for i in current[1]])
                if refined is None:
                    break
                r_chosen, r_residual = _evaluate(arr, refined, params.err_px, params.scale_factor_max)
                r_count = len(r_chosen)
                if r_count > current[3] or (r_count == current[3] and r_residual < current[2]):
                    current = (refined, r_chosen, r_residual, r_count)
                else:
                    break
            t, chosen, residual, count = current
            if _beats(count, residual, hyp_index, best_count, best_residual, best_index):
                if fr is None:
                    fr = float(err2[row][cand[row]].sum(dtype=np.float64))
                best_count = count
                best_residual = residual
                best_fullres = fr
                best_index = hyp_index
                best_transform = t
                best_chosen = chosen
        pending.clear()
        if ub is None and best_count > ub_threshold:
            counter = _CellCounter(arr, arr.ch1, params.err_px)
            ub = counter.bound(px, py, fs, ib1_b[:m], ib2_b[:m]).tolist()

    for g in range(m):
        if ub is not None and ub[g] < best_count:
            continue
        key = (ra[g], rb[g], rc[g], rtx[g], rty[g])
        if key in seen_params:
            continue
        seen_params.add(key)
        pending.append(g)
        if len(pending) == _BATCH:
            flush()
    if pending:
        flush()

    by_channel: list[list[Correspondence]] = [[] for _ in range(k)]
    for i in sorted(best_chosen):
        by_channel[corrs[i].channel].append(corrs[i])
    return MatchResult(best_transform, by_channel, best_residual)


def _beats(count, residual, index, best_count, best_residual, best_index) -> bool:
    if count != best_count:
        return count > best_count
    if residual != best_residual:
        return residual < best_residual
    if best_index == -1:  # incumbent is the identity sentinel
        return False
    return index < best_index


def match_multiscale(
    s1: FeatureCollection, s2: FeatureCollection, params: MatchParams | None = None
) -> MatchResult:
    """Best match over every (scale of image 1, scale of image 2) combination.

    Similarity of the pair is the maximum over combinations; ties prefer the
    lower residual, then the lexicographically first scale pair.
    """
    params = params or MatchParams()
    parts1 = s1.split_by_scale()
    parts2 = s2.split_by_scale()
    k = max(s1.channels, s2.channels)
    best: MatchResult | None = None
    for i in sorted(parts1):
        for j in sorted(parts2):
            result = match(parts1[i], parts2[j], params)
            result.scale_pair = (i, j)
            if best is None:
                best = result
            elif (-result.similarity, result.residual) < (-best.similarity, best.residual):
                best = result
    if best is None:
        best = MatchResult(Transform5.identity(), [[] for _ in range(k)])
    return best
