"""SVG rendering of a spatial match: two panels, ellipses and lines.

Inlier features are drawn as 2-sigma ellipses in activation-grid coordinates
(uniformly scaled up for visibility), colored by channel from a fixed
palette, with a line connecting the two members of each correspondence.
Output is plain deterministic text: the same match renders to byte-identical
SVG on every run.
"""

from __future__ import annotations

import math

import numpy as np

from .matching import MatchResult

#: Fixed channel palette; channel j uses PALETTE[j % len(PALETTE)].
PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
    "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#aec7e8", "#ffbb78",
)

_MARGIN = 10.0
_GAP = 20.0


def _fmt(x: float) -> str:
    return f"{x:.3f}"


def _ellipse_svg(mu, sigma, color: str, ox: float, oy: float, zoom: float) -> str:
    """One 2-sigma ellipse, oriented by the eigenvectors of sigma."""
    vals, vecs = np.linalg.eigh(np.asarray(sigma, dtype=np.float64))
    vals = np.maximum(vals, 0.0)
    # eigh returns ascending order: vals[1] is the major axis
    angle = math.degrees(math.atan2(vecs[1, 1], vecs[0, 1]))
    rx = 2.0 * math.sqrt(vals[1]) * zoom
    ry = 2.0 * math.sqrt(vals[0]) * zoom
    cx = ox + float(mu[0]) * zoom
    cy = oy + float(mu[1]) * zoom
    return (
        f'<ellipse cx="0" cy="0" rx="{_fmt(rx)}" ry="{_fmt(ry)}" '
        f'transform="translate({_fmt(cx)},{_fmt(cy)}) rotate({_fmt(angle)})" '
        f'fill="none" stroke="{color}" stroke-width="1.5"/>'
    )


def render_match_svg(
    result: MatchResult,
    size1: tuple[int, int],
    size2: tuple[int, int],
    zoom: float = 4.0,
) -> str:
    """Render a match result as side-by-side panels with inlier overlays.

    ``size1``/``size2`` are the (width, height) of the two activation grids.
    An empty result yields just the two panel rectangles.
    """
    w1, h1 = float(size1[0]) * zoom, float(size1[1]) * zoom
    w2, h2 = float(size2[0]) * zoom, float(size2[1]) * zoom
    ox1, oy1 = _MARGIN, _MARGIN
    ox2, oy2 = _MARGIN + w1 + _GAP, _MARGIN
    total_w = 2.0 * _MARGIN + w1 + _GAP + w2
    total_h = 2.0 * _MARGIN + max(h1, h2)

    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(total_w)}" '
        f'height="{_fmt(total_h)}" viewBox="0 0 {_fmt(total_w)} {_fmt(total_h)}">',
        f'<rect x="{_fmt(ox1)}" y="{_fmt(oy1)}" width="{_fmt(w1)}" height="{_fmt(h1)}" '
        f'fill="#f5f5f5" stroke="#333333"/>',
        f'<rect x="{_fmt(ox2)}" y="{_fmt(oy2)}" width="{_fmt(w2)}" height="{_fmt(h2)}" '
        f'fill="#f5f5f5" stroke="#333333"/>',
    ]
    for channel_inliers in result.inliers_by_channel:
        for corr in channel_inliers:
            color = PALETTE[corr.channel % len(PALETTE)]
            x1 = ox1 + float(corr.p1.mu[0]) * zoom
            y1 = oy1 + float(corr.p1.mu[1]) * zoom
            x2 = ox2 + float(corr.p2.mu[0]) * zoom
            y2 = oy2 + float(corr.p2.mu[1]) * zoom
            parts.append(_ellipse_svg(corr.p1.mu, corr.p1.sigma, color, ox1, oy1, zoom))
            parts.append(_ellipse_svg(corr.p2.mu, corr.p2.sigma, color, ox2, oy2, zoom))
            parts.append(
                f'<line x1="{_fmt(x1)}" y1="{_fmt(y1)}" x2="{_fmt(x2)}" y2="{_fmt(y2)}" '
                f'stroke="{color}" stroke-width="0.75" stroke-opacity="0.6"/>'
            )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
