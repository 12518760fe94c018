"""Stable extremal regions on a single activation map.

Activation maps are bright blobs on a dark background, so detection only
needs the bright-side component tree: sweep the threshold downward, track
connected components, and keep the ones whose area is stable across a
threshold band of width delta.
"""

import numpy as np

from dsm import DetectorParams, detect_msers, synth_tensor


def ascii_map(grid, regions):
    """Render the grid as characters, marking each region's pixels."""
    marks = [["." if v < 0.05 else "o" for v in row] for row in grid]
    for label, region in enumerate(regions):
        for col, row in region.pixels:
            marks[row][col] = chr(ord("A") + label % 26)
    return "\n".join("".join(row) for row in marks)


def main():
    # Two strong blobs and one faint smear.  Clipping the peaks emulates
    # saturated unit responses: the flat top is exactly what makes a
    # component's area stable while the threshold sweeps through it.
    raw = synth_tensor(
        [
            (0, (5.0, 5.0), [[2.0, 0.0], [0.0, 2.0]], 3.0),
            (0, (14.0, 13.0), [[3.0, 1.0], [1.0, 1.5]], 2.5),
            (0, (10.0, 17.0), [[6.0, 0.0], [0.0, 1.0]], 0.35),
        ],
        k=1,
        h=20,
        w=20,
    ).channel_map(0)
    grid = np.minimum(raw, 1.8)

    regions = detect_msers(grid, DetectorParams(delta=0.2))
    print(f"{len(regions)} stable regions (delta = 0.2)\n")
    for i, r in enumerate(regions):
        print(
            f"  region {chr(ord('A') + i)}: {len(r.pixels)} px, "
            f"quantized level {r.level}, variation {r.variation:.3f}"
        )

    print("\n" + ascii_map(grid, regions))
    print(
        "\nBoth saturated blobs yield a stable component; the faint smear"
        "\nnever does.  A smooth unclipped peak would instead shrink to its"
        "\nbrightest pixel, because its area changes at every threshold."
    )


if __name__ == "__main__":
    main()
