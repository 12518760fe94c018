"""Activation tensor containers, the DSMT v1 byte format, and synthetic tensors.

A :class:`FeatureTensor` holds the dense post-ReLU activations of one image at
one scale, channel-major.  A :class:`TensorSet` groups the tensors of one image
across its scale pyramid.  ``write_tensor_set``/``read_tensor_set`` implement
the bit-exact DSMT v1 container:

    bytes 0-3   ASCII "DSMT"
    u32 LE      version (= 1)
    u32 LE      meta_len
    meta_len    UTF-8 JSON {"image_id", "network", "scales": [...]}
    payload     per scale, channels*height*width little-endian f32 values
                in [channel][row][col] order

No padding, no checksum.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, FormatError

MAGIC = b"DSMT"
VERSION = 1

#: Scale pyramid used throughout: full resolution, 1/sqrt(2), 1/2.
DEFAULT_SCALE_FACTORS = (1.0, 2.0 ** -0.5, 0.5)


@dataclass(eq=False)
class FeatureTensor:
    """Dense activation grid of shape (channels, height, width), float32."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        if self.values.ndim != 3:
            raise DataError(f"tensor must be 3-d (k,h,w), got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise DataError("tensor contains non-finite values")
        if np.any(self.values < 0):
            raise DataError("tensor contains negative values (expected post-ReLU)")

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    def channel_map(self, j: int) -> np.ndarray:
        """Return the 2-d map of channel ``j`` (a view, shape (h, w))."""
        return self.values[j]

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureTensor):
            return NotImplemented
        return self.values.shape == other.values.shape and np.array_equal(
            self.values, other.values
        )


@dataclass(eq=False)
class TensorSet:
    """All scales of one image: ordered (scale_factor, tensor) pairs."""

    image_id: str
    network_tag: str
    scales: list[tuple[float, FeatureTensor]] = field(default_factory=list)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.scales:
            raise DataError("no scales")
        factors = [f for f, _ in self.scales]
        if any(b >= a for a, b in zip(factors, factors[1:])):
            raise DataError(f"scale factors must be strictly decreasing, got {factors}")
        ks = {t.channels for _, t in self.scales}
        if len(ks) != 1:
            raise DataError(f"all scales must share the channel count, got {sorted(ks)}")

    @property
    def channels(self) -> int:
        return self.scales[0][1].channels

    @property
    def factors(self) -> list[float]:
        return [f for f, _ in self.scales]

    def __eq__(self, other) -> bool:
        if not isinstance(other, TensorSet):
            return NotImplemented
        return (
            self.image_id == other.image_id
            and self.network_tag == other.network_tag
            and self.factors == other.factors
            and all(a == b for (_, a), (_, b) in zip(self.scales, other.scales))
        )


def write_tensor_set(tset: TensorSet, sink) -> int:
    """Serialize ``tset`` to a binary stream in DSMT v1 layout.

    Returns the number of bytes written.  Identical sets produce identical
    bytes (JSON metadata is emitted with sorted keys and no whitespace).
    """
    tset.validate()
    meta = {
        "image_id": tset.image_id,
        "network": tset.network_tag,
        "scales": [
            {
                "factor": float(f),
                "channels": t.channels,
                "height": t.height,
                "width": t.width,
            }
            for f, t in tset.scales
        ],
    }
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    written = 0
    for chunk in (MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(meta_bytes)), meta_bytes):
        sink.write(chunk)
        written += len(chunk)
    for _, tensor in tset.scales:
        payload = np.asarray(tensor.values, dtype="<f4").tobytes()
        sink.write(payload)
        written += len(payload)
    return written


def _read_exact(source, n: int, what: str) -> bytes:
    data = source.read(n)
    if len(data) != n:
        raise FormatError(f"truncated stream while reading {what}")
    return data


def read_tensor_set(source) -> TensorSet:
    """Parse and validate a DSMT v1 stream, returning the contained set.

    Rejects wrong magic, unknown versions, size mismatches, non-finite and
    negative payload values.
    """
    if _read_exact(source, 4, "magic") != MAGIC:
        raise FormatError("bad magic")
    (version,) = struct.unpack("<I", _read_exact(source, 4, "version"))
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    (meta_len,) = struct.unpack("<I", _read_exact(source, 4, "metadata length"))
    try:
        meta = json.loads(_read_exact(source, meta_len, "metadata").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"bad metadata JSON: {exc}") from exc
    try:
        image_id = meta["image_id"]
        network = meta["network"]
        scale_meta = meta["scales"]
    except (KeyError, TypeError) as exc:
        raise FormatError(f"metadata missing field: {exc}") from exc

    scales: list[tuple[float, FeatureTensor]] = []
    for si, sm in enumerate(scale_meta):
        k, h, w = int(sm["channels"]), int(sm["height"]), int(sm["width"])
        count = k * h * w
        raw = _read_exact(source, count * 4, f"payload of scale {si}")
        values = np.frombuffer(raw, dtype="<f4").reshape(k, h, w)
        bad = ~np.isfinite(values)
        if bad.any():
            c, r, col = np.unravel_index(int(np.argmax(bad)), values.shape)
            raise FormatError(f"non-finite value at ({si},{c},{r},{col})")
        neg = values < 0
        if neg.any():
            c, r, col = np.unravel_index(int(np.argmax(neg)), values.shape)
            raise FormatError(f"negative value at ({si},{c},{r},{col})")
        scales.append((float(sm["factor"]), FeatureTensor(values.copy())))
    return TensorSet(image_id=image_id, network_tag=network, scales=scales)


def save_tensor_set(tset: TensorSet, path) -> int:
    with open(path, "wb") as fh:
        return write_tensor_set(tset, fh)


def load_tensor_set(path) -> TensorSet:
    with open(path, "rb") as fh:
        return read_tensor_set(fh)


def synth_tensor(blobs, k: int, h: int, w: int) -> FeatureTensor:
    """Render Gaussian blobs onto a zero (k, h, w) grid.

    ``blobs`` is a sequence of ``(channel, center, covariance, amplitude)``
    where ``center`` is (col, row) and ``covariance`` is a 2x2 positive
    definite matrix in pixel^2 units.  Each blob adds

        amplitude * exp(-0.5 * (x - center)^T covariance^-1 (x - center))

    evaluated at pixel centers, and the result is clipped at zero.  The
    output emulates the sparse, blob-like responses of activation maps and
    is deterministic given its arguments.
    """
    grid = np.zeros((k, h, w), dtype=np.float64)
    cols, rows = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    for channel, center, cov, amp in blobs:
        channel = int(channel)
        if channel >= k or channel < 0:
            raise DataError(f"blob channel {channel} outside [0,{k})")
        cx, cy = float(center[0]), float(center[1])
        if not (0 <= cx <= w - 1 and 0 <= cy <= h - 1):
            raise DataError(f"blob center ({cx},{cy}) outside grid {w}x{h}")
        if amp <= 0:
            raise DataError(f"blob amplitude must be positive, got {amp}")
        cov = np.asarray(cov, dtype=np.float64)
        det = cov[0, 0] * cov[1, 1] - cov[0, 1] * cov[1, 0]
        if cov[0, 0] <= 0 or det <= 0 or cov[0, 1] != cov[1, 0]:
            raise DataError("blob covariance must be symmetric positive definite")
        inv = np.array([[cov[1, 1], -cov[0, 1]], [-cov[1, 0], cov[0, 0]]]) / det
        dx = cols - cx
        dy = rows - cy
        quad = inv[0, 0] * dx * dx + 2.0 * inv[0, 1] * dx * dy + inv[1, 1] * dy * dy
        grid[channel] += float(amp) * np.exp(-0.5 * quad)
    return FeatureTensor(np.clip(grid, 0.0, None).astype(np.float32))
