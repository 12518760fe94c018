"""The DSMI v1 index container: everything a database needs, no tensors.

Layout (all integers and floats little-endian)::

    bytes 0-3  ASCII "DSMI"
    u32        version (= 1)
    u32 length + payload, repeated, sections in fixed order:
      META  UTF-8 JSON {"image_ids": [...], "config": {...}, "whitening_kind": str}
      DESC  u32 n, u32 k, then n*k f32 (row-major whitened descriptors)
      WHIT  u32 k, k f32 mean, k*k f32 projection (row-major)
      FEAT  per image: u32 count, then count 28-byte records
            (u16 channel, u8 scale_index, u8 reserved,
             f32 mu_x, mu_y, sigma_xx, sigma_xy, sigma_yy, strength)
      GRAF  optional: u32 n, u32 K, then n*K (u32 neighbor, f32 affinity)
            pairs, the node's own kNN picks, padded with neighbor 0xFFFFFFFF

The graph section stores each node's directed neighbor picks; cosine
affinities are symmetric, so the union of directed edges reconstructs the
symmetrized graph exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .config import PipelineConfig
from .descriptors import WhiteningTransform
from .diffusion import KnnGraph, graph_from_choices
from .errors import FormatError
from .features import ROLE_DATABASE, FeatureCollection, LocalFeature

MAGIC = b"DSMI"
VERSION = 1
SECTION_NAMES = ("META", "DESC", "WHIT", "FEAT", "GRAF")

_RECORD = struct.Struct("<HBB6f")
_NO_EDGE = 0xFFFFFFFF


@dataclass(eq=False)
class Index:
    """A searchable database: ids, whitened descriptors, features, graph."""

    image_ids: list[str] = field(default_factory=list)
    descriptors: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    whitening: WhiteningTransform = field(default_factory=lambda: WhiteningTransform.identity(0))
    features: list[FeatureCollection] = field(default_factory=list)
    graph: KnnGraph | None = None
    config: PipelineConfig = field(default_factory=PipelineConfig)

    @property
    def size(self) -> int:
        return len(self.image_ids)

    @property
    def dim(self) -> int:
        return self.descriptors.shape[1] if self.descriptors.ndim == 2 else 0


# ---------------------------------------------------------------------------
# writing
# ---------------------------------------------------------------------------


def _meta_payload(index: Index) -> bytes:
    meta = {
        "image_ids": list(index.image_ids),
        "config": json.loads(index.config.to_json()),
        "whitening_kind": index.whitening.kind,
    }
    return json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _desc_payload(index: Index) -> bytes:
    n, k = len(index.image_ids), index.dim
    mat = np.ascontiguousarray(index.descriptors, dtype="<f4")
    return struct.pack("<II", n, k) + mat.tobytes()


def _whit_payload(index: Index) -> bytes:
    k = index.whitening.mean.shape[0]
    out = [struct.pack("<I", k)]
    out.append(np.asarray(index.whitening.mean, dtype="<f4").tobytes())
    out.append(np.ascontiguousarray(index.whitening.projection, dtype="<f4").tobytes())
    return b"".join(out)


def _feat_payload(index: Index) -> bytes:
    out = []
    for col in index.features:
        flat = col.flat()
        out.append(struct.pack("<I", len(flat)))
        for f in flat:
            out.append(
                _RECORD.pack(
                    f.channel,
                    f.scale_index,
                    0,
                    float(f.mu[0]),
                    float(f.mu[1]),
                    float(f.sigma[0, 0]),
                    float(f.sigma[0, 1]),
                    float(f.sigma[1, 1]),
                    f.strength,
                )
            )
    return b"".join(out)


def _graf_payload(graph: KnnGraph) -> bytes:
    out = [struct.pack("<II", graph.n, graph.k)]
    for picks in graph.choices:
        if len(picks) > graph.k:
            raise FormatError(f"node has {len(picks)} picks, graph K is {graph.k}")
        for j, aff in picks:
            out.append(struct.pack("<If", j, aff))
        for _ in range(graph.k - len(picks)):
            out.append(struct.pack("<If", _NO_EDGE, 0.0))
    return b"".join(out)


def persist_index(index: Index, sink) -> int:
    """Serialize an index in DSMI v1 layout; returns bytes written.

    Identical indexes serialize to identical bytes.
    """
    payloads = [
        _meta_payload(index),
        _desc_payload(index),
        _whit_payload(index),
        _feat_payload(index),
    ]
    if index.graph is not None:
        payloads.append(_graf_payload(index.graph))
    written = 0
    for chunk in (MAGIC, struct.pack("<I", VERSION)):
        sink.write(chunk)
        written += len(chunk)
    for payload in payloads:
        sink.write(struct.pack("<I", len(payload)))
        sink.write(payload)
        written += 4 + len(payload)
    return written


# ---------------------------------------------------------------------------
# reading
# ---------------------------------------------------------------------------


def _read_exact(source, n: int, what: str) -> bytes:
    data = source.read(n)
    if len(data) != n:
        raise FormatError(f"truncated stream while reading {what}")
    return data


def _read_section(source, name: str, optional: bool = False) -> bytes | None:
    header = source.read(4)
    if len(header) == 0 and optional:
        return None
    if len(header) != 4:
        raise FormatError(f"truncated stream while reading {name} section length")
    (length,) = struct.unpack("<I", header)
    payload = source.read(length)
    if len(payload) != length:
        raise FormatError(
            f"{name} section: corrupted length {length}, only {len(payload)} bytes present"
        )
    return payload


def _parse_meta(payload: bytes) -> tuple[list[str], PipelineConfig, str]:
    try:
        meta = json.loads(payload.decode("utf-8"))
        image_ids = list(meta["image_ids"])
        config = PipelineConfig.from_dict(meta["config"])
        kind = meta["whitening_kind"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(f"META section: {exc}") from exc
    return image_ids, config, kind


def _parse_desc(payload: bytes) -> np.ndarray:
    if len(payload) < 8:
        raise FormatError("DESC section: too short for its header")
    n, k = struct.unpack("<II", payload[:8])
    if len(payload) != 8 + 4 * n * k:
        raise FormatError(f"DESC section: length {len(payload)} does not match n={n}, k={k}")
    values = np.frombuffer(payload, dtype="<f4", offset=8).astype(np.float64)
    return values.reshape(n, k)


def _parse_whit(payload: bytes, kind: str) -> WhiteningTransform:
    if len(payload) < 4:
        raise FormatError("WHIT section: too short for its header")
    (k,) = struct.unpack("<I", payload[:4])
    if len(payload) != 4 + 4 * (k + k * k):
        raise FormatError(f"WHIT section: length {len(payload)} does not match k={k}")
    mean = np.frombuffer(payload, dtype="<f4", count=k, offset=4).astype(np.float64)
    proj = np.frombuffer(payload, dtype="<f4", count=k * k, offset=4 + 4 * k)
    return WhiteningTransform(mean, proj.astype(np.float64).reshape(k, k), kind=kind)


def _parse_feat(payload: bytes, image_ids: list[str], channels: int) -> list[FeatureCollection]:
    collections = []
    offset = 0
    for image_id in image_ids:
        if offset + 4 > len(payload):
            raise FormatError(f"FEAT section: truncated before image {image_id!r}")
        (count,) = struct.unpack_from("<I", payload, offset)
        offset += 4
        need = count * _RECORD.size
        if offset + need > len(payload):
            raise FormatError(f"FEAT section: corrupted length for image {image_id!r}")
        per_channel: list[list[LocalFeature]] = [[] for _ in range(channels)]
        for _ in range(count):
            channel, scale_index, _pad, mx, my, sxx, sxy, syy, strength = _RECORD.unpack_from(
                payload, offset
            )
            offset += _RECORD.size
            if channel >= channels:
                raise FormatError(
                    f"FEAT section: channel {channel} out of range for image {image_id!r}"
                )
            mu = np.array([mx, my], dtype=np.float64)
            sigma = np.array([[sxx, sxy], [sxy, syy]], dtype=np.float64)
            mu.setflags(write=False)
            sigma.setflags(write=False)
            per_channel[channel].append(
                LocalFeature(
                    mu=mu,
                    sigma=sigma,
                    strength=float(strength),
                    channel=int(channel),
                    scale_index=int(scale_index),
                )
            )
        collections.append(
            FeatureCollection(image_id=image_id, role=ROLE_DATABASE, per_channel=per_channel)
        )
    if offset != len(payload):
        raise FormatError(f"FEAT section: {len(payload) - offset} trailing bytes")
    return collections


def _parse_graf(payload: bytes, expected_n: int) -> KnnGraph:
    if len(payload) < 8:
        raise FormatError("GRAF section: too short for its header")
    n, k = struct.unpack("<II", payload[:8])
    if n != expected_n:
        raise FormatError(f"GRAF section: node count {n} does not match index size {expected_n}")
    if len(payload) != 8 + 8 * n * k:
        raise FormatError(f"GRAF section: length {len(payload)} does not match n={n}, K={k}")
    choices: list[list[tuple[int, float]]] = []
    offset = 8
    for _ in range(n):
        picks = []
        for _ in range(k):
            j, aff = struct.unpack_from("<If", payload, offset)
            offset += 8
            if j == _NO_EDGE:
                continue
            if j >= n:
                raise FormatError(f"GRAF section: neighbor {j} out of range")
            picks.append((int(j), float(aff)))
        choices.append(picks)
    return graph_from_choices(n, k, choices)


def load_index(source) -> Index:
    """Parse and validate a DSMI v1 stream."""
    if _read_exact(source, 4, "magic") != MAGIC:
        raise FormatError("bad magic")
    (version,) = struct.unpack("<I", _read_exact(source, 4, "version"))
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")

    image_ids, config, kind = _parse_meta(_read_section(source, "META"))
    descriptors = _parse_desc(_read_section(source, "DESC"))
    if descriptors.shape[0] != len(image_ids):
        raise FormatError(
            f"DESC section: {descriptors.shape[0]} rows for {len(image_ids)} image ids"
        )
    whitening = _parse_whit(_read_section(source, "WHIT"), kind)
    features = _parse_feat(_read_section(source, "FEAT"), image_ids, descriptors.shape[1])
    graf_payload = _read_section(source, "GRAF", optional=True)
    graph = _parse_graf(graf_payload, len(image_ids)) if graf_payload is not None else None
    return Index(
        image_ids=image_ids,
        descriptors=descriptors,
        whitening=whitening,
        features=features,
        graph=graph,
        config=config,
    )


def save_index(index: Index, path) -> int:
    with open(path, "wb") as fh:
        return persist_index(index, fh)


def load_index_file(path) -> Index:
    with open(path, "rb") as fh:
        return load_index(fh)
