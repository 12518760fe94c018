"""Command-line interface.

Subcommands mirror the pipeline stages: ``synth`` writes synthetic tensor
files, ``detect`` extracts local features from one tensor file, ``index
build`` constructs a persistent index from a directory of tensors, ``query``
ranks the database for one query, ``match`` verifies a single pair, and
``eval`` scores rankings against ground truth.

Exit codes: 0 success, 1 usage error, 2 data/format error.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from .config import PipelineConfig, load_config
from .errors import DataError
from .evaluation import GroundTruth, evaluate_rankings
from .features import ROLE_DATABASE, ROLE_QUERY
from .render import render_match_svg
from .retrieval import QueryOptions, build_index, image_features, match_pair
from .retrieval import query as run_query
from .index_store import load_index_file, save_index
from .tensors import (
    DEFAULT_SCALE_FACTORS,
    TensorSet,
    load_tensor_set,
    save_tensor_set,
    synth_tensor,
)


@click.group()
def cli():
    """Sparse local features from activation tensors: detect, match, retrieve."""


def _load_pipeline_config(path: str | None) -> PipelineConfig:
    return load_config(path) if path else PipelineConfig()


def _write_json(data: dict, out: str | None):
    text = json.dumps(data, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        click.echo(text)


# ---------------------------------------------------------------------------


@cli.command()
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Output .dsmt path.")
@click.option("--image-id", default=None, help="Image id stored in the file (default: stem of --out).")
@click.option("--channels", default=16, show_default=True)
@click.option("--height", default=24, show_default=True)
@click.option("--width", default=24, show_default=True)
@click.option("--blobs", default=40, show_default=True, help="Number of random Gaussian blobs.")
@click.option("--seed", default=0, show_default=True)
def synth(out, image_id, channels, height, width, blobs, seed):
    """Write a synthetic tensor set of random Gaussian blobs at 3 scales."""
    rng = np.random.default_rng(seed)
    blob_list = []
    for _ in range(blobs):
        channel = int(rng.integers(0, channels))
        cx = rng.uniform(2.0, width - 3.0)
        cy = rng.uniform(2.0, height - 3.0)
        a = rng.normal(size=(2, 2)) * 0.8
        cov = a @ a.T + 0.5 * np.eye(2)
        amp = rng.uniform(0.5, 2.0)
        blob_list.append((channel, (cx, cy), cov, amp))
    scales = []
    for factor in DEFAULT_SCALE_FACTORS:
        h = max(4, round(height * factor))
        w = max(4, round(width * factor))
        scaled = [
            (c, (cx * factor, cy * factor), cov * factor * factor, amp)
            for c, (cx, cy), cov, amp in blob_list
        ]
        scales.append((factor, synth_tensor(scaled, channels, h, w)))
    tset = TensorSet(
        image_id=image_id or Path(out).stem, network_tag="synthetic", scales=scales
    )
    written = save_tensor_set(tset, out)
    click.echo(f"wrote {out} ({written} bytes, {channels} channels, {len(scales)} scales)")


@cli.command()
@click.option("--in", "in_path", required=True, type=click.Path(exists=False, dir_okay=False))
@click.option("--out", default=None, type=click.Path(dir_okay=False), help="Output JSON (default stdout).")
@click.option("--role", default=ROLE_QUERY, type=click.Choice([ROLE_QUERY, ROLE_DATABASE]), show_default=True)
@click.option("--config", "config_path", default=None, type=click.Path(dir_okay=False))
def detect(in_path, out, role, config_path):
    """Detect local features in one tensor file."""
    config = _load_pipeline_config(config_path)
    tset = load_tensor_set(in_path)
    collection = image_features(tset, role, config)
    payload = {
        "image_id": collection.image_id,
        "role": collection.role,
        "count": collection.total_count,
        "features": [
            {
                "channel": f.channel,
                "scale": f.scale_index,
                "mu": [float(f.mu[0]), float(f.mu[1])],
                "sigma": [
                    [float(f.sigma[0, 0]), float(f.sigma[0, 1])],
                    [float(f.sigma[1, 0]), float(f.sigma[1, 1])],
                ],
                "strength": f.strength,
            }
            for f in collection.flat()
        ],
    }
    _write_json(payload, out)


@cli.group(name="index")
def index_group():
    """Index construction."""


@index_group.command(name="build")
@click.option("--tensors", required=True, type=click.Path(file_okay=False), help="Directory of .dsmt files.")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--pairs", default=None, type=click.Path(dir_okay=False), help="JSON array of [id, id] matching pairs.")
@click.option("--config", "config_path", default=None, type=click.Path(dir_okay=False))
def index_build(tensors, out, pairs, config_path):
    """Build an index from every .dsmt file in a directory."""
    config = _load_pipeline_config(config_path)
    paths = sorted(Path(tensors).glob("*.dsmt"))
    if not paths:
        raise DataError(f"no .dsmt files in {tensors}")
    sets = [load_tensor_set(p) for p in paths]
    matching_pairs = None
    if pairs:
        raw = json.loads(Path(pairs).read_text(encoding="utf-8"))
        matching_pairs = [(a, b) for a, b in raw]
    index = build_index(sets, config, matching_pairs)
    written = save_index(index, out)
    click.echo(f"indexed {index.size} images ({index.dim} channels) into {out} ({written} bytes)")


@cli.command(name="query")
@click.option("--index", "index_path", required=True, type=click.Path(dir_okay=False))
@click.option("--query", "query_path", required=True, type=click.Path(dir_okay=False))
@click.option("--rerank", default=100, show_default=True, help="Spatially verify this many top items.")
@click.option("--diffuse", is_flag=True, help="Re-rank by graph diffusion from verified seeds.")
@click.option("--out", default=None, type=click.Path(dir_okay=False), help="Output JSON (default stdout).")
def query_cmd(index_path, query_path, rerank, diffuse, out):
    """Rank the indexed database for one query tensor file."""
    index = load_index_file(index_path)
    tset = load_tensor_set(query_path)
    ranked = run_query(index, tset, QueryOptions(rerank_top=rerank, diffuse=diffuse))
    for warning in ranked.warnings:
        click.echo(f"warning: {warning}", err=True)
    _write_json(ranked.to_dict(), out)


@cli.command(name="match")
@click.option("--a", "a_path", required=True, type=click.Path(dir_okay=False))
@click.option("--b", "b_path", required=True, type=click.Path(dir_okay=False))
@click.option("--svg", default=None, type=click.Path(dir_okay=False), help="Also write an SVG visualization.")
@click.option("--config", "config_path", default=None, type=click.Path(dir_okay=False))
def match_cmd(a_path, b_path, svg, config_path):
    """Spatially match two tensor files (first as query, second as database)."""
    config = _load_pipeline_config(config_path)
    a = load_tensor_set(a_path)
    b = load_tensor_set(b_path)
    result, _, _ = match_pair(a, b, config)
    t = result.transform
    payload = {
        "a": a.image_id,
        "b": b.image_id,
        "similarity": result.similarity,
        "residual": result.residual,
        "scale_pair": list(result.scale_pair) if result.scale_pair else None,
        "transform": {"a": t.a, "b": t.b, "c": t.c, "tx": t.tx, "ty": t.ty},
    }
    if svg:
        si, sj = result.scale_pair if result.scale_pair else (0, 0)
        ta = a.scales[si][1]
        tb = b.scales[sj][1]
        text = render_match_svg(result, (ta.width, ta.height), (tb.width, tb.height))
        Path(svg).write_text(text, encoding="utf-8")
        payload["svg"] = svg
    click.echo(json.dumps(payload, indent=2, sort_keys=True))


@cli.command(name="eval")
@click.option("--ranks", required=True, type=click.Path(dir_okay=False), help="Ranking JSON (one object or an array).")
@click.option("--gt", "gt_path", required=True, type=click.Path(dir_okay=False))
def eval_cmd(ranks, gt_path):
    """Score rankings against ground truth (medium and hard setups)."""
    raw = json.loads(Path(ranks).read_text(encoding="utf-8"))
    if isinstance(raw, dict):
        raw = [raw]
    runs = {}
    for entry in raw:
        runs[entry["query"]] = [r["id"] for r in entry["results"]]
    gt = GroundTruth.from_json(Path(gt_path).read_text(encoding="utf-8"))
    scores = evaluate_rankings(runs, gt)
    payload = {
        setup: {"mAP": m_ap, "mP10": m_p10} for setup, (m_ap, m_p10) in scores.items()
    }
    click.echo(json.dumps(payload, indent=2, sort_keys=True))


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.UsageError as exc:
        exc.show(file=sys.stderr)
        return 1
    except click.ClickException as exc:
        exc.show(file=sys.stderr)
        return 1
    except (DataError, OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
