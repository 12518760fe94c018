"""Command line: batch-extract a directory of images into .dsmt files.

Exit codes: 0 all images written, 1 usage error, 2 at least one image or
the backbone failed (failures are reported per file; the rest still run).
"""

import sys
from pathlib import Path

import click

from .config import ExtractError, ExtractorConfig
from .extract import Extractor

IMAGE_SUFFIXES = {".jpg", ".jpeg", ".png", ".bmp", ".tif", ".tiff", ".webp"}


@click.command()
@click.option("--images", required=True, type=click.Path(exists=True, file_okay=False),
              help="Directory of input images.")
@click.option("--out", required=True, type=click.Path(file_okay=False),
              help="Directory for .dsmt outputs (created if missing).")
@click.option("--network", type=click.Choice(["vgg16", "resnet101"]), default="vgg16",
              show_default=True)
@click.option("--upsample", is_flag=True,
              help="resnet101 only: dilate the last stage instead of striding it.")
@click.option("--max-side", default=1024, show_default=True,
              help="Downscale inputs so the longer side is at most this.")
@click.option("--no-pretrained", is_flag=True,
              help="Randomly initialized backbone (offline runs, testing).")
@click.option("--weights-file", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Load a fine-tuned state dict from this file.")
def cli(images, out, network, upsample, max_side, no_pretrained, weights_file):
    """Dump multi-scale activation tensors for every image in a directory."""
    config = ExtractorConfig(
        network=network,
        upsample=upsample,
        max_side=max_side,
        pretrained=not no_pretrained,
        weights_path=weights_file,
    )
    extractor = Extractor(config)

    in_dir = Path(images)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = sorted(p for p in in_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not paths:
        raise ExtractError(f"no image files in {str(in_dir)!r}")

    failures = 0
    for path in paths:
        target = out_dir / (path.stem + ".dsmt")
        try:
            n_bytes = extractor.extract_to(path, target)
        except ExtractError as exc:
            failures += 1
            click.echo(f"error: {exc}", err=True)
            continue
        click.echo(f"{path.name} -> {target.name} ({n_bytes} bytes)")
    click.echo(f"{len(paths) - failures}/{len(paths)} images extracted ({extractor.channels} channels)")
    if failures:
        raise SystemExit(2)


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except SystemExit as exc:
        return int(exc.code or 0)
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.UsageError as exc:
        exc.show(file=sys.stderr)
        return 1
    except click.ClickException as exc:
        exc.show(file=sys.stderr)
        return 1
    except (ExtractError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
