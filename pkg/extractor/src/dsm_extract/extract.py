"""Image -> multi-scale activation tensors -> .dsmt file."""

from pathlib import Path

import numpy as np
import torch
from PIL import Image

from dsm import FeatureTensor, TensorSet, save_tensor_set

from .backbone import build_backbone
from .config import ExtractError, ExtractorConfig

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


def load_image(path) -> Image.Image:
    """Open as RGB; grayscale and alpha inputs are converted."""
    try:
        with Image.open(path) as img:
            return img.convert("RGB")
    except Exception as exc:
        raise ExtractError(f"cannot read image {str(path)!r}: {exc}") from exc


def limit_side(img: Image.Image, max_side: int) -> Image.Image:
    """Downscale so the longer side is at most ``max_side``; never upscale."""
    longest = max(img.size)
    if longest <= max_side:
        return img
    ratio = max_side / longest
    w = max(1, round(img.width * ratio))
    h = max(1, round(img.height * ratio))
    return img.resize((w, h), Image.Resampling.BILINEAR)


def to_input(img: Image.Image) -> torch.Tensor:
    """(1, 3, h, w) float tensor normalized with the ImageNet recipe."""
    arr = np.asarray(img, dtype=np.float32) / 255.0
    arr = (arr - np.asarray(IMAGENET_MEAN, dtype=np.float32)) / np.asarray(
        IMAGENET_STD, dtype=np.float32
    )
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1)))[None]


class Extractor:
    """One constructed backbone, reused across images."""

    def __init__(self, config: ExtractorConfig | None = None):
        self.config = config or ExtractorConfig()
        self._backbone = build_backbone(self.config)

    @property
    def channels(self) -> int:
        return self._backbone.channels

    def activation_tensors(self, img: Image.Image) -> list[tuple[float, np.ndarray]]:
        """Forward the scale pyramid; one (factor, (k, h, w) array) per scale."""
        base = limit_side(img, self.config.max_side)
        out = []
        for s in self.config.scale_factors:
            w = max(1, round(base.width * s))
            h = max(1, round(base.height * s))
            if min(w, h) < self._backbone.min_side:
                raise ExtractError(
                    f"image {base.width}x{base.height} at scale {s:g} is {w}x{h}, "
                    f"below the {self._backbone.min_side} px the network needs"
                )
            scaled = base.resize((w, h), Image.Resampling.BILINEAR) if s != 1.0 else base
            with torch.no_grad():
                act = self._backbone.module(to_input(scaled))
            out.append((float(s), act[0].numpy()))
        return out

    def extract(self, image_path, image_id: str | None = None) -> TensorSet:
        img = load_image(image_path)
        scales = [(s, FeatureTensor(act)) for s, act in self.activation_tensors(img)]
        return TensorSet(
            image_id or Path(image_path).stem, self.config.network_tag, scales
        )

    def extract_to(self, image_path, out_path) -> int:
        """Extract one image and write its .dsmt; returns bytes written."""
        return save_tensor_set(self.extract(image_path), out_path)
