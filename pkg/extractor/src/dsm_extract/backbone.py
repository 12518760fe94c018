"""Backbone construction: last-convolutional-layer feature networks.

Both backbones end right after their final ReLU, so activations are
non-negative.  vgg16 keeps ``features`` minus the trailing max-pool
(stride 16, 512 channels); resnet101 runs the stem plus the four stages
(stride 32, 2048 channels), optionally with the last stage dilated
instead of strided (stride 16, same channels, double resolution).
"""

import torch
from torch import nn
from torchvision import models

from .config import ExtractError, ExtractorConfig


class BackboneInfo:
    def __init__(self, module: nn.Module, channels: int, min_side: int):
        self.module = module
        self.channels = channels
        self.min_side = min_side  # smallest input side that survives the stride chain


class _ResNetFeatures(nn.Module):
    """resnet101 up to the end of the last bottleneck stage."""

    def __init__(self, net):
        super().__init__()
        self.stem = nn.Sequential(net.conv1, net.bn1, net.relu, net.maxpool)
        self.stages = nn.Sequential(net.layer1, net.layer2, net.layer3, net.layer4)

    def forward(self, x):
        return self.stages(self.stem(x))


def _load_weights_file(net: nn.Module, path: str):
    try:
        state = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise ExtractError(f"cannot load weights from {path!r}: {exc}") from exc
    if isinstance(state, dict) and "state_dict" in state:
        state = state["state_dict"]
    net.load_state_dict(state)


def build_backbone(config: ExtractorConfig) -> BackboneInfo:
    """Construct the configured feature network in inference mode."""
    if config.network == "vgg16":
        weights = models.VGG16_Weights.IMAGENET1K_V1 if config.pretrained else None
        try:
            net = models.vgg16(weights=weights)
        except Exception as exc:
            raise ExtractError(f"cannot obtain vgg16 weights: {exc}") from exc
        if config.weights_path:
            _load_weights_file(net, config.weights_path)
        module = net.features[:-1]
        info = BackboneInfo(module, channels=512, min_side=16)
    else:
        weights = models.ResNet101_Weights.IMAGENET1K_V1 if config.pretrained else None
        try:
            net = models.resnet101(
                weights=weights,
                replace_stride_with_dilation=[False, False, config.upsample],
            )
        except Exception as exc:
            raise ExtractError(f"cannot obtain resnet101 weights: {exc}") from exc
        if config.weights_path:
            _load_weights_file(net, config.weights_path)
        info = BackboneInfo(_ResNetFeatures(net), channels=2048, min_side=32)

    info.module.eval()
    for p in info.module.parameters():
        p.requires_grad_(False)
    return info
