"""Extractor configuration and its validity rules."""

from dataclasses import dataclass, field


class ExtractError(Exception):
    """Invalid configuration, unreadable image, or failed weight loading."""


NETWORKS = ("vgg16", "resnet101")

DEFAULT_SCALE_FACTORS = (1.0, 2.0 ** -0.5, 0.5)


@dataclass
class ExtractorConfig:
    """What to run and at which input resolutions.

    ``upsample`` applies only to resnet101: the last stage's stride is
    replaced by dilation 2, doubling the output resolution at the same
    receptive field.  ``weights_path`` loads a fine-tuned state dict from
    disk instead of the packaged pretrained weights; ``pretrained=False``
    gives a randomly initialized backbone (offline runs, tests).
    """

    network: str = "vgg16"
    upsample: bool = False
    max_side: int = 1024
    scale_factors: tuple = field(default_factory=lambda: DEFAULT_SCALE_FACTORS)
    pretrained: bool = True
    weights_path: str | None = None

    def __post_init__(self):
        if self.network not in NETWORKS:
            raise ExtractError(f"unknown network {self.network!r}, expected one of {NETWORKS}")
        if self.upsample and self.network != "resnet101":
            raise ExtractError("upsample (dilation trick) applies to resnet101 only")
        if self.max_side <= 0:
            raise ExtractError(f"max_side must be positive, got {self.max_side}")
        factors = tuple(float(s) for s in self.scale_factors)
        if not factors:
            raise ExtractError("at least one scale factor is required")
        if any(s <= 0 for s in factors):
            raise ExtractError(f"scale factors must be positive, got {factors}")
        if any(b >= a for a, b in zip(factors, factors[1:])):
            raise ExtractError(f"scale factors must be strictly decreasing, got {factors}")
        self.scale_factors = factors

    @property
    def network_tag(self) -> str:
        """Tag recorded in output files; distinguishes the upsampled variant."""
        return f"{self.network}-dil2" if self.upsample else self.network
