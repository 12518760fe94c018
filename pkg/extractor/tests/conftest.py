import numpy as np
import pytest
from PIL import Image

from dsm_extract import Extractor, ExtractorConfig


def random_image(seed, h=48, w=64):
    rng = np.random.default_rng(seed)
    return Image.fromarray(rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8))


def write_png(path, seed, h=48, w=64):
    random_image(seed, h, w).save(path)
    return path


@pytest.fixture(scope="session")
def vgg():
    return Extractor(ExtractorConfig(pretrained=False))


@pytest.fixture(scope="session")
def resnet():
    return Extractor(
        ExtractorConfig(network="resnet101", pretrained=False, scale_factors=(1.0,))
    )


@pytest.fixture(scope="session")
def resnet_up():
    return Extractor(
        ExtractorConfig(
            network="resnet101", upsample=True, pretrained=False, scale_factors=(1.0,)
        )
    )
