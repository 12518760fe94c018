"""Dump multi-scale CNN activations from images into .dsmt tensor files.

The only coupling to the retrieval package is the tensor-set file format:
outputs are written with its public writer and validate under its reader.
"""

from .config import DEFAULT_SCALE_FACTORS, ExtractError, ExtractorConfig
from .extract import Extractor, limit_side, load_image

__all__ = [
    "DEFAULT_SCALE_FACTORS",
    "ExtractError",
    "ExtractorConfig",
    "Extractor",
    "limit_side",
    "load_image",
]

__version__ = "0.1.0"
