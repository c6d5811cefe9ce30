"""Supervised authentication of copy detection patterns against cloning attacks."""

from cdpauth.types import (
    CdpTuple,
    DigitalTemplate,
    Kind,
    PrintedCode,
    hamming_distance,
    normalized_correlation,
    random_template,
)

__all__ = [
    "CdpTuple",
    "DigitalTemplate",
    "Kind",
    "PrintedCode",
    "hamming_distance",
    "normalized_correlation",
    "random_template",
]

__version__ = "0.1.0"
