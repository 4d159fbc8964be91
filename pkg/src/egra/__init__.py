"""Multimodal graph recommendation with enhanced behavior graphs and
dynamically weighted modality/behavior alignment."""

from egra.errors import ConfigError, DataError, ParseError, ShapeError, TrainingDivergence

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "ParseError",
    "ShapeError",
    "TrainingDivergence",
]
