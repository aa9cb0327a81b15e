"""Streaming video memory encoder with question-driven memory selection."""

from ._core import (
    CheckpointError,
    ConfigError,
    DataError,
    Error,
    MemoryBank,
    Model,
    NumericError,
    ShapeError,
    StateError,
    VideoStream,
    config,
    detokenize,
    generate_video,
    run_cli,
    tokenize,
)

__all__ = [
    "CheckpointError",
    "ConfigError",
    "DataError",
    "Error",
    "MemoryBank",
    "Model",
    "NumericError",
    "ShapeError",
    "StateError",
    "VideoStream",
    "config",
    "detokenize",
    "generate_video",
    "run_cli",
    "tokenize",
]
