"""Thin client for the kgate knowledge selection service."""

from .client import (
    ClientConfig,
    ClientError,
    ClientValidationError,
    PoolItem,
    SelectionPool,
    TransportError,
    build_prompt,
    healthz,
    select,
)
from .pipeline import example_pipeline, read_corpus

__version__ = "0.1.0"
