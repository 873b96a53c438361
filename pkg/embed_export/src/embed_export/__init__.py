"""Offline embedding exporter: frozen encoder in, EMB1 files out."""

from . import testing
from .exporter import (
    CorpusFormatError,
    DiskFull,
    ExportJob,
    ModelLoadError,
    TokenizationError,
    export,
    read_corpus,
)

__version__ = "0.1.0"

__all__ = [
    "CorpusFormatError",
    "DiskFull",
    "ExportJob",
    "ModelLoadError",
    "TokenizationError",
    "export",
    "read_corpus",
    "testing",
    "__version__",
]
