"""Seedable sequence memory: discrete and spiking temporal memory with LTM-gated plasticity."""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .encoder import ConfigurationError, Sdr, Vocabulary, build_vocabulary, encode  # noqa: E402
from .temporal_memory import LearningParams, TemporalMemory  # noqa: E402

__all__ = ["ConfigurationError", "Sdr", "Vocabulary", "build_vocabulary", "encode",
           "LearningParams", "TemporalMemory", "__version__"]
