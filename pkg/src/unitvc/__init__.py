"""Unit-based one-shot voice conversion with separable speaker, rhythm and pitch-energy attributes."""

from .config import SystemConfig

__version__ = "0.1.0"
__all__ = ["SystemConfig", "__version__"]
