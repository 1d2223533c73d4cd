"""Boosted semi-supervised learning with balanced clustering targets.

Alternates consistency-based semi-supervised epochs with a clustering
phase that binds images to a balanced pool of one-hot targets through
optimal assignment, plus a rotation-prediction pretext for images.
"""

__version__ = "0.1.0"

from .errors import ConfigurationError, DivergenceError

__all__ = ["ConfigurationError", "DivergenceError", "__version__"]
