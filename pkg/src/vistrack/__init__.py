"""Video instance segmentation with contrastive tracking embeddings.

The package covers the full desk-scale pipeline: synthetic video
generation, dense label assignment, dynamic-filter mask prediction,
contrastive tracking-embedding training, online cross-frame association,
and track-level AP/AR evaluation.
"""

__version__ = "0.1.0"

from .errors import ConfigError, FormatError, ShapeError, TrainingDiverged

__all__ = ["ConfigError", "FormatError", "ShapeError", "TrainingDiverged", "__version__"]
