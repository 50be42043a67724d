"""Desk-scale any-to-any one-shot voice conversion.

The model converts a source utterance toward a target speaker by adaptively
normalizing content features with attention-weighted statistics of the
target's speaker-encoder features, trained with a siamese
self-reconstruction objective.
"""

__version__ = "0.1.0"

from .config import ConfigurationError, ModelConfig, PrepareConfig, TrainConfig

__all__ = ["ConfigurationError", "ModelConfig", "PrepareConfig", "TrainConfig",
           "__version__"]
