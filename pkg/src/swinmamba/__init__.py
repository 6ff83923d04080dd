"""Windowed four-direction selective-scan segmentation on a numpy autodiff core."""
from .config import DecoderConfig, ModelConfig, StageConfig, effective_window
from .estimator import SwinMambaSegmenter
from .model import SwinMambaSeg

__version__ = "0.1.0"

__all__ = [
    "DecoderConfig", "ModelConfig", "StageConfig", "effective_window", "SwinMambaSegmenter",
    "SwinMambaSeg", "__version__",
]
