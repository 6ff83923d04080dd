"""scikit-learn style wrapper around the segmentation model.

``X`` is a stack of images ``[n, 3, H, W]`` with values in ``[0, 1]``;
``y`` is the matching stack of label maps ``[n, H, W]``. ``score`` is mIoU.
"""
from __future__ import annotations

from typing import Tuple

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .config import ModelConfig
from .data import SynthSample
from .metrics import ConfusionMatrix, miou
from .nn.ops import softmax_np
from .train import TrainConfig, best_miou, train_loop


def check_images(X, name: str = "X") -> np.ndarray:
    """Float64 ``[n, 3, H, W]`` array of finite values."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 4 or X.shape[1] != 3:
        raise ValueError(f"{name} must have shape [n, 3, H, W], got {X.shape}")
    if X.shape[0] == 0:
        raise ValueError(f"{name} holds no images")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains NaN or infinite values")
    return X


def check_label_maps(y, X: np.ndarray, num_classes: int, name: str = "y") -> np.ndarray:
    """Integer ``[n, H, W]`` maps matching ``X`` with ids in ``0..num_classes-1``."""
    y = np.asarray(y)
    if y.shape != (X.shape[0],) + X.shape[2:]:
        raise ValueError(f"{name} must have shape {(X.shape[0],) + X.shape[2:]}, got {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.mod(y, 1) == 0):
            raise ValueError(f"{name} must hold integer class ids")
    y = y.astype(np.int64)
    if y.min() < 0 or y.max() >= num_classes:
        raise ValueError(f"{name} class ids must lie in 0..{num_classes - 1}")
    return y.astype(np.uint8)


class SwinMambaSegmenter(ClassifierMixin, BaseEstimator):
    """Pixel classifier: windowed/global four-direction S6 encoder + pyramid decoder."""

    def __init__(self, base_dim: int = 16, depths: Tuple[int, ...] = (2, 2, 2, 2),
                 scan_modes: Tuple[str, ...] = ("local", "local", "global", "global"),
                 window: int = 14, shift: int = 7, shift_mode: str = "cyclic", d_state: int = 8,
                 num_classes: int = 3, steps: int = 500, batch_size: int = 8, lr: float = 3e-4,
                 weight_decay: float = 0.01, eval_every: int = 50, seed: int = 0,
                 validation_fraction: float = 0.1):
        self.base_dim = base_dim
        self.depths = depths
        self.scan_modes = scan_modes
        self.window = window
        self.shift = shift
        self.shift_mode = shift_mode
        self.d_state = d_state
        self.num_classes = num_classes
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.eval_every = eval_every
        self.seed = seed
        self.validation_fraction = validation_fraction

    def _train_config(self, image_size) -> TrainConfig:
        model = ModelConfig(
            base_dim=self.base_dim, depths=tuple(self.depths), scan_modes=tuple(self.scan_modes),
            window=self.window, shift=self.shift, shift_mode=self.shift_mode, d_state=self.d_state,
            num_classes=self.num_classes, image_size=tuple(image_size),
        )
        return TrainConfig(model=model, seed=self.seed, steps=self.steps, batch_size=self.batch_size,
                           lr=self.lr, weight_decay=self.weight_decay, eval_every=self.eval_every)

    def fit(self, X, y):
        X = check_images(X)
        y = check_label_maps(y, X, self.num_classes)
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in [0, 1)")
        n_val = int(round(self.validation_fraction * len(X)))
        samples = [SynthSample(img, lab) for img, lab in zip(X, y)]
        # held-out tail for model selection; falls back to the training set
        train, val = (samples[:-n_val], samples[-n_val:]) if 0 < n_val < len(X) else (samples, samples)
        cfg = self._train_config(X.shape[2:])
        self.model_, self.history_ = train_loop(cfg, train, val)
        self.best_val_miou_ = best_miou(self.history_)
        self.classes_ = np.arange(self.num_classes)
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def _check_input(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        return check_images(X)

    def predict_proba(self, X) -> np.ndarray:
        """Class probabilities ``[n, K, H, W]``."""
        X = self._check_input(X)
        return softmax_np(self.model_.predict_logits(X, self.batch_size))

    def predict(self, X) -> np.ndarray:
        """Label maps ``[n, H, W]`` (uint8)."""
        X = self._check_input(X)
        return self.model_.predict(X, self.batch_size)

    def score(self, X, y, sample_weight=None) -> float:
        """mIoU of the predicted label maps."""
        if sample_weight is not None:
            raise ValueError("sample_weight is not supported for mIoU")
        X = self._check_input(X)
        y = check_label_maps(y, X, self.num_classes)
        cm = ConfusionMatrix(self.num_classes).update(self.predict(X), y)
        return miou(cm)
