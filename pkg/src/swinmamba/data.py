"""Seeded synthetic segmentation scenes: background, rectangles, disks."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from .nn.rng import Rng

CLASS_NAMES = ("background", "rectangle", "disk")
NUM_CLASSES = len(CLASS_NAMES)
BASE_COLORS = np.array([
    [0.25, 0.55, 0.25],
    [0.85, 0.35, 0.20],
    [0.20, 0.35, 0.85],
])


@dataclass
class SynthSample:
    image: np.ndarray   # [3, H, W] in [0, 1]
    labels: np.ndarray  # [H, W] uint8 class ids


def synth_sample(rng: Rng, H: int, W: int, noise: float = 0.05) -> SynthSample:
    """One scene; shapes are drawn in random order and later ones overwrite earlier ones."""
    labels = np.zeros((H, W), dtype=np.uint8)
    lo, hi = H / 16.0, H / 4.0
    kinds = [1] * int(rng.integers(1, 4)) + [2] * int(rng.integers(1, 4))
    kinds = [kinds[i] for i in rng.permutation(len(kinds))]
    rows, cols = np.mgrid[0:H, 0:W] + 0.5
    for kind in kinds:
        cy, cx = rng.uniform(0, H), rng.uniform(0, W)
        if kind == 1:
            hh, hw = rng.uniform(lo, hi), rng.uniform(lo, hi)
            mask = (np.abs(rows - cy) <= hh) & (np.abs(cols - cx) <= hw)
        else:
            r = rng.uniform(lo, hi)
            mask = (rows - cy) ** 2 + (cols - cx) ** 2 <= r * r
        labels[mask] = kind
    image = BASE_COLORS[labels].transpose(2, 0, 1)
    if noise > 0:
        image = image + rng.normal((3, H, W), scale=noise)
    return SynthSample(np.clip(image, 0.0, 1.0), labels)


def synth_dataset(seed: int, n: int, H: int = 64, W: int = 64, noise: float = 0.05) -> List[SynthSample]:
    """``n`` scenes; sample ``i`` depends only on ``(seed, i)``."""
    if H < 16 or W < 16:
        raise ValueError(f"synthetic scenes need H, W >= 16, got {H}x{W}")
    root = Rng(seed)
    return [synth_sample(root.child(i), H, W, noise) for i in range(n)]


def stack(samples: List[SynthSample]):
    images = np.stack([s.image for s in samples])
    labels = np.stack([s.labels for s in samples])
    return images, labels
