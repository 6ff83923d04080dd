"""UperNet-lite decoder and the full segmentation model."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .blocks import Encoder
from .config import DecoderConfig, ModelConfig
from .nn import ops
from .nn.module import Module, uniform_fan_in
from .nn.rng import Rng
from .nn.tensor import ShapeError, Tensor, no_grad


class Conv1x1(Module):
    def __init__(self, rng: Rng, c_in: int, c_out: int, relu: bool = True):
        super().__init__()
        self.weight = uniform_fan_in(rng.child(0), c_in, (c_in, c_out))
        self.bias = uniform_fan_in(rng.child(1), c_in, (c_out,))
        self.relu = relu

    def forward(self, x: Tensor) -> Tensor:
        y = ops.conv1x1(x, self.weight, self.bias)
        return ops.relu(y) if self.relu else y


class Conv3x3(Module):
    def __init__(self, rng: Rng, c_in: int, c_out: int, relu: bool = True):
        super().__init__()
        self.weight = uniform_fan_in(rng.child(0), 9 * c_in, (c_out, c_in, 3, 3))
        self.bias = uniform_fan_in(rng.child(1), 9 * c_in, (c_out,))
        self.relu = relu

    def forward(self, x: Tensor) -> Tensor:
        y = ops.conv3x3(x, self.weight, self.bias)
        return ops.relu(y) if self.relu else y


class PPM(Module):
    """Pyramid pooling on the deepest map, fused back to ``fpn_dim`` channels."""

    def __init__(self, rng: Rng, c_in: int, fpn_dim: int, scales: Sequence[int]):
        super().__init__()
        self.scales = tuple(scales)
        self.branches = [Conv1x1(rng.child(0, i), c_in, fpn_dim) for i in range(len(self.scales))]
        self.bottleneck = Conv3x3(rng.child(1), c_in + len(self.scales) * fpn_dim, fpn_dim)

    def forward(self, F: Tensor) -> Tensor:
        h, w = F.shape[-2:]
        outs = [F]
        for s, branch in zip(self.scales, self.branches):
            pooled = branch(ops.adaptive_avg_pool(F, s))
            outs.append(ops.bilinear_resize(pooled, h, w))
        return self.bottleneck(ops.concat(outs, axis=1))


class UperNetLite(Module):
    """PPM + top-down FPN over four pyramid levels, fused at the finest level."""

    def __init__(self, rng: Rng, in_dims: Sequence[int], cfg: DecoderConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.fpn_dim
        self.in_dims = tuple(in_dims)
        self.ppm = PPM(rng.child(0), in_dims[-1], d, cfg.ppm_scales)
        self.laterals = [Conv1x1(rng.child(1, i), c, d) for i, c in enumerate(in_dims[:-1])]
        self.smooth = [Conv3x3(rng.child(2, i), d, d) for i in range(len(in_dims) - 1)]
        self.fuse = Conv3x3(rng.child(3), len(in_dims) * d, d)
        self.classifier = Conv1x1(rng.child(4), d, cfg.num_classes, relu=False)

    def check_ladder(self, maps: Sequence[Tensor]) -> None:
        if len(maps) != len(self.in_dims):
            raise ShapeError(f"decoder expects {len(self.in_dims)} maps, got {len(maps)}")
        for i, (m, c) in enumerate(zip(maps, self.in_dims)):
            if m.ndim != 4 or m.shape[1] != c:
                raise ShapeError(f"level {i}: expected {c} channels, got shape {m.shape}")
            if i and (maps[i - 1].shape[2] + 1) // 2 != m.shape[2]:
                raise ShapeError(f"level {i}: {m.shape[-2:]} is not half of {maps[i - 1].shape[-2:]}")

    def fpn_fuse(self, maps: Sequence[Tensor], top: Tensor) -> Tensor:
        lats = [lat(m) for lat, m in zip(self.laterals, maps[:-1])] + [top]
        for i in range(len(lats) - 2, -1, -1):
            h, w = lats[i].shape[-2:]
            lats[i] = ops.add(lats[i], ops.bilinear_resize(lats[i + 1], h, w))
        outs = [sm(l) for sm, l in zip(self.smooth, lats[:-1])] + [lats[-1]]
        h, w = outs[0].shape[-2:]
        outs = [outs[0]] + [ops.bilinear_resize(o, h, w) for o in outs[1:]]
        return self.fuse(ops.concat(outs, axis=1))

    def forward(self, maps: Sequence[Tensor]) -> Tensor:
        self.check_ladder(maps)
        fused = self.fpn_fuse(maps, self.ppm(maps[-1]))
        return self.classifier(fused)


class SwinMambaSeg(Module):
    """Encoder + UperNet-lite; logits at input resolution."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        rng = Rng(seed)
        self.encoder = Encoder(rng.child(0), cfg)
        self.decoder = UperNetLite(rng.child(1), cfg.dims, cfg.decoder_config())

    def forward(self, image: Tensor) -> Tensor:
        H, W = image.shape[-2:]
        logits = self.decoder(self.encoder(image))
        return ops.bilinear_resize(logits, H, W)

    def predict_logits(self, images: np.ndarray, batch_size: int = 8) -> np.ndarray:
        outs = []
        with no_grad():
            for i in range(0, len(images), batch_size):
                outs.append(self.forward(Tensor(images[i:i + batch_size])).data)
        return np.concatenate(outs, axis=0)

    def predict(self, images: np.ndarray, batch_size: int = 8) -> np.ndarray:
        return self.predict_logits(images, batch_size).argmax(axis=1).astype(np.uint8)


def model_forward(image: Tensor, model: SwinMambaSeg) -> Tensor:
    return model(image)
