"""Encoder building blocks: windowed / shifted / global four-direction S6 blocks."""
from __future__ import annotations

from typing import List

import numpy as np

from . import scan
from .config import ModelConfig, effective_window
from .nn import ops
from .nn.module import LayerNorm, Linear, Module, Parameter, uniform_fan_in
from .nn.rng import Rng
from .nn.tensor import Tensor
from .s6 import init_a_log, init_delta_bias, selective_projection, selective_scan

BLOCK_MODES = ("W", "SW", "Global")


class SS2D(Module):
    """Four-direction S6 over a channel-first map; one parameter set per direction."""

    def __init__(self, rng: Rng, d_inner: int, d_state: int = 8, dt_min: float = 1e-3,
                 dt_max: float = 1e-1, method: str = "sequential"):
        super().__init__()
        K = len(scan.DIRECTIONS)
        self.w_delta = uniform_fan_in(rng.child(0), d_inner, (K, d_inner, d_inner))
        self.b_delta = Parameter(np.stack(
            [init_delta_bias(rng.child(1, k), d_inner, dt_min, dt_max) for k in range(K)]
        ))
        self.w_B = uniform_fan_in(rng.child(2), d_inner, (K, d_inner, d_state))
        self.w_C = uniform_fan_in(rng.child(3), d_inner, (K, d_inner, d_state))
        self.a_log = Parameter(np.stack([init_a_log(d_inner, d_state)] * K))
        self.d_skip = Parameter(np.ones((K, d_inner)))
        self.method = method

    def scan_sequences(self, seqs: Tensor) -> Tensor:
        """S6 on ``[4, S, L, D]`` directional sequences, direction k using parameter set k."""
        K, S, L, D = seqs.shape
        delta, Bm, Cm = selective_projection(seqs, self.w_delta, self.b_delta, self.w_B, self.w_C)
        A = ops.scale(ops.exp(self.a_log), -1.0)
        gidx = np.repeat(np.arange(K), S)
        N = Bm.shape[-1]
        y = selective_scan(
            ops.reshape(seqs, (K * S, L, D)),
            ops.reshape(delta, (K * S, L, D)),
            ops.reshape(Bm, (K * S, L, N)),
            ops.reshape(Cm, (K * S, L, N)),
            A, self.d_skip, gidx, method=self.method,
        )
        return ops.reshape(y, (K, S, L, D))

    def scan_region(self, region: Tensor) -> Tensor:
        """serialize -> S6 -> deserialize-and-merge on ``[S, D, h, w]`` regions."""
        h, w = region.shape[-2:]
        seqs = scan.t_serialize_4d(region)
        return scan.t_deserialize_and_merge(self.scan_sequences(seqs), h, w)


def ss2d_global(F: Tensor, core: SS2D) -> Tensor:
    """Whole-map four-direction scan; no partitioning, no shift."""
    return core.scan_region(F)


def ss2d_local(F: Tensor, core: SS2D, window: int, shifted: bool = False, shift: int = 0,
               shift_mode: str = "cyclic") -> Tensor:
    """Windowed four-direction scan.

    Unshifted: pad -> partition -> scan each window -> merge -> crop.
    Shifted (``cyclic``): roll by ``-shift``, the unshifted pipeline, roll back.
    Shifted (``boundary``): partition on a grid offset by ``shift`` without
    rolling; edge windows are smaller and scanned at their own lengths.
    """
    if shifted and shift_mode == "boundary":
        return _ss2d_boundary(F, core, window, shift)
    if shifted:
        F = scan.t_cyclic_shift(F, shift)
    padded, grid = scan.t_pad_to_multiple(F, window)
    wins = scan.t_window_partition(padded, grid)
    merged = scan.t_window_merge(core.scan_region(wins), grid)
    out = scan.t_crop(merged, grid)
    if shifted:
        out = scan.t_cyclic_shift(out, shift, inverse=True)
    return out


def _ss2d_boundary(F: Tensor, core: SS2D, window: int, shift: int) -> Tensor:
    H, W = F.shape[-2:]
    groups = scan.group_regions(scan.shifted_regions(H, W, window, shift))
    parts = []
    for regions in groups.values():
        patches = scan.t_gather_regions(F, regions)
        parts.append(scan.t_scatter_regions(core.scan_region(patches), regions, F.shape))
    return parts[0] if len(parts) == 1 else ops.add_n(parts)


class VSSBlock(Module):
    """Residual four-direction S6 block.

    ``F + out_proj(norm2(ss2d(silu(dwconv(in_a(norm1(F)))))) * silu(in_b(norm1(F))))``
    with ``ss2d`` chosen by ``mode`` (``W``, ``SW`` or ``Global``).
    """

    def __init__(self, rng: Rng, dim: int, mode: str, window: int = 14, shift: int = 7,
                 d_state: int = 8, expand: int = 2, shift_mode: str = "cyclic",
                 dt_min: float = 1e-3, dt_max: float = 1e-1, method: str = "sequential"):
        super().__init__()
        if mode not in BLOCK_MODES:
            raise ValueError(f"block mode must be one of {BLOCK_MODES}, got {mode!r}")
        d_inner = expand * dim
        self.mode, self.window, self.shift, self.shift_mode = mode, window, shift, shift_mode
        self.norm1 = LayerNorm(dim)
        self.in_proj_a = Linear(rng.child(0), dim, d_inner)
        self.in_proj_b = Linear(rng.child(1), dim, d_inner)
        self.dw_kernel = uniform_fan_in(rng.child(2), 9, (d_inner, 3, 3))
        self.dw_bias = uniform_fan_in(rng.child(3), 9, (d_inner,))
        self.core = SS2D(rng.child(4), d_inner, d_state, dt_min, dt_max, method)
        self.norm2 = LayerNorm(d_inner)
        self.out_proj = Linear(rng.child(5), d_inner, dim)

    def mix(self, x: Tensor) -> Tensor:
        """Spatial S6 mixing of a channel-first ``[B, D, h, w]`` map."""
        if self.mode == "Global":
            return ss2d_global(x, self.core)
        h, w = x.shape[-2:]
        win, s = effective_window(h, w, self.window, self.shift)
        return ss2d_local(x, self.core, win, shifted=self.mode == "SW", shift=s, shift_mode=self.shift_mode)

    def forward(self, F: Tensor) -> Tensor:
        x = ops.transpose(F, (0, 2, 3, 1))
        n = self.norm1(x)
        a = ops.transpose(self.in_proj_a(n), (0, 3, 1, 2))
        a = ops.silu(ops.depthwise_conv3x3(a, self.dw_kernel, self.dw_bias))
        y = ops.transpose(self.mix(a), (0, 2, 3, 1))
        y = self.norm2(y)
        z = ops.silu(self.in_proj_b(n))
        out = self.out_proj(ops.mul(y, z))
        return ops.add(F, ops.transpose(out, (0, 3, 1, 2)))


class PatchEmbed(Module):
    """Non-overlapping 4x4 patches -> linear projection -> LayerNorm."""

    def __init__(self, rng: Rng, dim: int, in_chans: int = 3, patch: int = 4):
        super().__init__()
        self.patch = patch
        self.proj = Linear(rng, in_chans * patch * patch, dim)
        self.norm = LayerNorm(dim)

    def forward(self, image: Tensor) -> Tensor:
        B, C, H, W = image.shape
        p = self.patch
        ph, pw = (-H) % p, (-W) % p
        if ph or pw:
            image = ops.pad(image, ((0, 0), (0, 0), (0, ph), (0, pw)))
            H, W = H + ph, W + pw
        x = ops.reshape(image, (B, C, H // p, p, W // p, p))
        x = ops.transpose(x, (0, 2, 4, 1, 3, 5))
        x = ops.reshape(x, (B, H // p, W // p, C * p * p))
        x = self.norm(self.proj(x))
        return ops.transpose(x, (0, 3, 1, 2))


class PatchMerging(Module):
    """2x2 neighbourhoods -> concat (4C) -> LayerNorm -> linear to 2C."""

    def __init__(self, rng: Rng, dim: int):
        super().__init__()
        self.norm = LayerNorm(4 * dim)
        self.reduction = Linear(rng, 4 * dim, 2 * dim, bias=False)

    def forward(self, F: Tensor) -> Tensor:
        B, C, h, w = F.shape
        if h % 2 or w % 2:
            F = ops.pad(F, ((0, 0), (0, 0), (0, h % 2), (0, w % 2)))
            h, w = h + h % 2, w + w % 2
        x = ops.reshape(F, (B, C, h // 2, 2, w // 2, 2))
        x = ops.transpose(x, (0, 2, 4, 5, 3, 1))  # [B, h/2, w/2, dx, dy, C]
        x = ops.reshape(x, (B, h // 2, w // 2, 4 * C))
        x = self.reduction(self.norm(x))
        return ops.transpose(x, (0, 3, 1, 2))


def stage_block_modes(scan_mode: str, depth: int) -> List[str]:
    if scan_mode == "global":
        return ["Global"] * depth
    return ["W" if i % 2 == 0 else "SW" for i in range(depth)]


class Encoder(Module):
    """Four stages at strides 4, 8, 16, 32 with widths C, 2C, 4C, 8C."""

    def __init__(self, rng: Rng, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.patch_embed = PatchEmbed(rng.child(0), cfg.base_dim)
        stages, merges, norms = [], [], []
        for i, st in enumerate(cfg.stages):
            srng = rng.child(1, i)
            blocks = [
                VSSBlock(srng.child(j), st.dim, mode, st.window, st.shift, cfg.d_state, cfg.expand,
                         cfg.shift_mode, cfg.dt_min, cfg.dt_max, cfg.s6_method)
                for j, mode in enumerate(stage_block_modes(st.scan_mode, st.depth))
            ]
            stages.append(_Stage(blocks))
            norms.append(LayerNorm(st.dim))
            if i < 3:
                merges.append(PatchMerging(rng.child(2, i), st.dim))
        self.stages = stages
        self.out_norms = norms
        self.merges = merges

    def forward(self, image: Tensor) -> List[Tensor]:
        x = self.patch_embed(image)
        feats = []
        for i, stage in enumerate(self.stages):
            x = stage(x)
            feats.append(self.out_norms[i](x, axis=1))
            if i < 3:
                x = self.merges[i](x)
        return feats


class _Stage(Module):
    def __init__(self, blocks):
        super().__init__()
        self.blocks = blocks

    def forward(self, x: Tensor) -> Tensor:
        for blk in self.blocks:
            x = blk(x)
        return x


def encoder_forward(image: Tensor, encoder: Encoder) -> List[Tensor]:
    return encoder(image)
