"""Spatial ordering: window partition/merge, cyclic shift, four-way scan orders.

Everything here is a pure numpy function on channel-first maps
``[..., C, H, W]`` and is exact (pure index shuffling, no arithmetic except the
final directional sum). The differentiable wrappers used by the model live at
the bottom of the module.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .nn import ops
from .nn.tensor import ShapeError, Tensor

DIRECTIONS = ("LR", "RL", "TB", "BT")


@dataclass(frozen=True)
class WindowGrid:
    """Geometry of a padded map cut into ``w x w`` windows."""

    H: int
    W: int
    w: int
    pad_h: int = 0
    pad_w: int = 0

    def __post_init__(self):
        if self.w < 1 or self.H % self.w or self.W % self.w:
            raise ShapeError(f"WindowGrid: {self.H}x{self.W} not divisible by window {self.w}")

    @property
    def rows(self) -> int:
        return self.H // self.w

    @property
    def cols(self) -> int:
        return self.W // self.w

    @property
    def N(self) -> int:
        return self.rows * self.cols

    @property
    def orig_shape(self) -> Tuple[int, int]:
        return self.H - self.pad_h, self.W - self.pad_w


@dataclass(frozen=True, eq=False)
class ScanOrder:
    """Permutation of the ``h*w`` row-major cell ids of a region for one direction.

    ``perm[k]`` is the cell visited at step ``k``.
    """

    direction: str
    h: int
    w: int
    perm: np.ndarray = field(repr=False)

    @property
    def inverse(self) -> np.ndarray:
        inv = np.empty_like(self.perm)
        inv[self.perm] = np.arange(self.perm.size)
        return inv


def pad_to_multiple(F: np.ndarray, w: int) -> Tuple[np.ndarray, WindowGrid]:
    """Zero-pad the bottom/right spatial edges up to multiples of ``w``."""
    if w < 1:
        raise ValueError(f"window size must be >= 1, got {w}")
    H, W = F.shape[-2:]
    ph, pw = (-H) % w, (-W) % w
    if ph or pw:
        F = np.pad(F, [(0, 0)] * (F.ndim - 2) + [(0, ph), (0, pw)])
    return F, WindowGrid(H + ph, W + pw, w, ph, pw)


def crop_to_grid(F: np.ndarray, grid: WindowGrid) -> np.ndarray:
    h, w = grid.orig_shape
    return F[..., :h, :w]


def window_partition(F: np.ndarray, grid: WindowGrid) -> np.ndarray:
    """``[B, C, H, W] -> [B*N, C, w, w]``; windows row-major within each batch item."""
    if F.ndim != 4 or F.shape[-2:] != (grid.H, grid.W):
        raise ShapeError(f"window_partition: map {F.shape} inconsistent with grid {grid.H}x{grid.W}")
    B, C = F.shape[:2]
    w = grid.w
    x = F.reshape(B, C, grid.rows, w, grid.cols, w).transpose(0, 2, 4, 1, 3, 5)
    return np.ascontiguousarray(x).reshape(B * grid.N, C, w, w)


def window_merge(windows: np.ndarray, grid: WindowGrid) -> np.ndarray:
    """Inverse of :func:`window_partition`."""
    if windows.ndim != 4 or windows.shape[0] % grid.N or windows.shape[-2:] != (grid.w, grid.w):
        raise ShapeError(f"window_merge: {windows.shape} does not hold whole sets of {grid.N} windows")
    B = windows.shape[0] // grid.N
    C, w = windows.shape[1], grid.w
    x = windows.reshape(B, grid.rows, grid.cols, C, w, w).transpose(0, 3, 1, 4, 2, 5)
    return np.ascontiguousarray(x).reshape(B, C, grid.H, grid.W)


def cyclic_shift(F: np.ndarray, s: int, inverse: bool = False) -> np.ndarray:
    """Roll both spatial axes by ``-s`` (``+s`` when ``inverse``)."""
    H, W = F.shape[-2:]
    if not 0 <= s < min(H, W):
        raise ValueError(f"shift {s} outside [0, {min(H, W)})")
    k = s if inverse else -s
    return np.roll(F, (k, k), axis=(-2, -1))


@lru_cache(maxsize=512)
def _perm(h: int, w: int, direction: str) -> np.ndarray:
    ids = np.arange(h * w).reshape(h, w)
    if direction == "LR":
        p = ids.reshape(-1)
    elif direction == "RL":
        p = ids.reshape(-1)[::-1]
    elif direction == "TB":
        p = ids.T.reshape(-1)
    elif direction == "BT":
        p = ids.T.reshape(-1)[::-1]
    else:
        raise ValueError(f"unknown direction {direction!r}; expected one of {DIRECTIONS}")
    p = np.ascontiguousarray(p)
    p.setflags(write=False)
    return p


def scan_order(h: int, w: int, direction: str) -> ScanOrder:
    if h < 1 or w < 1:
        raise ValueError(f"scan_order: region must be at least 1x1, got {h}x{w}")
    return ScanOrder(direction, h, w, _perm(h, w, direction))


def scan_orders(h: int, w: int) -> List[ScanOrder]:
    return [scan_order(h, w, d) for d in DIRECTIONS]


def serialize(region: np.ndarray, order: ScanOrder) -> np.ndarray:
    """``[..., C, h, w] -> [..., L, C]`` following one scan order."""
    flat = region.reshape(region.shape[:-2] + (-1,))
    return np.ascontiguousarray(np.swapaxes(flat[..., order.perm], -1, -2))


def deserialize(seq: np.ndarray, order: ScanOrder) -> np.ndarray:
    """Inverse of :func:`serialize`: ``[..., L, C] -> [..., C, h, w]``."""
    if seq.shape[-2] != order.h * order.w:
        raise ShapeError(f"deserialize: length {seq.shape[-2]} != {order.h}x{order.w}")
    chan = np.swapaxes(seq, -1, -2)
    out = chan[..., order.inverse]
    return np.ascontiguousarray(out).reshape(seq.shape[:-2] + (seq.shape[-1], order.h, order.w))


def serialize_4d(region: np.ndarray) -> np.ndarray:
    """All four directional sequences, stacked: ``[4, ..., L, C]`` in LR, RL, TB, BT order."""
    h, w = region.shape[-2:]
    return np.stack([serialize(region, o) for o in scan_orders(h, w)])


def deserialize_and_merge(outs: np.ndarray, h: int, w: int) -> np.ndarray:
    """Undo each direction's permutation and sum the four maps."""
    if outs.shape[0] != 4 or outs.shape[-2] != h * w:
        raise ShapeError(f"deserialize_and_merge: expected [4, ..., {h * w}, C], got {outs.shape}")
    orders = scan_orders(h, w)
    total = deserialize(outs[0], orders[0])
    for k in range(1, 4):
        total = total + deserialize(outs[k], orders[k])
    return total


# -- boundary-shift partition (variable-size edge windows) ----------------------

def shifted_regions(H: int, W: int, w: int, s: int) -> List[Tuple[int, int, int, int]]:
    """Rectangles ``(r0, r1, c0, c1)`` of a window grid offset by ``s``, no roll.

    Interior windows are ``w x w``; the first row/column of windows is ``s``
    wide and the last holds whatever remains.
    """
    if w < 1 or not 0 <= s < w:
        raise ValueError(f"boundary shift needs 0 <= s < w, got w={w}, s={s}")

    def cuts(n):
        c = [0] + [x for x in range(s if s else w, n, w)] + [n]
        return sorted(set(c))

    rc, cc = cuts(H), cuts(W)
    return [(rc[i], rc[i + 1], cc[j], cc[j + 1]) for i in range(len(rc) - 1) for j in range(len(cc) - 1)]


def group_regions(regions: Sequence[Tuple[int, int, int, int]]) -> Dict[Tuple[int, int], List[tuple]]:
    groups: Dict[Tuple[int, int], List[tuple]] = {}
    for r in regions:
        groups.setdefault((r[1] - r[0], r[3] - r[2]), []).append(r)
    return groups


def gather_regions(F: np.ndarray, regions: Sequence[tuple]) -> np.ndarray:
    """Stack same-shaped rectangles of ``[B, C, H, W]`` into ``[B*n, C, h, w]`` (batch-major)."""
    parts = np.stack([F[:, :, r0:r1, c0:c1] for r0, r1, c0, c1 in regions], axis=1)
    B, n = parts.shape[:2]
    return np.ascontiguousarray(parts).reshape((B * n,) + parts.shape[2:])


def scatter_regions(patches: np.ndarray, regions: Sequence[tuple], shape: Tuple[int, ...]) -> np.ndarray:
    """Adjoint of :func:`gather_regions` into a zero map of ``shape``."""
    out = np.zeros(shape, dtype=patches.dtype)
    n = len(regions)
    parts = patches.reshape((shape[0], n) + patches.shape[1:])
    for k, (r0, r1, c0, c1) in enumerate(regions):
        out[:, :, r0:r1, c0:c1] += parts[:, k]
    return out


# -- index maps for dumps ------------------------------------------------------

def window_scan_indices(H: int, W: int, window: int, shift: int = 0, mode: str = "window") -> List[tuple]:
    """Per-window, per-direction visiting order in original cell ids.

    ``mode`` is ``global``, ``window``, ``shifted`` (cyclic roll) or
    ``boundary`` (offset grid). Padding cells are reported as ``-1``.
    Returns ``(window_id, direction, indices)`` tuples.
    """
    ids = np.arange(H * W, dtype=np.int64).reshape(1, 1, H, W)
    rows = []
    if mode == "global":
        seqs = serialize_4d(ids)
        for k, d in enumerate(DIRECTIONS):
            rows.append((0, d, seqs[k, 0, :, 0]))
        return rows
    if mode == "boundary":
        for wid, (r0, r1, c0, c1) in enumerate(shifted_regions(H, W, window, shift)):
            seqs = serialize_4d(ids[:, :, r0:r1, c0:c1])
            for k, d in enumerate(DIRECTIONS):
                rows.append((wid, d, seqs[k, 0, :, 0]))
        return rows
    if mode not in ("window", "shifted"):
        raise ValueError(f"unknown scan mode {mode!r}")
    src = cyclic_shift(ids, shift) if mode == "shifted" else ids
    padded, grid = pad_to_multiple(src + 1, window)
    wins = window_partition(padded, grid) - 1
    seqs = serialize_4d(wins)
    for wid in range(grid.N):
        for k, d in enumerate(DIRECTIONS):
            rows.append((wid, d, seqs[k, wid, :, 0]))
    return rows


# -- differentiable wrappers ---------------------------------------------------

def t_pad_to_multiple(F: Tensor, w: int) -> Tuple[Tensor, WindowGrid]:
    H, W = F.shape[-2:]
    grid = WindowGrid(H + (-H) % w, W + (-W) % w, w, (-H) % w, (-W) % w)
    if not (grid.pad_h or grid.pad_w):
        return F, grid
    widths = [(0, 0)] * (F.ndim - 2) + [(0, grid.pad_h), (0, grid.pad_w)]
    return ops.pad(F, widths), grid


def t_crop(F: Tensor, grid: WindowGrid) -> Tensor:
    if not (grid.pad_h or grid.pad_w):
        return F
    return ops.crop(F, F.shape[:-2] + grid.orig_shape)


def t_window_partition(F: Tensor, grid: WindowGrid) -> Tensor:
    return ops.apply_linear_map(
        F, lambda a: window_partition(a, grid), lambda g: window_merge(g, grid), "window_partition"
    )


def t_window_merge(windows: Tensor, grid: WindowGrid) -> Tensor:
    return ops.apply_linear_map(
        windows, lambda a: window_merge(a, grid), lambda g: window_partition(g, grid), "window_merge"
    )


def t_cyclic_shift(F: Tensor, s: int, inverse: bool = False) -> Tensor:
    H, W = F.shape[-2:]
    if not 0 <= s < min(H, W):
        raise ValueError(f"shift {s} outside [0, {min(H, W)})")
    if s == 0:
        return F
    k = s if inverse else -s
    return ops.roll(F, (k, k), (-2, -1))


def t_serialize_4d(region: Tensor) -> Tensor:
    h, w = region.shape[-2:]
    return ops.apply_linear_map(
        region, serialize_4d, lambda g: deserialize_and_merge(g, h, w), "serialize_4d"
    )


def t_deserialize_and_merge(outs: Tensor, h: int, w: int) -> Tensor:
    return ops.apply_linear_map(
        outs, lambda a: deserialize_and_merge(a, h, w), serialize_4d, "deserialize_and_merge"
    )


def t_gather_regions(F: Tensor, regions: Sequence[tuple]) -> Tensor:
    shape = F.shape
    return ops.apply_linear_map(
        F, lambda a: gather_regions(a, regions), lambda g: scatter_regions(g, regions, shape), "gather_regions"
    )


def t_scatter_regions(patches: Tensor, regions: Sequence[tuple], shape: Tuple[int, ...]) -> Tensor:
    return ops.apply_linear_map(
        patches, lambda a: scatter_regions(a, regions, shape), lambda g: gather_regions(g, regions), "scatter_regions"
    )
