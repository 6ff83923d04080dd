"""Model, stage and decoder configuration."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Tuple

SCAN_MODES = ("local", "global")
SHIFT_MODES = ("cyclic", "boundary")


@dataclass(frozen=True)
class StageConfig:
    depth: int
    dim: int
    scan_mode: str = "local"
    window: int = 14
    shift: int = 7

    def __post_init__(self):
        if self.scan_mode not in SCAN_MODES:
            raise ValueError(f"scan_mode must be one of {SCAN_MODES}, got {self.scan_mode!r}")
        if self.depth < 1 or self.dim < 1:
            raise ValueError(f"stage depth and dim must be >= 1, got {self.depth}, {self.dim}")
        if self.scan_mode == "local":
            if self.depth % 2:
                raise ValueError(f"local stages alternate W/SW blocks and need an even depth, got {self.depth}")
            if not 0 < self.shift < self.window:
                raise ValueError(f"local stage needs 0 < shift < window, got shift={self.shift}, window={self.window}")


@dataclass(frozen=True)
class ModelConfig:
    base_dim: int = 16
    depths: Tuple[int, ...] = (2, 2, 2, 2)
    scan_modes: Tuple[str, ...] = ("local", "local", "global", "global")
    window: int = 14
    shift: int = 7
    # per-stage overrides; None means "use window/shift"
    stage_windows: Optional[Tuple[int, ...]] = None
    stage_shifts: Optional[Tuple[int, ...]] = None
    shift_mode: str = "cyclic"
    d_state: int = 8
    expand: int = 2
    num_classes: int = 3
    image_size: Tuple[int, int] = (64, 64)
    fpn_dim: Optional[int] = None
    ppm_scales: Tuple[int, ...] = (1, 2, 3, 6)
    dt_min: float = 1e-3
    dt_max: float = 1e-1
    s6_method: str = "sequential"

    def __post_init__(self):
        if len(self.depths) != 4 or len(self.scan_modes) != 4:
            raise ValueError("depths and scan_modes need exactly four entries")
        if self.shift_mode not in SHIFT_MODES:
            raise ValueError(f"shift_mode must be one of {SHIFT_MODES}, got {self.shift_mode!r}")
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        self.stages  # validates every stage

    @property
    def dims(self) -> Tuple[int, ...]:
        return tuple(self.base_dim * 2 ** i for i in range(4))

    @property
    def stages(self) -> Tuple[StageConfig, ...]:
        windows = self.stage_windows or (self.window,) * 4
        shifts = self.stage_shifts or (self.shift,) * 4
        return tuple(
            StageConfig(d, c, m, w, s)
            for d, c, m, w, s in zip(self.depths, self.dims, self.scan_modes, windows, shifts)
        )

    @property
    def decoder_dim(self) -> int:
        return self.fpn_dim or 4 * self.base_dim

    def stage_shapes(self, height: Optional[int] = None, width: Optional[int] = None):
        H, W = (height, width) if height else self.image_size
        out, h, w = [], math.ceil(H / 4), math.ceil(W / 4)
        for i, c in enumerate(self.dims):
            out.append((c, h, w))
            h, w = math.ceil(h / 2), math.ceil(w / 2)
        return out

    def decoder_config(self) -> "DecoderConfig":
        _, h, w = self.stage_shapes()[-1]
        side = min(h, w)
        scales = tuple(s for s in self.ppm_scales if s <= side) or (1,)
        return DecoderConfig(self.decoder_dim, scales, self.num_classes)

    def with_(self, **changes) -> "ModelConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class DecoderConfig:
    fpn_dim: int
    ppm_scales: Tuple[int, ...] = (1, 2, 3, 6)
    num_classes: int = 3

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.ppm_scales, self.ppm_scales[1:])) or min(self.ppm_scales) < 1:
            raise ValueError(f"ppm_scales must be strictly increasing positive ints, got {self.ppm_scales}")

    def check_deepest(self, side: int) -> None:
        if max(self.ppm_scales) > side:
            raise ValueError(f"ppm scale {max(self.ppm_scales)} exceeds deepest map side {side}")


def effective_window(h: int, w: int, window: int, shift: int) -> Tuple[int, int]:
    """Window and shift actually used on an ``h x w`` map.

    A window at least as large as the map collapses to the map's short side.
    Otherwise the largest divisor of ``gcd(h, w)`` not above ``window`` is
    used when it is more than half the request (no padding needed), else the
    requested window with padding. The shift keeps its ratio to the window
    and stays inside ``[1, window - 1]``.
    """
    side = min(h, w)
    if window >= side:
        eff = side
    else:
        g = math.gcd(h, w)
        best = max(d for d in range(1, window + 1) if g % d == 0)
        eff = best if 2 * best > window else window
    if eff == window:
        s = shift
    else:
        s = int(round(shift * eff / window))
    s = min(max(s, 1), eff - 1) if eff > 1 else 0
    return eff, s
