"""Throughput of global sequential vs windowed parallel four-direction S6.

Both paths run the same compiled recurrence and the same projections on the
same fixed-seed map; they differ only in how the map is cut into sequences.
The global path scans four ``h*w``-long sequences per map on one thread.
The windowed path scans four ``w*w``-long sequences per window and spreads
the windows over the worker pool.
"""
from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import numpy as np

from . import scan
from .config import effective_window
from .nn.ops import softplus_np
from .nn.parallel import get_num_threads, set_num_threads
from .nn.rng import Rng
from .s6 import init_a_log, init_delta_bias, scan_sequential

BENCH_FIELDS = (
    "resolution", "map_side", "tokens", "window", "eff_window", "threads", "precision",
    "global_median_s", "global_iqr_s", "window_median_s", "window_iqr_s",
    "global_tokens_per_s", "window_tokens_per_s", "speedup", "global_checksum", "window_checksum",
)


@dataclass
class BenchRow:
    resolution: int
    map_side: int
    tokens: int
    window: int
    eff_window: int
    threads: int
    precision: str
    global_median_s: float
    global_iqr_s: float
    window_median_s: float
    window_iqr_s: float
    global_tokens_per_s: float
    window_tokens_per_s: float
    speedup: float
    global_checksum: float
    window_checksum: float


class _Weights:
    """Fixed per-direction projections shared by both paths."""

    def __init__(self, seed: int, D: int, N: int, dtype):
        rng = Rng(seed, 99)
        K = len(scan.DIRECTIONS)
        bound = 1.0 / np.sqrt(D)
        self.w_delta = rng.child(0).uniform(-bound, bound, (K, D, D)).astype(dtype)
        self.b_delta = np.stack([init_delta_bias(rng.child(1, k), D, 1e-3, 1e-1) for k in range(K)]).astype(dtype)
        self.w_B = rng.child(2).uniform(-bound, bound, (K, D, N)).astype(dtype)
        self.w_C = rng.child(3).uniform(-bound, bound, (K, D, N)).astype(dtype)
        self.A = (-np.exp(np.stack([init_a_log(D, N)] * K))).astype(dtype)
        self.D = np.ones((K, D), dtype=dtype)


def _four_way_s6(regions: np.ndarray, wt: _Weights) -> np.ndarray:
    """``[S, D, h, w]`` regions -> summed four-direction S6 output, same shape."""
    h, w = regions.shape[-2:]
    seqs = scan.serialize_4d(regions)  # [4, S, L, D]
    K, S, L, D = seqs.shape
    N = wt.w_B.shape[-1]
    flat = seqs.reshape(K, S * L, D)
    delta = softplus_np(flat @ wt.w_delta + wt.b_delta[:, None, :])
    Bm = flat @ wt.w_B
    Cm = flat @ wt.w_C
    y = scan_sequential(
        seqs.reshape(K * S, L, D), delta.reshape(K * S, L, D), Bm.reshape(K * S, L, N),
        Cm.reshape(K * S, L, N), wt.A, wt.D, np.repeat(np.arange(K), S),
    )
    return scan.deserialize_and_merge(y.reshape(K, S, L, D), h, w)


def global_path(F: np.ndarray, wt: _Weights) -> np.ndarray:
    return _four_way_s6(F, wt)


def windowed_path(F: np.ndarray, wt: _Weights, window: int) -> np.ndarray:
    padded, grid = scan.pad_to_multiple(F, window)
    wins = scan.window_partition(padded, grid)
    out = scan.window_merge(_four_way_s6(wins, wt), grid)
    return scan.crop_to_grid(out, grid)


def _time(fn, trials: int, warmup: int):
    for _ in range(warmup):
        fn()
    times = []
    out = None
    for _ in range(trials):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    q1, med, q3 = np.percentile(times, [25, 50, 75])
    return float(med), float(q3 - q1), out


def bench_resolution(resolution: int, window: int = 14, threads: int = 1, precision: str = "f64",
                     dim: int = 32, d_state: int = 8, batch: int = 1, trials: int = 5, warmup: int = 2,
                     seed: int = 0) -> BenchRow:
    """Time both paths on a stage-1 map of an input ``resolution x resolution``."""
    if trials < 5 or warmup < 2:
        raise ValueError("bench needs at least 5 timed trials and 2 warmups")
    dtype = {"f64": np.float64, "f32": np.float32}[precision]
    side = resolution // 4
    eff, _ = effective_window(side, side, window, max(1, window // 2))
    F = Rng(seed, 98).normal((batch, dim, side, side)).astype(dtype)
    wt = _Weights(seed, dim, d_state, dtype)

    prev = get_num_threads()
    try:
        set_num_threads(1)
        g_med, g_iqr, g_out = _time(lambda: global_path(F, wt), trials, warmup)
        set_num_threads(threads)
        w_med, w_iqr, w_out = _time(lambda: windowed_path(F, wt, eff), trials, warmup)
    finally:
        set_num_threads(prev)
    tokens = batch * side * side
    return BenchRow(
        resolution, side, tokens, window, eff, threads, precision,
        g_med, g_iqr, w_med, w_iqr, tokens / g_med, tokens / w_med, g_med / w_med,
        float(g_out.sum(dtype=np.float64)), float(w_out.sum(dtype=np.float64)),
    )


def run_bench(resolutions: Iterable[int], window: int = 14, threads: int = 1, precision: str = "f64",
              dim: int = 32, d_state: int = 8, batch: int = 1, trials: int = 5, warmup: int = 2,
              seed: int = 0, out: Optional[Path] = None) -> List[BenchRow]:
    rows = [bench_resolution(r, window, threads, precision, dim, d_state, batch, trials, warmup, seed)
            for r in resolutions]
    if out is not None:
        write_csv(out, rows)
    return rows


def write_csv(path: Path, rows: Sequence[BenchRow]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=BENCH_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in asdict(r).items()})


def format_table(rows: Sequence[BenchRow]) -> str:
    head = f"{'res':>5} {'map':>5} {'tokens':>7} {'w':>3} {'thr':>3} {'prec':>4} " \
           f"{'global s':>10} {'window s':>10} {'global tok/s':>13} {'window tok/s':>13} {'speedup':>8}"
    lines = [head]
    for r in rows:
        lines.append(
            f"{r.resolution:>5} {r.map_side:>5} {r.tokens:>7} {r.eff_window:>3} {r.threads:>3} {r.precision:>4} "
            f"{r.global_median_s:>10.4f} {r.window_median_s:>10.4f} {r.global_tokens_per_s:>13.0f} "
            f"{r.window_tokens_per_s:>13.0f} {r.speedup:>8.3f}"
        )
    return "\n".join(lines)
