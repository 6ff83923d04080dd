import csv

import numpy as np
import pytest

from swinmamba import bench
from swinmamba.bench import BENCH_FIELDS, _Weights, bench_resolution, global_path, windowed_path
from swinmamba.nn.rng import Rng


def test_window_covering_map_equals_global():
    F = Rng(0).normal((1, 6, 8, 8))
    wt = _Weights(0, 6, 3, np.float64)
    np.testing.assert_array_equal(windowed_path(F, wt, 8), global_path(F, wt))


def test_windowed_path_preserves_shape_with_padding():
    F = Rng(1).normal((2, 4, 10, 7))
    wt = _Weights(1, 4, 2, np.float64)
    assert windowed_path(F, wt, 4).shape == F.shape


def test_row_geometry_and_token_scaling():
    a = bench_resolution(64, window=14, threads=1, dim=8, d_state=2)
    b = bench_resolution(128, window=14, threads=1, dim=8, d_state=2)
    assert (a.map_side, a.tokens) == (16, 256)
    assert b.tokens == 4 * a.tokens
    assert a.eff_window == 8 and b.eff_window == 8
    for r in (a, b):
        assert r.global_median_s > 0 and r.window_median_s > 0
        assert r.speedup == pytest.approx(r.global_median_s / r.window_median_s)
        assert np.isfinite(r.global_checksum) and np.isfinite(r.window_checksum)


def test_single_thread_speedup_is_sane():
    # same work either way at one thread; only the cut differs
    r = bench_resolution(128, window=14, threads=1, dim=16, d_state=4)
    assert 0.3 <= r.speedup <= 3.0


def test_checksums_do_not_depend_on_threads():
    a = bench_resolution(64, threads=1, dim=8, d_state=2)
    b = bench_resolution(64, threads=3, dim=8, d_state=2)
    assert (a.global_checksum, a.window_checksum) == (b.global_checksum, b.window_checksum)


def test_f32_precision_runs():
    r = bench_resolution(64, precision="f32", dim=8, d_state=2)
    assert r.precision == "f32" and np.isfinite(r.window_checksum)


def test_rejects_too_few_trials():
    with pytest.raises(ValueError):
        bench_resolution(64, trials=3)
    with pytest.raises(ValueError):
        bench_resolution(64, warmup=1)


def test_csv_and_table(tmp_path):
    rows = bench.run_bench([64], dim=8, d_state=2, out=tmp_path / "b.csv")
    with open(tmp_path / "b.csv") as fh:
        got = list(csv.DictReader(fh))
    assert tuple(got[0]) == BENCH_FIELDS and len(got) == 1
    assert float(got[0]["speedup"]) == rows[0].speedup
    table = bench.format_table(rows)
    assert table.splitlines()[0].split()[-1] == "speedup" and len(table.splitlines()) == 2
