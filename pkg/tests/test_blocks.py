import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from swinmamba import scan
from swinmamba.blocks import (
    SS2D, Encoder, PatchEmbed, PatchMerging, VSSBlock, ss2d_global, ss2d_local, stage_block_modes,
)
from swinmamba.config import ModelConfig, StageConfig, effective_window
from swinmamba.nn import Tensor, grad_check, no_grad
from swinmamba.checks import GRAD_DT
from swinmamba.nn.rng import Rng


def core(seed=0, d=4, n=3):
    return SS2D(Rng(seed), d, n)


def rand_map(seed, *shape):
    return Tensor(np.random.default_rng(seed).standard_normal(shape))


# -- config -----------------------------------------------------------------------------

def test_stage_config_invariants():
    StageConfig(2, 8, "local", 14, 7)
    StageConfig(3, 8, "global")
    with pytest.raises(ValueError):
        StageConfig(3, 8, "local")
    with pytest.raises(ValueError):
        StageConfig(2, 8, "local", 14, 14)
    with pytest.raises(ValueError):
        StageConfig(2, 8, "local", 14, 0)
    with pytest.raises(ValueError):
        StageConfig(2, 8, "diagonal")


def test_model_config_defaults():
    cfg = ModelConfig()
    assert cfg.dims == (16, 32, 64, 128)
    assert cfg.scan_modes == ("local", "local", "global", "global")
    assert (cfg.window, cfg.shift) == (14, 7)
    assert cfg.stage_shapes() == [(16, 16, 16), (32, 8, 8), (64, 4, 4), (128, 2, 2)]
    assert cfg.decoder_config().ppm_scales == (1, 2)


@pytest.mark.parametrize("h,w,win,shift,want", [
    (56, 56, 14, 7, (14, 7)),
    (28, 28, 14, 7, (14, 7)),
    (16, 16, 14, 7, (8, 4)),
    (8, 8, 14, 7, (8, 4)),
    (14, 14, 14, 7, (14, 7)),
    (10, 10, 7, 3, (5, 2)),
    (11, 13, 7, 3, (7, 3)),
    (2, 2, 7, 3, (2, 1)),
])
def test_effective_window(h, w, win, shift, want):
    assert effective_window(h, w, win, shift) == want


# -- scan blocks -----------------------------------------------------------------------

@pytest.mark.parametrize("H,W,w,s", [(8, 8, 4, 2), (6, 10, 4, 1), (9, 9, 3, 2), (5, 7, 4, 3)])
def test_shift_equivalence(H, W, w, s):
    c = core(1)
    F = rand_map(2, 2, 4, H, W)
    with no_grad():
        sw = ss2d_local(F, c, w, shifted=True, shift=s).data
        rolled = Tensor(scan.cyclic_shift(F.data, s))
        ref = scan.cyclic_shift(ss2d_local(rolled, c, w).data, s, inverse=True)
    np.testing.assert_array_equal(sw, ref)


def test_single_window_equals_global():
    c = core(3)
    F = rand_map(4, 1, 4, 6, 6)
    with no_grad():
        np.testing.assert_array_equal(ss2d_local(F, c, 6).data, ss2d_global(F, c).data)


def test_global_on_single_cell_is_four_length_one_scans():
    c = core(5)
    F = rand_map(6, 1, 4, 1, 1)
    with no_grad():
        out = ss2d_global(F, c).data
        seqs = scan.t_serialize_4d(F)
        per_dir = c.scan_sequences(seqs).data
    np.testing.assert_allclose(out[0, :, 0, 0], per_dir[:, 0, 0, :].sum(axis=0), rtol=1e-15)


@given(st.integers(1, 12), st.integers(1, 12), st.integers(2, 6), st.sampled_from(["W", "SW", "Global"]),
       st.sampled_from(["cyclic", "boundary"]))
@settings(max_examples=40, deadline=None)
def test_block_preserves_shape(h, w, win, mode, shift_mode):
    blk = VSSBlock(Rng(7), 4, mode, window=win, shift=win // 2, d_state=2, shift_mode=shift_mode)
    F = rand_map(8, 2, 4, h, w)
    with no_grad():
        assert blk(F).shape == (2, 4, h, w)


def test_boundary_mode_differs_from_cyclic_and_covers_every_cell():
    c = core(9)
    F = rand_map(10, 1, 4, 8, 8)
    with no_grad():
        a = ss2d_local(F, c, 4, shifted=True, shift=2, shift_mode="boundary").data
        b = ss2d_local(F, c, 4, shifted=True, shift=2, shift_mode="cyclic").data
    assert a.shape == b.shape and not np.array_equal(a, b)
    assert np.all(a != 0)


def test_zero_out_proj_makes_block_identity():
    for mode in ("W", "SW", "Global"):
        blk = VSSBlock(Rng(11), 4, mode, window=4, shift=2, d_state=2)
        blk.out_proj.weight.data[:] = 0.0
        blk.out_proj.bias.data[:] = 0.0
        F = rand_map(12, 1, 4, 8, 8)
        with no_grad():
            np.testing.assert_array_equal(blk(F).data, F.data)


def test_block_rejects_unknown_mode():
    with pytest.raises(ValueError):
        VSSBlock(Rng(0), 4, "Diag")


def _param_inputs(module):
    return [p for _, p in module.named_parameters()]


@pytest.mark.parametrize("mode", ["W", "SW", "Global"])
def test_block_grad_check(mode):
    blk = VSSBlock(Rng(13), 4, mode, window=4, shift=2, d_state=3, **GRAD_DT)
    F = rand_map(14, 1, 4, 8, 8)
    params = _param_inputs(blk)

    def f(x, *ps):
        return blk(x)

    res = grad_check(f, [F] + params, name=f"vss-{mode}", max_entries=12)
    assert res.max_rel_error <= 1e-4


def test_boundary_block_grad_check():
    blk = VSSBlock(Rng(15), 4, "SW", window=4, shift=1, d_state=2, shift_mode="boundary", **GRAD_DT)
    F = rand_map(16, 1, 4, 6, 7)

    def f(x, *ps):
        return blk(x)

    assert grad_check(f, [F] + _param_inputs(blk), max_entries=10).max_rel_error <= 1e-4


# -- embed, merging, encoder --------------------------------------------------------------

def test_patch_embed_shapes_and_zero_image():
    pe = PatchEmbed(Rng(17), 96)
    with no_grad():
        assert pe(Tensor(np.zeros((1, 3, 224, 224)))).shape == (1, 96, 56, 56)
    pe = PatchEmbed(Rng(18), 8)
    pe.proj.bias.data[:] = 0.0
    with no_grad():
        pre = pe.proj(Tensor(np.zeros((1, 4, 4, 48))))
    np.testing.assert_array_equal(pre.data, 0.0)


def test_patch_embed_grad_check():
    pe = PatchEmbed(Rng(19), 4)

    def f(x, *ps):
        return pe(x)

    assert grad_check(f, [rand_map(20, 1, 3, 8, 8)] + _param_inputs(pe), max_entries=20).max_rel_error <= 1e-4


def test_patch_merging_shapes_and_constant_field():
    pm = PatchMerging(Rng(21), 8)
    with no_grad():
        assert pm(Tensor(np.zeros((1, 8, 56, 56)))).shape == (1, 16, 28, 28)
        assert pm(Tensor(np.zeros((1, 8, 5, 7)))).shape == (1, 16, 3, 4)
    pm = PatchMerging(Rng(22), 2)
    pm.reduction.weight.data[:] = np.eye(8, 4)
    F = Tensor(np.random.default_rng(23).standard_normal((1, 2, 1, 1)) * np.ones((1, 2, 4, 6)))
    with no_grad():
        out = pm(F).data
    np.testing.assert_allclose(out, out[:, :, :1, :1] * np.ones_like(out), atol=1e-14)


def test_patch_merging_grad_check():
    pm = PatchMerging(Rng(24), 3)

    def f(x, *ps):
        return pm(x)

    assert grad_check(f, [rand_map(25, 1, 3, 4, 6)] + _param_inputs(pm)).max_rel_error <= 1e-4


def test_stage_block_modes_alternate():
    assert stage_block_modes("local", 4) == ["W", "SW", "W", "SW"]
    assert stage_block_modes("global", 3) == ["Global"] * 3


def test_encoder_toy_shapes_and_determinism():
    cfg = ModelConfig()
    img = rand_map(26, 2, 3, 64, 64)
    with no_grad():
        a = Encoder(Rng(0), cfg)(img)
        b = Encoder(Rng(0), cfg)(img)
    assert [m.shape for m in a] == [(2, 16, 16, 16), (2, 32, 8, 8), (2, 64, 4, 4), (2, 128, 2, 2)]
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.data, y.data)


def test_encoder_rejects_odd_local_depth():
    with pytest.raises(ValueError):
        ModelConfig(depths=(3, 2, 2, 2))


def test_local_blocks_own_their_parameters():
    enc = Encoder(Rng(0), ModelConfig(base_dim=4))
    w, sw = enc.stages[0].blocks
    assert w.mode == "W" and sw.mode == "SW"
    assert not np.array_equal(w.core.w_B.data, sw.core.w_B.data)
