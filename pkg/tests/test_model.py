import numpy as np
import pytest

from swinmamba.config import DecoderConfig, ModelConfig
from swinmamba.model import PPM, SwinMambaSeg, UperNetLite
from swinmamba.nn import ShapeError, Tensor, grad_check, no_grad, ops
from swinmamba.checks import GRAD_DT
from swinmamba.nn.rng import Rng

MICRO = ModelConfig(base_dim=4, d_state=2, image_size=(32, 32), **GRAD_DT)


def maps_for(cfg, B=1, seed=0, zero=False):
    rng = np.random.default_rng(seed)
    out = []
    for c, h, w in cfg.stage_shapes():
        arr = np.zeros((B, c, h, w)) if zero else rng.standard_normal((B, c, h, w))
        out.append(Tensor(arr))
    return out


def test_decoder_config_validation():
    with pytest.raises(ValueError):
        DecoderConfig(8, (2, 1))
    with pytest.raises(ValueError):
        DecoderConfig(8, (0, 1))
    with pytest.raises(ValueError):
        DecoderConfig(8, (1, 2, 3)).check_deepest(2)


def test_ppm_constant_input_gives_constant_output():
    ppm = PPM(Rng(0), 6, 4, (1, 2))
    with no_grad():
        out = ppm(Tensor(np.full((1, 6, 4, 4), 0.7))).data
    # zero padding in the 3x3 bottleneck breaks constancy at the border only
    inner = out[:, :, 1:-1, 1:-1]
    np.testing.assert_allclose(inner, inner[:, :, :1, :1] * np.ones_like(inner), atol=1e-13)


def test_ppm_global_branch_is_spatially_uniform():
    ppm = PPM(Rng(1), 3, 2, (1,))
    x = Tensor(np.random.default_rng(2).standard_normal((1, 3, 4, 4)))
    with no_grad():
        branch = ops.bilinear_resize(ppm.branches[0](ops.adaptive_avg_pool(x, 1)), 4, 4).data
    np.testing.assert_allclose(branch, branch[:, :, :1, :1] * np.ones_like(branch), atol=1e-15)


def test_ppm_grad_check():
    ppm = PPM(Rng(3), 4, 3, (1, 2))
    x = Tensor(np.random.default_rng(4).standard_normal((1, 4, 4, 4)))

    def f(x, *ps):
        return ppm(x)

    assert grad_check(f, [x] + list(ppm.parameters()), max_entries=15).max_rel_error <= 1e-4


def test_fpn_zero_maps_zero_biases():
    cfg = MICRO
    dec = UperNetLite(Rng(5), cfg.dims, cfg.decoder_config())
    for _, p in dec.named_parameters():
        if p.ndim == 1:
            p.data[:] = 0.0
    maps = maps_for(cfg, zero=True)
    with no_grad():
        fused = dec.fpn_fuse(maps, dec.ppm(maps[-1])).data
    assert fused.shape == (1, cfg.decoder_dim, 8, 8)
    np.testing.assert_array_equal(fused, 0.0)


def test_fpn_grad_check_tiny():
    cfg = MICRO
    dec = UperNetLite(Rng(6), cfg.dims, cfg.decoder_config())
    maps = maps_for(cfg, seed=7)

    def f(*ts):
        return dec(list(ts[:4]))

    res = grad_check(f, maps + list(dec.parameters()), max_entries=6)
    assert res.max_rel_error <= 1e-4


def test_ladder_violation_rejected():
    cfg = MICRO
    dec = UperNetLite(Rng(8), cfg.dims, cfg.decoder_config())
    maps = maps_for(cfg)
    with pytest.raises(ShapeError):
        dec(maps[:3])
    maps[2] = Tensor(np.zeros((1, cfg.dims[2], 3, 3)))
    with pytest.raises(ShapeError):
        dec(maps)


def test_toy_logits_shape_and_softmax():
    model = SwinMambaSeg(ModelConfig(), seed=0)
    img = np.random.default_rng(9).uniform(size=(2, 3, 64, 64))
    logits = model.predict_logits(img)
    assert logits.shape == (2, 3, 64, 64)
    probs = ops.softmax_np(logits)
    assert np.abs(probs.sum(axis=1) - 1).max() <= 1e-12
    assert model.predict(img).dtype == np.uint8


def test_full_scale_stage_geometry():
    cfg = ModelConfig(base_dim=96, image_size=(224, 224), d_state=1, expand=1)
    assert cfg.stage_shapes() == [(96, 56, 56), (192, 28, 28), (384, 14, 14), (768, 7, 7)]


def test_micro_model_end_to_end_grad_check():
    model = SwinMambaSeg(MICRO, seed=1)
    img = Tensor(np.random.default_rng(10).uniform(size=(1, 3, 32, 32)))

    def f(x, *ps):
        return model(x)

    res = grad_check(f, [img] + list(model.parameters()), max_entries=2, name="micro-model")
    # Central differences at step 1e-5 resolve about 1e-10 of the contracted
    # output here. Above 1e-6 that is a 1e-4 relative check; below it only the
    # absolute error is meaningful.
    for _, a, n in res.samples:
        big = np.maximum(np.abs(a), np.abs(n)) >= 1e-6
        rel = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
        assert np.all(rel[big] <= 1e-4)
        assert np.all(np.abs(a - n)[~big] <= 2e-10)


def test_checkpoint_roundtrip(tmp_path):
    a = SwinMambaSeg(MICRO, seed=2)
    a.save(tmp_path / "m.swmc")
    b = SwinMambaSeg(MICRO, seed=3)
    b.load(tmp_path / "m.swmc")
    img = np.random.default_rng(11).uniform(size=(1, 3, 32, 32))
    np.testing.assert_array_equal(a.predict_logits(img), b.predict_logits(img))
