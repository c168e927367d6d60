"""Encoding network: init statistics, shape contracts, differentiability."""
import numpy as np
import pytest

import lumos.autodiff as ad
from lumos.encoder import EncoderConfig, encode, encode_images, init_weights
from lumos.errors import ConfigError, ShapeMismatch


def test_init_deterministic():
    cfg = EncoderConfig(n=2, k=3, channels=8, blocks=2)
    a = init_weights(cfg, seed=5)
    b = init_weights(cfg, seed=5)
    assert a.names() == b.names()
    for name in a.names():
        assert np.array_equal(a.arrays[name], b.arrays[name])
    c = init_weights(cfg, seed=6)
    assert not np.array_equal(a.arrays["w_in"], c.arrays["w_in"])


def test_init_he_statistics():
    # sample statistics over many draws: mean ~ 0, var ~ 2 / fan_in
    cfg = EncoderConfig(n=4, k=4, channels=32, blocks=1)
    w = init_weights(cfg, seed=0).arrays["block0_w1"]
    fan_in = 3 * 3 * 32
    assert abs(w.mean()) < 0.005
    assert abs(w.var() / (2.0 / fan_in) - 1.0) < 0.05


def test_init_zero_biases():
    cfg = EncoderConfig(n=1, k=1, channels=4, blocks=1)
    w = init_weights(cfg, seed=1)
    biases = [n for n in w.names() if w.arrays[n].ndim == 1]
    assert len(biases) == 4
    for name in biases:
        assert np.array_equal(w.arrays[name], np.zeros_like(w.arrays[name]))


def test_blocks_zero_degenerate():
    cfg = EncoderConfig(n=1, k=1, channels=4, blocks=0)
    w = init_weights(cfg, seed=0)
    assert w.names() == ["w_in", "b_in", "w_out", "b_out"]
    out = encode_images([np.zeros((6, 6, 3))], w)
    assert len(out) == 1 and out[0].shape == (6, 6, 3)


def test_zero_weights_give_half():
    cfg = EncoderConfig(n=2, k=2, channels=4, blocks=1)
    w = init_weights(cfg, seed=0)
    for name in w.arrays:
        w.arrays[name][:] = 0.0
    outs = encode_images([np.random.default_rng(0).random((5, 5, 3))] * 2, w)
    for o in outs:
        assert np.array_equal(o, np.full((5, 5, 3), 0.5))


def test_shape_contract_n4_k4():
    # 64x64x12 feature in, 64x64x12 out before the split
    cfg = EncoderConfig(n=4, k=4, channels=8, blocks=1)
    w = init_weights(cfg, seed=2)
    rng = np.random.default_rng(3)
    views = [rng.random((16, 16, 3)) for _ in range(4)]
    outs = encode_images(views, w)
    assert len(outs) == 4
    assert all(o.shape == (16, 16, 3) for o in outs)


def test_output_count_is_k_regardless_of_n():
    cfg = EncoderConfig(n=2, k=5, channels=4, blocks=0)
    w = init_weights(cfg, seed=0)
    outs = encode_images([np.zeros((4, 4, 3))] * 2, w)
    assert len(outs) == 5


def test_output_strictly_inside_unit_interval():
    cfg = EncoderConfig(n=2, k=2, channels=8, blocks=2)
    w = init_weights(cfg, seed=4)
    rng = np.random.default_rng(5)
    outs = encode_images([rng.random((8, 8, 3)) for _ in range(2)], w)
    for o in outs:
        assert o.min() > 0.0 and o.max() < 1.0


def test_deterministic_forward():
    cfg = EncoderConfig(n=2, k=2, channels=8, blocks=2)
    w = init_weights(cfg, seed=6)
    rng = np.random.default_rng(7)
    views = [rng.random((8, 8, 3)) for _ in range(2)]
    a = encode_images(views, w)
    b = encode_images(views, w)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_wrong_view_count():
    cfg = EncoderConfig(n=3, k=1, channels=4, blocks=0)
    w = init_weights(cfg, seed=0)
    with pytest.raises(ShapeMismatch):
        encode([np.zeros((4, 4, 3))] * 2, w)


def test_config_validation():
    with pytest.raises(ConfigError):
        EncoderConfig(n=0, k=1)
    with pytest.raises(ConfigError):
        EncoderConfig(n=1, k=1, kernel=4)


def test_encoder_gradcheck():
    cfg = EncoderConfig(n=2, k=2, channels=3, blocks=1)
    w = init_weights(cfg, seed=8)
    rng = np.random.default_rng(9)
    views = [rng.random((6, 6, 3)) for _ in range(2)]
    target = [rng.random((6, 6, 3)) for _ in range(2)]

    def build(vals):
        outs = encode(views, vals, cfg)
        total = None
        for o, t in zip(outs, target):
            term = ad.sum_reduce(ad.l1_diff(o, ad.Value(t)))
            total = term if total is None else ad.add(total, term)
        return ad.scale(total, 1.0 / (2 * 6 * 6 * 3))

    err = ad.grad_check(build, dict(w.arrays), step=1e-5, max_coords=100000)
    assert err <= 1e-4
