import numpy as np
import pytest

from thermodepth import autodiff as ad
from thermodepth.autodiff import Tensor
from thermodepth.depthnet import (BackboneConfig, FeaturePyramid, decode,
                                  encode, gru_inject, init_decoder,
                                  init_encoder, init_gru_inject, init_latent,
                                  init_readout, latent_squeeze,
                                  readout_inject)
from thermodepth.model import build_model, census_compare, parameter_census

CFG = BackboneConfig(height=32, width=40, channels=(8, 16, 32),
                     latent_k=32)


def test_config_validation():
    with pytest.raises(ValueError, match="divisible"):
        BackboneConfig(height=30, width=40)
    with pytest.raises(ValueError, match="2x2"):
        BackboneConfig(height=16, width=16, channels=(8, 8, 8, 8))
    with pytest.raises(ValueError, match="unknown backbone"):
        BackboneConfig(name="resnet50")
    with pytest.raises(ValueError):
        BackboneConfig(channels=(8,))


@pytest.mark.parametrize("name", ["tiny-residual", "tiny-mobile",
                                  "tiny-efficient"])
def test_pyramid_shapes(name):
    cfg = BackboneConfig(name=name, height=64, width=80,
                         channels=(16, 32, 64, 128))
    enc = init_encoder(0, cfg)
    x = np.random.default_rng(0).random((2, 1, 64, 80)).astype(np.float32)
    pyr = encode(x, enc)
    sizes = [(lv.shape[2], lv.shape[3]) for lv in pyr.levels]
    assert sizes == [(64, 80), (32, 40), (16, 20), (8, 10), (4, 5)]
    chans = [lv.shape[1] for lv in pyr.levels]
    assert chans == [16, 16, 32, 64, 128]


def test_encode_rejects_indivisible_input():
    enc = init_encoder(0, CFG)
    with pytest.raises(ValueError, match="2\\^L"):
        encode(np.zeros((1, 1, 30, 40), np.float32), enc)


def test_encode_zero_weights_bias_constant():
    enc = init_encoder(1, CFG)
    for t in enc.tensors().values():
        t.data[:] = 0.0
    pyr = encode(np.random.default_rng(1).random((1, 1, 32, 40),), enc)
    for lv in pyr.levels:
        first = lv.data.ravel()[0]
        assert np.all(lv.data == first)


def test_encoder_input_gradient_matches_fd():
    cfg = BackboneConfig(height=16, width=16, channels=(4, 8),
                         latent_k=8)
    enc = init_encoder(2, cfg, dtype=np.float64)
    rng = np.random.default_rng(2)
    x = rng.random((1, 1, 16, 16))
    probe = rng.standard_normal((1, 8, 4, 4))

    def value(xa):
        return float(ad.sum_(encode(Tensor(xa), enc).bottleneck
                             * Tensor(probe)).data)

    leaf = Tensor(x, requires_grad=True)
    ad.sum_(encode(leaf, enc).bottleneck * Tensor(probe)).backward()
    eps = 1e-6
    idx = [(0, 0, 3, 7), (0, 0, 12, 2)]
    for i in idx:
        x2 = x.copy()
        x2[i] += eps
        fp = value(x2)
        x2[i] -= 2 * eps
        fm = value(x2)
        num = (fp - fm) / (2 * eps)
        ana = leaf.grad[i]
        assert abs(num - ana) / max(abs(num), abs(ana), 1e-8) < 1e-4


def test_latent_squeeze_is_pooled_projection():
    lat = init_latent(3, CFG, dtype=np.float64)
    rng = np.random.default_rng(3)
    c = CFG.bottleneck_channels
    bott = rng.standard_normal((2, c, 2, 2))
    out = latent_squeeze(Tensor(bott), lat)
    assert out.shape == (2, CFG.latent_k)
    # brute-force oracle: 1x1 conv then spatial mean
    w = lat.w.data[:, :, 0, 0]
    expect = np.zeros((2, CFG.latent_k))
    for n in range(2):
        for k in range(CFG.latent_k):
            acc = []
            for i in range(2):
                for j in range(2):
                    acc.append(w[k] @ bott[n, :, i, j] + lat.b.data[k])
            expect[n, k] = np.mean(acc)
    assert np.allclose(out.data, expect, atol=1e-12)


def test_latent_squeeze_constant_identity():
    cfg = CFG
    lat = init_latent(4, cfg, dtype=np.float64)
    k, c = cfg.latent_k, cfg.bottleneck_channels
    lat.w.data[:] = 0.0
    for i in range(min(k, c)):
        lat.w.data[i, i, 0, 0] = 1.0
    lat.b.data[:] = 0.0
    bott = np.full((1, c, 2, 2), 2.5)
    out = latent_squeeze(Tensor(bott), lat)
    assert np.allclose(out.data[0, :min(k, c)], 2.5)


def test_readout_inject_residual_identity_and_isolation():
    enc = init_encoder(5, CFG)
    ro = init_readout(5, CFG, rb_out_dim=16)
    x = np.random.default_rng(5).random((1, 1, 32, 40)).astype(np.float32)
    pyr = encode(x, enc)

    ro.b.data[:] = 0.0
    same = readout_inject(pyr, Tensor(np.zeros((1, 16), np.float32)), ro)
    assert np.array_equal(same.bottleneck.data, pyr.bottleneck.data)

    rb = Tensor(np.random.default_rng(6).standard_normal((1, 16))
                .astype(np.float32))
    injected = readout_inject(pyr, rb, ro)
    for a, b in zip(pyr.levels[:-1], injected.levels[:-1]):
        assert a is b  # untouched, not recomputed
    assert not np.array_equal(injected.bottleneck.data, pyr.bottleneck.data)


def test_readout_inject_size_mismatch():
    ro = init_readout(7, CFG, rb_out_dim=16)
    enc = init_encoder(7, CFG)
    pyr = encode(np.zeros((1, 1, 32, 40), np.float32), enc)
    with pytest.raises(ValueError, match="size"):
        readout_inject(pyr, Tensor(np.zeros((1, 9), np.float32)), ro)


def test_rb_output_reaches_decoder_gradient():
    cfg = BackboneConfig(height=16, width=16, channels=(4, 8), latent_k=8)
    enc = init_encoder(8, cfg, dtype=np.float64)
    dec = init_decoder(8, cfg, dtype=np.float64)
    ro = init_readout(8, cfg, rb_out_dim=6, dtype=np.float64)
    x = np.random.default_rng(8).random((1, 1, 16, 16))
    rb = Tensor(np.random.default_rng(9).standard_normal((1, 6)),
                requires_grad=True)
    pyr = readout_inject(encode(Tensor(x), enc), rb, ro)
    out = decode(pyr, dec)
    ad.mean(out).backward()
    assert rb.grad is not None and np.any(rb.grad != 0.0)


def test_decode_shape_and_range():
    enc = init_encoder(10, CFG)
    dec = init_decoder(10, CFG)
    rng = np.random.default_rng(10)
    for _ in range(10):
        x = rng.random((1, 1, 32, 40)).astype(np.float32) * 4 - 2
        d = decode(encode(Tensor(x), enc), dec, min_depth=0.3,
                   max_depth=10.0)
        assert d.shape == (1, 1, 32, 40)
        assert d.data.min() > 0.3 and d.data.max() < 10.0


def test_decode_skipless_independence():
    # zero the skip contributions in the decoder weights: perturbing a
    # level-1 activation then cannot change the output
    enc = init_encoder(11, CFG, dtype=np.float64)
    dec = init_decoder(11, CFG, dtype=np.float64)
    lv_ch = CFG.level_channels()
    cur = lv_ch[-1]
    for i, (w, b) in enumerate(dec.convs):
        w.data[:, cur:, :, :] = 0.0  # channels after `cur` are the skip
        cur = lv_ch[CFG.levels - 1 - i]
    x = np.random.default_rng(11).random((1, 1, 32, 40))
    pyr = encode(Tensor(x), enc)
    base = decode(pyr, dec).data

    bumped = [Tensor(lv.data.copy()) for lv in pyr.levels]
    bumped[1].data += np.random.default_rng(12).normal(
        0, 1.0, bumped[1].shape)
    out2 = decode(FeaturePyramid(levels=bumped), dec).data
    assert np.array_equal(base, out2)


def test_gru_inject_residual_and_shape_check():
    gi = init_gru_inject(13, CFG)
    enc = init_encoder(13, CFG)
    pyr = encode(np.random.default_rng(13).random(
        (1, 1, 32, 40)).astype(np.float32), enc)
    gi.b.data[:] = 0.0
    zero_grid = Tensor(np.zeros(pyr.bottleneck.shape, np.float32))
    same = gru_inject(pyr, zero_grid, gi)
    assert np.array_equal(same.bottleneck.data, pyr.bottleneck.data)
    with pytest.raises(ValueError):
        gru_inject(pyr, Tensor(np.zeros((1, 3, 2, 2), np.float32)), gi)


def test_census_ordering_and_groups():
    comp = census_compare()
    assert comp["ordering_ok"]
    assert comp["psi_reservoir"] < comp["psi_convgru"]

    mp = build_model(seed=0, rb="reservoir")
    census = parameter_census(mp)
    c = census["counts"]
    assert c["theta"] == 4946
    assert c["fixed"] == 32 * 128 + 32 * 32  # w_in + w
    # psi = latent squeeze + readout dense + reservoir readout matrix
    expect_psi = (128 * 128 + 128) + (128 * 64 + 128) + 64 * 32
    assert c["psi"] == expect_psi
    assert c["total_trainable"] == c["theta"] + c["phi"] + c["psi"]

    info = census["tensors"]["reservoir.w"]
    assert info["trainable"] is False and info["group"] == "fixed"
    assert census["tensors"]["reservoir.w_out"]["trainable"] is True


def test_build_model_no_trefnet_and_norb():
    mp = build_model(seed=1, rb="none", trefnet=False)
    assert mp.refine is None and mp.reservoir is None and mp.convgru is None
    census = parameter_census(mp)
    assert census["counts"]["theta"] == 0
    assert census["counts"]["psi"] == 0
