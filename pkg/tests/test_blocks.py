import math

import numpy as np
import pytest

from restormer.blocks import (block_params, block_specs, gdfn_forward, mdta_forward,
                              spatial_attention_params, spatial_attention_specs,
                              transformer_block_forward, vanilla_spatial_attention)
from restormer.config import ATTENTION_VARIANTS, FFN_VARIANTS, ModelConfig
from restormer.errors import ConfigError, NumericError, ResourceError
from restormer.params import materialize
from restormer.tensor import Tensor
from restormer.verify import VARIANTS, block_gradcheck

from oracles import erf_gelu, layer_norm as ln, naive_conv


def make_block(dim, heads, seed=0, dtype=np.float64, **cfg_kw):
    cfg = ModelConfig(base_dim=dim, heads=(heads,) * 4, num_blocks=(1, 0, 0, 0),
                      refinement_blocks=0, **cfg_kw)
    store = materialize(block_specs("b", dim, heads, cfg), seed, dtype)
    return cfg, store, block_params(store, "b", dim, heads, cfg)


def test_single_channel_collapse():
    _, store, bp = make_block(1, 1)
    x = Tensor(np.array([[[[0.7]]]]))
    np.testing.assert_allclose(mdta_forward(x, bp.norm1, bp.attention).data, x.data, atol=0)


def test_mdta_two_channel_hand_evaluation():
    _, store, bp = make_block(2, 1)
    for br in "qkv":
        store[f"b.attn.{br}_pw.weight"].data[:] = np.eye(2).reshape(1, 1, 2, 2)
        delta = np.zeros((3, 3, 1, 2))
        delta[1, 1] = 1.0
        store[f"b.attn.{br}_dw.weight"].data[:] = delta
    store["b.attn.proj.weight"].data[:] = np.eye(2).reshape(1, 1, 2, 2)

    x = Tensor(np.array([1.0, -1.0]).reshape(1, 1, 1, 2))
    out, attn = mdta_forward(x, bp.norm1, bp.attention, return_attention=True)

    s = 1.0 / math.sqrt(1.0 + 1e-5)  # LN of [1, -1]
    # K^ Q^ = outer([s,-s], [s,-s]); each row softmaxes to [p, 1-p] or [1-p, p]
    p = math.exp(s * s) / (math.exp(s * s) + math.exp(-s * s))
    expected_a = np.array([[p, 1 - p], [1 - p, p]])
    np.testing.assert_allclose(attn.data[0, 0], expected_a, rtol=1e-12)
    v_a = np.array([s * p - s * (1 - p), s * (1 - p) - s * p])
    np.testing.assert_allclose(out.data.reshape(-1), [1.0, -1.0] + v_a, rtol=1e-12)


def test_attention_rows_normalised():
    _, _, bp = make_block(4, 2, seed=3, dtype=np.float32)
    x = Tensor(np.random.default_rng(0).standard_normal((1, 8, 8, 4)).astype(np.float32))
    out, attn = mdta_forward(x, bp.norm1, bp.attention, return_attention=True)
    assert attn.shape == (1, 2, 2, 2)
    np.testing.assert_allclose(attn.data.sum(axis=-1), 1.0, atol=1e-6)
    assert out.shape == x.shape


def test_attention_rows_normalised_with_l2():
    _, _, bp = make_block(8, 2, seed=1, qk_l2_normalize=True)
    x = Tensor(np.random.default_rng(1).standard_normal((2, 4, 4, 8)))
    _, attn = mdta_forward(x, bp.norm1, bp.attention, return_attention=True)
    np.testing.assert_allclose(attn.data.sum(axis=-1), 1.0, atol=1e-12)


def test_temperature_irrelevant_when_logits_constant():
    _, store, bp = make_block(4, 2, seed=2)
    store["b.attn.k_pw.weight"].data[:] = 0.0  # K = 0, every logit 0
    x = Tensor(np.random.default_rng(2).standard_normal((1, 4, 4, 4)))
    a = mdta_forward(x, bp.norm1, bp.attention).data
    store["b.attn.temperature"].data[:] = [0.3, 7.0]
    b = mdta_forward(x, bp.norm1, bp.attention).data
    np.testing.assert_array_equal(a, b)


def test_temperature_guard():
    _, store, bp = make_block(4, 2)
    store["b.attn.temperature"].data[:] = [1.0, 0.0]
    with pytest.raises(NumericError):
        mdta_forward(Tensor(np.ones((1, 2, 2, 4))), bp.norm1, bp.attention)


def test_heads_must_divide_width():
    with pytest.raises(ConfigError):
        block_specs("b", 6, 4, ModelConfig(base_dim=8, heads=(4, 4, 4, 4)))


def test_gdfn_zero_fixed_point():
    _, _, bp = make_block(8, 2)
    x = Tensor(np.zeros((1, 4, 4, 8)))
    np.testing.assert_array_equal(gdfn_forward(x, bp.norm2, bp.ffn).data, 0.0)


def test_gdfn_constant_single_channel():
    _, store, bp = make_block(1, 1, ffn_gamma=1.0)
    for name, t in store.items():
        if ".ffn." in name:
            t.data[:] = 1.0
    assert bp.ffn.hidden == 1
    x = Tensor(np.full((1, 3, 3, 1), 0.4))
    np.testing.assert_allclose(gdfn_forward(x, bp.norm2, bp.ffn).data, 0.4, atol=0)


def test_gdfn_straight_line_oracle():
    cfg, store, bp = make_block(8, 2, seed=5)
    assert cfg.hidden(8) == 21 and bp.ffn.hidden == 21
    rng = np.random.default_rng(5)
    store["b.norm2.weight"].data[:] = rng.uniform(0.5, 1.5, 8)
    x = rng.standard_normal((1, 4, 4, 8))
    w = {k.split("ffn.")[1]: t.data for k, t in store.items() if ".ffn." in k}

    y = ln(x, store["b.norm2.weight"].data)
    x1 = naive_conv(naive_conv(y, w["pw1.weight"]), w["dw1.weight"], groups=21)
    x2 = naive_conv(naive_conv(y, w["pw2.weight"]), w["dw2.weight"], groups=21)
    expected = naive_conv(erf_gelu(x1) * x2, w["proj.weight"]) + x

    got = gdfn_forward(Tensor(x), bp.norm2, bp.ffn).data
    np.testing.assert_allclose(got, expected, rtol=1e-6, atol=1e-12)


def test_mdta_straight_line_oracle():
    _, store, bp = make_block(4, 2, seed=6)
    x = np.random.default_rng(6).standard_normal((1, 3, 3, 4))
    w = {k.split("attn.")[1]: t.data for k, t in store.items() if ".attn." in k}
    y = ln(x, 1.0)
    branches = {br: naive_conv(naive_conv(y, w[f"{br}_pw.weight"]), w[f"{br}_dw.weight"], groups=4)
                .reshape(9, 4) for br in "qkv"}
    out = np.zeros((9, 4))
    for h in range(2):
        sl = slice(2 * h, 2 * h + 2)
        q, k, v = (branches[b][:, sl] for b in "qkv")
        logits = k.T @ q / w["temperature"][h]
        a = np.exp(logits - logits.max(axis=1, keepdims=True))
        a /= a.sum(axis=1, keepdims=True)
        out[:, sl] = v @ a
    expected = naive_conv(out.reshape(1, 3, 3, 4), w["proj.weight"]) + x
    got = mdta_forward(Tensor(x), bp.norm1, bp.attention).data
    np.testing.assert_allclose(got, expected, rtol=1e-6, atol=1e-12)


@pytest.mark.parametrize("attn", ATTENTION_VARIANTS)
@pytest.mark.parametrize("ffn", FFN_VARIANTS)
def test_block_zero_fixed_point_and_shape(attn, ffn):
    _, _, bp = make_block(8, 4, attention_variant=attn, ffn_variant=ffn)
    x = Tensor(np.zeros((2, 6, 4, 8)))
    np.testing.assert_array_equal(transformer_block_forward(x, bp).data, 0.0)
    y = Tensor(np.random.default_rng(0).standard_normal((2, 6, 4, 8)))
    assert transformer_block_forward(y, bp).shape == y.shape


def test_variant_parameter_layout():
    names = lambda **kw: {k for k in make_block(4, 2, **kw)[1]}
    full = names()
    assert "b.attn.q_dw.weight" in full and "b.ffn.dw2.weight" in full
    assert not any("_dw" in n for n in names(attention_variant="MTA"))
    assert not any("dw" in n for n in names(attention_variant="MTA", ffn_variant="FN"))
    assert "b.ffn.pw2.weight" not in names(ffn_variant="DFN")
    assert "b.ffn.dw1.weight" not in names(ffn_variant="GFN")
    assert not any(n.endswith(".bias") for n in full)
    assert any(n.endswith("norm1.bias") for n in names(bias_free=False))


@pytest.mark.parametrize("variant", VARIANTS)
def test_block_gradients(variant):
    report = block_gradcheck(*variant.split("+"))
    assert report.max_rel_error < 1e-4, report


def test_spatial_attention_single_pixel():
    store = materialize(spatial_attention_specs("sa", 4), 0, np.float64)
    sp = spatial_attention_params(store, "sa", 2)
    x = Tensor(np.random.default_rng(0).standard_normal((1, 1, 1, 4)))
    out, maps = vanilla_spatial_attention(x, sp, return_attention=True)
    assert all(np.array_equal(m, [[1.0]]) for m in maps)
    v = sp.v_pw(sp.norm(x))
    np.testing.assert_allclose(out.data, (sp.proj(v) + x).data, rtol=1e-12)


def test_spatial_attention_rows_and_guard():
    store = materialize(spatial_attention_specs("sa", 8), 0)
    sp = spatial_attention_params(store, "sa", 2)
    x = Tensor(np.random.default_rng(0).standard_normal((1, 6, 6, 8)).astype(np.float32))
    _, maps = vanilla_spatial_attention(x, sp, return_attention=True)
    for m in maps:
        assert m.shape == (36, 36)
        np.testing.assert_allclose(m.sum(axis=1), 1.0, atol=1e-6)
    with pytest.raises(ResourceError):
        vanilla_spatial_attention(Tensor(np.zeros((1, 129, 128, 8), np.float32)), sp)
