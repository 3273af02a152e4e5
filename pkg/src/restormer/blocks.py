"""Transformer block: transposed channel attention and gated depthwise feed-forward.

Variants follow the ablation grid. ``MTA`` is the attention without the 3x3
depthwise stage on Q/K/V. The feed-forward variants toggle the gate (second
branch) and the depthwise stage:

    ========  =====  =========
    variant   gate   depthwise
    ========  =====  =========
    GDFN      yes    yes
    GFN       yes    no
    DFN       no     yes
    FN        no     no
    ========  =====  =========
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .errors import ConfigError, NumericError, ResourceError
from .ops import conv2d, gelu, l2_normalize, layer_norm_channel, matmul, softmax
from .params import ParamSpec, ParamStore, conv_specs, norm_specs
from .tensor import Tensor, reshape, transpose

LN_EPS = 1e-5
ALPHA_GUARD = 1e-8
SPATIAL_HW_LIMIT = 16384


@dataclass
class Conv:
    weight: Tensor
    bias: Tensor | None = None
    groups: int = 1

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, groups=self.groups)


@dataclass
class NormParams:
    weight: Tensor
    bias: Tensor | None = None

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm_channel(x, self.weight, self.bias, LN_EPS)


@dataclass
class AttentionParams:
    q_pw: Conv
    k_pw: Conv
    v_pw: Conv
    q_dw: Conv | None
    k_dw: Conv | None
    v_dw: Conv | None
    proj: Conv
    temperature: Tensor
    heads: int
    qk_l2_normalize: bool = False


@dataclass
class FfnParams:
    pw1: Conv
    dw1: Conv | None
    pw2: Conv | None
    dw2: Conv | None
    proj: Conv
    hidden: int


@dataclass
class BlockParams:
    norm1: NormParams
    attention: AttentionParams
    norm2: NormParams
    ffn: FfnParams
    attention_variant: str = "MDTA"
    ffn_variant: str = "GDFN"


def _ffn_layout(variant: str) -> tuple[bool, bool]:
    """(gated, depthwise) for a feed-forward variant name."""
    return {"GDFN": (True, True), "GFN": (True, False),
            "DFN": (False, True), "FN": (False, False)}[variant]


def block_specs(prefix: str, dim: int, heads: int, cfg: ModelConfig) -> list[ParamSpec]:
    if dim % heads:
        raise ConfigError(f"heads={heads} does not divide width {dim}")
    bias = not cfg.bias_free
    hidden = cfg.hidden(dim)
    dw_attn = cfg.attention_variant == "MDTA"
    gated, dw_ffn = _ffn_layout(cfg.ffn_variant)

    specs = norm_specs(f"{prefix}.norm1", dim, bias)
    a = f"{prefix}.attn"
    specs.append(ParamSpec(f"{a}.temperature", (heads,), "ones"))
    for br in "qkv":
        specs += conv_specs(f"{a}.{br}_pw", 1, dim, dim, bias=bias)
    if dw_attn:
        for br in "qkv":
            specs += conv_specs(f"{a}.{br}_dw", 3, dim, dim, groups=dim, bias=bias)
    specs += conv_specs(f"{a}.proj", 1, dim, dim, bias=bias)

    specs += norm_specs(f"{prefix}.norm2", dim, bias)
    f = f"{prefix}.ffn"
    specs += conv_specs(f"{f}.pw1", 1, dim, hidden, bias=bias)
    if dw_ffn:
        specs += conv_specs(f"{f}.dw1", 3, hidden, hidden, groups=hidden, bias=bias)
    if gated:
        specs += conv_specs(f"{f}.pw2", 1, dim, hidden, bias=bias)
        if dw_ffn:
            specs += conv_specs(f"{f}.dw2", 3, hidden, hidden, groups=hidden, bias=bias)
    specs += conv_specs(f"{f}.proj", 1, hidden, dim, bias=bias)
    return specs


def _conv(store: ParamStore, name: str, groups: int = 1) -> Conv | None:
    w = store.get(f"{name}.weight")
    if w is None:
        return None
    return Conv(w, store.get(f"{name}.bias"), groups)


def _norm(store: ParamStore, name: str) -> NormParams:
    return NormParams(store[f"{name}.weight"], store.get(f"{name}.bias"))


def block_params(store: ParamStore, prefix: str, dim: int, heads: int,
                 cfg: ModelConfig) -> BlockParams:
    """View of the block's tensors inside ``store`` (no copies)."""
    a, f = f"{prefix}.attn", f"{prefix}.ffn"
    hidden = cfg.hidden(dim)
    attn = AttentionParams(
        q_pw=_conv(store, f"{a}.q_pw"), k_pw=_conv(store, f"{a}.k_pw"),
        v_pw=_conv(store, f"{a}.v_pw"),
        q_dw=_conv(store, f"{a}.q_dw", dim), k_dw=_conv(store, f"{a}.k_dw", dim),
        v_dw=_conv(store, f"{a}.v_dw", dim),
        proj=_conv(store, f"{a}.proj"), temperature=store[f"{a}.temperature"],
        heads=heads, qk_l2_normalize=cfg.qk_l2_normalize,
    )
    ffn = FfnParams(
        pw1=_conv(store, f"{f}.pw1"), dw1=_conv(store, f"{f}.dw1", hidden),
        pw2=_conv(store, f"{f}.pw2"), dw2=_conv(store, f"{f}.dw2", hidden),
        proj=_conv(store, f"{f}.proj"), hidden=hidden,
    )
    return BlockParams(_norm(store, f"{prefix}.norm1"), attn, _norm(store, f"{prefix}.norm2"),
                       ffn, cfg.attention_variant, cfg.ffn_variant)


def _branch(y: Tensor, pw: Conv, dw: Conv | None) -> Tensor:
    out = pw(y)
    return dw(out) if dw is not None else out


def mdta_forward(x: Tensor, norm: NormParams, p: AttentionParams, return_attention: bool = False):
    """Channel ("transposed") self-attention with residual.

    Per head, with HW flattened row-major: A = softmax(K^ Q^ / alpha) is a
    (C/heads x C/heads) map normalised over its last axis, and the head output
    is V^ A. Returns ``(out, A)`` when ``return_attention`` is set, A shaped
    ``[N, heads, C/heads, C/heads]``.
    """
    n, h, w, c = x.shape
    heads = p.heads
    if c % heads:
        raise ConfigError(f"heads={heads} does not divide C={c}")
    if np.any(np.abs(p.temperature.data) < ALPHA_GUARD):
        raise NumericError("attention temperature too close to zero")
    d = c // heads
    y = norm(x)
    q = _branch(y, p.q_pw, p.q_dw)
    k = _branch(y, p.k_pw, p.k_dw)
    v = _branch(y, p.v_pw, p.v_dw)

    def split_heads(t: Tensor) -> Tensor:  # -> [N, heads, HW, d]
        return transpose(reshape(t, (n, h * w, heads, d)), (0, 2, 1, 3))

    q_hat = split_heads(q)
    k_hat = transpose(split_heads(k), (0, 1, 3, 2))  # [N, heads, d, HW]
    v_hat = split_heads(v)
    if p.qk_l2_normalize:
        q_hat = l2_normalize(q_hat, axis=2)
        k_hat = l2_normalize(k_hat, axis=3)
    logits = matmul(k_hat, q_hat) / reshape(p.temperature, (1, heads, 1, 1))
    attn = softmax(logits, axis=-1)
    out = matmul(v_hat, attn)  # [N, heads, HW, d]
    out = reshape(transpose(out, (0, 2, 1, 3)), (n, h, w, c))
    out = p.proj(out) + x
    return (out, attn) if return_attention else out


def gdfn_forward(x: Tensor, norm: NormParams, p: FfnParams) -> Tensor:
    y = norm(x)
    hidden = gelu(_branch(y, p.pw1, p.dw1))
    if p.pw2 is not None:
        hidden = hidden * _branch(y, p.pw2, p.dw2)
    return p.proj(hidden) + x


def transformer_block_forward(x: Tensor, bp: BlockParams) -> Tensor:
    x = mdta_forward(x, bp.norm1, bp.attention)
    return gdfn_forward(x, bp.norm2, bp.ffn)


# ---------------------------------------------------------------------------
# quadratic spatial attention, benchmark baseline only


@dataclass
class SpatialAttentionParams:
    norm: NormParams
    q_pw: Conv
    k_pw: Conv
    v_pw: Conv
    proj: Conv
    heads: int


def spatial_attention_specs(prefix: str, dim: int) -> list[ParamSpec]:
    specs = norm_specs(f"{prefix}.norm", dim, False)
    for br in ("q_pw", "k_pw", "v_pw", "proj"):
        specs += conv_specs(f"{prefix}.{br}", 1, dim, dim)
    return specs


def spatial_attention_params(store: ParamStore, prefix: str, heads: int) -> SpatialAttentionParams:
    return SpatialAttentionParams(
        _norm(store, f"{prefix}.norm"), _conv(store, f"{prefix}.q_pw"),
        _conv(store, f"{prefix}.k_pw"), _conv(store, f"{prefix}.v_pw"),
        _conv(store, f"{prefix}.proj"), heads,
    )


def vanilla_spatial_attention(x: Tensor, p: SpatialAttentionParams, return_attention: bool = False):
    """Standard (HW x HW) self-attention with residual; forward only.

    Heads are evaluated one at a time so at most one HW x HW map is alive.
    """
    n, h, w, c = x.shape
    hw = h * w
    if hw > SPATIAL_HW_LIMIT:
        raise ResourceError(f"spatial attention over {hw} pixels exceeds the {SPATIAL_HW_LIMIT} guard")
    if c % p.heads:
        raise ConfigError(f"heads={p.heads} does not divide C={c}")
    d = c // p.heads
    y = p.norm(x)
    q = p.q_pw(y).data.reshape(n, hw, c)
    k = p.k_pw(y).data.reshape(n, hw, c)
    v = p.v_pw(y).data.reshape(n, hw, c)
    scale = 1.0 / math.sqrt(d)
    out = np.empty_like(q)
    maps = []
    for b in range(n):
        for i in range(p.heads):
            sl = slice(i * d, (i + 1) * d)
            a = q[b, :, sl] @ k[b, :, sl].T
            a *= scale
            a -= a.max(axis=1, keepdims=True)
            np.exp(a, out=a)
            a /= a.sum(axis=1, keepdims=True)
            out[b, :, sl] = a @ v[b, :, sl]
            if return_attention:
                maps.append(a)
            del a
    res = p.proj(Tensor(out.reshape(n, h, w, c))) + x
    return (res, maps) if return_attention else res

