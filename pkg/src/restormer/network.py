"""Four-level encoder-decoder built from transformer blocks.

Data flow for input I (N x H x W x in):

    F0 = embed(I)                                         C,   H
    e1 = encoder1(F0)                                     C,   H
    e2 = encoder2(down1(e1))                              2C,  H/2
    e3 = encoder3(down2(e2))                              4C,  H/4
    l  = encoder4(down3(e3))                              8C,  H/8
    d3 = decoder3(reduce3([up3(l)  | e3]))                4C,  H/4
    d2 = decoder2(reduce2([up2(d3) | e2]))                2C,  H/2
    d1 = decoder1([up1(d2) | e1])                         2C,  H
    out = I + output(refinement(d1))

``[a | b]`` is channel concatenation with the decoder tensor first.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blocks import block_params, block_specs, transformer_block_forward
from .config import ModelConfig
from .errors import DimensionError
from .ops import conv2d, pixel_shuffle, pixel_unshuffle
from .params import ParamSpec, ParamStore, conv_specs, materialize
from .tensor import Tensor, concat


@dataclass(frozen=True)
class Stage:
    """A run of transformer blocks sharing width and head count."""

    name: str
    dim: int
    heads: int
    depth: int


def stages(cfg: ModelConfig) -> list[Stage]:
    c, nb, hd = cfg.base_dim, cfg.num_blocks, cfg.heads
    return [
        Stage("encoder1", c, hd[0], nb[0]),
        Stage("encoder2", 2 * c, hd[1], nb[1]),
        Stage("encoder3", 4 * c, hd[2], nb[2]),
        Stage("encoder4", 8 * c, hd[3], nb[3]),
        Stage("decoder3", 4 * c, hd[2], nb[2]),
        Stage("decoder2", 2 * c, hd[1], nb[1]),
        Stage("decoder1", 2 * c, hd[0], nb[0]),
        Stage("refinement", 2 * c, hd[0], cfg.refinement_blocks),
    ]


def param_specs(cfg: ModelConfig) -> list[ParamSpec]:
    """All parameters in canonical order."""
    c, bias = cfg.base_dim, not cfg.bias_free
    st = {s.name: s for s in stages(cfg)}

    def stage_specs(name: str) -> list[ParamSpec]:
        s = st[name]
        out = []
        for i in range(s.depth):
            out += block_specs(f"{name}.{i}", s.dim, s.heads, cfg)
        return out

    specs = conv_specs("embed", 3, cfg.in_channels, c, bias=bias)
    for lvl in range(1, 5):
        specs += stage_specs(f"encoder{lvl}")
    for lvl in range(1, 4):
        w = cfg.width(lvl)
        specs += conv_specs(f"down{lvl}", 3, w, w // 2, bias=bias)
    for lvl in (3, 2, 1):
        w = cfg.width(lvl + 1)
        specs += conv_specs(f"up{lvl}", 3, w, 2 * w, bias=bias)
    for lvl in (3, 2):
        w = cfg.width(lvl)
        specs += conv_specs(f"reduce{lvl}", 1, 2 * w, w, bias=bias)
    for lvl in (3, 2, 1):
        specs += stage_specs(f"decoder{lvl}")
    specs += stage_specs("refinement")
    specs += conv_specs("output", 3, 2 * c, cfg.in_channels, bias=bias)
    return specs


@dataclass
class Model:
    cfg: ModelConfig
    params: ParamStore

    def __call__(self, image: Tensor, probe: dict | None = None) -> Tensor:
        return forward(self, image, probe)


def build_model(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> Model:
    return Model(cfg, materialize(param_specs(cfg), seed, dtype))


def _conv(params: ParamStore, name: str, x: Tensor) -> Tensor:
    return conv2d(x, params[f"{name}.weight"], params.get(f"{name}.bias"))


def downsample(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """3x3 conv C -> C/2, then pixel-unshuffle(2): H/2 x W/2 x 2C."""
    if x.shape[1] % 2 or x.shape[2] % 2:
        raise DimensionError(f"downsample needs even H, W, got {x.shape}")
    return pixel_unshuffle(conv2d(x, weight, bias), 2)


def upsample(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """3x3 conv C -> 2C, then pixel-shuffle(2): 2H x 2W x C/2."""
    if x.shape[3] % 2:
        raise DimensionError(f"upsample needs even channel count, got {x.shape[3]}")
    return pixel_shuffle(conv2d(x, weight, bias), 2)


def skip_merge(decoder_feat: Tensor, encoder_feat: Tensor, level: int,
               params: ParamStore | None = None) -> Tensor:
    """Concatenate (decoder first); levels 2 and 3 then halve channels with a 1x1 conv."""
    if decoder_feat.shape[:3] != encoder_feat.shape[:3]:
        raise DimensionError(
            f"skip merge spatial mismatch: {decoder_feat.shape} vs {encoder_feat.shape}")
    merged = concat([decoder_feat, encoder_feat], axis=-1)
    if level == 1:
        return merged
    return _conv(params, f"reduce{level}", merged)


def run_stage(params: ParamStore, cfg: ModelConfig, stage: Stage, x: Tensor) -> Tensor:
    for i in range(stage.depth):
        x = transformer_block_forward(
            x, block_params(params, f"{stage.name}.{i}", stage.dim, stage.heads, cfg))
    return x


def forward(model: Model, image: Tensor, probe: dict | None = None) -> Tensor:
    """Restored image I + R. ``probe``, if given, collects intermediate shapes by name."""
    cfg, p = model.cfg, model.params
    n, h, w, cin = image.shape
    if h % 8 or w % 8:
        raise DimensionError(f"H and W must be multiples of 8, got {h}x{w}")
    if cin != cfg.in_channels:
        raise DimensionError(f"expected {cfg.in_channels} input channels, got {cin}")
    st = {s.name: s for s in stages(cfg)}

    def mark(name: str, t: Tensor) -> Tensor:
        if probe is not None:
            probe[name] = t.shape
        return t

    def down(lvl: int, x: Tensor) -> Tensor:
        return downsample(x, p[f"down{lvl}.weight"], p.get(f"down{lvl}.bias"))

    def up(lvl: int, x: Tensor) -> Tensor:
        return upsample(x, p[f"up{lvl}.weight"], p.get(f"up{lvl}.bias"))

    f0 = mark("embed", _conv(p, "embed", image))
    e1 = mark("encoder1", run_stage(p, cfg, st["encoder1"], f0))
    e2 = mark("encoder2", run_stage(p, cfg, st["encoder2"], down(1, e1)))
    e3 = mark("encoder3", run_stage(p, cfg, st["encoder3"], down(2, e2)))
    latent = mark("encoder4", run_stage(p, cfg, st["encoder4"], down(3, e3)))

    d3 = run_stage(p, cfg, st["decoder3"], skip_merge(up(3, latent), e3, 3, p))
    d3 = mark("decoder3", d3)
    d2 = mark("decoder2", run_stage(p, cfg, st["decoder2"], skip_merge(up(2, d3), e2, 2, p)))
    d1 = mark("decoder1", run_stage(p, cfg, st["decoder1"], skip_merge(up(1, d2), e1, 1)))
    refined = mark("refinement", run_stage(p, cfg, st["refinement"], d1))
    residual = mark("residual", _conv(p, "output", refined))
    return residual + image
