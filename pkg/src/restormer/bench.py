"""Analytic parameter/FLOP model and the attention scaling harness.

FLOPs are counted as multiply-accumulates (MACs). Elementwise work (LayerNorm,
GELU, gating, residual adds, softmax) costs one unit per output element.
"""
from __future__ import annotations

import csv
import io
import statistics
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .blocks import (
    block_params, block_specs, spatial_attention_params, spatial_attention_specs,
    mdta_forward, vanilla_spatial_attention,
)
from .config import ModelConfig
from .errors import DimensionError
from .params import materialize
from .tensor import Tensor

BYTES = 4  # float32 activations


@dataclass
class LayerCost:
    name: str
    flops: int
    params: int = 0
    activation_bytes: int = 0


@dataclass
class CostModel:
    entries: list[LayerCost] = field(default_factory=list)

    def add(self, name: str, flops: int, params: int = 0, activation_bytes: int = 0) -> None:
        self.entries.append(LayerCost(name, int(flops), int(params), int(activation_bytes)))

    def extend(self, other: "CostModel") -> None:
        self.entries.extend(other.entries)

    @property
    def flops(self) -> int:
        return sum(e.flops for e in self.entries)

    @property
    def params(self) -> int:
        return sum(e.params for e in self.entries)

    def select(self, suffix: str) -> int:
        return sum(e.flops for e in self.entries if e.name.endswith(suffix))


def conv_cost(cm: CostModel, name: str, hw: int, k: int, cin: int, cout: int,
              groups: int = 1, bias: bool = False) -> None:
    weights = k * k * (cin // groups) * cout
    cm.add(name, hw * weights + (hw * cout if bias else 0), weights + (cout if bias else 0),
           hw * cout * BYTES)


def attention_cost(cfg: ModelConfig, prefix: str, hw: int, dim: int, heads: int) -> CostModel:
    bias = not cfg.bias_free
    d = dim // heads
    cm = CostModel()
    cm.add(f"{prefix}.norm1", hw * dim, dim * (2 if bias else 1), hw * dim * BYTES)
    for br in "qkv":
        conv_cost(cm, f"{prefix}.{br}_pw", hw, 1, dim, dim, bias=bias)
        if cfg.attention_variant == "MDTA":
            conv_cost(cm, f"{prefix}.{br}_dw", hw, 3, dim, dim, groups=dim, bias=bias)
    map_elems = heads * d * d
    cm.add(f"{prefix}.kq_matmul", hw * heads * d * d, heads, map_elems * BYTES)
    cm.add(f"{prefix}.softmax", map_elems, 0, map_elems * BYTES)
    cm.add(f"{prefix}.av_matmul", hw * heads * d * d, 0, hw * dim * BYTES)
    conv_cost(cm, f"{prefix}.proj", hw, 1, dim, dim, bias=bias)
    cm.add(f"{prefix}.residual1", hw * dim)
    return cm


def ffn_cost(cfg: ModelConfig, prefix: str, hw: int, dim: int) -> CostModel:
    bias = not cfg.bias_free
    hidden = cfg.hidden(dim)
    gated = cfg.ffn_variant in ("GDFN", "GFN")
    depthwise = cfg.ffn_variant in ("GDFN", "DFN")
    cm = CostModel()
    cm.add(f"{prefix}.norm2", hw * dim, dim * (2 if bias else 1), hw * dim * BYTES)
    for i in (1, 2) if gated else (1,):
        conv_cost(cm, f"{prefix}.pw{i}", hw, 1, dim, hidden, bias=bias)
        if depthwise:
            conv_cost(cm, f"{prefix}.dw{i}", hw, 3, hidden, hidden, groups=hidden, bias=bias)
    cm.add(f"{prefix}.gelu", hw * hidden)
    if gated:
        cm.add(f"{prefix}.gate", hw * hidden)
    conv_cost(cm, f"{prefix}.proj_out", hw, 1, hidden, dim, bias=bias)
    cm.add(f"{prefix}.residual2", hw * dim)
    return cm


def block_cost(cfg: ModelConfig, prefix: str, hw: int, dim: int, heads: int) -> CostModel:
    cm = attention_cost(cfg, prefix, hw, dim, heads)
    cm.extend(ffn_cost(cfg, prefix, hw, dim))
    return cm


def cost_model(cfg: ModelConfig, h: int = 256, w: int = 256) -> CostModel:
    if h % 8 or w % 8:
        raise DimensionError(f"H and W must be multiples of 8, got {h}x{w}")
    c, bias, cin = cfg.base_dim, not cfg.bias_free, cfg.in_channels
    hw = [h * w // 4 ** i for i in range(4)]  # pixels at level 1..4
    nb, hd = cfg.num_blocks, cfg.heads
    cm = CostModel()

    def stage(name, level, dim, heads, depth):
        for i in range(depth):
            cm.extend(block_cost(cfg, f"{name}.{i}", hw[level - 1], dim, heads))

    conv_cost(cm, "embed", hw[0], 3, cin, c, bias=bias)
    for lvl in range(1, 5):
        stage(f"encoder{lvl}", lvl, cfg.width(lvl), hd[lvl - 1], nb[lvl - 1])
    for lvl in range(1, 4):
        width = cfg.width(lvl)
        conv_cost(cm, f"down{lvl}", hw[lvl - 1], 3, width, width // 2, bias=bias)
    for lvl in (3, 2, 1):
        width = cfg.width(lvl + 1)
        conv_cost(cm, f"up{lvl}", hw[lvl], 3, width, 2 * width, bias=bias)
    for lvl in (3, 2):
        width = cfg.width(lvl)
        conv_cost(cm, f"reduce{lvl}", hw[lvl - 1], 1, 2 * width, width, bias=bias)
    stage("decoder3", 3, 4 * c, hd[2], nb[2])
    stage("decoder2", 2, 2 * c, hd[1], nb[1])
    stage("decoder1", 1, 2 * c, hd[0], nb[0])
    stage("refinement", 1, 2 * c, hd[0], cfg.refinement_blocks)
    conv_cost(cm, "output", hw[0], 3, 2 * c, cin, bias=bias)
    cm.add("residual_out", hw[0] * cin)
    return cm


def count_flops(cfg: ModelConfig, h: int = 256, w: int = 256) -> int:
    """Multiply-accumulate count for one forward pass at h x w."""
    return cost_model(cfg, h, w).flops


def _block_params(cfg: ModelConfig, dim: int, heads: int) -> int:
    b = 0 if cfg.bias_free else 1
    hidden = cfg.hidden(dim)
    n = dim * (1 + b) * 2  # two LayerNorms
    n += heads
    n += 4 * (dim * dim + b * dim)  # q, k, v, proj pointwise
    if cfg.attention_variant == "MDTA":
        n += 3 * (9 * dim + b * dim)
    branches = 2 if cfg.ffn_variant in ("GDFN", "GFN") else 1
    n += branches * (dim * hidden + b * hidden)
    if cfg.ffn_variant in ("GDFN", "DFN"):
        n += branches * (9 * hidden + b * hidden)
    n += hidden * dim + b * dim
    return n


def count_params(cfg: ModelConfig) -> int:
    """Closed-form parameter total."""
    c, b, cin = cfg.base_dim, 0 if cfg.bias_free else 1, cfg.in_channels
    nb, hd = cfg.num_blocks, cfg.heads
    total = 9 * cin * c + b * c + 9 * 2 * c * cin + b * cin  # embed + output
    for lvl in range(1, 5):
        total += nb[lvl - 1] * _block_params(cfg, cfg.width(lvl), hd[lvl - 1])
    for lvl in range(1, 4):
        width = cfg.width(lvl)
        total += 9 * width * (width // 2) + b * (width // 2)  # down
        width = cfg.width(lvl + 1)
        total += 9 * width * 2 * width + b * 2 * width  # up
    for lvl in (3, 2):
        width = cfg.width(lvl)
        total += 2 * width * width + b * width
    total += nb[2] * _block_params(cfg, 4 * c, hd[2])
    total += nb[1] * _block_params(cfg, 2 * c, hd[1])
    total += (nb[0] + cfg.refinement_blocks) * _block_params(cfg, 2 * c, hd[0])
    return total


def mdta_attention_flops(hw: int, dim: int, heads: int) -> int:
    """K^Q^ and V^A matmul MACs of one transposed attention layer."""
    return 2 * hw * dim * dim // heads


def spatial_attention_flops(hw: int, dim: int) -> int:
    """QK^T and AV matmul MACs of one spatial attention layer."""
    return 2 * hw * hw * dim


def _single_layer_config(dim: int, heads: int) -> ModelConfig:
    return ModelConfig(base_dim=dim, heads=(heads,) * 4, num_blocks=(0, 0, 0, 0),
                       refinement_blocks=0)


def mdta_flops(hw: int, dim: int, heads: int) -> int:
    """Whole attention sub-layer (norm, projections, matmuls, softmax, residual)."""
    return attention_cost(_single_layer_config(dim, heads), "mdta", hw, dim, heads).flops


def spatial_flops(hw: int, dim: int, heads: int) -> int:
    return hw * dim + 4 * hw * dim * dim + spatial_attention_flops(hw, dim) + heads * hw * hw + hw * dim


def mdta_peak_bytes(hw: int, dim: int, heads: int) -> int:
    d = dim // heads
    return (4 * hw * dim + heads * d * d) * BYTES


def spatial_peak_bytes(hw: int, dim: int) -> int:
    return (4 * hw * dim + hw * hw) * BYTES


def fit_loglog_slope(points: Sequence[tuple[float, float]]) -> float:
    """Least-squares slope of ln(y) against ln(x)."""
    if len(points) < 2:
        raise ValueError("need at least two points")
    if any(x <= 0 or y <= 0 for x, y in points):
        raise ValueError("log-log fit needs strictly positive values")
    lx = np.log([p[0] for p in points])
    ly = np.log([p[1] for p in points])
    dx = lx - lx.mean()
    return float(np.dot(dx, ly - ly.mean()) / np.dot(dx, dx))


@dataclass
class BenchRow:
    kernel: str
    h: int
    w: int
    c: int
    heads: int
    analytic_flops: int
    wall_ns: int
    peak_bytes: int
    flagged: bool = False


@dataclass
class BenchReport:
    rows: list[BenchRow] = field(default_factory=list)
    slopes: dict[str, float] = field(default_factory=dict)

    def kernel_rows(self, kernel: str) -> list[BenchRow]:
        return [r for r in self.rows if r.kernel == kernel]

    def analytic_slope(self, kernel: str) -> float:
        return fit_loglog_slope([(r.h * r.w, r.analytic_flops) for r in self.kernel_rows(kernel)])

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["kernel", "H", "W", "C", "heads", "analytic_flops", "wall_ns", "peak_bytes"])
        for r in self.rows:
            wr.writerow([r.kernel, r.h, r.w, r.c, r.heads, r.analytic_flops, r.wall_ns, r.peak_bytes])
        for kernel, slope in self.slopes.items():
            buf.write(f"# slope kernel={kernel} value={slope:.4f}\n")
        return buf.getvalue()


def _time_ns(fn, repeats: int, warmup: int) -> int:
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter_ns()
        fn()
        samples.append(time.perf_counter_ns() - t0)
    return int(statistics.median(samples))


def scaling_bench(c: int = 32, heads: int = 4, sizes: Sequence[int] = (32, 48, 64, 96, 128),
                  repeats: int = 5, warmup: int = 2, seed: int = 0) -> BenchReport:
    """Time one transposed-attention layer and one spatial-attention layer per size.

    Rows carry the attention-matmul MACs (the term whose growth is being
    compared); whole-layer totals are available from ``mdta_flops`` and
    ``spatial_flops``.
    """
    sizes = list(sizes)
    if len(sizes) < 4 or any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ValueError("need at least 4 strictly increasing sizes")
    cfg = _single_layer_config(c, heads)
    store = materialize(block_specs("mdta", c, heads, cfg) + spatial_attention_specs("sa", c), seed)
    bp = block_params(store, "mdta", c, heads, cfg)
    sp = spatial_attention_params(store, "sa", heads)
    resolution = time.get_clock_info("perf_counter").resolution * 1e9
    rng = np.random.default_rng(seed)

    report = BenchReport()
    for s in sizes:
        x = Tensor(rng.standard_normal((1, s, s, c)).astype(np.float32))
        hw = s * s
        for kernel, fn, flops, peak in (
            ("MDTA", lambda: mdta_forward(x, bp.norm1, bp.attention),
             mdta_attention_flops(hw, c, heads), mdta_peak_bytes(hw, c, heads)),
            ("spatial-SA", lambda: vanilla_spatial_attention(x, sp),
             spatial_attention_flops(hw, c), spatial_peak_bytes(hw, c)),
        ):
            ns = _time_ns(fn, repeats, warmup)
            report.rows.append(BenchRow(kernel, s, s, c, heads, flops, ns, peak,
                                        flagged=ns < 20 * resolution))
    for kernel in ("MDTA", "spatial-SA"):
        report.slopes[kernel] = fit_loglog_slope(
            [(r.h * r.w, r.wall_ns) for r in report.kernel_rows(kernel)])
    return report


def format_count(cfg: ModelConfig, h: int, w: int) -> str:
    p = count_params(cfg)
    macs = count_flops(cfg, h, w)
    return (f"params: {p} ({p / 1e6:.2f}M)\n"
            f"flops@{h}x{w} (MAC): {macs} ({macs / 1e9:.2f}G)\n"
            f"flops@{h}x{w} (2xMAC): {2 * macs} ({2 * macs / 1e9:.2f}G)")

