"""Acceptance gate: one test per criterion, each reporting a PASS/FAIL line.

The lines are collected in ``RESULTS`` and printed by the terminal-summary
hook in conftest.py, so they show up even when output capture is on.
"""
import time

import numpy as np
import pytest

from restormer import cli
from restormer.bench import (count_flops, count_params, fit_loglog_slope, mdta_attention_flops,
                             scaling_bench, spatial_attention_flops)
from restormer.blocks import block_params, block_specs, gdfn_forward, mdta_forward
from restormer.checkpoint import Checkpoint, dumps, loads
from restormer.config import PAPER_CONFIG, ModelConfig, TrainConfig, load_config
from restormer.netpbm import decode, encode
from restormer.network import build_model
from restormer.ops import conv2d, matmul, pixel_shuffle, pixel_unshuffle, softmax
from restormer.optim import OptState, adamw_step, progressive_schedule
from restormer.params import ParamStore, materialize
from restormer.tensor import Tensor
from restormer.train import train_loop
from restormer.verify import VARIANTS, run_suite

from oracles import erf_gelu, layer_norm, naive_conv, naive_matmul

RESULTS: list[str] = []


def report(n: int, ok: bool, detail: str) -> None:
    RESULTS.append(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def test_1_parameter_count(capsys):
    t0 = time.perf_counter()
    code = cli.main(["count", "--config", "configs/paper.json"])
    elapsed = time.perf_counter() - t0
    out = capsys.readouterr().out
    n = count_params(load_config("configs/paper.json").model)
    rel = n / 26.12e6 - 1
    report(1, code == 0 and abs(rel) <= 0.01 and elapsed < 1.0 and f"{n}" in out,
           f"params={n} ({rel:+.3%} vs 26.12M), {elapsed:.2f}s")


def test_2_flop_count(capsys):
    t0 = time.perf_counter()
    code = cli.main(["count", "--config", "configs/paper.json", "--hw", "256"])
    elapsed = time.perf_counter() - t0
    capsys.readouterr()
    macs = count_flops(PAPER_CONFIG, 256, 256)
    rel_mac, rel_2mac = macs / 141e9 - 1, 2 * macs / 141e9 - 1
    ok = code == 0 and min(abs(rel_mac), abs(rel_2mac)) <= 0.15 and elapsed < 1.0
    report(2, ok, f"MAC={macs / 1e9:.2f}G ({rel_mac:+.1%}), 2xMAC={2 * macs / 1e9:.2f}G "
                  f"({rel_2mac:+.1%}) vs 141G, {elapsed:.2f}s")


def test_3_gradient_suite():
    t0 = time.perf_counter()
    reports = run_suite([*VARIANTS, "model"])
    elapsed = time.perf_counter() - t0
    worst = max(reports, key=lambda r: r.max_rel_error)
    ok = all(r.ok for r in reports) and len(reports) == 9 and elapsed < 300
    detail = ", ".join(f"{r.name}={r.max_rel_error:.1e}" for r in reports)
    report(3, ok, f"worst {worst.name} {worst.max_rel_error:.2e}; {detail}; {elapsed:.0f}s")


def test_4_complexity_scaling():
    t0 = time.perf_counter()
    rep = scaling_bench(c=32, heads=4, sizes=(32, 48, 64, 96, 128), repeats=5, warmup=2)
    elapsed = time.perf_counter() - t0
    mdta, spatial = rep.slopes["MDTA"], rep.slopes["spatial-SA"]
    sizes = (32, 64, 128)
    a_mdta = fit_loglog_slope([(s * s, mdta_attention_flops(s * s, 32, 4)) for s in sizes])
    a_sa = fit_loglog_slope([(s * s, spatial_attention_flops(s * s, 32)) for s in sizes])
    ok = (mdta <= 1.3 and spatial >= 1.6 and abs(a_mdta - 1.0) < 1e-12 and abs(a_sa - 2.0) < 1e-12
          and abs(rep.analytic_slope("MDTA") - 1.0) < 1e-12
          and abs(rep.analytic_slope("spatial-SA") - 2.0) < 1e-12 and elapsed < 300)
    report(4, ok, f"measured MDTA={mdta:.3f} spatial-SA={spatial:.3f}; analytic "
                  f"{a_mdta:.6f} / {a_sa:.6f}; {elapsed:.0f}s")


@pytest.mark.slow
def test_5_toy_denoising(tmp_path):
    run = load_config("configs/toy_denoise.json")
    m, t = run.model, run.train
    assert (m.base_dim, m.num_blocks, m.heads, m.refinement_blocks, m.bias_free) == \
        (16, (1, 1, 1, 2), (1, 2, 4, 8), 1, True)
    assert (t.total_iters, t.noise_sigma, t.lr_max, t.lr_min) == (2000, 25.0, 3e-4, 1e-6)
    assert [(e.start_iter, e.patch_size, e.batch_size) for e in t.schedule] == [(0, 48, 8), (1200, 64, 4)]
    t0 = time.perf_counter()
    result = train_loop(m, t, tmp_path)
    minutes = (time.perf_counter() - t0) / 60
    gain = result.final_psnr - result.noisy_psnr
    report(5, gain >= 3.0 and minutes <= 45,
           f"noisy {result.noisy_psnr:.2f} dB, restored {result.final_psnr:.2f} dB, "
           f"gain {gain:+.2f} dB, {minutes:.1f} min")


def test_6_progressive_schedule():
    sched = TrainConfig().schedule
    expected = [(0, 128, 64), (92_000, 160, 40), (156_000, 192, 32), (204_000, 256, 16),
                (240_000, 320, 8), (276_000, 384, 8)]
    ok = [(e.start_iter, e.patch_size, e.batch_size) for e in sched] == expected
    prev = None
    for start, patch, batch in expected:
        ok &= progressive_schedule(start, sched) == (patch, batch)
        if prev is not None:
            ok &= progressive_schedule(start - 1, sched) == prev
        prev = (patch, batch)
    report(6, bool(ok), "6 phases, 5 thresholds closed on the left")


def test_7_invariant_suites(tmp_path):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    checks = {}

    x = rng.standard_normal((2, 8, 12, 3)).astype(np.float32)
    y = rng.standard_normal((2, 4, 6, 12)).astype(np.float32)
    checks["shuffle"] = (np.array_equal(pixel_shuffle(pixel_unshuffle(Tensor(x), 2), 2).data, x)
                         and np.array_equal(pixel_unshuffle(pixel_shuffle(Tensor(y), 2), 2).data, y))

    logits = rng.uniform(-1e3, 1e3, size=(64, 9))
    checks["softmax"] = bool(np.all(np.abs(softmax(Tensor(logits)).data.sum(-1) - 1) <= 1e-6))

    cfg = ModelConfig(base_dim=8, num_blocks=(1, 1, 1, 1), heads=(1, 2, 4, 8), refinement_blocks=1)
    model = build_model(cfg, 0)
    bp = block_params(model.params, "encoder1.0", 8, 1, cfg)
    _, attn = mdta_forward(Tensor(rng.standard_normal((1, 8, 8, 8)).astype(np.float32)),
                           bp.norm1, bp.attention, return_attention=True)
    checks["attention rows"] = bool(np.all(np.abs(attn.data.sum(-1) - 1) <= 1e-6))

    checks["zero fixed point"] = float(np.max(np.abs(model(Tensor(np.zeros((1, 16, 16, 3), np.float32))).data))) <= 1e-6

    ck = Checkpoint(cfg, model.params, OptState.zeros_like(model.params), 3, None)
    raw = dumps(ck)
    checks["checkpoint"] = dumps(loads(raw)) == raw

    img8 = b"P6\n3 2\n255\n" + bytes(rng.integers(0, 256, 18, dtype=np.uint8))
    img16 = b"P5\n2 2\n65535\n" + rng.integers(0, 65536, 4, dtype=np.uint16).astype(">u2").tobytes()
    checks["image"] = encode(decode(img8)) == img8 and encode(decode(img16)) == img16

    tiny = ModelConfig(base_dim=4, num_blocks=(1, 1, 1, 1), heads=(1, 1, 1, 1), refinement_blocks=1)
    tcfg = TrainConfig(total_iters=3, schedule=((0, 16, 2),), eval_every=0, seed=11)
    checks["training determinism"] = dumps(train_loop(tiny, tcfg).checkpoint) == \
        dumps(train_loop(tiny, tcfg).checkpoint)

    elapsed = time.perf_counter() - t0
    failed = [k for k, v in checks.items() if not v]
    report(7, not failed and elapsed < 120,
           f"{len(checks) - len(failed)}/{len(checks)} suites hold"
           + (f" (failed: {', '.join(failed)})" if failed else "") + f", {elapsed:.1f}s")


def test_8_oracle_equivalence():
    rng = np.random.default_rng(8)
    errs = {}

    def rel(a, b):
        return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-30))

    x = rng.standard_normal((1, 5, 5, 4))
    for groups, cg in ((1, 4), (4, 1), (2, 2)):
        w = rng.standard_normal((3, 3, cg, 4))
        errs[f"conv g={groups}"] = rel(conv2d(Tensor(x), Tensor(w), groups=groups).data,
                                       naive_conv(x, w, groups))

    a, b = rng.standard_normal((3, 4)), rng.standard_normal((4, 5))
    errs["matmul"] = rel(matmul(Tensor(a), Tensor(b)).data, naive_matmul(a, b))

    p = ParamStore({"w": Tensor(np.array([0.3]), requires_grad=True)})
    state = OptState.zeros_like(p)
    w, m, v, worst = 0.3, 0.0, 0.0, 0.0
    for t, g in enumerate(rng.standard_normal(10), start=1):
        adamw_step(p, {"w": np.array([g])}, state, 1e-2, (0.9, 0.999), 1e-8, 1e-4)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        w = w - 1e-2 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8) - 1e-2 * 1e-4 * w
        worst = max(worst, abs(p["w"].data[0] - w) / abs(w))
    errs["adamw"] = worst

    cfg = ModelConfig(base_dim=8, heads=(2,) * 4, num_blocks=(1, 0, 0, 0), refinement_blocks=0)
    store = materialize(block_specs("b", 8, 2, cfg), 3, np.float64)
    bp = block_params(store, "b", 8, 2, cfg)
    xi = rng.standard_normal((1, 4, 4, 8))
    f = {k.split("ffn.")[1]: t.data for k, t in store.items() if ".ffn." in k}
    hid = naive_conv(naive_conv(layer_norm(xi, 1.0), f["pw1.weight"]), f["dw1.weight"], 21)
    gate = naive_conv(naive_conv(layer_norm(xi, 1.0), f["pw2.weight"]), f["dw2.weight"], 21)
    expected = naive_conv(erf_gelu(hid) * gate, f["proj.weight"]) + xi
    errs["gdfn"] = rel(gdfn_forward(Tensor(xi), bp.norm2, bp.ffn).data, expected)

    ok = all(v <= (1e-12 if k == "adamw" else 1e-6) for k, v in errs.items())
    report(8, ok, ", ".join(f"{k}={v:.1e}" for k, v in errs.items()))
