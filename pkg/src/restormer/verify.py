"""Finite-difference gradient suites for every block variant and a tiny full model."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .blocks import block_params, block_specs, transformer_block_forward
from .config import ATTENTION_VARIANTS, FFN_VARIANTS, ModelConfig
from .gradcheck import grad_check, relative_error
from .network import Model, build_model, forward
from .params import ParamStore, materialize
from .tensor import Tape, Tensor

TOLERANCE = 1e-4
VARIANTS = [f"{a}+{f}" for a, f in itertools.product(ATTENTION_VARIANTS, FFN_VARIANTS)]


@dataclass
class GradReport:
    name: str
    max_rel_error: float
    worst: str
    params_ok: bool = True

    @property
    def ok(self) -> bool:
        return self.max_rel_error < TOLERANCE and self.params_ok


def _probe(loss_of_store, store: ParamStore, x: np.ndarray, rng: np.random.Generator,
           max_coords: int | None, eps: float = 1e-5):
    """Yield (tensor name, analytic, numeric) over the input and every parameter.

    With ``max_coords``, each tensor is probed at a random subset of that many
    coordinates (the analytic gradient is still computed in full).
    """
    xt = Tensor(x, requires_grad=True)
    store.zero_grad()
    with Tape() as tape:
        loss = loss_of_store(store, xt)
    tape.backward(loss, leaves=[xt, *store.values()])
    analytic = {"input": xt.grad, **{k: t.grad for k, t in store.items()}}
    tensors = {"input": xt, **store}
    for name, t in tensors.items():
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        num = np.empty(idx.size)
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + eps
            fp = loss_of_store(store, Tensor(xt.data if name == "input" else x)).item()
            flat[i] = orig - eps
            fm = loss_of_store(store, Tensor(xt.data if name == "input" else x)).item()
            flat[i] = orig
            num[j] = (fp - fm) / (2 * eps)
        yield name, analytic[name].reshape(-1)[idx], num


def block_gradcheck(attention_variant: str, ffn_variant: str, seed: int = 0,
                    shape=(1, 6, 6, 4), heads: int = 2) -> GradReport:
    dim = shape[-1]
    cfg = ModelConfig(base_dim=dim, heads=(heads,) * 4, num_blocks=(1, 0, 0, 0), refinement_blocks=0,
                      attention_variant=attention_variant, ffn_variant=ffn_variant)
    store = materialize(block_specs("blk", dim, heads, cfg), seed, np.float64)
    rng = np.random.default_rng(seed)
    # keep LN scales away from 1 so scale gradients are not degenerate
    for name, t in store.items():
        if name.endswith("norm1.weight") or name.endswith("norm2.weight"):
            t.data[:] = rng.uniform(0.5, 1.5, size=t.shape)
    x = rng.standard_normal(shape)

    def loss(st: ParamStore, xt: Tensor) -> Tensor:
        return transformer_block_forward(xt, block_params(st, "blk", dim, heads, cfg)).sum()

    worst, where = 0.0, ""
    for name, a, n in _probe(loss, store, x, rng, None):
        err = relative_error(a, n)
        if err > worst:
            worst, where = err, name
    return GradReport(f"{attention_variant}+{ffn_variant}", worst, where)


TINY_MODEL = ModelConfig(in_channels=3, base_dim=4, num_blocks=(1, 1, 1, 1), heads=(1, 2, 4, 8),
                         refinement_blocks=1)


def model_gradcheck(seed: int = 0, size: int = 16, coords_per_tensor: int = 3,
                    param_atol: float = 1e-7) -> GradReport:
    """Input gradient of sum(forward) in full, plus sampled parameter coordinates.

    Parameters behind a saturated softmax can have gradients far below the
    central-difference noise floor (~1e-9 here), so parameter probes are
    compared with ``|a - n| <= 1e-4 * max(|a|, |n|) + param_atol``.
    """
    model = build_model(TINY_MODEL, seed, np.float64)
    rng = np.random.default_rng(seed)
    x = rng.random((1, size, size, TINY_MODEL.in_channels))

    def loss(st: ParamStore, xt: Tensor) -> Tensor:
        return forward(Model(TINY_MODEL, st), xt).sum()

    xerr = grad_check(lambda t: loss(model.params, t), x)
    params_ok, where = True, "input"
    for name, a, n in _probe(loss, model.params, x, rng, coords_per_tensor):
        if name == "input":
            continue
        if np.any(np.abs(a - n) > TOLERANCE * np.maximum(np.abs(a), np.abs(n)) + param_atol):
            params_ok, where = False, name
    return GradReport("model", xerr, where, params_ok)


def run_suite(names: list[str] | None = None, seed: int = 0) -> list[GradReport]:
    names = names or [*VARIANTS, "model"]
    reports = []
    for name in names:
        if name == "model":
            reports.append(model_gradcheck(seed))
        else:
            attn, ffn = name.split("+")
            reports.append(block_gradcheck(attn, ffn, seed))
    return reports
