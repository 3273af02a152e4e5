"""Training loop: L1 loss, AdamW + cosine LR, flips, progressive patches."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, save_checkpoint
from .config import ModelConfig, TrainConfig
from .data import ImageDirectory, augment_flip, psnr, sample_rng, synth_sample
from .errors import DimensionError, NumericError
from .network import Model, build_model
from .optim import OptState, adamw_step, cosine_lr, progressive_schedule
from .tensor import Tape, Tensor, absolute

log = logging.getLogger(__name__)

LOG_FIELDS = ("iter", "lr", "patch", "batch", "loss", "eval_psnr")
EVAL_PATCHES = 16


class TrainingDiverged(NumericError):
    pass


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    if pred.shape != target.shape:
        raise DimensionError(f"l1_loss shape mismatch {pred.shape} vs {target.shape}")
    return absolute(pred - target).mean()


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: list[dict] = field(default_factory=list)
    noisy_psnr: float = float("nan")

    @property
    def final_psnr(self) -> float:
        evals = [r["eval_psnr"] for r in self.log if r["eval_psnr"] != ""]
        return evals[-1] if evals else float("nan")


class _Source:
    def __init__(self, tcfg: TrainConfig, channels: int):
        self.tcfg = tcfg
        self.channels = channels
        self.directory = None if tcfg.dataset == "synthetic" else ImageDirectory(tcfg.dataset, channels)

    def pair(self, seed: int, it: int, b: int, patch: int):
        rng = sample_rng(seed, it, b)
        if self.directory is None:
            return synth_sample(rng, patch, self.tcfg.noise_sigma, self.channels)
        return self.directory.sample(rng, patch, self.tcfg.noise_sigma)

    def batch(self, seed: int, it: int, patch: int, size: int) -> tuple[np.ndarray, np.ndarray]:
        pairs = [self.pair(seed, it, b, patch) for b in range(size)]
        return np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs])


def heldout_set(tcfg: TrainConfig, channels: int) -> tuple[np.ndarray, np.ndarray]:
    """Evaluation patches drawn from seed + 1; the training stream never uses that seed."""
    patch = tcfg.eval_patch or tcfg.schedule[0].patch_size
    return _Source(tcfg, channels).batch(tcfg.seed + 1, 0, patch, EVAL_PATCHES)


def evaluate(model: Model, clean: np.ndarray, noisy: np.ndarray, chunk: int = 4) -> float:
    """Mean PSNR of the clipped restoration over a batch of patches."""
    scores = []
    for i in range(0, len(clean), chunk):
        out = model(Tensor(noisy[i:i + chunk])).data
        out = np.clip(out, 0.0, 1.0)
        scores += [psnr(o, c) for o, c in zip(out, clean[i:i + chunk])]
    return float(np.mean(scores))


def train_loop(model_cfg: ModelConfig, tcfg: TrainConfig, out_dir: str | Path | None = None,
               model: Model | None = None) -> TrainResult:
    model = model or build_model(model_cfg, tcfg.seed)
    params = model.params
    state = OptState.zeros_like(params)
    flip_rng = np.random.default_rng([tcfg.seed, 0xF11B])
    source = _Source(tcfg, model_cfg.in_channels)
    out = Path(out_dir) if out_dir is not None else None
    writer = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_file = open(out / "metrics.csv", "w", newline="")
        writer = csv.DictWriter(log_file, fieldnames=LOG_FIELDS)
        writer.writeheader()

    eval_clean, eval_noisy = heldout_set(tcfg, model_cfg.in_channels)
    noisy_psnr = float(np.mean([psnr(n, c) for n, c in zip(eval_noisy, eval_clean)]))
    rows: list[dict] = []

    def snapshot(it: int) -> Checkpoint:
        return Checkpoint(model_cfg, params.copy(),
                          OptState({k: v.copy() for k, v in state.m.items()},
                                   {k: v.copy() for k, v in state.v.items()}, state.t),
                          it, flip_rng.bit_generator.state)

    try:
        for it in range(tcfg.total_iters):
            patch, bsize = progressive_schedule(it, tcfg.schedule)
            lr = cosine_lr(it, tcfg.total_iters, tcfg.lr_max, tcfg.lr_min)
            clean, noisy = source.batch(tcfg.seed, it, patch, bsize)
            c = clean.shape[-1]
            both = augment_flip(np.concatenate([clean, noisy], axis=-1), flip_rng)
            clean, noisy = both[..., :c], both[..., c:]

            params.zero_grad()
            with Tape() as tape:
                loss = l1_loss(model(Tensor(noisy)), Tensor(clean))
            loss_value = loss.item()
            if not np.isfinite(loss_value):
                if out is not None:
                    save_checkpoint(snapshot(it), out / "diverged.rstm")
                raise TrainingDiverged(f"loss became {loss_value} at iteration {it} (lr={lr:.3g})")
            tape.backward(loss, leaves=params.tensors())
            del tape
            adamw_step(params, {k: p.grad for k, p in params.items()}, state, lr,
                       tcfg.betas, weight_decay=tcfg.weight_decay)

            step = it + 1
            row = {"iter": step, "lr": lr, "patch": patch, "batch": bsize,
                   "loss": loss_value, "eval_psnr": ""}
            if tcfg.eval_every and (step % tcfg.eval_every == 0 or step == tcfg.total_iters):
                row["eval_psnr"] = evaluate(model, eval_clean, eval_noisy)
                log.info("iter %d loss %.5f eval %.2f dB (noisy %.2f dB)",
                         step, loss_value, row["eval_psnr"], noisy_psnr)
            rows.append(row)
            if writer is not None:
                writer.writerow(row)
            if out is not None and tcfg.checkpoint_every and step % tcfg.checkpoint_every == 0:
                save_checkpoint(snapshot(step), out / f"iter_{step:07d}.rstm")
    finally:
        if writer is not None:
            log_file.close()

    final = snapshot(tcfg.total_iters)
    if out is not None:
        save_checkpoint(final, out / "final.rstm")
    return TrainResult(final, rows, noisy_psnr)
