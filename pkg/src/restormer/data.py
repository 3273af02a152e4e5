"""Procedural training images, additive Gaussian noise, flips and PSNR.

Clean patches are built from three layers, each drawn from a generator keyed
by ``(seed, index)``:

1. a smooth per-channel linear ramp,
2. 2-6 axis-aligned rectangles of random colour, alpha-blended,
3. a low-amplitude oriented sinusoid.

The result is clipped to [0, 1]. Noisy = clean + N(0, (sigma/255)^2), unclipped.
"""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .tensor import Tensor

PSNR_CAP = 100.0


def sample_rng(seed: int, *index: int) -> np.random.Generator:
    return np.random.default_rng([seed, *index])


def synth_clean(rng: np.random.Generator, patch: int, channels: int = 3) -> np.ndarray:
    yy, xx = np.meshgrid(np.linspace(0.0, 1.0, patch), np.linspace(0.0, 1.0, patch), indexing="ij")
    base = rng.uniform(0.2, 0.8, size=channels)
    gy, gx = rng.uniform(-0.3, 0.3, size=(2, channels))
    img = base + gy * yy[..., None] + gx * xx[..., None]

    for _ in range(rng.integers(2, 7)):
        y0, x0 = rng.integers(0, patch, size=2)
        hh, ww = rng.integers(patch // 8, patch // 2 + 1, size=2)
        colour = rng.uniform(0.0, 1.0, size=channels)
        alpha = rng.uniform(0.5, 1.0)
        region = img[y0:y0 + hh, x0:x0 + ww]
        region *= 1.0 - alpha
        region += alpha * colour

    theta = rng.uniform(0.0, math.pi)
    freq = rng.uniform(2.0, 8.0)
    amp = rng.uniform(0.02, 0.1)
    phase = rng.uniform(0.0, 2 * math.pi)
    wave = amp * np.sin(2 * math.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy) + phase)
    img = img + wave[..., None]
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def add_noise(rng: np.random.Generator, clean: np.ndarray, sigma: float) -> np.ndarray:
    if sigma == 0:
        return clean.copy()
    noise = rng.standard_normal(clean.shape) * (sigma / 255.0)
    return (clean + noise).astype(np.float32)


def synth_sample(rng: np.random.Generator, patch: int, sigma: float,
                 channels: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """(clean, noisy) pair, each ``patch x patch x channels``."""
    clean = synth_clean(rng, patch, channels)
    return clean, add_noise(rng, clean, sigma)


class ImageDirectory:
    """Random crops from the Netpbm images in a directory."""

    def __init__(self, path: str | Path, channels: int):
        from .netpbm import load_image

        files = sorted(p for p in Path(path).iterdir() if p.suffix.lower() in (".pgm", ".ppm", ".pnm"))
        self.images = []
        for f in files:
            buf = load_image(f)
            if buf.channels == channels:
                self.images.append(buf.values)
        if not self.images:
            raise FileNotFoundError(f"no {channels}-channel Netpbm images in {path}")

    def sample(self, rng: np.random.Generator, patch: int, sigma: float):
        img = self.images[rng.integers(len(self.images))]
        h, w = img.shape[:2]
        if h < patch or w < patch:
            reps = (-(-patch // h), -(-patch // w), 1)
            img = np.tile(img, reps)
            h, w = img.shape[:2]
        y, x = rng.integers(0, h - patch + 1), rng.integers(0, w - patch + 1)
        clean = np.ascontiguousarray(img[y:y + patch, x:x + patch], dtype=np.float32)
        return clean, add_noise(rng, clean, sigma)


def augment_flip(x, rng):
    """Flip each sample of an N x H x W x C batch horizontally / vertically with p=0.5 each."""
    arr = x.data if isinstance(x, Tensor) else x
    out = np.array(arr, copy=True)
    for i in range(out.shape[0]):
        if rng.random() < 0.5:
            out[i] = out[i, :, ::-1]
        if rng.random() < 0.5:
            out[i] = out[i, ::-1]
    return Tensor(out) if isinstance(x, Tensor) else out


def hflip(x: np.ndarray) -> np.ndarray:
    return x[..., :, ::-1, :]


def vflip(x: np.ndarray) -> np.ndarray:
    return x[..., ::-1, :, :]


def psnr(a, b, peak: float = 1.0) -> float:
    a = a.data if isinstance(a, Tensor) else np.asarray(a)
    b = b.data if isinstance(b, Tensor) else np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"psnr shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak * peak / mse))
