"""Desk-scale Gaussian denoising run (sigma=25) with the full training pipeline.

Usage: python scripts/toy_denoise.py [--config configs/toy_denoise.json] [--out runs/toy]
"""
import argparse
import logging
import time

from restormer.config import load_config
from restormer.train import train_loop


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default="configs/toy_denoise.json")
    ap.add_argument("--out", default="runs/toy")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    run = load_config(args.config)
    start = time.perf_counter()
    result = train_loop(run.model, run.train, args.out)
    elapsed = time.perf_counter() - start
    gain = result.final_psnr - result.noisy_psnr
    print(f"noisy {result.noisy_psnr:.2f} dB  restored {result.final_psnr:.2f} dB  "
          f"gain {gain:+.2f} dB  ({elapsed / 60:.1f} min)")


if __name__ == "__main__":
    main()
