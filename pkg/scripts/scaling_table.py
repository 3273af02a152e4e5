"""Time transposed vs spatial attention over growing inputs and print the fitted exponents.

Usage: python scripts/scaling_table.py [--channels 32] [--heads 4] [--sizes 32,48,64,96,128]
"""
import argparse

from restormer.bench import scaling_bench


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--channels", type=int, default=32)
    ap.add_argument("--heads", type=int, default=4)
    ap.add_argument("--sizes", default="32,48,64,96,128")
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    sizes = tuple(int(s) for s in args.sizes.split(","))
    rep = scaling_bench(args.channels, args.heads, sizes, args.repeats)
    print(f"{'kernel':12s}{'size':>6s}{'analytic flops':>18s}{'wall ms':>10s}{'peak MiB':>10s}")
    for r in rep.rows:
        print(f"{r.kernel:12s}{r.h:>6d}{r.analytic_flops:>18,d}{r.wall_ns / 1e6:>10.2f}"
              f"{r.peak_bytes / 2**20:>10.2f}")
    for kernel, slope in rep.slopes.items():
        print(f"{kernel}: measured exponent {slope:.3f}, analytic {rep.analytic_slope(kernel):.3f}")


if __name__ == "__main__":
    main()
