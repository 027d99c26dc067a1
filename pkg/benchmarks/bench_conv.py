"""Benchmark the compiled convolution kernels against the numpy fallback.

Run: python3 benchmarks/bench_conv.py [--repeats N]
"""

import argparse
import time

import numpy as np


def bench(fn, *args, repeats=20):
    fn(*args)  # warm-up
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - t0) / repeats


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=20)
    args = ap.parse_args()

    from marec.kernels import _conv_py

    try:
        from marec.kernels import _convext
    except ImportError:
        print("compiled extension not built; run pip install -e . first")
        return

    cases = [
        ("desk 3x3   B4 c2->16  64x64", (4, 2, 64, 64), (16, 2, 3, 3), 1, 1),
        ("desk 3x3   B4 c16->16 64x64", (4, 16, 64, 64), (16, 16, 3, 3), 1, 1),
        ("desk 1x1   B4 c16->16 64x64", (4, 16, 64, 64), (16, 16, 1, 1), 1, 0),
        ("unet 3x3   B1 c8->8  64x64", (1, 8, 64, 64), (8, 8, 3, 3), 1, 1),
        ("wide 3x3   B1 c64->64 32x32", (1, 64, 32, 32), (64, 64, 3, 3), 1, 1),
    ]
    rng = np.random.default_rng(0)
    print(f"{'case':<30} {'compiled':>10} {'numpy':>10} {'ratio':>7}")
    for name, xs, ws, stride, pad in cases:
        x = rng.standard_normal(xs)
        w = rng.standard_normal(ws)
        tc = bench(_convext.conv2d_forward, x, w, stride, pad, repeats=args.repeats)
        tp = bench(_conv_py.conv2d_forward, x, w, stride, pad, repeats=args.repeats)
        print(f"{name:<30} {tc*1e3:>8.2f}ms {tp*1e3:>8.2f}ms {tp/tc:>6.2f}x")
        out = _conv_py.conv2d_forward(x, w, stride, pad)
        g = rng.standard_normal(out.shape)
        tc = bench(_convext.conv2d_backward_weight, g, x, ws, stride, pad, repeats=args.repeats)
        tp = bench(_conv_py.conv2d_backward_weight, g, x, ws, stride, pad, repeats=args.repeats)
        print(f"{'  backward (weight)':<30} {tc*1e3:>8.2f}ms {tp*1e3:>8.2f}ms {tp/tc:>6.2f}x")


if __name__ == "__main__":
    main()
