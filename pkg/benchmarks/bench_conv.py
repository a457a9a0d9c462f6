"""Time the compiled and numpy conv2d backends on masker-shaped layers.

    python3 benchmarks/bench_conv.py [--repeat 5] [--batch 4] [--frames 100] [--filters 48]
"""
import argparse
import time
import tracemalloc

import numpy as np

from voiceid.models import MASKER_TABLE
from voiceid.nncore import conv2d


def bench(fn, repeat):
    fn()  # warm-up
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def peak_mb(fn):
    tracemalloc.start()
    fn()
    peak = tracemalloc.get_traced_memory()[1]
    tracemalloc.stop()
    return peak / 2**20


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--batch", type=int, default=4)
    ap.add_argument("--frames", type=int, default=100)
    ap.add_argument("--filters", type=int, default=48)
    ap.add_argument("--dtype", default="float32")
    args = ap.parse_args()

    backends = [b for b in conv2d.BACKENDS if b != "compiled" or conv2d.compiled_available()]
    rng = np.random.default_rng(0)
    rows = []
    for name, kernel, dilation in MASKER_TABLE[2:]:
        cin = args.filters
        x = rng.standard_normal((args.batch, cin, 257, args.frames)).astype(args.dtype)
        w = rng.standard_normal((args.filters, cin, *kernel)).astype(args.dtype)
        b = np.zeros(args.filters, dtype=args.dtype)
        pad = ((kernel[0] - 1) * dilation[0] // 2, (kernel[1] - 1) * dilation[1] // 2)
        row = [name, f"{kernel[0]}x{kernel[1]}", f"{dilation[0]}x{dilation[1]}"]
        outs = {}
        for be in backends:
            conv2d.set_backend(be)
            out, xp = conv2d.forward(x, w, b, dilation, pad)
            g = np.ones_like(out)
            fwd = bench(lambda: conv2d.forward(x, w, b, dilation, pad), args.repeat)
            bwd = bench(lambda: conv2d.backward(g, xp, w, dilation, pad), args.repeat)
            mem = peak_mb(lambda: conv2d.backward(g, xp, w, dilation, pad))
            outs[be] = out
            row += [f"{1e3 * fwd:.1f}", f"{1e3 * bwd:.1f}", f"{mem:.0f}"]
        if len(outs) == 2:
            a, c = outs["compiled"], outs["numpy"]
            row.append(f"{np.abs(a - c).max() / np.abs(c).max():.1e}")
        rows.append(row)

    header = ["layer", "kernel", "dilation"]
    for be in backends:
        header += [f"{be} fwd ms", f"{be} bwd ms", f"{be} bwd MB"]
    if len(backends) == 2:
        header.append("max rel diff")
    widths = [max(len(r[i]) for r in rows + [header]) for i in range(len(header))]
    for r in [header] + rows:
        print("  ".join(c.rjust(w) for c, w in zip(r, widths)))
    if len(backends) == 2:
        print()
        for i, be in enumerate(backends):
            total = sum(float(r[3 + 3 * i]) + float(r[4 + 3 * i]) for r in rows)
            print(f"{be}: {total:.0f} ms per forward+backward over conv3-conv10")


if __name__ == "__main__":
    main()
