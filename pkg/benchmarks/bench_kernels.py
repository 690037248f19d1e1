"""Time the compiled and numpy recurrence kernels on identical inputs.

    python benchmarks/bench_kernels.py [--repeat 5] [--sizes 32x8x16x50 ...]

Sizes are N x K x T x B: state size, layers, steps, batch.
"""
import argparse
import time

import numpy as np

from seqsparse.kernels import get_backend
from seqsparse.linops import make_rng


def make_inputs(n, k, t, b, seed=0):
    rng = make_rng(seed, 90)
    W = rng.standard_normal((k, n, n)) * (0.5 / np.sqrt(n))
    S = rng.standard_normal((k, n, n)) * (0.5 / np.sqrt(n))
    drive = rng.standard_normal((t, k, b, n))
    thr = np.full((k, n), 0.1)
    h0 = rng.standard_normal((k, b, n))
    g_out = rng.standard_normal((t, b, n))
    return W, S, drive, thr, h0, g_out


def best_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench(size, repeat):
    n, k, t, b = size
    W, S, drive, thr, h0, g_out = make_inputs(n, k, t, b)
    row = {}
    outs = {}
    for name in ("python", "compiled"):
        try:
            impl = get_backend(name)
        except ImportError:
            continue
        pre, hid = impl.forward_recurrence(W, S, drive, thr, h0, True)
        outs[name] = hid
        fwd = best_time(lambda: impl.forward_recurrence(W, S, drive, thr, h0, True), repeat)
        bwd = best_time(lambda: impl.backward_recurrence(W, S, thr, h0, pre, hid, g_out, True), repeat)
        row[name] = (fwd, bwd)
    dev = float(np.max(np.abs(outs["python"] - outs["compiled"]))) if len(outs) == 2 else float("nan")
    return row, dev


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--sizes", nargs="*", default=["32x3x16x50", "32x10x16x50", "128x3x16x50", "16x3x5x1"])
    args = ap.parse_args(argv)
    print(f"{'N x K x T x B':>16} {'backend':>9} {'forward ms':>11} {'backward ms':>12} {'speedup':>8}")
    for text in args.sizes:
        size = tuple(int(v) for v in text.split("x"))
        row, dev = bench(size, args.repeat)
        base = row["python"]
        for name, (fwd, bwd) in row.items():
            speed = (base[0] + base[1]) / (fwd + bwd)
            print(f"{text:>16} {name:>9} {fwd * 1e3:11.3f} {bwd * 1e3:12.3f} {speed:7.1f}x")
        print(f"{'':>16} max |python - compiled| = {dev:.1e}")


if __name__ == "__main__":
    main()
