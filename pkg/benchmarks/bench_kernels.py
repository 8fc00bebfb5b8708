"""Compare the compiled and pure-numpy binary kernels against the float path.

    python benchmarks/bench_kernels.py [--reps 9] [--quick]

Prints a CSV table: one row per (operation, shape) with the best-of-reps
time for float, compiled-binary and numpy-binary, and the two speedups
relative to float. The compiled column is empty when the extension is
not built.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from contextlib import contextmanager

import numpy as np

from bitconv import binary
from bitconv import _fallback
from bitconv.binary import binarize_weights, binary_gemm, pack_matrix, xnor_conv_forward
from bitconv.kernels import ConvParams, conv_forward, gemm

try:
    from bitconv import _xnor
except ImportError:
    _xnor = None

GEMM_SHAPES = [(64, 1152, 256), (128, 2304, 256), (256, 4608, 256), (64, 16384, 64)]
CONV_SHAPES = [(64, 64, 28), (128, 128, 14), (256, 256, 14), (256, 256, 7)]


def best_ms(fn, reps: int) -> float:
    fn()
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times) * 1e3


@contextmanager
def backend(core):
    saved = binary._core
    binary._core = core
    try:
        yield
    finally:
        binary._core = saved


def timed_backends(make, reps: int) -> tuple[float | None, float]:
    """Time ``make()`` (built under each backend) with the compiled and numpy kernels."""
    out = []
    for core in (_xnor, _fallback):
        if core is None:
            out.append(None)
            continue
        with backend(core):
            fn = make()
            out.append(best_ms(fn, reps))
    return out[0], out[1]


def bench_gemm(m: int, k: int, n: int, reps: int, rng) -> tuple:
    a = rng.standard_normal((m, k)).astype(np.float32)
    b = rng.standard_normal((k, n)).astype(np.float32)

    def make():
        pa, pb = pack_matrix(a, "rows"), pack_matrix(b, "cols")
        return lambda: binary_gemm(pa, pb)
    return best_ms(lambda: gemm(a, b), reps), *timed_backends(make, reps)


def bench_conv(c: int, out: int, side: int, reps: int, rng) -> tuple:
    p = ConvParams(c, out, 3, 1, 1, rng.standard_normal((out, c, 3, 3)).astype(np.float32),
                   np.zeros(out, np.float32))
    x = rng.standard_normal((1, c, side, side)).astype(np.float32)

    def make():
        bank = binarize_weights(p)
        return lambda: xnor_conv_forward(x, bank)
    return best_ms(lambda: conv_forward(x, p), reps), *timed_backends(make, reps)


def fmt(v: float | None) -> str:
    return "" if v is None else f"{v:.3f}"


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=9)
    ap.add_argument("--quick", action="store_true", help="smallest shape of each kind only")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(args.seed)
    gemms = GEMM_SHAPES[:1] if args.quick else GEMM_SHAPES
    convs = CONV_SHAPES[:1] if args.quick else CONV_SHAPES

    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["op", "shape", "float_ms", "compiled_ms", "numpy_ms", "compiled_speedup",
                "numpy_speedup"])
    rows = [("gemm", f"{m}x{k}x{n}", bench_gemm(m, k, n, args.reps, rng)) for m, k, n in gemms]
    rows += [("conv3x3", f"{c}->{o}@{s}x{s}", bench_conv(c, o, s, args.reps, rng)) for c, o, s in convs]
    for op, shape, (t_float, t_comp, t_np) in rows:
        w.writerow([op, shape, fmt(t_float), fmt(t_comp), fmt(t_np),
                    fmt(t_float / t_comp if t_comp else None), fmt(t_float / t_np)])
    return 0


if __name__ == "__main__":
    sys.exit(main())
