"""Timing comparison of the conv kernel backends on training-relevant shapes.

Run:  python benchmarks/bench_kernels.py [--dtype float32] [--budget 0.3]
"""

import argparse
import time

import numpy as np

from ovrec.kernels import available_backends, numpy_backend

BACKENDS = {"numpy": numpy_backend}
try:
    from ovrec.kernels import numba_backend
    BACKENDS["numba"] = numba_backend
except ImportError:
    pass

# (name, x shape, w shape, stride, dilation, pad)
SHAPES = [
    ("stem3 64px", (4, 4, 64, 64), (16, 4, 3, 3), 1, 1, 1),
    ("stem7 64px", (4, 4, 64, 64), (16, 4, 7, 7), 1, 1, 3),
    ("down 32px", (4, 16, 32, 32), (32, 16, 3, 3), 2, 1, 1),
    ("res dil2 16px", (4, 32, 16, 16), (32, 32, 3, 3), 1, 2, 2),
    ("up 64px", (4, 16, 64, 64), (8, 16, 3, 3), 1, 1, 1),
    ("disc k4 64px", (12, 5, 64, 64), (16, 5, 4, 4), 2, 1, 1),
    ("stem7 256px", (1, 4, 256, 256), (32, 4, 7, 7), 1, 1, 3),
    ("res dil2 64px", (1, 64, 64, 64), (64, 64, 3, 3), 1, 2, 2),
]


def timeit(fn, budget):
    fn()  # warm up / compile
    t0 = time.perf_counter()
    n = 0
    while time.perf_counter() - t0 < budget:
        fn()
        n += 1
    return (time.perf_counter() - t0) / n * 1e3


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--dtype", default="float32", choices=("float32", "float64"))
    ap.add_argument("--budget", type=float, default=0.3,
                    help="seconds per measurement")
    args = ap.parse_args()
    dtype = np.dtype(args.dtype)
    rng = np.random.default_rng(0)
    print(f"backends available: {available_backends()}  dtype: {dtype.name}")
    header = f"{'shape':16s} {'op':6s}" + "".join(f"{b:>12s}" for b in BACKENDS)
    print(header)
    print("-" * len(header))
    for name, xs, ws, s, d, p in SHAPES:
        x = rng.random(xs, dtype=np.float64).astype(dtype)
        w = (rng.random(ws, dtype=np.float64).astype(dtype) - 0.5) * 0.2
        oh = numpy_backend.conv_out_size(xs[2], ws[2], s, d, p)
        ow = numpy_backend.conv_out_size(xs[3], ws[3], s, d, p)
        gy = rng.random((xs[0], ws[0], oh, ow), dtype=np.float64).astype(dtype)
        rows = {
            "fwd": lambda be: be.conv2d_fwd(x, w, s, d, p),
            "bwd_x": lambda be: be.conv2d_bwd_x(gy, w, xs[2], xs[3], s, d, p),
            "bwd_w": lambda be: be.conv2d_bwd_w(gy, x, ws[2], ws[3], s, d, p),
        }
        for op, call in rows.items():
            cells = []
            for bname, be in BACKENDS.items():
                ms = timeit(lambda: call(be), args.budget)
                cells.append(f"{ms:10.2f}ms")
            print(f"{name:16s} {op:6s}" + "".join(f"{c:>12s}" for c in cells))
        print()


if __name__ == "__main__":
    main()
