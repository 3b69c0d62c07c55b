"""Compare the numba and numpy convolution backends.

Times the forward and backward kernels on FCN-shaped workloads (the three
block geometries the classifier actually runs) plus a full train step, and
prints a table with the speedup of numba over numpy. The first numba call
pays JIT compilation; it is excluded by a warmup pass.

Usage:
    python3 benchmarks/bench_kernels.py [--batch 256] [--length 25] [--repeat 5]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from glyconet.neuralnet import (FcnConfig, backward, focal_loss, forward,
                                get_kernels, init_model)


def time_call(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def bench_conv(kernels, batch: int, c_in: int, c_out: int, length: int,
               ksize: int, repeat: int) -> tuple[float, float]:
    rng = np.random.default_rng(0)
    x = rng.standard_normal((batch, c_in, length))
    w = rng.standard_normal((c_out, c_in, ksize)) * 0.1
    b = rng.standard_normal(c_out) * 0.1
    dy = rng.standard_normal((batch, c_out, length))
    kernels.conv1d_forward(x, w, b)  # warmup (JIT for numba)
    kernels.conv1d_backward(x, w, dy)
    fwd = time_call(lambda: kernels.conv1d_forward(x, w, b), repeat)
    bwd = time_call(lambda: kernels.conv1d_backward(x, w, dy), repeat)
    return fwd, bwd


def bench_train_step(backend: str, batch: int, length: int, repeat: int) -> float:
    rng = np.random.default_rng(0)
    model = init_model(FcnConfig(input_len=length, n_classes=4), seed=0)
    feats = rng.random((batch, length))
    labels = rng.integers(0, 4, size=batch)

    def step():
        probs, cache = forward(model, feats, training=True, backend_name=backend)
        _, dlogits = focal_loss(probs, labels)
        backward(model, cache, dlogits)

    step()  # warmup
    return time_call(step, repeat)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--batch", type=int, default=256)
    parser.add_argument("--length", type=int, default=25,
                        help="window length in grid points (25 = 120 min ISL)")
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    try:
        numba_kernels = get_kernels("numba")
    except Exception as exc:
        print(f"numba backend unavailable ({exc}); nothing to compare")
        return
    numpy_kernels = get_kernels("numpy")

    shapes = [(1, 128, 8), (128, 256, 5), (256, 128, 3)]
    print(f"batch={args.batch} length={args.length} (best of {args.repeat})")
    print(f"{'shape':>22} {'numpy':>10} {'numba':>10} {'speedup':>8}")
    for c_in, c_out, ksize in shapes:
        for phase in ("fwd", "bwd"):
            t_np = bench_conv(numpy_kernels, args.batch, c_in, c_out,
                              args.length, ksize, args.repeat)
            t_nb = bench_conv(numba_kernels, args.batch, c_in, c_out,
                              args.length, ksize, args.repeat)
            i = 0 if phase == "fwd" else 1
            label = f"{c_in}->{c_out} k{ksize} {phase}"
            print(f"{label:>22} {t_np[i] * 1e3:>8.2f}ms {t_nb[i] * 1e3:>8.2f}ms "
                  f"{t_np[i] / t_nb[i]:>7.2f}x")

    t_np = bench_train_step("numpy", args.batch, args.length, args.repeat)
    t_nb = bench_train_step("numba", args.batch, args.length, args.repeat)
    print(f"{'full train step':>22} {t_np * 1e3:>8.2f}ms {t_nb * 1e3:>8.2f}ms "
          f"{t_np / t_nb:>7.2f}x")


if __name__ == "__main__":
    main()
