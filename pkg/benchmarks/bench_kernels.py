"""Compare the numba and numpy kernels on the hot paths.

    python3 benchmarks/bench_kernels.py [--repeat N]

Both implementations are imported directly, so one process times both
regardless of DMCC_DISABLE_NUMBA.
"""
import argparse
import timeit

import numpy as np

from dmcc import kernels
from dmcc.imaging import LinearImage
from dmcc.nn import Architecture, he_init
from dmcc.pipeline import PreprocessConfig, prepare


def cases():
    rng = np.random.default_rng(0)
    sizes = Architecture().sizes
    theta = he_init(Architecture(), rng).theta()
    px = rng.uniform(0, 1, (64 * 64, 3))
    valid = rng.random(px.shape[0]) > 0.02
    X32, L32 = rng.uniform(0, 1, (32, 8)), rng.uniform(0.1, 1, (32, 3))
    X1 = X32[:1]
    grad = rng.normal(size=theta.size)
    state = [theta.copy(), np.zeros_like(theta), np.zeros_like(theta)]
    yield "features 64x64", lambda f: f(px, valid), kernels.features_numba, kernels.features_numpy
    yield "forward 1 sample", lambda f: f(theta, sizes, X1), kernels.forward_numba, kernels.forward_numpy
    yield ("loss+grad batch 32", lambda f: f(theta, sizes, X32, L32, 1e-5),
           kernels.loss_grad_numba, kernels.loss_grad_numpy)
    yield ("adam step", lambda f: f(*state, grad, 10, 1e-3, 0.9, 0.999, 1e-8),
           kernels.adam_numba, kernels.adam_numpy)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=2000)
    args = ap.parse_args()
    print(f"{'kernel':<22}{'numba us':>12}{'numpy us':>12}{'speedup':>10}")
    for name, call, fast, slow in cases():
        call(fast)  # compile
        t = [min(timeit.repeat(lambda: call(f), number=args.repeat, repeat=3)) / args.repeat * 1e6
             for f in (fast, slow)]
        print(f"{name:<22}{t[0]:>12.2f}{t[1]:>12.2f}{t[1] / t[0]:>9.1f}x")
    image = LinearImage(np.random.default_rng(1).uniform(0, 1, (256, 256, 3)))
    n = max(1, args.repeat // 20)
    ms = min(timeit.repeat(lambda: prepare(image, PreprocessConfig()), number=n, repeat=3)) / n * 1e3
    print(f"{'preprocess 256x256':<22}{ms * 1e3:>12.2f}{'(numpy only)':>22}")


if __name__ == "__main__":
    main()
