"""Time the numba kernels against the numpy fallback.

    python benchmarks/bench_kernels.py --sizes 1000 10000 --repeat 5
"""
import argparse
import timeit

import numpy as np

from nml import _kernels as K


def cases(n: int, rng: np.random.Generator):
    v = rng.uniform(size=n)
    G = np.exp(-0.01 * np.arange(n)) * np.sin(0.1 * np.arange(n))
    return {
        "decayed_cumsum": lambda impl: impl.decayed_cumsum(v, 0.999, 0.01),
        "trapz_decay_conv": lambda impl: impl.trapz_decay_conv(v, 0.1, 0.01),
        "green_conv": lambda impl: impl.green_conv(G, v, 0.1),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[1_000, 10_000, 50_000])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    impls = {"numpy": K.numpy_impl}
    if K.HAVE_NUMBA:
        impls["numba"] = K.jit_impl
    else:
        print("numba is not installed; timing the numpy path only")
    rng = np.random.default_rng(0)
    print(f"{'kernel':18s} {'n':>7s} " + " ".join(f"{k + ' ms':>10s}" for k in impls))
    for n in args.sizes:
        for name, fn in cases(n, rng).items():
            for impl in impls.values():
                fn(impl)  # compile and warm caches
            ms = [1e3 * min(timeit.repeat(lambda: fn(impl), number=1, repeat=args.repeat)) for impl in impls.values()]
            print(f"{name:18s} {n:7d} " + " ".join(f"{m:10.3f}" for m in ms))


if __name__ == "__main__":
    main()
