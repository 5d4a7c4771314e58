"""Time the compiled and pure-Python log-likelihood kernels.

Run with ``python3 benchmarks/bench_kernels.py [--n 5000] [--repeat 50]``.
"""

import argparse
import timeit

import numpy as np

from ddpvf import _kernels_py
from ddpvf.distributions import FrailtySpec

try:
    from ddpvf import _kernels as compiled
except ImportError:
    compiled = None

SPECS = {
    "none": FrailtySpec.none(),
    "gamma": FrailtySpec.gamma_frailty(0.8),
    "ig": FrailtySpec.inverse_gaussian(2.0),
    "pvf": FrailtySpec.pvf(0.73, 11.0),
}


def inputs(n, seed=0, patterns=4):
    rng = np.random.default_rng(seed)
    time = np.sort(rng.weibull(1.3, n) * 30 + 1e-3)
    event = (rng.random(n) < 0.4).astype(float)
    group = np.sort(rng.integers(0, patterns, n))
    la = rng.normal(0.5, 0.3, patterns)[group]
    lb = rng.normal(6.0, 1.0, patterns)[group]
    lc = rng.normal(0.0, 2.0, patterns)[group]
    return time, event, la, lb, lc


def best_ms(fn, repeat):
    return 1e3 * min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, default=5000)
    parser.add_argument("--repeat", type=int, default=50)
    args = parser.parse_args(argv)
    time, event, la, lb, lc = inputs(args.n)
    log_time = np.log(time)
    print(f"n={args.n}, best of {args.repeat}, milliseconds per log-likelihood evaluation")
    print(f"{'frailty':8s} {'cython':>9s} {'python':>9s} {'speedup':>8s}")
    for name, spec in SPECS.items():
        a = (time, event, la, lb, lc, *spec.kernel_args())
        py = best_ms(lambda: _kernels_py.loglik_sum(*a), args.repeat)
        if compiled is None:
            print(f"{name:8s} {'n/a':>9s} {py:9.3f} {'n/a':>8s}")
            continue
        cy = best_ms(lambda: compiled.loglik_sum(*a, log_time=log_time), args.repeat)
        print(f"{name:8s} {cy:9.3f} {py:9.3f} {py / cy:8.2f}")


if __name__ == "__main__":
    main()
