"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat N]

Each row reports the best-of-N wall time per call for both backends and
checks that their outputs agree.
"""

import argparse
import time

import numpy as np

from asca import kernels
from asca.guessing import GuessInstance, _search_table, _truth_score


def best_time(fn, repeat):
    fn()  # warm-up (and JIT compilation)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def frac_delay_case(ns, rng):
    sig = rng.standard_normal(1024)
    delays = rng.uniform(100, 40000, 200)

    def go():
        out = np.zeros(48000)
        for d in delays:
            ns.frac_delay_add(out, sig, d, 0.5)
        return out
    return go


def conv_case(ns, rng):
    x = rng.standard_normal((32, 6, 13, 16))
    w = rng.standard_normal((8, 6, 3, 3)) * 0.1
    b = np.zeros(8)
    gy = rng.standard_normal((32, 8, 13, 16))

    def go():
        y = ns.conv3_forward(x, w, b)
        gx, gw, gb = ns.conv3_backward(x, w, gy)
        return np.concatenate([y.ravel(), gx.ravel(), gw.ravel(), gb.ravel()])
    return go


def guess_case(ns, rng):
    n, L = 14, 5
    p = rng.uniform(0.05, 0.95, n)
    c = rng.dirichlet(np.full(10, 0.3), n)
    idx = tuple(sorted(rng.choice(n, L, replace=False).tolist()))
    inst = GuessInstance(p, c, tuple("1234567890"), L, idx, tuple("12345"))
    w, _, _, table, prefix = _search_table(inst)
    thr = _truth_score(inst, w)

    def go():
        return np.array([ns.count_guesses(table, prefix, L, thr, 1e-9, 10 ** 6)])
    return go


CASES = {"frac_delay_add": frac_delay_case, "conv3": conv_case, "count_guesses": guess_case}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if not kernels.HAVE_NUMBA:
        print("numba not installed; only the numpy backend is available")
    print(f"{'kernel':<16}{'numpy_ms':>12}{'numba_ms':>12}{'speedup':>10}  agree")
    for name, make in CASES.items():
        fn_np = make(kernels.NUMPY, np.random.default_rng(0))
        fn_jit = make(kernels.JIT, np.random.default_rng(0))
        agree = np.allclose(fn_np(), fn_jit(), atol=1e-9)
        t_np, t_jit = best_time(fn_np, args.repeat), best_time(fn_jit, args.repeat)
        print(f"{name:<16}{1e3 * t_np:>12.3f}{1e3 * t_jit:>12.3f}{t_np / t_jit:>10.1f}  {agree}")


if __name__ == "__main__":
    main()
