"""Time the numba kernels against their numpy / pure-Python counterparts.

    python3 benchmarks/bench_kernels.py [--repeat 20]

The compiled and fallback paths are also checked for agreement, so a
speedup never hides a wrong answer.  The CSMA simulator is compared on
its delivery rate only; byte equality of the whole fallback path is
covered by the test suite.
"""
import argparse
import sys
import timeit

import numpy as np

from dapplan import kernels
from dapplan._jit import NUMBA_ENABLED
from dapplan.des import csma_kernel, tdma_kernel
from dapplan.params import MacParams


def bench(name, fast, slow, repeat, exact=True):
    a, b = fast(), slow()
    a, b = (a if isinstance(a, tuple) else (a,)), (b if isinstance(b, tuple) else (b,))
    for x, y in zip(a, b):
        if not exact:
            # py_func still calls compiled helpers that draw from numba's own RNG stream
            assert abs((np.asarray(x) >= 0).mean() - (np.asarray(y) >= 0).mean()) < 0.05, name
            continue
        x, y = np.asarray(x), np.asarray(y)
        if x.dtype.kind == "f":
            assert np.allclose(x, y, atol=1e-9), name
        else:
            assert np.array_equal(x, y), name
    tf = min(timeit.repeat(fast, number=1, repeat=repeat))
    ts = min(timeit.repeat(slow, number=1, repeat=max(1, repeat // 5)))
    print(f"{name:<12} fast {tf * 1e3:9.3f} ms   fallback {ts * 1e3:9.3f} ms   x{ts / tf:7.1f}")


def chain_net(n):
    parent = np.arange(-1, n - 1, dtype=np.int64)
    neigh = [[j for j in (i - 1, i + 1) if 0 <= j < n] for i in range(n)]
    ptr = np.cumsum([0] + [len(v) for v in neigh]).astype(np.int64)
    idx = np.array([j for v in neigh for j in v], dtype=np.int64)
    return parent, ptr, idx


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--packets", type=int, default=2000)
    args = ap.parse_args(argv)
    if not NUMBA_ENABLED:
        print("numba is disabled (DAPPLAN_DISABLE_NUMBA or not installed); nothing to compare", file=sys.stderr)
        return 1
    rng = np.random.default_rng(0)
    mac = MacParams()
    w = np.asarray(mac.backoff_windows, dtype=np.int64)

    p = rng.uniform(0, 1, 25)
    bench("pb_dft", lambda: kernels.pb_pmf_dft_loop(p), lambda: kernels.pb_pmf_dft_np(p), args.repeat)
    bench("csma_theta", lambda: kernels.csma_theta_loop(0.8, 0.1, 0.2, 0.1, w, mac.max_retries, 400),
          lambda: kernels.csma_theta_np(0.8, 0.1, 0.2, 0.1, w, mac.max_retries, 400), args.repeat)
    ell = np.concatenate([[0.0], kernels.pb_pmf_dft_np(p)[0]])
    bench("tdma_cdf", lambda: kernels.tdma_cdf_loop(ell, 0.1, mac.max_retries, 400),
          lambda: kernels.tdma_cdf_np(ell, 0.1, mac.max_retries, 400), args.repeat)

    n = 10
    parent, ptr, idx = chain_net(n)
    eps = np.full(n, 0.05)
    src = rng.integers(0, n, args.packets).astype(np.int64)
    avail = np.sort(rng.integers(0, 50 * args.packets, args.packets)).astype(np.int64)
    visits = args.packets * (n + 1)

    def des(kernel, extra):
        return lambda: kernel(src, avail, parent, ptr, idx, eps, *extra, mac.max_retries, 1, visits)[0]

    bench("csma_des", des(csma_kernel, (w,)), des(csma_kernel.py_func, (w,)), 3, exact=False)
    bench("tdma_des", des(tdma_kernel, ()), des(tdma_kernel.py_func, ()), 3)
    return 0


if __name__ == "__main__":
    sys.exit(main())
