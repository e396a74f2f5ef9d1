"""Compare the compiled SGD kernels against the numpy fallback.

Usage:  python benchmarks/bench_kernels.py [n_ratings]

Times one fit-sized workload per kernel on synthetic ratings and reports the
speedup.  The two backends implement identical update rules; results agree to
rounding error (checked here as well).
"""

import sys
import time

import numpy as np

from grouprec.kernels import pykernels

try:
    from grouprec.kernels import ckernels
except ImportError:
    ckernels = None


def make_ratings(n_users, n_items, n_ratings, seed=0):
    rng = np.random.default_rng(seed)
    pairs = rng.choice(n_users * n_items, size=n_ratings, replace=False)
    u = (pairs // n_items).astype(np.int32)
    i = (pairs % n_items).astype(np.int32)
    r = rng.integers(1, 6, size=n_ratings).astype(np.float64)
    return u, i, r


def item_lists(u, i, n_users):
    order = np.lexsort((i, u))
    flat = i[order].astype(np.int32)
    off = np.zeros(n_users + 1, dtype=np.int64)
    np.cumsum(np.bincount(u, minlength=n_users), out=off[1:])
    return flat, off


def timed(fn):
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


def bench(n_ratings=40_000):
    n_users, n_items, f = 600, 900, 20
    u, i, r = make_ratings(n_users, n_items, n_ratings)
    flat, off = item_lists(u, i, n_users)
    rng = np.random.default_rng(1)

    def fresh():
        return (
            np.zeros(n_users),
            np.zeros(n_items),
            rng.normal(0, 0.1, (n_users, f)),
            rng.normal(0, 0.1, (n_items, f)),
            rng.normal(0, 0.1, (n_items, f)),
        )

    cnt_u = np.bincount(u, minlength=n_users).astype(float)
    cnt_i = np.bincount(i, minlength=n_items).astype(float)

    def nmf_state(s):
        return (np.abs(s[2]) + 0.01, np.abs(s[3]) + 0.01)

    jobs = {
        "svd_sgd (5 epochs)": (
            lambda s: s,
            lambda impl, s: impl.svd_sgd(u, i, r, 3.5, s[0], s[1], s[2], s[3], 5, 0.005, 0.02),
        ),
        "svdpp_sgd (1 epoch)": (
            lambda s: s,
            lambda impl, s: impl.svdpp_sgd(
                u, i, r, 3.5, s[0], s[1], s[2], s[3], s[4], flat, off, 1, 0.007, 0.02
            ),
        ),
        "nmf_epochs (10 epochs)": (
            nmf_state,
            lambda impl, s: impl.nmf_epochs(u, i, r, s[0], s[1], cnt_u, cnt_i, 10, 0.06, 0.06),
        ),
    }

    print(f"{n_ratings} ratings, {n_users}x{n_items}, {f} factors")
    for name, (prep, job) in jobs.items():
        state_py = prep(fresh())
        state_cy = tuple(a.copy() for a in state_py)
        t_py = timed(lambda: job(pykernels, state_py))
        if ckernels is None:
            print(f"{name:24s} python {t_py * 1e3:9.1f} ms   (no compiled extension)")
            continue
        t_cy = timed(lambda: job(ckernels, state_cy))
        agree = all(
            np.allclose(a, b, atol=1e-9) for a, b in zip(state_py, state_cy)
        )
        print(
            f"{name:24s} python {t_py * 1e3:9.1f} ms   cython {t_cy * 1e3:8.1f} ms   "
            f"speedup {t_py / t_cy:6.1f}x   agree={agree}"
        )


if __name__ == "__main__":
    bench(int(sys.argv[1]) if len(sys.argv) > 1 else 40_000)
