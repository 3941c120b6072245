"""Timing comparison of the numpy and numba kernel backends.

Run from the repository root::

    python bench/backends.py [--n 200000] [--repeat 20]

Each kernel is timed on representative sizes with best-of-`repeat` wall
times.  The numba column includes a warm-up call so JIT compilation is not
billed to the measurement.
"""

import argparse
import timeit

import numpy as np

from twophase import _kernels as K


def _cases(n, d=3, k=6):
    rng = np.random.Generator(np.random.PCG64(0))
    sigma = rng.uniform(0.1, 3.0, n)
    weights = np.full(n, 1.0 / n)
    sig2 = rng.uniform(0.01, 4.0, (n, d))
    coefs = rng.uniform(0.0, 1.0, d)
    m = max(n // 20, 50)
    P = rng.uniform(0.0, 1.0, (m, k))
    P[:, 0] = 1.0
    psi = rng.normal(0.0, 1.0, m)
    g1 = rng.normal(0.0, 0.3, k)
    g2 = rng.normal(0.0, 0.3, k)
    lam = K.softplus(P @ g2)
    return {
        "budget_value": (sigma, weights, 0.7),
        "combo_sigma": (np.ascontiguousarray(sig2), coefs),
        "mvr_loss": (P, psi, g1, g2, 0.2),
        "mvr_gamma1_grad": (P, psi, g1, g2, 0.2),
        "mvr_gamma2_parts": (P, psi, g1, g2, 0.2),
        "gamma1_system": (P, psi, lam, 0.2),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=200_000, help="rows for rule kernels")
    ap.add_argument("--repeat", type=int, default=20, help="timing repeats")
    args = ap.parse_args()

    cases = _cases(args.n)
    have_numba = K.HAS_NUMBA
    print(f"rows = {args.n}, repeats = {args.repeat}, active backend = {K.BACKEND}")
    header = f"{'kernel':<18}{'numpy (ms)':>12}"
    if have_numba:
        header += f"{'numba (ms)':>12}{'speedup':>10}"
    print(header)
    for name, arg_tuple in cases.items():
        fn_np = getattr(K, f"{name}_numpy")
        t_np = min(timeit.repeat(lambda: fn_np(*arg_tuple), number=1, repeat=args.repeat))
        line = f"{name:<18}{t_np * 1e3:>12.3f}"
        if have_numba:
            fn_nb = getattr(K, f"{name}_numba")
            fn_nb(*arg_tuple)  # warm-up / compile
            t_nb = min(timeit.repeat(lambda: fn_nb(*arg_tuple), number=1, repeat=args.repeat))
            line += f"{t_nb * 1e3:>12.3f}{t_np / t_nb:>10.2f}"
        print(line)
    if not have_numba:
        print("numba is not installed; only the numpy backend was timed")


if __name__ == "__main__":
    main()
