"""Time the numba kernels against their numpy twins and check they agree.

    python3 benchmarks/bench_kernels.py [--repeat 5]

The numba timings exclude compilation (one warm-up call first).
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from gaussclosure import _kernels as K
from gaussclosure.reference import face_coefficients


def fv_case(m=256, L=10.0):
    h = 2 * L / m
    x = -L + (np.arange(m) + 0.5) * h
    X, Y = np.meshgrid(x, x, indexing="ij")
    psi = np.exp(-0.5 * (X**2 + Y**2)) / (2 * np.pi)
    xf = -L + np.arange(1, m) * h
    # shear drift, M = [[1, -1], [0, 1]]
    v0 = -(xf[:, None] - x[None, :])
    v1 = -(xf[None, :]) * np.ones((m, 1))
    a0l, a0r = face_coefficients(v0, 1.0, h)
    a1l, a1r = face_coefficients(v1, 1.0, h)
    return (psi, a0l, a0r, a1l, a1r, h, 1e-3)


def em_case(P=100_000, D=4, seed=0):
    rng = np.random.default_rng(seed)
    q = rng.standard_normal((P, D))
    M = np.eye(D) + 0.3 * rng.standard_normal((D, D))
    return (q, M, np.ones(D) * 1.4, rng.standard_normal((P, D)), 1e-3)


def transport_case(m=64, K_=12, seed=0):
    rng = np.random.default_rng(seed)
    field = rng.standard_normal((m, m, K_))
    vel = rng.standard_normal((m, m, 2))
    return (field, vel, np.array([1.0 / m, 1.0 / m]), 0.01)


CASES = {
    "fv_step_2d (256^2)": (K.fv_step_2d_numpy, K.fv_step_2d_numba, fv_case, False),
    "em_update (1e5 x 4)": (K.em_update_numpy, K.em_update_numba, em_case, True),
    "transport_rhs (64^2 x 12)": (K.transport_rhs_numpy, K.transport_rhs_numba, transport_case, False),
}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    print(f"{'kernel':28s} {'numpy [ms]':>11s} {'numba [ms]':>11s} {'speedup':>8s} {'max|diff|':>10s}")
    for name, (f_np, f_nb, make, inplace) in CASES.items():
        data = make()

        def call(f):
            a = [x.copy() if isinstance(x, np.ndarray) else x for x in data] if inplace else data
            return f(*a)

        diff = float(np.max(np.abs(call(f_np) - call(f_nb))))
        t_np = min(timeit.repeat(lambda: call(f_np), number=1, repeat=args.repeat))
        t_nb = min(timeit.repeat(lambda: call(f_nb), number=1, repeat=args.repeat))
        print(f"{name:28s} {1e3 * t_np:11.2f} {1e3 * t_nb:11.2f} {t_np / t_nb:8.1f} {diff:10.2e}")


if __name__ == "__main__":
    main()
