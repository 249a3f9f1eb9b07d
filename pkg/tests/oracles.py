"""Brute-force reference solvers used by the tests."""

from itertools import combinations

import numpy as np


def l1_basic_solution_oracle(A, y):
    """min ||x||_1 s.t. A x = y by enumerating square bases.

    The LP optimum sits at a basic solution, i.e. some x supported on M
    linearly independent columns; every such x is feasible, so the minimum
    over bases is the optimum.
    """
    M, N = A.shape
    best, arg = np.inf, None
    for S in combinations(range(N), M):
        B = A[:, S]
        if abs(np.linalg.det(B)) < 1e-12:
            continue
        xs = np.linalg.solve(B, y)
        val = np.abs(xs).sum()
        if val < best:
            best, arg = val, np.zeros(N)
            arg[list(S)] = xs
    return best, arg


def rip_brute_force(A, J):
    """Extreme singular values over all J-column supports, one SVD each."""
    smin, smax = np.inf, 0.0
    for S in combinations(range(A.shape[1]), J):
        s = np.linalg.svd(A[:, S], compute_uv=False)
        smax = max(smax, s[0])
        smin = min(smin, s[-1] if J <= A.shape[0] else 0.0)
    return smin, smax
