"""Independent reference computations used by the tests."""
from __future__ import annotations

import numpy as np


def cox_de_boor(knots, i: int, p: int, x: float) -> float:
    """Textbook recursion for a single basis function, no span search."""
    knots = list(knots)
    last = knots[-1]
    if p == 0:
        if knots[i] <= x < knots[i + 1]:
            return 1.0
        # right end belongs to the last nonempty interval
        if x == last and knots[i] < knots[i + 1] == last:
            return 1.0
        return 0.0
    out = 0.0
    d1 = knots[i + p] - knots[i]
    if d1 > 0:
        out += (x - knots[i]) / d1 * cox_de_boor(knots, i, p - 1, x)
    d2 = knots[i + p + 1] - knots[i + 1]
    if d2 > 0:
        out += (knots[i + p + 1] - x) / d2 * cox_de_boor(knots, i + 1, p - 1, x)
    return out


def all_basis(knots, p: int, x: float) -> np.ndarray:
    n = len(knots) - p - 1
    return np.array([cox_de_boor(knots, i, p, x) for i in range(n)])


def gevp_by_cholesky(K: np.ndarray, M: np.ndarray) -> np.ndarray:
    """Eigenvalues of ``K e = lam M e`` via ``L^-1 K L^-T`` and a standard solve."""
    L = np.linalg.cholesky(M)
    Li = np.linalg.inv(L)
    return np.linalg.eigvalsh(Li @ K @ Li.T)


def random_spd(rng, n: int, shift: float = 1.0) -> np.ndarray:
    A = rng.standard_normal((n, n))
    return A @ A.T + shift * n * np.eye(n)


def random_sym(rng, n: int) -> np.ndarray:
    A = rng.standard_normal((n, n))
    return 0.5 * (A + A.T)
