"""Small analytic pencils shared by the tracker and acceptance tests."""
from __future__ import annotations

import math

import numpy as np

from morphmodes.discretize import AlgebraicPencil, CallablePencil, MatrixPencil


def crossing_pencil() -> AlgebraicPencil:
    """K(t) = diag(1 + 2t, 2), M = I; the branches cross at t = 0.5."""
    return AlgebraicPencil(MatrixPencil(np.diag([1.0, 2.0]), np.eye(2)),
                           MatrixPencil(np.diag([3.0, 2.0]), np.eye(2)))


def _rot(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s], [s, c]])


def rotating_pencil(angle, rate) -> CallablePencil:
    """K(t) = Q(angle(t)) diag(1, 2) Q^T, M = I, with analytic derivative."""
    D = np.diag([1.0, 2.0])
    J = np.array([[0.0, -1.0], [1.0, 0.0]])  # dQ/da = J Q

    def func(t):
        Q = _rot(angle(t))
        return Q @ D @ Q.T, np.eye(2)

    def deriv(t):
        Q = _rot(angle(t))
        K = Q @ D @ Q.T
        return rate(t) * (J @ K - K @ J), np.zeros((2, 2))

    return CallablePencil(func, deriv)


def spinning_pencil(omega: float) -> CallablePencil:
    return rotating_pencil(lambda t: omega * t, lambda t: omega)


def kink_pencil(total: float = math.pi / 4, center: float = 0.5307, width: float = 1e-5) -> CallablePencil:
    """Eigenvectors turn by ``total`` within ``width`` around ``center``."""
    return rotating_pencil(lambda t: 0.5 * total * (1 + math.tanh((t - center) / width)),
                           lambda t: 0.5 * total / width * (1 - math.tanh((t - center) / width) ** 2))


def quadratic_pencil(rng, n: int = 6):
    """Random smooth symmetric pencil (K, M)(t) with quadratic dependence and SPD M."""
    def sym():
        A = rng.standard_normal((n, n))
        return 0.5 * (A + A.T)
    K0, K1, K2 = 5 * sym(), sym(), sym()
    B = rng.standard_normal((n, n))
    M0, M1, M2 = B @ B.T + n * np.eye(n), 0.3 * sym(), 0.1 * sym()

    def func(t):
        return K0 + t * K1 + t * t * K2, M0 + t * M1 + t * t * M2

    def deriv(t):
        return K1 + 2 * t * K2, M1 + 2 * t * M2

    return CallablePencil(func, deriv)
