"""Generalized symmetric-definite eigenpairs and their parameter derivatives."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy import constants

from .discretize import MatrixPencil

#: speed of light from the vacuum constants, 1/sqrt(mu0 eps0)
C_VACUUM = 1.0 / math.sqrt(constants.mu_0 * constants.epsilon_0)


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """The mass matrix could not be factorized."""


class SingularDerivativeError(np.linalg.LinAlgError):
    """The bordered derivative system is singular (degenerate eigenvalue)."""


def wavenumber_to_freq(lam: float, c: float = C_VACUUM) -> float:
    """Frequency ``c sqrt(lambda) / (2 pi)`` of an eigenvalue ``lambda = k^2``."""
    return c * math.sqrt(max(lam, 0.0)) / (2.0 * math.pi)


def freq_to_wavenumber(f: float, c: float = C_VACUUM) -> float:
    return (2.0 * math.pi * f / c) ** 2


@dataclass(frozen=True, eq=False)
class Eigenpair:
    """An eigenvalue with its M-normalized eigenvector."""

    lam: float
    e: np.ndarray
    c: float = C_VACUUM

    @property
    def freq(self) -> float:
        return wavenumber_to_freq(self.lam, self.c)


@dataclass(frozen=True, eq=False)
class EigDerivative:
    e_prime: np.ndarray
    lambda_prime: float


def m_inner(a, b, M) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape or M.shape != (a.size, a.size):
        raise ValueError(f"dimension mismatch: {a.shape}, {b.shape}, M {M.shape}")
    return float(a @ (M @ b))


def m_norm(a, M) -> float:
    return math.sqrt(max(m_inner(a, a, M), 0.0))


def fix_phase(e: np.ndarray) -> np.ndarray:
    """Flip ``e`` so that its largest-magnitude entry is positive."""
    k = int(np.argmax(np.abs(e)))
    return -e if e[k] < 0 else e


def solve_gevp(pencil: MatrixPencil, count: int, c: float = C_VACUUM) -> list[Eigenpair]:
    """The ``count`` smallest eigenpairs of ``K e = lambda M e``, ascending.

    Eigenvectors are M-orthonormal and carry the largest-entry-positive phase.
    """
    n = pencil.dim
    if not 1 <= count <= n:
        raise ValueError(f"count must lie in [1, {n}], got {count}")
    try:
        lam, vecs = sla.eigh(pencil.K, pencil.M, subset_by_index=[0, count - 1])
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(f"mass matrix is not positive definite: {exc}") from exc
    return [Eigenpair(float(l), fix_phase(vecs[:, k]), c) for k, l in enumerate(lam)]


def eig_derivative(pencil: MatrixPencil, dK, dM, pair: Eigenpair, norm_vec=None,
                   cluster=()) -> EigDerivative:
    """Derivative of a simple eigenpair from the bordered system.

    Solves::

        [ K - lam M     -M e ] [ e'   ]   [ -K' e + lam M' e ]
        [ v^T M          0   ] [ lam' ] = [ -e^T M' e        ]

    with ``v = norm_vec`` (defaults to ``e``). ``cluster`` may hold further
    M-orthonormal eigenvectors sharing the eigenvalue; they are added as extra
    borders with homogeneous constraints, which keeps the system regular at a
    numerically exact degeneracy.
    """
    K, M = pencil.K, pencil.M
    e = np.asarray(pair.e, dtype=float)
    v = e if norm_vec is None else np.asarray(norm_vec, dtype=float)
    lam = pair.lam
    n = K.shape[0]
    extra = [np.asarray(x, dtype=float) for x in cluster]
    b = len(extra) + 1
    A = np.zeros((n + b, n + b))
    A[:n, :n] = K - lam * M
    borders = [e] + extra
    rows = [v] + extra
    for k, (col, row) in enumerate(zip(borders, rows)):
        A[:n, n + k] = -(M @ col)
        A[n + k, :n] = M @ row
    rhs = np.zeros(n + b)
    rhs[:n] = -(dK @ e) + lam * (dM @ e)
    rhs[n] = -(e @ (dM @ e))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu = sla.lu_factor(A, check_finite=False)
    diag = np.abs(np.diag(lu[0]))
    scale = max(np.abs(A).max(), 1.0)
    if not np.all(np.isfinite(diag)) or diag.min() <= 1e-13 * scale:
        raise SingularDerivativeError(
            f"bordered derivative system is singular at lambda={lam:.12g} (degenerate eigenvalue?)"
        )
    sol = sla.lu_solve(lu, rhs, check_finite=False)
    return EigDerivative(sol[:n], float(sol[n]))
