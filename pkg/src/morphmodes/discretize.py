"""Galerkin stiffness/mass pencils on morphed B-spline domains.

The cross-sectional eigenproblem ``-Laplace(u) = lambda u`` is discretized
isogeometrically: the solution space is a (possibly h-refined) tensor B-spline
space over the reference square, pulled back through ``G_t``. Dirichlet
conditions are imposed by dropping the boundary basis functions.

Two homotopies are offered through :class:`PencilProvider`:

``physical``
    assemble on the actual morphed domain at every ``t``; derivatives by a
    one-sided difference with step ``delta``.
``algebraic``
    linear interpolation between the endpoint pencils; derivatives exact.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sps

from .bspline import GeometryMorph, KnotVector, basis_matrix, morph_mesh

DIRICHLET = "dirichlet"
NEUMANN = "neumann"
PHYSICAL = "physical"
ALGEBRAIC = "algebraic"


class DegenerateGeometryError(RuntimeError):
    """The morphed map folds over: non-positive Jacobian at a quadrature point."""

    def __init__(self, t: float, xhat: tuple[float, float], det: float):
        self.t, self.xhat, self.det = t, xhat, det
        super().__init__(
            f"non-positive Jacobian determinant {det:.3e} at t={t!r}, xhat=({xhat[0]:.6g}, {xhat[1]:.6g})"
        )


@dataclass(frozen=True, eq=False)
class MatrixPencil:
    """Symmetric pencil ``(K, M)`` with ``M`` positive definite."""

    K: np.ndarray
    M: np.ndarray

    def __post_init__(self):
        K = np.array(self.K, dtype=float)
        M = np.array(self.M, dtype=float)
        if K.ndim != 2 or K.shape[0] != K.shape[1] or K.shape != M.shape:
            raise ValueError(f"K and M must be square and of equal size, got {K.shape} and {M.shape}")
        K.setflags(write=False)
        M.setflags(write=False)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "M", M)

    @property
    def dim(self) -> int:
        return self.K.shape[0]


def refine_knots(kv: KnotVector, factor: int) -> KnotVector:
    """Split every nonempty span of ``kv`` into ``factor`` equal pieces.

    Existing interior knots keep their multiplicity, so the refined space
    contains the original one.
    """
    if factor < 1:
        raise ValueError("refinement factor must be >= 1")
    p = kv.degree
    inner = list(kv.knots[p + 1:-(p + 1)])
    breaks = kv.breaks
    for a, b in zip(breaks[:-1], breaks[1:]):
        inner.extend(a + (b - a) * k / factor for k in range(1, factor))
    inner.sort()
    return KnotVector((kv.knots[0],) * (p + 1) + tuple(inner) + (kv.knots[-1],) * (p + 1), p)


@dataclass(frozen=True)
class DiscreteSpace:
    """Tensor B-spline solution space with its boundary condition."""

    basis_u: KnotVector
    basis_v: KnotVector
    bc: str = DIRICHLET

    def __post_init__(self):
        if self.bc not in (DIRICHLET, NEUMANN):
            raise ValueError(f"unknown boundary condition {self.bc!r}")
        if self.dim == 0:
            raise ValueError("discrete space has no active degrees of freedom")

    @classmethod
    def from_geometry(cls, g: GeometryMorph, refine: int = 1, bc: str = DIRICHLET) -> "DiscreteSpace":
        return cls(refine_knots(g.basis_u, refine), refine_knots(g.basis_v, refine), bc)

    @property
    def shape(self) -> tuple[int, int]:
        return self.basis_u.n_basis, self.basis_v.n_basis

    @functools.cached_property
    def active(self) -> np.ndarray:
        """Flat indices (``u`` fastest) of the active basis functions."""
        nu, nv = self.shape
        i, j = np.meshgrid(np.arange(nu), np.arange(nv), indexing="xy")
        keep = np.ones((nv, nu), dtype=bool)
        if self.bc == DIRICHLET:
            keep &= (i > 0) & (i < nu - 1) & (j > 0) & (j < nv - 1)
        return (j * nu + i)[keep]

    @property
    def dim(self) -> int:
        return len(self.active)


# -- quadrature ----------------------------------------------------------------

def _gauss_points(kv: KnotVector, n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    br = kv.breaks
    a, b = br[:-1, None], br[1:, None]
    pts = 0.5 * (b - a) * x[None, :] + 0.5 * (b + a)
    wts = 0.5 * (b - a) * w[None, :]
    return pts.ravel(), wts.ravel()


@dataclass(frozen=True)
class _Quadrature:
    pts_u: np.ndarray
    pts_v: np.ndarray
    weights: np.ndarray  # (n_qv * n_qu,), u fastest
    phi: sps.csr_matrix  # values of active solution functions
    dphi_u: sps.csr_matrix
    dphi_v: sps.csr_matrix
    geo_u: np.ndarray
    geo_du: np.ndarray
    geo_v: np.ndarray
    geo_dv: np.ndarray


@functools.lru_cache(maxsize=16)
def _quadrature(space: DiscreteSpace, geo_u: KnotVector, geo_v: KnotVector) -> _Quadrature:
    nq = max(space.basis_u.degree, space.basis_v.degree) + 2
    # integrate span by span on the union of solution and geometry breakpoints
    br_u = np.union1d(space.basis_u.breaks, geo_u.breaks)
    br_v = np.union1d(space.basis_v.breaks, geo_v.breaks)
    pu, wu = _gauss_points(_breaks_kv(br_u), nq)
    pv, wv = _gauss_points(_breaks_kv(br_v), nq)
    bu = sps.csr_matrix(basis_matrix(space.basis_u, pu))
    dbu = sps.csr_matrix(basis_matrix(space.basis_u, pu, deriv=True))
    bv = sps.csr_matrix(basis_matrix(space.basis_v, pv))
    dbv = sps.csr_matrix(basis_matrix(space.basis_v, pv, deriv=True))
    act = space.active
    # rows: quadrature point index b*n_qu + a; columns: basis index l*n_u + k
    phi = sps.kron(bv, bu, format="csc")[:, act].tocsr()
    dphi_u = sps.kron(bv, dbu, format="csc")[:, act].tocsr()
    dphi_v = sps.kron(dbv, bu, format="csc")[:, act].tocsr()
    return _Quadrature(
        pts_u=pu, pts_v=pv, weights=np.outer(wv, wu).ravel(),
        phi=phi, dphi_u=dphi_u, dphi_v=dphi_v,
        geo_u=basis_matrix(geo_u, pu), geo_du=basis_matrix(geo_u, pu, deriv=True),
        geo_v=basis_matrix(geo_v, pv), geo_dv=basis_matrix(geo_v, pv, deriv=True),
    )


def _breaks_kv(breaks: np.ndarray) -> KnotVector:
    return KnotVector(tuple(breaks), 0)


def _map_jacobians(q: _Quadrature, points: np.ndarray) -> np.ndarray:
    """Jacobians at all quadrature points, shape ``(n_q, 2, 2)``."""
    dxu = np.einsum("ai,bj,ijc->bac", q.geo_du, q.geo_v, points).reshape(-1, 2)
    dxv = np.einsum("ai,bj,ijc->bac", q.geo_u, q.geo_dv, points).reshape(-1, 2)
    return np.stack([dxu, dxv], axis=-1)


def _sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def assemble_pencil(geometry: GeometryMorph, t: float, space: DiscreteSpace) -> MatrixPencil:
    """Stiffness and mass matrices of the Laplacian on ``G_t([0,1]^2)``."""
    q = _quadrature(space, geometry.basis_u, geometry.basis_v)
    points = morph_mesh(geometry, t).points
    jac = _map_jacobians(q, points)
    det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    bad = np.flatnonzero(det <= 0.0)
    if bad.size:
        k = bad[np.argmin(det[bad])]
        n_qu = q.pts_u.size
        raise DegenerateGeometryError(t, (q.pts_u[k % n_qu], q.pts_v[k // n_qu]), float(det[k]))
    wdet = q.weights * det
    # metric J^{-1} J^{-T} |det J|, i.e. adj(J) adj(J)^T / det J
    a, b, c, d = jac[:, 0, 0], jac[:, 0, 1], jac[:, 1, 0], jac[:, 1, 1]
    g_uu = (b * b + d * d) / det
    g_uv = -(a * b + c * d) / det
    g_vv = (a * a + c * c) / det
    w = q.weights
    du, dv = q.dphi_u, q.dphi_v
    K = (du.T @ sps.diags(w * g_uu) @ du
         + du.T @ sps.diags(w * g_uv) @ dv
         + dv.T @ sps.diags(w * g_uv) @ du
         + dv.T @ sps.diags(w * g_vv) @ dv)
    M = q.phi.T @ sps.diags(wdet) @ q.phi
    return MatrixPencil(_sym(K.toarray()), _sym(M.toarray()))


# -- homotopies ------------------------------------------------------------------

@dataclass
class PencilProvider:
    """Parameter-dependent pencil ``t -> (K(t), M(t))`` on a morphing geometry."""

    kind: str
    geometry: GeometryMorph
    space: DiscreteSpace
    delta: float = 1e-6
    _endpoints: tuple[MatrixPencil, MatrixPencil] | None = field(default=None, init=False, repr=False)
    assemblies: int = field(default=0, init=False)
    _recent: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        if self.kind not in (PHYSICAL, ALGEBRAIC):
            raise ValueError(f"unknown homotopy kind {self.kind!r}")
        if not self.delta > 0.0:
            raise ValueError("finite-difference step delta must be positive")

    @classmethod
    def from_endpoints(cls, start: MatrixPencil, end: MatrixPencil) -> "AlgebraicPencil":
        return AlgebraicPencil(start, end)

    def _assemble(self, t: float) -> MatrixPencil:
        t = float(t)
        hit = self._recent.get(t)
        if hit is not None:
            return hit
        self.assemblies += 1
        pencil = assemble_pencil(self.geometry, t, self.space)
        # the tracker revisits t for derivatives; a few entries suffice
        if len(self._recent) >= 4:
            self._recent.pop(next(iter(self._recent)))
        self._recent[t] = pencil
        return pencil

    @property
    def endpoints(self) -> tuple[MatrixPencil, MatrixPencil]:
        if self._endpoints is None:
            self._endpoints = (self._assemble(0.0), self._assemble(1.0))
        return self._endpoints

    def pencil(self, t: float) -> MatrixPencil:
        if self.kind == ALGEBRAIC:
            return algebraic_pencil(self, t)
        return physical_pencil(self, t)

    def derivative(self, t: float, direction: int = 1) -> tuple[np.ndarray, np.ndarray]:
        return pencil_derivative(self, t, direction)


class AlgebraicPencil:
    """Linear interpolation between two fixed pencils (no geometry attached)."""

    kind = ALGEBRAIC

    def __init__(self, start: MatrixPencil, end: MatrixPencil):
        if start.dim != end.dim:
            raise ValueError(f"endpoint pencils differ in dimension: {start.dim} vs {end.dim}")
        self.endpoints = (start, end)

    def pencil(self, t: float) -> MatrixPencil:
        return algebraic_pencil(self, t)

    def derivative(self, t: float, direction: int = 1) -> tuple[np.ndarray, np.ndarray]:
        return pencil_derivative(self, t, direction)


class CallablePencil:
    """Pencil given by a function of ``t``; optional analytic derivative.

    Without ``derivative`` a one-sided difference with step ``delta`` is used.
    """

    kind = "callable"

    def __init__(self, func: Callable[[float], tuple[np.ndarray, np.ndarray]],
                 derivative: Callable[[float], tuple[np.ndarray, np.ndarray]] | None = None,
                 delta: float = 1e-6):
        self.func, self._deriv, self.delta = func, derivative, delta

    def pencil(self, t: float) -> MatrixPencil:
        return MatrixPencil(*self.func(t))

    def derivative(self, t: float, direction: int = 1) -> tuple[np.ndarray, np.ndarray]:
        if self._deriv is not None:
            dk, dm = self._deriv(t)
            return np.asarray(dk, dtype=float), np.asarray(dm, dtype=float)
        return _one_sided(self.pencil, t, self.delta, direction)


def physical_pencil(provider: PencilProvider, t: float) -> MatrixPencil:
    """Pencil assembled on the morphed domain ``Omega_t``."""
    return provider._assemble(t)


def algebraic_pencil(provider, t: float) -> MatrixPencil:
    """``(1 - t) A(0) + t A(1)`` for ``A`` in ``{K, M}``."""
    start, end = provider.endpoints
    if start.dim != end.dim:
        raise ValueError(f"endpoint pencils differ in dimension: {start.dim} vs {end.dim}")
    if t == 0.0:
        return start
    if t == 1.0:
        return end
    return MatrixPencil(start.K + t * (end.K - start.K), start.M + t * (end.M - start.M))


def _one_sided(pencil_at, t: float, delta: float, direction: int):
    s = 1.0 if direction >= 0 else -1.0
    if not 0.0 <= t + s * delta <= 1.0:
        s = -s
    a, b = pencil_at(t), pencil_at(t + s * delta)
    h = s * delta
    return (b.K - a.K) / h, (b.M - a.M) / h


def pencil_derivative(provider, t: float, direction: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """``(dK/dt, dM/dt)`` at ``t``.

    Algebraic pencils return the exact slope. Physical pencils use the
    one-sided difference ``(A(t + s delta) - A(t)) / (s delta)`` with ``s`` the
    direction of travel; the side is flipped when ``t + s delta`` would leave
    ``[0, 1]``.
    """
    if provider.kind == ALGEBRAIC:
        start, end = provider.endpoints
        return end.K - start.K, end.M - start.M
    if provider.kind == PHYSICAL:
        return _one_sided(lambda s: physical_pencil(provider, s), t, provider.delta, direction)
    return provider.derivative(t, direction)


# -- field export ----------------------------------------------------------------

def _grid_shape(grid) -> tuple[int, int]:
    nu, nv = (grid, grid) if np.isscalar(grid) else tuple(grid)
    nu, nv = int(nu), int(nv)
    if nu < 2 or nv < 2:
        raise ValueError(f"sampling grid needs at least 2 points per direction, got {(nu, nv)}")
    return nu, nv


def eval_field(space: DiscreteSpace, geometry: GeometryMorph, t: float, coeffs, grid) -> np.ndarray:
    """Sample ``|u_h|`` on a uniform parametric grid.

    Returns an array with columns ``x, y, |u|``; rows ordered with ``u``
    running fastest.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (space.dim,):
        raise ValueError(f"expected {space.dim} coefficients, got shape {coeffs.shape}")
    nu, nv = _grid_shape(grid)
    us, vs = np.linspace(0.0, 1.0, nu), np.linspace(0.0, 1.0, nv)
    full = np.zeros(space.shape[0] * space.shape[1])
    full[space.active] = coeffs
    c = full.reshape(space.shape[1], space.shape[0])  # [l, k]
    vals = basis_matrix(space.basis_v, vs) @ c @ basis_matrix(space.basis_u, us).T  # [b, a]
    pts = np.einsum("ai,bj,ijc->bac", basis_matrix(geometry.basis_u, us),
                    basis_matrix(geometry.basis_v, vs), morph_mesh(geometry, t).points)
    return np.column_stack([pts.reshape(-1, 2), np.abs(vals).ravel()])
