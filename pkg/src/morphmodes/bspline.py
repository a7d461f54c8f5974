"""B-spline bases, tensor-product geometry maps and control-mesh morphing.

Conventions
-----------
* Knot vectors are open (clamped): the first and last knot each appear
  ``degree + 1`` times.
* Knot spans are half-open, ``knots[i] <= xi < knots[i+1]``; the right end of
  the parameter range is assigned to the last nonempty span.
* Quotients ``0/0`` arising from repeated knots are taken as ``0``.
* Control points are stored as arrays of shape ``(n_u, n_v, 2)`` indexed
  ``[i(u), j(v)]``. The JSON fixture format is row-major with ``u``
  running fastest, i.e. ``mesh[j][i]``.
"""
from __future__ import annotations

import bisect
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class KnotRangeError(ValueError):
    """A parameter lies outside the range covered by a knot vector."""


@dataclass(frozen=True)
class KnotVector:
    """Open knot vector together with its polynomial degree."""

    knots: tuple[float, ...]
    degree: int

    def __post_init__(self):
        knots = tuple(float(k) for k in self.knots)
        object.__setattr__(self, "knots", knots)
        p = self.degree
        if p < 0:
            raise ValueError(f"degree must be non-negative, got {p}")
        if any(b < a for a, b in zip(knots, knots[1:])):
            raise ValueError("knots must be non-decreasing")
        if len(knots) < 2 * (p + 1):
            raise ValueError(
                f"need at least {2 * (p + 1)} knots for degree {p}, got {len(knots)}"
            )
        first, last = knots[0], knots[-1]
        if knots.count(first) != p + 1 or knots.count(last) != p + 1:
            raise ValueError("first and last knot must each be repeated exactly degree+1 times")
        if not first < last:
            raise ValueError("knot vector has an empty parameter range")

    @classmethod
    def uniform(cls, n_spans: int, degree: int) -> "KnotVector":
        """Clamped, uniformly spaced knot vector on [0, 1]."""
        inner = [i / n_spans for i in range(1, n_spans)]
        return cls((0.0,) * (degree + 1) + tuple(inner) + (1.0,) * (degree + 1), degree)

    @property
    def n_basis(self) -> int:
        return len(self.knots) - self.degree - 1

    @property
    def breaks(self) -> np.ndarray:
        """Distinct knot values, i.e. the boundaries of the nonempty spans."""
        return np.unique(np.asarray(self.knots))

    @property
    def n_spans(self) -> int:
        return len(self.breaks) - 1

    def greville(self) -> np.ndarray:
        """Greville abscissae (averages of ``degree`` consecutive interior knots)."""
        p = self.degree
        k = np.asarray(self.knots)
        if p == 0:
            return 0.5 * (k[:-1] + k[1:])
        return np.array([k[i + 1:i + p + 1].mean() for i in range(self.n_basis)])

    def to_list(self) -> list[float]:
        return list(self.knots)


def find_span(kv: KnotVector, xi: float) -> int:
    """Index ``i`` of the knot span containing ``xi``.

    Returns ``i`` with ``knots[i] <= xi < knots[i+1]``. At the right end of the
    range the last nonempty span is returned.
    """
    knots = kv.knots
    if not knots[0] <= xi <= knots[-1]:
        raise KnotRangeError(f"xi={xi!r} outside knot range [{knots[0]}, {knots[-1]}]")
    if xi == knots[-1]:
        i = len(knots) - 1
        while knots[i - 1] == knots[-1]:
            i -= 1
        return i - 1
    return bisect.bisect_right(knots, xi) - 1


def _ratio(num: float, den: float) -> float:
    return num / den if den != 0.0 else 0.0


def _local_basis(kv: KnotVector, span: int, xi: float, degree: int) -> list[float]:
    # Values of B_{span-degree..span, degree}(xi), built up from degree 0.
    t = kv.knots
    vals = [1.0]
    for q in range(1, degree + 1):
        nxt = [0.0] * (q + 1)
        for r, b in enumerate(vals):
            i = span - q + 1 + r  # b is B_{i, q-1}
            # B_{i,q-1} contributes to B_{i-1,q} (falling) and B_{i,q} (rising)
            nxt[r] += _ratio(t[i + q] - xi, t[i + q] - t[i]) * b
            nxt[r + 1] += _ratio(xi - t[i], t[i + q] - t[i]) * b
        vals = nxt
    return vals


def eval_basis(kv: KnotVector, xi: float) -> list[float]:
    """Nonzero basis values ``B_{i-p..i, p}(xi)`` by the Cox-de Boor recursion."""
    span = find_span(kv, xi)
    return _local_basis(kv, span, xi, kv.degree)


def eval_basis_deriv(kv: KnotVector, xi: float) -> list[float]:
    """First derivatives of the ``p+1`` basis functions returned by :func:`eval_basis`."""
    p = kv.degree
    span = find_span(kv, xi)
    if p == 0:
        return [0.0]
    t = kv.knots
    low = _local_basis(kv, span, xi, p - 1)  # B_{span-p+1..span, p-1}
    out = [0.0] * (p + 1)
    for r, b in enumerate(low):
        i = span - p + 1 + r
        c = _ratio(p, t[i + p] - t[i]) * b
        out[r] -= c      # -p/(t[i+p]-t[i]) B_{i,p-1} enters B'_{i-1,p}
        out[r + 1] += c  # +p/(t[i+p]-t[i]) B_{i,p-1} enters B'_{i,p}
    return out


def basis_matrix(kv: KnotVector, xs, deriv: bool = False) -> np.ndarray:
    """Dense ``(len(xs), n_basis)`` matrix of basis values (or derivatives)."""
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    out = np.zeros((xs.size, kv.n_basis))
    p = kv.degree
    for a, x in enumerate(xs):
        span = find_span(kv, float(x))
        vals = eval_basis_deriv(kv, float(x)) if deriv else _local_basis(kv, span, float(x), p)
        out[a, span - p:span + 1] = vals
    return out


@dataclass(frozen=True)
class ControlMesh:
    """Planar control points of shape ``(n_u, n_v, 2)``, in meters."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 3 or pts.shape[2] != 2:
            raise ValueError(f"control points must have shape (n_u, n_v, 2), got {pts.shape}")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def dims(self) -> tuple[int, int]:
        return self.points.shape[0], self.points.shape[1]


@dataclass(frozen=True)
class GeometryMorph:
    """Two matching control meshes over a shared tensor-product basis."""

    basis_u: KnotVector
    basis_v: KnotVector
    mesh_start: ControlMesh
    mesh_end: ControlMesh
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        expected = (self.basis_u.n_basis, self.basis_v.n_basis)
        for name in ("mesh_start", "mesh_end"):
            dims = getattr(self, name).dims
            if dims != expected:
                raise ValueError(f"{name} has dims {dims}, basis sizes are {expected}")


def _check_t(t: float) -> None:
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"morph parameter t={t!r} outside [0, 1]")


def _check_xhat(xhat) -> tuple[float, float]:
    u, v = (float(c) for c in xhat)
    if not (0.0 <= u <= 1.0 and 0.0 <= v <= 1.0):
        raise KnotRangeError(f"reference point {(u, v)} outside [0, 1]^2")
    return u, v


def morph_mesh(g: GeometryMorph, t: float) -> ControlMesh:
    """Control mesh ``(1 - t) P_start + t P_end``."""
    _check_t(t)
    if t == 0.0:
        return g.mesh_start
    if t == 1.0:
        return g.mesh_end
    # this form is exact when both meshes coincide
    p0 = g.mesh_start.points
    return ControlMesh(p0 + t * (g.mesh_end.points - p0))


def _local_points(g: GeometryMorph, mesh: ControlMesh, u: float, v: float):
    su, sv = find_span(g.basis_u, u), find_span(g.basis_v, v)
    pu, pv = g.basis_u.degree, g.basis_v.degree
    return mesh.points[su - pu:su + 1, sv - pv:sv + 1]


def eval_geometry(g: GeometryMorph, t: float, xhat) -> np.ndarray:
    """Physical point ``G_t(xhat)``."""
    _check_t(t)
    u, v = _check_xhat(xhat)
    pts = _local_points(g, morph_mesh(g, t), u, v)
    bu = np.array(eval_basis(g.basis_u, u))
    bv = np.array(eval_basis(g.basis_v, v))
    return np.einsum("i,j,ijc->c", bu, bv, pts)


def eval_jacobian(g: GeometryMorph, t: float, xhat) -> tuple[np.ndarray, float]:
    """Jacobian ``dG_t/dxhat`` (rows: x, y; columns: u, v) and its determinant."""
    _check_t(t)
    u, v = _check_xhat(xhat)
    pts = _local_points(g, morph_mesh(g, t), u, v)
    bu, dbu = np.array(eval_basis(g.basis_u, u)), np.array(eval_basis_deriv(g.basis_u, u))
    bv, dbv = np.array(eval_basis(g.basis_v, v)), np.array(eval_basis_deriv(g.basis_v, v))
    jac = np.column_stack([
        np.einsum("i,j,ijc->c", dbu, bv, pts),
        np.einsum("i,j,ijc->c", bu, dbv, pts),
    ])
    return jac, float(np.linalg.det(jac))


# -- fixture files -----------------------------------------------------------

def _mesh_to_json(mesh: ControlMesh) -> list:
    # [j][i] ordering: u fastest
    return [[[float(c) for c in mesh.points[i, j]] for i in range(mesh.dims[0])]
            for j in range(mesh.dims[1])]


def _mesh_from_json(rows) -> ControlMesh:
    arr = np.asarray(rows, dtype=float)
    if arr.ndim != 3 or arr.shape[2] != 2:
        raise ValueError(f"control mesh must be nested [v][u][xy], got shape {arr.shape}")
    return ControlMesh(arr.transpose(1, 0, 2))


def geometry_to_dict(g: GeometryMorph) -> dict:
    d = {
        "degree_u": g.basis_u.degree,
        "degree_v": g.basis_v.degree,
        "knots_u": g.basis_u.to_list(),
        "knots_v": g.basis_v.to_list(),
        "mesh_start": _mesh_to_json(g.mesh_start),
        "mesh_end": _mesh_to_json(g.mesh_end),
    }
    d.update(g.meta)
    return d


def geometry_from_dict(d: dict) -> GeometryMorph:
    required = ("degree_u", "degree_v", "knots_u", "knots_v", "mesh_start", "mesh_end")
    missing = [k for k in required if k not in d]
    if missing:
        raise ValueError(f"geometry fixture is missing keys: {', '.join(missing)}")
    meta = {k: v for k, v in d.items() if k not in required}
    return GeometryMorph(
        basis_u=KnotVector(d["knots_u"], int(d["degree_u"])),
        basis_v=KnotVector(d["knots_v"], int(d["degree_v"])),
        mesh_start=_mesh_from_json(d["mesh_start"]),
        mesh_end=_mesh_from_json(d["mesh_end"]),
        meta=meta,
    )


def load_geometry(path) -> GeometryMorph:
    with open(path, encoding="utf-8") as fh:
        return geometry_from_dict(json.load(fh))


def save_geometry(g: GeometryMorph, path) -> None:
    Path(path).write_text(json.dumps(geometry_to_dict(g), indent=1) + "\n", encoding="utf-8")


def file_checksum(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
