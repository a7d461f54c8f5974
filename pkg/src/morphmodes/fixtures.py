"""Construction of the shipped geometry fixtures.

The disk is a single degree-2 patch over the unit square. Each side of the
square is mapped to a quarter of the circle, parametrized uniformly in angle;
the side curves are least-squares B-spline fits of the exact arc with
interpolated end points, and interior control points come from a discrete
Coons blend of the four sides at the Greville abscissae. The map is singular
only at the four corners of the reference square.

Ellipses are the same mesh scaled along the axes, so the ellipse-to-disk
morph stays an axis-aligned ellipse for every ``t``.
"""
from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import numpy as np

from .bspline import ControlMesh, GeometryMorph, KnotVector, basis_matrix, geometry_to_dict

DATA = "data"


def arc_control_points(kv: KnotVector, theta0: float, theta1: float, samples: int = 2000) -> np.ndarray:
    """Control polygon of a B-spline fit of the unit-circle arc ``theta0 -> theta1``."""
    s = np.linspace(0.0, 1.0, samples)
    B = basis_matrix(kv, s)
    th = theta0 + (theta1 - theta0) * s
    Z = np.column_stack([np.cos(th), np.sin(th)])
    P = np.zeros((kv.n_basis, 2))
    P[0], P[-1] = Z[0], Z[-1]
    rhs = Z - np.outer(B[:, 0], P[0]) - np.outer(B[:, -1], P[-1])
    P[1:-1] = np.linalg.lstsq(B[:, 1:-1], rhs, rcond=None)[0]
    return P


def _rot90(P: np.ndarray, k: int) -> np.ndarray:
    for _ in range(k % 4):
        P = np.column_stack([-P[:, 1], P[:, 0]])
    return P


def disk_points(n_spans: int = 4, radius: float = 1.0, degree: int = 2) -> tuple[KnotVector, np.ndarray]:
    kv = KnotVector.uniform(n_spans, degree)
    n = kv.n_basis
    bottom = arc_control_points(kv, -0.75 * np.pi, -0.25 * np.pi)
    # the other sides are exact quarter-turn copies, keeping the mesh symmetric
    right = _rot90(bottom, 1)
    top = _rot90(bottom, 2)[::-1]
    left = _rot90(bottom, 3)[::-1]
    g = kv.greville()
    P = np.zeros((n, n, 2))
    for i in range(n):
        s = g[i]
        for j in range(n):
            r = g[j]
            P[i, j] = ((1 - s) * left[j] + s * right[j] + (1 - r) * bottom[i] + r * top[i]
                       - (1 - s) * (1 - r) * bottom[0] - s * (1 - r) * bottom[-1]
                       - (1 - s) * r * top[0] - s * r * top[-1])
    P[0, :], P[-1, :], P[:, 0], P[:, -1] = left, right, bottom, top
    return kv, radius * P


def disk_morph(n_spans: int = 4, radius: float = 1.0, start_axes=(1.0, 1.0), meta=None) -> GeometryMorph:
    """Morph from an axis-aligned ellipse with semi-axes ``start_axes * radius`` to the disk."""
    kv, P = disk_points(n_spans, radius)
    start = P * np.asarray(start_axes, dtype=float)[None, None, :]
    return GeometryMorph(kv, kv, ControlMesh(start), ControlMesh(P), meta=dict(meta or {}))


def fixture_path(name: str) -> Path:
    """Path of a shipped fixture, e.g. ``fixture_path("ellipse_to_disk")``."""
    if not name.endswith(".json"):
        name += ".json"
    return Path(str(resources.files("morphmodes") / DATA / name))


def list_fixtures() -> list[str]:
    return sorted(p.stem for p in Path(str(resources.files("morphmodes") / DATA)).glob("*.json"))


def _observed_rel_tol(g: GeometryMorph, refine: int, n_modes: int) -> float:
    from .discretize import DiscreteSpace, assemble_pencil
    from .eigsolve import solve_gevp
    from .spectra import disk_spectrum_2d

    R = g.meta["reference"]["radius"]
    space = DiscreteSpace.from_geometry(g, refine, g.meta["space"]["bc"])
    pairs = solve_gevp(assemble_pencil(g, 1.0, space), n_modes)
    ref = disk_spectrum_2d(R, g.meta["space"]["bc"], n_modes)
    errs = [abs(p.freq - e.freq) / e.freq for p, e in zip(pairs, ref)]
    return float(f"{10.0 * max(errs):.2e}")


def build_fixtures(out_dir) -> list[Path]:
    """Regenerate the shipped fixture files into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    common = {
        "space": {"refine": 4, "bc": "dirichlet"},
        "reference": {"kind": "disk2d", "radius": 1.0, "bc": "dirichlet"},
        "resolved_modes": 12,
    }
    specs = {
        "unit_disk": dict(start_axes=(1.0, 1.0), description=(
            "Unit disk, degree 2, 6x6 control points (Coons blend of quarter-arc fits); "
            "start and end meshes coincide.")),
        "ellipse_to_disk": dict(start_axes=(1.15, 0.87), description=(
            "Ellipse with semi-axes 1.15 m and 0.87 m morphed to the unit disk; same "
            "control-point layout as unit_disk.")),
    }
    written = []
    for name, sp in specs.items():
        meta = {"name": name, "description": sp["description"], **json.loads(json.dumps(common))}
        g = disk_morph(4, 1.0, sp["start_axes"], meta)
        meta["rel_tol"] = _observed_rel_tol(g, common["space"]["refine"], common["resolved_modes"])
        g = disk_morph(4, 1.0, sp["start_axes"], meta)
        path = out_dir / f"{name}.json"
        path.write_text(json.dumps(geometry_to_dict(g), indent=1) + "\n", encoding="utf-8")
        written.append(path)
    return written


if __name__ == "__main__":  # pragma: no cover
    import sys

    for p in build_fixtures(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).parent / DATA):
        print(p)
