"""High-level runs on geometry fixtures: forward identification and backward exploration.

A fixture is a geometry JSON whose ``meta`` block names the discrete space
(refinement, boundary condition), the analytic reference the end geometry is
compared with, how many modes the discretization resolves, and the relative
tolerance used for classification.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

from .bspline import GeometryMorph, file_checksum, load_geometry
from .discretize import DIRICHLET, DiscreteSpace, PencilProvider
from .fixtures import fixture_path, list_fixtures
from .spectra import AnalyticSpectrum, ClassificationError, ModeLabel, classify, disk_spectrum_2d
from .tracker import (LabelNotResolvedError, TrackedPath, TrackerConfig, explore, resolve_polarization,
                      track_many)

DEFAULT_REL_TOL = 1e-2


@dataclass(frozen=True, eq=False)
class Fixture:
    path: Path
    geometry: GeometryMorph
    refine: int
    bc: str
    resolved_modes: int
    rel_tol: float
    checksum: str

    @property
    def name(self) -> str:
        return self.geometry.meta.get("name", self.path.stem)

    def space(self, refine: int | None = None) -> DiscreteSpace:
        return DiscreteSpace.from_geometry(self.geometry, refine or self.refine, self.bc)

    def provider(self, homotopy: str, delta: float = 1e-6, refine: int | None = None) -> PencilProvider:
        return PencilProvider(homotopy, self.geometry, self.space(refine), delta)

    def reference(self) -> AnalyticSpectrum:
        """The analytic spectrum of the end geometry, truncated to the resolved modes."""
        ref = self.geometry.meta.get("reference", {})
        kind = ref.get("kind", "disk2d")
        if kind != "disk2d":
            raise ValueError(f"unsupported reference kind {kind!r}")
        return disk_spectrum_2d(float(ref.get("radius", 1.0)), ref.get("bc", self.bc), self.resolved_modes)


def resolve_geometry_path(name_or_path) -> Path:
    """A file path, or the name of a shipped fixture."""
    p = Path(name_or_path)
    if p.is_file():
        return p
    if str(name_or_path) in list_fixtures():
        return fixture_path(str(name_or_path))
    raise FileNotFoundError(f"no geometry file or shipped fixture named {str(name_or_path)!r}")


def load_fixture(name_or_path) -> Fixture:
    path = resolve_geometry_path(name_or_path)
    g = load_geometry(path)
    meta = g.meta
    space = meta.get("space", {})
    refine = int(space.get("refine", 1))
    bc = space.get("bc", DIRICHLET)
    resolved = int(meta.get("resolved_modes", DiscreteSpace.from_geometry(g, refine, bc).dim))
    return Fixture(path, g, refine, bc, resolved, float(meta.get("rel_tol", DEFAULT_REL_TOL)),
                   file_checksum(path))


@dataclass(eq=False)
class ModeResult:
    index: int
    path: TrackedPath
    label: ModeLabel

    def summary(self) -> dict:
        d = self.label.to_dict()
        d.update({
            "freq_end": float(self.path.records[-1].freq),
            "phi_min_seen": float(self.path.phi_min_seen),
            "warnings": [{"t": t, "message": m} for t, m in self.path.warnings],
        })
        return d


def identify(fixture: Fixture, homotopy: str, modes, config: TrackerConfig = TrackerConfig(),
             provider: PencilProvider | None = None) -> list[ModeResult]:
    """Track ``modes`` (1-based, ordered at ``t = 0``) to the end geometry and label them."""
    modes = [int(j) for j in modes]
    bad = [j for j in modes if not 1 <= j <= fixture.resolved_modes]
    if bad:
        raise ValueError(f"mode(s) {bad} outside the resolved range 1..{fixture.resolved_modes}")
    if config.t_start != 0.0 or config.t_end != 1.0:
        config = replace(config, t_start=0.0, t_end=1.0)
    provider = provider or fixture.provider(homotopy, config.delta)
    paths = track_many(config, provider, modes)
    ref = fixture.reference()
    out = []
    for j, path in zip(modes, paths):
        try:
            label = classify(path.final, ref, fixture.rel_tol)
        except ClassificationError as exc:
            raise ClassificationError(f"mode {j} at t=1.0: {exc}") from exc
        label = resolve_polarization(path, provider, label, ref, fixture.rel_tol)
        out.append(ModeResult(j, path, label))
    return out


def explore_label(fixture: Fixture, homotopy: str, label: ModeLabel,
                  config: TrackerConfig = TrackerConfig(),
                  provider: PencilProvider | None = None) -> TrackedPath:
    """Track the mode carrying ``label`` back from the end geometry to ``t = 0``."""
    ref = fixture.reference()
    if label.p == 0 and all(e.label.p is None for e in ref):
        label = replace(label, p=None)  # "TM 0 1 0" against a cross-section reference
    if not any(e.label.same_mode(label) for e in ref):
        raise LabelNotResolvedError(
            f"label {label} not in resolved range (first {fixture.resolved_modes} reference modes)")
    cfg = replace(config, t_start=1.0, t_end=0.0)
    provider = provider or fixture.provider(homotopy, config.delta)
    return explore(cfg, provider, label, ref, fixture.rel_tol)
