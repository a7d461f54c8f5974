"""Eigenpair tracking along a parameter-dependent pencil.

Starting from eigenpairs at ``t_start`` the tracker advances in steps ``h``.
At each step the current pairs are extrapolated to first order, the pencil
is solved at the new parameter, and every candidate is scored against the
prediction with the M-weighted correlation factor. A step is accepted when
every tracked mode finds a candidate with correlation ``>= phi_min``;
otherwise the step is shrunk by ``beta`` and repeated. Below ``h_min`` the
best candidates are accepted anyway and the path carries a warning.

Numerically degenerate candidate clusters (relative gap below
``CLUSTER_RTOL``) have no preferred basis. Before matching, each cluster basis
is rotated toward the predicted vectors, and the derivative system borders
the whole cluster.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

from .eigsolve import C_VACUUM, Eigenpair, EigDerivative, eig_derivative, fix_phase, m_inner, m_norm, solve_gevp
from .spectra import AnalyticSpectrum, ClassificationError, ModeLabel, classify

log = logging.getLogger(__name__)

FORWARD = "forward"
BACKWARD = "backward"

CLUSTER_RTOL = 1e-8
_PHI_TIE = 1e-12
_T_SNAP = 1e-12


class TrackingError(RuntimeError):
    """Tracking aborted; carries the parameter and mode where it failed."""

    def __init__(self, message: str, t: float | None = None, mode=None):
        self.t, self.mode = t, mode
        where = []
        if t is not None:
            where.append(f"t={t!r}")
        if mode is not None:
            where.append(f"mode={mode}")
        super().__init__(message + (f" ({', '.join(where)})" if where else ""))


class LabelNotResolvedError(ValueError):
    """The requested label has no numerical counterpart at the start geometry."""


@dataclass(frozen=True)
class TrackerConfig:
    h0: float = 0.1
    h_min: float = 0.00125
    phi_min: float = 0.9
    beta: float = 0.5
    delta: float = 1e-6
    t_start: float = 0.0
    t_end: float = 1.0
    candidate_count: int | None = None

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")
        if not 0.0 < self.h_min <= self.h0:
            raise ValueError(f"need 0 < h_min <= h0, got h_min={self.h_min}, h0={self.h0}")
        if not 0.0 < self.phi_min <= 1.0:
            raise ValueError(f"phi_min must lie in (0, 1], got {self.phi_min}")
        if self.t_start == self.t_end:
            raise ValueError("t_start and t_end must differ")
        if not self.delta > 0.0:
            raise ValueError("delta must be positive")
        if self.candidate_count is not None and self.candidate_count < 1:
            raise ValueError("candidate_count must be positive")

    @property
    def direction(self) -> str:
        return FORWARD if self.t_end > self.t_start else BACKWARD

    @property
    def sign(self) -> float:
        return 1.0 if self.t_end > self.t_start else -1.0

    def reversed(self) -> "TrackerConfig":
        return replace(self, t_start=self.t_end, t_end=self.t_start)


@dataclass(frozen=True, eq=False)
class TrackRecord:
    t: float
    h: float
    lam: float
    freq: float
    e: np.ndarray
    phi: float
    warned: bool = False


@dataclass(eq=False)
class TrackedPath:
    records: list[TrackRecord] = field(default_factory=list)
    warnings: list[tuple[float, str]] = field(default_factory=list)
    direction: str = FORWARD
    mode: object = None
    solves: int = 0
    final_candidates: list[Eigenpair] = field(default_factory=list, repr=False)

    @property
    def t(self) -> np.ndarray:
        return np.array([r.t for r in self.records])

    @property
    def lam(self) -> np.ndarray:
        return np.array([r.lam for r in self.records])

    @property
    def freq(self) -> np.ndarray:
        return np.array([r.freq for r in self.records])

    @property
    def h(self) -> np.ndarray:
        return np.array([r.h for r in self.records])

    @property
    def final(self) -> Eigenpair:
        r = self.records[-1]
        return Eigenpair(r.lam, r.e, self.final_candidates[0].c if self.final_candidates else C_VACUUM)

    @property
    def phi_min_seen(self) -> float:
        return min(r.phi for r in self.records[1:]) if len(self.records) > 1 else 1.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "f"])
        for r in self.records:
            w.writerow([repr(float(r.t)), repr(float(r.freq))])
        return buf.getvalue()

    def warnings_json(self) -> str:
        return json.dumps([{"t": t, "message": msg} for t, msg in self.warnings], indent=1) + "\n"


# -- single-step building blocks -------------------------------------------------

def predict(pair: Eigenpair, deriv: EigDerivative, h: float) -> tuple[np.ndarray, float]:
    """First-order extrapolation ``(e + h e', lam + h lam')``."""
    if h == 0.0:
        raise ValueError("step h must be nonzero")
    return pair.e + h * deriv.e_prime, pair.lam + h * deriv.lambda_prime


def correlation(e_hat, e_tilde, M) -> float:
    """``|e_hat^T M e_tilde| / (||e_hat||_M ||e_tilde||_M)``."""
    na, nb = m_norm(e_hat, M), m_norm(e_tilde, M)
    if na == 0.0 or nb == 0.0:
        raise ValueError("correlation of a zero vector is undefined")
    return min(abs(m_inner(e_hat, e_tilde, M)) / (na * nb), 1.0)


class Match(NamedTuple):
    index: int
    phi: float
    accepted: bool


def match(candidates: Sequence[Eigenpair], prediction: tuple[np.ndarray, float], M,
          phi_min: float) -> Match:
    """Candidate with the largest correlation against the prediction.

    Near-ties in correlation go to the candidate whose eigenvalue is closer to
    the predicted one. ``accepted`` is False when the best correlation falls
    below ``phi_min``.
    """
    if not candidates:
        raise ValueError("no candidates to match against")
    e_tilde, lam_tilde = prediction
    phis = [correlation(c.e, e_tilde, M) for c in candidates]
    top = max(phis)
    best = min((k for k, p in enumerate(phis) if p >= top - _PHI_TIE),
               key=lambda k: (abs(candidates[k].lam - lam_tilde), candidates[k].lam))
    return Match(best, phis[best], phis[best] >= phi_min)


def clusters(candidates: Sequence[Eigenpair], rtol: float = CLUSTER_RTOL) -> list[list[int]]:
    """Groups of candidate indices with numerically equal eigenvalues."""
    order = sorted(range(len(candidates)), key=lambda k: candidates[k].lam)
    groups: list[list[int]] = []
    for k in order:
        if groups:
            ref = candidates[groups[-1][-1]].lam
            if abs(candidates[k].lam - ref) <= rtol * max(abs(ref), 1e-300):
                groups[-1].append(k)
                continue
        groups.append([k])
    return groups


def _rotated(candidates, group, R, K, M):
    E = np.column_stack([candidates[k].e for k in group]) @ R
    out = list(candidates)
    c = candidates[group[0]].c
    for k, col in zip(group, E.T):
        col = fix_phase(col / m_norm(col, M))
        out[k] = Eigenpair(float(col @ (K @ col)), col, c)
    return out


def _complete(R1: np.ndarray) -> np.ndarray:
    c, q = R1.shape
    if q == c:
        return R1
    u, _, _ = np.linalg.svd(R1, full_matrices=True)
    return np.column_stack([R1, u[:, q:]])


def align_clusters(candidates: Sequence[Eigenpair], predictions: Sequence[np.ndarray], pencil,
                   rtol: float = CLUSTER_RTOL) -> list[Eigenpair]:
    """Rotate each degenerate cluster's basis toward the predicted vectors."""
    out = list(candidates)
    if not predictions:
        return out
    M = pencil.M
    P = np.column_stack([p / m_norm(p, M) for p in predictions])
    for group in clusters(candidates, rtol):
        if len(group) < 2:
            continue
        E = np.column_stack([candidates[k].e for k in group])
        A = E.T @ (M @ P)  # cluster coordinates of each prediction
        weight = np.linalg.norm(A, axis=0)
        sel = sorted(j for j in np.argsort(-weight, kind="stable")[:len(group)] if weight[j] > 0.5)
        if not sel:
            continue
        u, _, vt = np.linalg.svd(A[:, sel], full_matrices=False)
        R = _complete(u @ vt)
        if np.abs(R - np.eye(len(group))).max() <= 1e-12:
            continue  # already aligned; keep the solver's vectors bit for bit
        out = _rotated(out, group, R, pencil.K, M)
    return out


def _partners(candidates, index, rtol=CLUSTER_RTOL) -> list[np.ndarray]:
    for group in clusters(candidates, rtol):
        if index in group:
            return [candidates[k].e for k in group if k != index]
    return []


def resolve_cluster(candidates: Sequence[Eigenpair], group: Sequence[int], pencil, dK, dM):
    """Split a degenerate cluster along the eigenvectors of the restricted derivative.

    Returns the rotated candidate list and the eigenvalue slopes of the
    members of ``group`` (same order as ``group``).
    """
    E = np.column_stack([candidates[k].e for k in group])
    lam = float(np.mean([candidates[k].lam for k in group]))
    D = E.T @ ((dK - lam * dM) @ E)
    slopes, R = np.linalg.eigh(0.5 * (D + D.T))
    return _rotated(candidates, list(group), R, pencil.K, pencil.M), [float(s) for s in slopes]


def rank_branches(candidates, members, pencil, dK, dM, inward: float, h_probe: float):
    """Order candidate branches by their first-order eigenvalue just inside the interval.

    ``members`` are candidate indices describing one analytic mode (e.g. the
    two polarizations of an ``m >= 1`` pair). Degenerate groups among them are
    resolved first. Returns ``(candidates, ordered_indices)``.
    """
    out = list(candidates)
    slope: dict[int, float] = {}
    sub = [out[k] for k in members]
    for group in clusters(sub):
        idx = [members[g] for g in group]
        if len(idx) > 1:
            out, s = resolve_cluster(out, idx, pencil, dK, dM)
            slope.update(zip(idx, s))
        else:
            e = out[idx[0]].e
            slope[idx[0]] = float(e @ ((dK - out[idx[0]].lam * dM) @ e))
    key = {k: out[k].lam + inward * h_probe * slope[k] for k in members}
    return out, sorted(members, key=lambda k: (key[k], out[k].lam, k))


# -- the tracking loop -----------------------------------------------------------

def default_candidate_count(n_tracked: int, max_index: int, dim: int) -> int:
    return min(max(2 * n_tracked + 6, max_index + 6), dim)


def _advance(config: TrackerConfig, provider, pencil, cands: list[Eigenpair],
             selected: list[int], count: int, mode_ids: list) -> list[TrackedPath]:
    sgn = config.sign
    t, t_end = config.t_start, config.t_end
    q = len(selected)
    paths = [TrackedPath(direction=config.direction, mode=mid) for mid in mode_ids]
    current = [cands[k] for k in selected]
    for path, pair in zip(paths, current):
        path.records.append(TrackRecord(t, 0.0, pair.lam, pair.freq, pair.e, 1.0))
    prev_e = [None] * q
    solves = 1
    h = min(config.h0, abs(t_end - t))
    every = ",".join(str(m) for m in mode_ids)

    while t != t_end:
        try:
            dK, dM = provider.derivative(t, int(sgn))
        except Exception as exc:
            raise TrackingError(f"pencil derivative failed: {exc}", t=t, mode=every) from exc
        derivs = []
        for j, (pair, k) in enumerate(zip(current, selected)):
            try:
                derivs.append(eig_derivative(pencil, dK, dM, pair, norm_vec=prev_e[j],
                                             cluster=_partners(cands, k)))
            except np.linalg.LinAlgError as exc:
                raise TrackingError(f"derivative system singular: {exc}", t=t, mode=mode_ids[j]) from exc

        while True:
            t_next = t + sgn * h
            if abs(t_next - t_end) <= _T_SNAP or (t_next - t_end) * sgn > 0:
                t_next = t_end
            step = t_next - t
            preds = [predict(pair, d, step) for pair, d in zip(current, derivs)]
            try:
                pencil_n = provider.pencil(t_next)
                cands_n = solve_gevp(pencil_n, count)
            except Exception as exc:
                raise TrackingError(f"solve failed: {exc}", t=t_next, mode=every) from exc
            solves += 1
            cands_n = align_clusters(cands_n, [p[0] for p in preds], pencil_n)
            matches = [match(cands_n, p, pencil_n.M, config.phi_min) for p in preds]
            picked = [m.index for m in matches]
            collided = {k for k in picked if picked.count(k) > 1}
            ok = all(m.accepted for m in matches) and not collided
            if ok:
                break
            if config.beta * h < config.h_min:
                for j, m in enumerate(matches):
                    if not m.accepted:
                        msg = (f"step size below h_min={config.h_min:g}: accepted correlation "
                               f"{m.phi:.4f} < phi_min={config.phi_min:g}")
                        paths[j].warnings.append((t_next, msg))
                        log.warning("mode %s: %s at t=%r", mode_ids[j], msg, t_next)
                    if m.index in collided:
                        others = [mode_ids[i] for i, k in enumerate(picked) if k == m.index and i != j]
                        msg = f"candidate {m.index} also claimed by mode(s) {others}"
                        paths[j].warnings.append((t_next, msg))
                        log.warning("mode %s: %s at t=%r", mode_ids[j], msg, t_next)
                break
            h *= config.beta
            log.debug("rejected step to t=%r, reducing h to %g", t_next, h)

        for j, (path, m) in enumerate(zip(paths, matches)):
            pair = cands_n[m.index]
            warned = bool(path.warnings) and path.warnings[-1][0] == t_next
            path.records.append(TrackRecord(t_next, abs(step), pair.lam, pair.freq, pair.e, m.phi, warned))
            prev_e[j] = current[j].e
        current = [cands_n[m.index] for m in matches]
        selected = picked
        cands, pencil, t = cands_n, pencil_n, t_next
        h = min(config.h0, abs(t_end - t))

    for path in paths:
        path.solves = solves
        path.final_candidates = cands
    return paths


def _start(config: TrackerConfig, provider, count: int | None, n_tracked: int, max_index: int, mode=None):
    try:
        pencil = provider.pencil(config.t_start)
    except Exception as exc:
        raise TrackingError(f"pencil assembly failed: {exc}", t=config.t_start, mode=mode) from exc
    if count is None:
        count = config.candidate_count or default_candidate_count(n_tracked, max_index, pencil.dim)
    count = min(count, pencil.dim)
    if max_index > count:
        raise ValueError(f"mode index {max_index} exceeds candidate count {count}")
    return pencil, solve_gevp(pencil, count), count


def track_many(config: TrackerConfig, provider, mode_indices: Sequence[int]) -> list[TrackedPath]:
    """Track several modes (1-based indices at ``t_start``) with shared solves."""
    idx = [int(i) for i in mode_indices]
    if not idx:
        raise ValueError("no modes to track")
    if len(set(idx)) != len(idx):
        raise ValueError(f"mode indices must be distinct, got {idx}")
    if min(idx) < 1:
        raise ValueError("mode indices are 1-based")
    pencil, cands, count = _start(config, provider, None, len(idx), max(idx), ",".join(map(str, idx)))
    return _advance(config, provider, pencil, cands, [i - 1 for i in idx], count, idx)


def track(config: TrackerConfig, provider, initial_mode_index: int) -> TrackedPath:
    """Track one mode from ``t_start`` to ``t_end``."""
    return track_many(config, provider, [initial_mode_index])[0]


# -- classification helpers ------------------------------------------------------

def _members(candidates, label: ModeLabel, reference: AnalyticSpectrum, rel_tol: float) -> list[int]:
    out = []
    for k, c in enumerate(candidates):
        try:
            lab = classify(c.freq, reference, rel_tol)
        except ClassificationError:
            continue
        if lab.same_mode(label):
            out.append(k)
    return out


def resolve_polarization(path: TrackedPath, provider, label: ModeLabel, reference: AnalyticSpectrum,
                         rel_tol: float, h_probe: float = TrackerConfig.h_min) -> ModeLabel:
    """Attach a polarization index to the endpoint label of a tracked path.

    Branches of the same analytic mode are ordered by their first-order
    eigenvalue a distance ``h_probe`` back inside the interval; the tracked
    vector takes the index of the branch it correlates with best.
    """
    if label.m == 0:
        return replace(label, polarization=0)
    cands = path.final_candidates
    t_end = path.records[-1].t
    inward = -1.0 if path.direction == FORWARD else 1.0
    members = _members(cands, label, reference, rel_tol)
    if len(members) < 2:
        return label.base()
    pencil = provider.pencil(t_end)
    dK, dM = provider.derivative(t_end, int(inward))
    cands, order = rank_branches(cands, members, pencil, dK, dM, inward, h_probe)
    e = path.records[-1].e
    phis = [correlation(cands[k].e, e, pencil.M) for k in order]
    best = int(np.argmax(phis))
    return replace(label.base(), polarization=min(best, 1))


def explore(config: TrackerConfig, provider, target_label: ModeLabel, reference: AnalyticSpectrum,
            rel_tol: float) -> TrackedPath:
    """Track the numerical counterpart of ``target_label`` from ``t_start`` to ``t_end``.

    A forward config is reversed, so the run goes from 1 to 0 by default. The
    starting candidate is the one nearest in frequency to the reference mode;
    for ``m >= 1`` pairs ``target_label.polarization`` (default 0) picks the
    branch as ordered by :func:`rank_branches`.
    """
    cfg = config if config.direction == BACKWARD else config.reversed()
    try:
        f_target = reference.freq_of(target_label)
    except KeyError as exc:
        raise LabelNotResolvedError(
            f"label {target_label} not in resolved range (absent from the reference spectrum)") from exc
    try:
        pencil = provider.pencil(cfg.t_start)
    except Exception as exc:
        raise TrackingError(f"pencil assembly failed: {exc}", t=cfg.t_start, mode=str(target_label)) from exc
    n = pencil.dim
    count = min(12, n)
    while True:
        cands = solve_gevp(pencil, count)
        if cands[-1].freq > f_target * (1.0 + rel_tol) or count == n:
            break
        count = min(2 * count, n)
    dist = [abs(c.freq - f_target) / f_target for c in cands]
    if min(dist) > rel_tol:
        raise LabelNotResolvedError(
            f"label {target_label} not in resolved range: nearest candidate differs by "
            f"{min(dist):.3g} (rel_tol={rel_tol:g})"
        )
    members = _members(cands, target_label, reference, rel_tol)
    if not members:
        raise LabelNotResolvedError(f"label {target_label} not in resolved range")
    pol = target_label.polarization or 0
    if len(members) > 1:
        dK, dM = provider.derivative(cfg.t_start, int(cfg.sign))
        cands, order = rank_branches(cands, members, pencil, dK, dM, cfg.sign, cfg.h_min)
    else:
        order = members
    if pol >= len(order):
        raise LabelNotResolvedError(f"polarization {pol} of {target_label} not resolved")
    start = order[pol]
    count = min(max(count, cfg.candidate_count or 0, default_candidate_count(1, start + 1, n)), n)
    if count > len(cands):
        extra = solve_gevp(pencil, count)
        cands = list(cands) + extra[len(cands):]
    path = _advance(cfg, provider, pencil, list(cands), [start], count, [str(target_label)])[0]
    return path
