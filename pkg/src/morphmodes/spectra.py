"""Closed-form reference spectra of cylindrical cavities and their cross sections.

Pillbox resonances::

    omega_TM,mnp = sqrt(x_mn^2 / R^2 + (p pi / d)^2) / sqrt(mu eps)
    omega_TE,mnp = sqrt(x'_mn^2 / R^2 + (p pi / d)^2) / sqrt(mu eps)

with ``x_mn`` the n-th positive root of ``J_m`` and ``x'_mn`` the n-th
positive root of ``J_m'``. The disk cross section has Dirichlet eigenvalues
``(x_mn / R)^2`` and Neumann eigenvalues ``(x'_mn / R)^2``.
"""
from __future__ import annotations

import csv
import functools
import io
import math
import re
from dataclasses import dataclass, field, replace

from scipy import constants, special

TM = "TM"
TE = "TE"

MU_0 = constants.mu_0
EPS_0 = constants.epsilon_0

# eigenvalues closer than this (relative) are treated as one degenerate cluster
DEGENERACY_RTOL = 1e-9


class ClassificationError(ValueError):
    """No reference label lies within the requested tolerance."""


class NoCrossingError(ValueError):
    """The two frequency curves do not intersect where asked."""


# -- Bessel functions and roots ------------------------------------------------

def bessel_j(m: int, x: float) -> float:
    """First-kind Bessel function ``J_m(x)``."""
    return float(special.jv(m, x))


def bessel_jp(m: int, x: float) -> float:
    """``J_m'(x) = (J_{m-1}(x) - J_{m+1}(x)) / 2``, with ``J_0' = -J_1``."""
    if m == 0:
        return -bessel_j(1, x)
    return 0.5 * (bessel_j(m - 1, x) - bessel_j(m + 1, x))


def _bessel_jpp(m: int, x: float) -> float:
    # Bessel's equation: x^2 J'' = -x J' - (x^2 - m^2) J
    return -bessel_jp(m, x) / x - (1.0 - m * m / (x * x)) * bessel_j(m, x)


def _nth_root(f, df, n: int, start: float) -> float:
    a, fa = start, f(start)
    found = 0
    while True:
        b = a + 1.0
        fb = f(b)
        if fa == 0.0 or fa * fb < 0.0:
            found += 1
            if found == n:
                break
        a, fa = b, fb
    if fa == 0.0:
        return a
    lo, hi, flo = a, b, fa
    while hi - lo > 1e-9:
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0.0:
            return mid
        if flo * fm < 0.0:
            hi = mid
        else:
            lo, flo = mid, fm
    x = 0.5 * (lo + hi)
    for _ in range(3):
        step = f(x) / df(x)
        if not lo - 1e-9 <= x - step <= hi + 1e-9:
            break
        x -= step
    return x


def _scan_start(m: int) -> float:
    # every positive root of J_m and J_m' (m >= 1) exceeds m
    return max(0.5, 0.9 * m)


@functools.lru_cache(maxsize=None)
def bessel_root(m: int, n: int) -> float:
    """n-th positive root ``x_mn`` of ``J_m``."""
    _check_mn(m, n)
    return _nth_root(lambda x: bessel_j(m, x), lambda x: bessel_jp(m, x), n, _scan_start(m))


@functools.lru_cache(maxsize=None)
def bessel_deriv_root(m: int, n: int) -> float:
    """n-th positive root ``x'_mn`` of ``J_m'`` (the root at 0 for m = 0 is skipped)."""
    _check_mn(m, n)
    return _nth_root(lambda x: bessel_jp(m, x), lambda x: _bessel_jpp(m, x), n, _scan_start(m))


def _check_mn(m: int, n: int) -> None:
    if m < 0 or n < 1:
        raise ValueError(f"need m >= 0 and n >= 1, got m={m}, n={n}")


# -- labels --------------------------------------------------------------------

@dataclass(frozen=True)
class ModeLabel:
    """Canonical mode label ``family, m, n, p``.

    ``p`` is ``None`` for cross-section (2D) labels. ``polarization`` is 0 or 1
    for the two members of an ``m >= 1`` pair and ``None`` when unresolved.
    """

    family: str
    m: int
    n: int
    p: int | None = None
    polarization: int | None = None

    def __post_init__(self):
        if self.family not in (TM, TE):
            raise ValueError(f"family must be TM or TE, got {self.family!r}")
        if self.m < 0 or self.n < 1 or (self.p is not None and self.p < 0):
            raise ValueError(f"invalid indices m={self.m}, n={self.n}, p={self.p}")
        if self.polarization not in (None, 0, 1):
            raise ValueError(f"polarization must be 0, 1 or None, got {self.polarization!r}")
        if self.m == 0 and self.polarization not in (None, 0):
            raise ValueError("m = 0 modes have a single polarization")

    @property
    def admissible(self) -> bool:
        """False for TE with ``p = 0`` (the field vanishes identically)."""
        return not (self.family == TE and self.p == 0)

    @property
    def root(self) -> float:
        return bessel_root(self.m, self.n) if self.family == TM else bessel_deriv_root(self.m, self.n)

    @property
    def multiplicity(self) -> int:
        return 1 if self.m == 0 else 2

    def base(self) -> "ModeLabel":
        """The label with polarization cleared."""
        return replace(self, polarization=None)

    def same_mode(self, other: "ModeLabel") -> bool:
        return self.base() == other.base()

    @property
    def name(self) -> str:
        idx = [self.m, self.n] + ([] if self.p is None else [self.p])
        if all(i < 10 for i in idx):
            return self.family + "".join(map(str, idx))
        return self.family + "_" + "_".join(map(str, idx))

    def __str__(self) -> str:
        pol = "" if self.polarization is None or self.m == 0 else f"/{self.polarization}"
        return self.name + pol

    def to_dict(self) -> dict:
        return {"family": self.family, "m": self.m, "n": self.n, "p": self.p,
                "polarization": self.polarization}


_LABEL_3D = re.compile(r"^\s*(TM|TE)[\s_]*(\d+)[\s_,]+(\d+)[\s_,]+(\d+)(?:\s*/\s*([01]))?\s*$", re.I)
_LABEL_3D_COMPACT = re.compile(r"^\s*(TM|TE)(\d)(\d)(\d)(?:\s*/\s*([01]))?\s*$", re.I)
_LABEL_2D = re.compile(r"^\s*(TM|TE)?\s*\(\s*(\d+)\s*,\s*(\d+)\s*\)(?:\s*/\s*([01]))?\s*$", re.I)


def parse_label(text: str, default_family: str = TM) -> ModeLabel:
    """Parse ``"TM 0 1 8"``, ``"TM018"``, ``"(1,1)"`` or ``"TE(1,1)/1"``."""
    for rx in (_LABEL_3D_COMPACT, _LABEL_3D):
        mt = rx.match(text)
        if mt:
            fam, m, n, p, pol = mt.groups()
            return ModeLabel(fam.upper(), int(m), int(n), int(p),
                             None if pol is None else int(pol))
    mt = _LABEL_2D.match(text)
    if mt:
        fam, m, n, pol = mt.groups()
        return ModeLabel((fam or default_family).upper(), int(m), int(n), None,
                         None if pol is None else int(pol))
    raise ValueError(f"cannot parse mode label {text!r}; use 'TM 0 1 0', 'TM010' or '(m,n)'")


# -- pillbox -------------------------------------------------------------------

@dataclass(frozen=True)
class PillboxSpec:
    R: float
    d: float
    mu: float = MU_0
    eps: float = EPS_0

    def __post_init__(self):
        if not (self.R > 0 and self.d > 0 and self.mu > 0 and self.eps > 0):
            raise ValueError(f"pillbox parameters must be positive: {self}")

    @property
    def c(self) -> float:
        return 1.0 / math.sqrt(self.mu * self.eps)


@dataclass(frozen=True)
class SpectrumEntry:
    label: ModeLabel
    freq: float
    lam: float  # squared wave number (1/m^2)


@dataclass(frozen=True)
class AnalyticSpectrum:
    entries: tuple[SpectrumEntry, ...]
    f_max: float
    meta: dict = field(default_factory=dict, compare=False)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def freq_of(self, label: ModeLabel) -> float:
        for ent in self.entries:
            if ent.label.same_mode(label):
                return ent.freq
        raise KeyError(f"label {label} not in reference spectrum")


def _sort_key(e: SpectrumEntry):
    lab = e.label
    return (e.freq, lab.family, lab.m, lab.n, -1 if lab.p is None else lab.p,
            -1 if lab.polarization is None else lab.polarization)


def _polarized(label: ModeLabel) -> list[ModeLabel]:
    if label.m == 0:
        return [replace(label, polarization=0)]
    return [replace(label, polarization=0), replace(label, polarization=1)]


def pillbox_freq(spec: PillboxSpec, label: ModeLabel, allow_invalid: bool = False) -> float:
    """Resonance frequency in Hz of a pillbox mode.

    TE modes with ``p = 0`` are rejected unless ``allow_invalid`` is set.
    """
    if label.p is None:
        raise ValueError(f"pillbox label needs a longitudinal index p: {label}")
    if not label.admissible and not allow_invalid:
        raise ValueError(f"{label.name} is not an admissible pillbox mode (TE needs p >= 1)")
    k2 = (label.root / spec.R) ** 2 + (label.p * math.pi / spec.d) ** 2
    return spec.c * math.sqrt(k2) / (2.0 * math.pi)


def pillbox_spectrum(spec: PillboxSpec, f_max: float) -> AnalyticSpectrum:
    """All admissible pillbox modes below ``f_max``, ascending in frequency."""
    k_max = 2.0 * math.pi * f_max / spec.c
    entries = []
    for family, root_fn, p0 in ((TM, bessel_root, 0), (TE, bessel_deriv_root, 1)):
        # roots of J_m and J_m' exceed m, and x'_01 > x'_11, so scan every m < k_max R
        for m in range(int(k_max * spec.R) + 1):
            n = 1
            while (kt := root_fn(m, n) / spec.R) < k_max:
                p = p0
                while (k2 := kt * kt + (p * math.pi / spec.d) ** 2) < k_max * k_max:
                    f = spec.c * math.sqrt(k2) / (2.0 * math.pi)
                    for lab in _polarized(ModeLabel(family, m, n, p)):
                        entries.append(SpectrumEntry(lab, f, k2))
                    p += 1
                n += 1
    entries.sort(key=_sort_key)
    return AnalyticSpectrum(tuple(entries), f_max, {"kind": "pillbox", "R": spec.R, "d": spec.d})


def disk_spectrum_2d(R: float, bc: str, count: int, c: float | None = None) -> AnalyticSpectrum:
    """The ``count`` smallest nonzero eigenvalues of the disk Laplacian.

    Dirichlet labels are ``TM(m, n)``, Neumann labels ``TE(m, n)``; ``m >= 1``
    entries appear twice (both polarizations). The Neumann constant mode is
    not listed.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    bc = bc.lower()
    if bc not in ("dirichlet", "neumann"):
        raise ValueError(f"unknown boundary condition {bc!r}")
    family, root_fn = (TM, bessel_root) if bc == "dirichlet" else (TE, bessel_deriv_root)
    c = (1.0 / math.sqrt(MU_0 * EPS_0)) if c is None else c
    bound = 4.0
    while True:
        found = []
        for m in range(int(bound) + 1):
            n = 1
            while (x := root_fn(m, n)) < bound:
                found.extend((x, lab) for lab in _polarized(ModeLabel(family, m, n)))
                n += 1
        if len(found) >= count:
            break
        bound *= 2.0
    entries = []
    for x, lab in found:
        lam = (x / R) ** 2
        entries.append(SpectrumEntry(lab, c * (x / R) / (2.0 * math.pi), lam))
    entries.sort(key=_sort_key)
    entries = entries[:count]
    # complete strictly below the last listed frequency
    f_max = entries[-1].freq
    return AnalyticSpectrum(tuple(entries), f_max, {"kind": "disk2d", "R": R, "bc": bc})


# -- classification ------------------------------------------------------------

def degenerate_cluster(reference: AnalyticSpectrum, freq: float,
                       rtol: float = DEGENERACY_RTOL) -> list[SpectrumEntry]:
    """Reference entries whose frequency equals ``freq`` to ``rtol``."""
    return [e for e in reference if abs(e.freq - freq) <= rtol * max(abs(freq), 1e-300)]


def classify(freq, reference: AnalyticSpectrum, rel_tol: float) -> ModeLabel:
    """Label of the reference entry nearest to ``freq`` (relative distance).

    ``freq`` may be a frequency in Hz or an object with a ``freq`` attribute.
    For an ``m >= 1`` pair the returned polarization is ``None`` (unresolved).
    """
    f = float(getattr(freq, "freq", freq))
    if not reference.entries:
        raise ClassificationError("reference spectrum is empty")
    best = min(reference, key=lambda e: (abs(f - e.freq) / e.freq, _sort_key(e)))
    dist = abs(f - best.freq) / best.freq
    if dist > rel_tol:
        raise ClassificationError(
            f"no reference mode within rel_tol={rel_tol:g} of f={f:.9g} Hz "
            f"(nearest {best.label.name} at {best.freq:.9g} Hz, distance {dist:.3g})"
        )
    if best.label.m == 0:
        return replace(best.label, polarization=0)
    return best.label.base()


def _curve(label: ModeLabel, d: float, c: float):
    root, p = label.root, (label.p or 0)
    return lambda R: c * math.sqrt((root / R) ** 2 + (p * math.pi / d) ** 2) / (2.0 * math.pi)


def crossing_radius(d: float, label_a: ModeLabel, label_b: ModeLabel,
                    mu: float = MU_0, eps: float = EPS_0) -> float:
    """Radius at which two pillbox modes of length ``d`` have equal frequency."""
    if label_a.same_mode(label_b):
        raise NoCrossingError("identical labels have identical curves")
    xa, xb = label_a.root, label_b.root
    pa, pb = (label_a.p or 0) * math.pi / d, (label_b.p or 0) * math.pi / d
    num, den = xa * xa - xb * xb, pb * pb - pa * pa
    if den == 0.0 or num == 0.0 or num / den <= 0.0:
        raise NoCrossingError(f"{label_a.name} and {label_b.name} do not cross for R > 0")
    return math.sqrt(num / den)


def find_crossing(d: float, label_a: ModeLabel, label_b: ModeLabel, R_lo: float, R_hi: float,
                  mu: float = MU_0, eps: float = EPS_0) -> float:
    """Crossing radius within ``[R_lo, R_hi]`` by bisection on the frequency gap."""
    c = 1.0 / math.sqrt(mu * eps)
    fa, fb = _curve(label_a, d, c), _curve(label_b, d, c)
    gap = lambda R: fa(R) - fb(R)
    lo, hi = R_lo, R_hi
    glo, ghi = gap(lo), gap(hi)
    if glo == 0.0:
        return lo
    if ghi == 0.0:
        return hi
    if glo * ghi > 0.0:
        raise NoCrossingError(
            f"{label_a.name} and {label_b.name} do not cross in R=[{R_lo:g}, {R_hi:g}] m"
        )
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        gm = gap(mid)
        if gm == 0.0 or hi - lo <= 4e-16 * hi:
            return mid
        if glo * gm < 0.0:
            hi = mid
        else:
            lo, glo = mid, gm
    return 0.5 * (lo + hi)


def frequency_curve(d: float, label: ModeLabel, radii, mu: float = MU_0, eps: float = EPS_0):
    c = 1.0 / math.sqrt(mu * eps)
    f = _curve(label, d, c)
    return [f(R) for R in radii]


# -- export ----------------------------------------------------------------------

def spectrum_csv(spectrum: AnalyticSpectrum) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["family", "m", "n", "p", "freq_hz"])
    for e in spectrum:
        lab = e.label
        w.writerow([lab.family, lab.m, lab.n, "" if lab.p is None else lab.p, repr(e.freq)])
    return buf.getvalue()
