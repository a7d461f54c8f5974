"""Command-line interface.

Subcommands write their results into ``--out`` together with a
``manifest.json`` describing the run; ``replay`` re-executes a manifest.
Set ``MORPHMODES_LOG`` (e.g. ``INFO`` or ``DEBUG``) for progress logging.

Exit status: 0 on success, 2 for usage errors, 3 for numerical failures.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import shutil
import sys
import tempfile
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .bspline import file_checksum
from .discretize import ALGEBRAIC, PHYSICAL, DegenerateGeometryError, eval_field
from .eigsolve import solve_gevp
from .fixtures import list_fixtures
from .spectra import (EPS_0, MU_0, ClassificationError, NoCrossingError, PillboxSpec, crossing_radius,
                      disk_spectrum_2d, frequency_curve, parse_label, pillbox_spectrum, spectrum_csv)
from .tracker import LabelNotResolvedError, TrackerConfig, TrackingError
from .workflow import explore_label, identify, load_fixture

log = logging.getLogger("morphmodes")

ENV_LOG = "MORPHMODES_LOG"
EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3
MANIFEST = "manifest.json"

NUMERICAL_ERRORS = (TrackingError, DegenerateGeometryError, np.linalg.LinAlgError, ClassificationError,
                    LabelNotResolvedError, NoCrossingError)


class UsageError(Exception):
    pass


def parse_modes(text: str) -> list[int]:
    """``"1..6"``, ``"1-6"``, ``"2,4,7"`` or mixtures like ``"1..3,8"``."""
    out: list[int] = []
    for part in str(text).replace(" ", "").split(","):
        if not part:
            continue
        sep = ".." if ".." in part else ("-" if "-" in part else None)
        try:
            if sep:
                a, b = (int(x) for x in part.split(sep))
                if b < a:
                    raise UsageError(f"empty mode range {part!r}")
                out.extend(range(a, b + 1))
            else:
                out.append(int(part))
        except ValueError as exc:
            raise UsageError(f"cannot parse mode selection {text!r}") from exc
    if not out:
        raise UsageError("no modes selected")
    if min(out) < 1:
        raise UsageError("mode indices are 1-based")
    if len(set(out)) != len(out):
        raise UsageError(f"duplicate mode indices in {text!r}")
    return out


def parse_grid(text: str) -> tuple[int, int]:
    try:
        parts = [int(x) for x in str(text).lower().split("x")]
    except ValueError as exc:
        raise UsageError(f"cannot parse grid {text!r}; use N or NUxNV") from exc
    if len(parts) == 1:
        parts *= 2
    if len(parts) != 2 or min(parts) < 2:
        raise UsageError(f"grid resolution must be at least 2 per direction, got {text!r}")
    return parts[0], parts[1]


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
    return buf.getvalue()


def _json(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


class Outputs:
    """Stage files in a temporary directory; move them into place only on success."""

    def __init__(self, out_dir):
        self.out = Path(out_dir)
        self.files: dict[str, str] = {}

    def add(self, name: str, text: str) -> None:
        self.files[name] = text

    def commit(self) -> list[Path]:
        self.out.mkdir(parents=True, exist_ok=True)
        tmp = Path(tempfile.mkdtemp(prefix=".staging-", dir=self.out))
        written = []
        try:
            for name, text in self.files.items():
                (tmp / name).write_text(text, encoding="utf-8", newline="")
            for name in self.files:
                os.replace(tmp / name, self.out / name)
                written.append(self.out / name)
        except BaseException:
            for p in written:
                p.unlink(missing_ok=True)
            raise
        finally:
            shutil.rmtree(tmp, ignore_errors=True)
        return written


# -- argument handling -----------------------------------------------------------

def _tracker_args(p: argparse.ArgumentParser) -> None:
    d = TrackerConfig()
    p.add_argument("--geometry", required=True, help="geometry JSON file or shipped fixture name")
    p.add_argument("--homotopy", choices=[ALGEBRAIC, PHYSICAL], default=ALGEBRAIC)
    p.add_argument("--h0", type=float, default=d.h0, help="initial and maximal step size")
    p.add_argument("--h-min", type=float, default=d.h_min, help="minimal step size")
    p.add_argument("--phi-min", type=float, default=d.phi_min, help="acceptance threshold on correlation")
    p.add_argument("--beta", type=float, default=d.beta, help="step reduction factor")
    p.add_argument("--delta", type=float, default=d.delta, help="finite-difference step (physical)")
    p.add_argument("--candidates", type=int, default=None, help="eigenpairs solved per step")
    p.add_argument("--out", required=True, help="output directory")


def _config(args) -> TrackerConfig:
    try:
        return TrackerConfig(h0=args.h0, h_min=args.h_min, phi_min=args.phi_min, beta=args.beta,
                             delta=args.delta, candidate_count=args.candidates)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _fixture(args):
    try:
        return load_fixture(args.geometry)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from exc
    except (ValueError, KeyError) as exc:
        raise UsageError(f"invalid geometry file {args.geometry!r}: {exc}") from exc


def _manifest(command: str, argv, **extra) -> str:
    doc = {"command": command, "argv": list(argv), **extra}
    return _json(doc)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="morphmodes",
                                 description="Classify eigenmodes by morphing to a canonical geometry.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("identify", help="track modes from t=0 to t=1 and label them")
    _tracker_args(p)
    p.add_argument("--modes", default="1..6", help="mode selection at t=0, e.g. 1..6 or 1,3,5")

    p = sub.add_parser("explore", help="track one labeled mode from t=1 back to t=0")
    _tracker_args(p)
    p.add_argument("--label", required=True, help="'TM 0 1', '(m,n)' or '(m,n)/pol'")

    p = sub.add_parser("crossing", help="locate the crossing radius of two pillbox modes")
    p.add_argument("--d", type=float, required=True, help="pillbox length (m)")
    p.add_argument("--label-a", default="TM010")
    p.add_argument("--label-b", default="TE111")
    p.add_argument("--r-min", type=float, required=True)
    p.add_argument("--r-max", type=float, required=True)
    p.add_argument("--samples", type=int, default=201)
    p.add_argument("--mu", type=float, default=MU_0)
    p.add_argument("--eps", type=float, default=EPS_0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("spectrum", help="analytic reference spectrum")
    p.add_argument("kind", choices=["pillbox", "disk"])
    p.add_argument("--R", type=float, required=True, help="radius (m)")
    p.add_argument("--d", type=float, help="pillbox length (m)")
    p.add_argument("--f-max", type=float, help="pillbox frequency cutoff (Hz)")
    p.add_argument("--bc", choices=["dirichlet", "neumann"], default="dirichlet")
    p.add_argument("--count", type=int, help="number of disk eigenvalues")
    p.add_argument("--family", choices=["TM", "TE"], help="keep only this family")
    p.add_argument("--m", type=int, help="keep only this azimuthal index (0 for monopoles)")
    p.add_argument("--mu", type=float, default=MU_0)
    p.add_argument("--eps", type=float, default=EPS_0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("field", help="export |u| of an eigenmode on a sampling grid")
    p.add_argument("--geometry", required=True)
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--mode", type=int, default=1, help="1-based index at t")
    p.add_argument("--grid", default="41", help="N or NUxNV samples")
    p.add_argument("--out", required=True)

    sub.add_parser("fixtures", help="list shipped geometry fixtures")

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("manifest")
    p.add_argument("--out", help="write into this directory instead")
    return ap


# -- commands --------------------------------------------------------------------

def cmd_identify(args, argv) -> Outputs:
    fx, cfg, modes = _fixture(args), _config(args), parse_modes(args.modes)
    if max(modes) > fx.resolved_modes:
        raise UsageError(f"modes must lie in the resolved range 1..{fx.resolved_modes}")
    results = identify(fx, args.homotopy, modes, cfg)
    out = Outputs(args.out)
    labels = {}
    for r in results:
        stem = f"mode_{r.index}_{args.homotopy}"
        out.add(f"{stem}.csv", r.path.to_csv())
        out.add(f"{stem}_warnings.json", r.path.warnings_json())
        labels[str(r.index)] = r.summary()
        print(f"mode {r.index}: {r.label}  f_end={r.path.records[-1].freq:.9g} Hz"
              f"  phi_min={r.path.phi_min_seen:.4f}  warnings={len(r.path.warnings)}")
    out.add("labels.json", json.dumps(labels, indent=1) + "\n")
    out.add(MANIFEST, _manifest("identify", argv, config=asdict(cfg), geometry=str(fx.path),
                                checksum=fx.checksum, homotopy=args.homotopy, modes=modes,
                                out=str(args.out)))
    return out


def cmd_explore(args, argv) -> Outputs:
    fx, cfg = _fixture(args), _config(args)
    try:
        label = parse_label(args.label)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    path = explore_label(fx, args.homotopy, label, cfg)
    end = path.records[-1]
    tag = label.name + ("" if label.polarization is None else f"_{label.polarization}")
    stem = f"explore_{tag}_{args.homotopy}"
    out = Outputs(args.out)
    out.add(f"{stem}.csv", path.to_csv())
    out.add(f"{stem}_warnings.json", path.warnings_json())
    out.add("endpoint.json", _json({"label": str(label), "t": end.t, "lambda": end.lam, "freq": end.freq,
                                    "phi_min_seen": path.phi_min_seen, "warnings": len(path.warnings)}))
    out.add(MANIFEST, _manifest("explore", argv, config=asdict(cfg), geometry=str(fx.path),
                                checksum=fx.checksum, homotopy=args.homotopy, label=str(label),
                                out=str(args.out)))
    print(f"{label}: t={end.t!r} lambda={end.lam!r} f={end.freq!r} Hz")
    return out


def cmd_crossing(args, argv) -> Outputs:
    try:
        a, b = parse_label(args.label_a), parse_label(args.label_b)
        if a.p is None or b.p is None:
            raise ValueError("crossing labels need a longitudinal index, e.g. TM010")
        if not (0.0 < args.r_min < args.r_max) or args.d <= 0.0 or args.samples < 2:
            raise ValueError("need 0 < r-min < r-max, d > 0 and at least 2 samples")
        PillboxSpec(args.r_min, args.d, args.mu, args.eps)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    R_star = crossing_radius(args.d, a, b, args.mu, args.eps)
    if not args.r_min <= R_star <= args.r_max:
        raise NoCrossingError(f"no crossing of {a.name} and {b.name} in R=[{args.r_min:g}, {args.r_max:g}] m"
                              f" (curves cross at {R_star:.6g} m)")
    radii = np.linspace(args.r_min, args.r_max, args.samples)
    fa = frequency_curve(args.d, a, radii, args.mu, args.eps)
    fb = frequency_curve(args.d, b, radii, args.mu, args.eps)
    f_star = frequency_curve(args.d, a, [R_star], args.mu, args.eps)[0]
    out = Outputs(args.out)
    out.add("crossing.csv", _csv(["R", f"f_{a.name}", f"f_{b.name}"], zip(radii, fa, fb)))
    out.add("crossing.json", _json({"label_a": a.name, "label_b": b.name, "d": args.d,
                                    "R_star": R_star, "f_star": f_star}))
    out.add(MANIFEST, _manifest("crossing", argv, out=str(args.out)))
    print(f"{a.name} and {b.name} cross at R={R_star!r} m, f={f_star!r} Hz")
    return out


def cmd_spectrum(args, argv) -> Outputs:
    try:
        if args.kind == "pillbox":
            if args.d is None or args.f_max is None:
                raise ValueError("pillbox spectrum needs --d and --f-max")
            spec = pillbox_spectrum(PillboxSpec(args.R, args.d, args.mu, args.eps), args.f_max)
        else:
            if args.count is None or args.count < 1 or args.R <= 0.0:
                raise ValueError("disk spectrum needs R > 0 and --count >= 1")
            c = 1.0 / np.sqrt(args.mu * args.eps)
            spec = disk_spectrum_2d(args.R, args.bc, args.count, float(c))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    keep = tuple(e for e in spec.entries
                 if (args.family is None or e.label.family == args.family) and (args.m is None or e.label.m == args.m))
    spec = replace(spec, entries=keep)
    if not spec.entries:
        log.warning("no modes below f_max=%g Hz; writing an empty spectrum", spec.f_max)
    out = Outputs(args.out)
    out.add("spectrum.csv", spectrum_csv(spec))
    out.add(MANIFEST, _manifest("spectrum", argv, out=str(args.out)))
    return out


def cmd_field(args, argv) -> Outputs:
    grid = parse_grid(args.grid)
    if not 0.0 <= args.t <= 1.0:
        raise UsageError(f"t must lie in [0, 1], got {args.t}")
    fx = _fixture(args)
    if not 1 <= args.mode <= fx.resolved_modes:
        raise UsageError(f"mode must lie in the resolved range 1..{fx.resolved_modes}")
    provider = fx.provider(PHYSICAL)
    pair = solve_gevp(provider.pencil(args.t), args.mode)[-1]
    data = eval_field(provider.space, fx.geometry, args.t, pair.e, grid)
    out = Outputs(args.out)
    out.add(f"field_mode_{args.mode}.csv", _csv(["x", "y", "abs_u"], data.tolist()))
    out.add(MANIFEST, _manifest("field", argv, geometry=str(fx.path), checksum=fx.checksum,
                                t=args.t, mode=args.mode, grid=list(grid), out=str(args.out)))
    return out


def cmd_replay(args, argv) -> Outputs:
    try:
        doc = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
        rec = list(doc["argv"])
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot read manifest {args.manifest!r}: {exc}") from exc
    if "checksum" in doc and file_checksum(doc["geometry"]) != doc["checksum"]:
        raise UsageError(f"geometry {doc['geometry']} changed since the manifest was written")
    if args.out:
        rec = _with_out(rec, args.out)
    ns = build_parser().parse_args(rec)
    if ns.command == "replay":
        raise UsageError("a manifest cannot replay another manifest")
    return COMMANDS[ns.command](ns, rec)


def _with_out(argv: list[str], out: str) -> list[str]:
    res, skip = [], False
    for i, a in enumerate(argv):
        if skip:
            skip = False
            continue
        if a == "--out":
            skip = True
            continue
        if a.startswith("--out="):
            continue
        res.append(a)
    return res + ["--out", out]


COMMANDS = {"identify": cmd_identify, "explore": cmd_explore, "crossing": cmd_crossing,
            "spectrum": cmd_spectrum, "field": cmd_field, "replay": cmd_replay}


def _setup_logging() -> None:
    level = os.environ.get(ENV_LOG, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    if args.command == "fixtures":
        for name in list_fixtures():
            print(name)
        return EXIT_OK
    try:
        COMMANDS[args.command](args, argv).commit()
    except NUMERICAL_ERRORS as exc:
        print(f"morphmodes {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, ValueError, FileNotFoundError) as exc:
        print(f"morphmodes {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
