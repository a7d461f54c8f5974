import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from morphmodes import cli
from morphmodes.cli import EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, Outputs, UsageError, main, parse_grid, parse_modes
from morphmodes.fixtures import fixture_path
from morphmodes.spectra import bessel_root


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def files(d):
    return sorted(p.name for p in d.iterdir()) if d.exists() else []


@pytest.fixture(scope="module")
def identified(tmp_path_factory):
    out = tmp_path_factory.mktemp("identify")
    assert main(["identify", "--geometry", "ellipse_to_disk", "--modes", "1..6", "--out", str(out)]) == EXIT_OK
    return out


@pytest.fixture(scope="module")
def folded(tmp_path_factory):
    d = json.loads(fixture_path("ellipse_to_disk").read_text())
    d["mesh_end"] = [[[-x, y] for x, y in row] for row in d["mesh_end"]]
    path = tmp_path_factory.mktemp("geom") / "folded.json"
    path.write_text(json.dumps(d))
    return path


class TestParsing:
    @pytest.mark.parametrize("text,expect", [("1..6", [1, 2, 3, 4, 5, 6]), ("1-3", [1, 2, 3]),
                                             ("2,4", [2, 4]), ("1..3, 8", [1, 2, 3, 8]), ("5", [5])])
    def test_modes(self, text, expect):
        assert parse_modes(text) == expect

    @pytest.mark.parametrize("text", ["", "0..3", "4..2", "a", "1,1", "1..2..3"])
    def test_bad_modes(self, text):
        with pytest.raises(UsageError):
            parse_modes(text)

    def test_grid(self):
        assert parse_grid("21") == (21, 21)
        assert parse_grid("10x30") == (10, 30)
        for bad in ("0", "1x5", "ax3", "2x3x4"):
            with pytest.raises(UsageError):
                parse_grid(bad)


class TestIdentify:
    def test_outputs(self, identified):
        names = files(identified)
        for j in range(1, 7):
            assert f"mode_{j}_algebraic.csv" in names
            assert f"mode_{j}_algebraic_warnings.json" in names
            assert rows(identified / f"mode_{j}_algebraic.csv")[0] == ["t", "f"]
        assert "labels.json" in names and "manifest.json" in names

    def test_labels(self, identified):
        labels = json.loads((identified / "labels.json").read_text())
        got = sorted((v["m"], v["n"]) for v in labels.values())
        assert got == sorted([(0, 1), (1, 1), (1, 1), (2, 1), (2, 1), (0, 2)])
        for v in labels.values():
            assert set(v) >= {"family", "m", "n", "p", "freq_end", "phi_min_seen", "warnings"}
        pols = sorted(v["polarization"] for v in labels.values() if (v["m"], v["n"]) == (1, 1))
        assert pols == [0, 1]

    def test_manifest(self, identified):
        doc = json.loads((identified / "manifest.json").read_text())
        assert doc["command"] == "identify" and doc["homotopy"] == "algebraic"
        assert doc["modes"] == [1, 2, 3, 4, 5, 6]
        assert doc["config"]["h0"] == 0.1 and doc["config"]["phi_min"] == 0.9
        assert len(doc["checksum"]) == 64 and doc["geometry"].endswith("ellipse_to_disk.json")

    def test_deterministic(self, identified, tmp_path):
        assert main(["identify", "--geometry", "ellipse_to_disk", "--modes", "1..6", "--out", str(tmp_path)]) == 0
        for name in files(identified):
            if name != "manifest.json":
                assert (tmp_path / name).read_bytes() == (identified / name).read_bytes()

    def test_replay_is_byte_identical(self, identified, tmp_path):
        assert main(["replay", str(identified / "manifest.json"), "--out", str(tmp_path)]) == EXIT_OK
        for name in files(identified):
            if name != "manifest.json":
                assert (tmp_path / name).read_bytes() == (identified / name).read_bytes()

    @pytest.mark.parametrize("homotopy", ["algebraic", "physical"])
    def test_identity_morph_is_constant(self, tmp_path, homotopy):
        assert main(["identify", "--geometry", "unit_disk", "--homotopy", homotopy, "--modes", "1..4",
                     "--out", str(tmp_path)]) == EXIT_OK
        for j in range(1, 5):
            f = {r[1] for r in rows(tmp_path / f"mode_{j}_{homotopy}.csv")[1:]}
            assert len(f) == 1

    def test_mode_out_of_range(self, tmp_path, capsys):
        assert main(["identify", "--geometry", "unit_disk", "--modes", "1..99", "--out", str(tmp_path)]) == 2
        assert "resolved range" in capsys.readouterr().err

    def test_unknown_geometry(self, tmp_path):
        assert main(["identify", "--geometry", "no_such_thing", "--out", str(tmp_path)]) == EXIT_USAGE

    def test_bad_config(self, tmp_path):
        assert main(["identify", "--geometry", "unit_disk", "--beta", "2", "--out", str(tmp_path)]) == EXIT_USAGE

    @pytest.mark.parametrize("homotopy", ["algebraic", "physical"])
    def test_folded_geometry_is_numerical_failure(self, folded, tmp_path, capsys, homotopy):
        out = tmp_path / "out"
        code = main(["identify", "--geometry", str(folded), "--homotopy", homotopy, "--modes", "1..3",
                     "--out", str(out)])
        err = capsys.readouterr().err
        assert code == EXIT_NUMERIC
        assert "t=" in err and "mode=1,2,3" in err
        assert files(out) == []


class TestExplore:
    def test_round_trip(self, identified, tmp_path):
        labels = json.loads((identified / "labels.json").read_text())
        for j in ("1", "2"):
            lab = labels[j]
            text = f"({lab['m']},{lab['n']})/{lab['polarization']}"
            out = tmp_path / j
            assert main(["explore", "--geometry", "ellipse_to_disk", "--label", text, "--out", str(out)]) == 0
            end = json.loads((out / "endpoint.json").read_text())
            f0 = float(rows(identified / f"mode_{j}_algebraic.csv")[1][1])
            assert end["t"] == 0.0
            assert end["freq"] == pytest.approx(f0, rel=1e-6)

    def test_file_names(self, tmp_path, capsys):
        assert main(["explore", "--geometry", "ellipse_to_disk", "--label", "(0,1)", "--out", str(tmp_path)]) == 0
        assert "explore_TM01_algebraic.csv" in files(tmp_path)
        assert "t=0.0" in capsys.readouterr().out

    def test_constant_fixture_gives_reversed_constant_path(self, tmp_path):
        assert main(["explore", "--geometry", "unit_disk", "--label", "(0,1)", "--out", str(tmp_path)]) == 0
        data = rows(tmp_path / "explore_TM01_algebraic.csv")[1:]
        t = [float(r[0]) for r in data]
        assert t[0] == 1.0 and t[-1] == 0.0 and t == sorted(t, reverse=True)
        assert len({r[1] for r in data}) == 1

    def test_unresolved_label(self, tmp_path, capsys):
        code = main(["explore", "--geometry", "ellipse_to_disk", "--label", "(5,3)", "--out", str(tmp_path)])
        assert code == EXIT_NUMERIC
        assert "not in resolved range" in capsys.readouterr().err

    def test_garbage_label(self, tmp_path):
        assert main(["explore", "--geometry", "unit_disk", "--label", "mode one", "--out", str(tmp_path)]) == 2


class TestCrossing:
    def test_reference_range(self, tmp_path):
        assert main(["crossing", "--d", "0.1", "--r-min", "0.04", "--r-max", "0.06", "--out", str(tmp_path)]) == 0
        doc = json.loads((tmp_path / "crossing.json").read_text())
        assert doc["R_star"] == pytest.approx(0.0492, abs=5e-5)
        data = rows(tmp_path / "crossing.csv")
        assert data[0] == ["R", "f_TM010", "f_TE111"] and len(data) == 202
        # the curves actually swap order across the range
        first, last = [float(x) for x in data[1]], [float(x) for x in data[-1]]
        assert (first[1] - first[2]) * (last[1] - last[2]) < 0

    def test_curves_agree_at_crossing(self, tmp_path):
        from morphmodes.spectra import ModeLabel, TE, TM, frequency_curve
        main(["crossing", "--d", "0.1", "--r-min", "0.04", "--r-max", "0.06", "--out", str(tmp_path)])
        R = json.loads((tmp_path / "crossing.json").read_text())["R_star"]
        fa = frequency_curve(0.1, ModeLabel(TM, 0, 1, 0), [R])[0]
        fb = frequency_curve(0.1, ModeLabel(TE, 1, 1, 1), [R])[0]
        assert abs(fa - fb) / fa <= 1e-10

    def test_disjoint_range(self, tmp_path, capsys):
        out = tmp_path / "o"
        assert main(["crossing", "--d", "0.1", "--r-min", "0.06", "--r-max", "0.08", "--out", str(out)]) == 3
        assert "no crossing" in capsys.readouterr().err
        assert files(out) == []

    def test_bad_range(self, tmp_path):
        assert main(["crossing", "--d", "0.1", "--r-min", "0.06", "--r-max", "0.04", "--out", str(tmp_path)]) == 2


class TestSpectrum:
    def test_monopoles(self, tmp_path):
        assert main(["spectrum", "pillbox", "--R", "0.039", "--d", "1.0380", "--f-max", "3.2e9",
                     "--family", "TM", "--m", "0", "--out", str(tmp_path)]) == 0
        data = rows(tmp_path / "spectrum.csv")
        assert data[0] == ["family", "m", "n", "p", "freq_hz"]
        assert data[1][:4] == ["TM", "0", "1", "0"]
        assert float(data[1][4]) == pytest.approx(2.9421e9, rel=1e-4)

    def test_full_spectrum_is_sorted(self, tmp_path):
        assert main(["spectrum", "pillbox", "--R", "0.039", "--d", "1.0380", "--f-max", "3.2e9",
                     "--out", str(tmp_path)]) == 0
        f = [float(r[4]) for r in rows(tmp_path / "spectrum.csv")[1:]]
        assert f == sorted(f) and max(f) < 3.2e9

    def test_empty(self, tmp_path, caplog):
        assert main(["spectrum", "pillbox", "--R", "0.039", "--d", "1.0380", "--f-max", "1e8",
                     "--out", str(tmp_path)]) == 0
        assert rows(tmp_path / "spectrum.csv") == [["family", "m", "n", "p", "freq_hz"]]
        assert any("empty" in r.message for r in caplog.records)

    def test_disk(self, tmp_path):
        assert main(["spectrum", "disk", "--R", "1", "--count", "5", "--out", str(tmp_path)]) == 0
        data = rows(tmp_path / "spectrum.csv")[1:]
        assert len(data) == 5
        f = [float(r[4]) for r in data]
        assert f == sorted(f)
        assert [(r[1], r[2]) for r in data] == [("0", "1"), ("1", "1"), ("1", "1"), ("2", "1"), ("2", "1")]
        c = 1 / np.sqrt(cli.MU_0 * cli.EPS_0)
        assert f[0] == pytest.approx(c * bessel_root(0, 1) / (2 * np.pi), rel=1e-12)

    def test_missing_args(self, tmp_path):
        assert main(["spectrum", "pillbox", "--R", "0.039", "--out", str(tmp_path)]) == EXIT_USAGE


class TestField:
    def test_identity_morph_endpoints_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["field", "--geometry", "unit_disk", "--t", "0", "--grid", "9", "--out", str(a)]) == 0
        assert main(["field", "--geometry", "unit_disk", "--t", "1", "--grid", "9", "--out", str(b)]) == 0
        assert (a / "field_mode_1.csv").read_bytes() == (b / "field_mode_1.csv").read_bytes()

    def test_dirichlet_boundary_decay(self, tmp_path):
        assert main(["field", "--geometry", "unit_disk", "--grid", "21", "--out", str(tmp_path)]) == 0
        data = np.array([[float(x) for x in r] for r in rows(tmp_path / "field_mode_1.csv")[1:]])
        assert rows(tmp_path / "field_mode_1.csv")[0] == ["x", "y", "abs_u"]
        r = np.hypot(data[:, 0], data[:, 1])
        edge, core = data[r > 1 - 1e-9, 2], data[r < 0.2, 2]
        assert edge.max() <= 1e-10 * core.max()

    @pytest.mark.parametrize("grid", ["0", "1"])
    def test_zero_grid(self, tmp_path, grid):
        assert main(["field", "--geometry", "unit_disk", "--grid", grid, "--out", str(tmp_path)]) == EXIT_USAGE

    def test_bad_t(self, tmp_path):
        assert main(["field", "--geometry", "unit_disk", "--t", "2", "--out", str(tmp_path)]) == EXIT_USAGE


class TestPlumbing:
    def test_fixtures(self, capsys):
        assert main(["fixtures"]) == 0
        assert set(capsys.readouterr().out.split()) >= {"unit_disk", "ellipse_to_disk"}

    def test_no_command(self):
        assert main([]) == EXIT_USAGE

    def test_version(self):
        assert main(["--version"]) == EXIT_OK

    def test_replay_missing_manifest(self, tmp_path):
        assert main(["replay", str(tmp_path / "nope.json")]) == EXIT_USAGE

    def test_replay_detects_changed_geometry(self, tmp_path):
        geom = tmp_path / "g.json"
        geom.write_bytes(fixture_path("unit_disk").read_bytes())
        out = tmp_path / "o"
        assert main(["field", "--geometry", str(geom), "--grid", "5", "--out", str(out)]) == 0
        geom.write_text(geom.read_text() + "\n")
        assert main(["replay", str(out / "manifest.json")]) == EXIT_USAGE

    def test_every_run_writes_manifest(self, tmp_path):
        for argv in (["crossing", "--d", "0.1", "--r-min", "0.04", "--r-max", "0.06"],
                     ["spectrum", "disk", "--R", "1", "--count", "3"]):
            out = tmp_path / argv[0]
            assert main(argv + ["--out", str(out)]) == 0
            doc = json.loads((out / "manifest.json").read_text())
            assert doc["command"] == argv[0]
            first = {n: (out / n).read_bytes() for n in files(out) if n != "manifest.json"}
            assert main(["replay", str(out / "manifest.json")]) == 0
            assert {n: (out / n).read_bytes() for n in first} == first

    def test_failed_commit_leaves_nothing(self, tmp_path, monkeypatch):
        out = Outputs(tmp_path)
        out.add("a.csv", "x\n")
        out.add("b.csv", "y\n")
        real = os.replace
        calls = []

        def flaky(src, dst):
            calls.append(dst)
            if len(calls) == 2:
                raise OSError("disk full")
            real(src, dst)
        monkeypatch.setattr(os, "replace", flaky)
        with pytest.raises(OSError):
            out.commit()
        assert files(tmp_path) == []

    def test_log_env(self, tmp_path):
        env = dict(os.environ, MORPHMODES_LOG="INFO")
        proc = subprocess.run([sys.executable, "-m", "morphmodes", "spectrum", "disk", "--R", "1", "--count",
                               "2", "--out", str(tmp_path)], capture_output=True, text=True, env=env)
        assert proc.returncode == 0
        assert (tmp_path / "spectrum.csv").exists()
