import csv
import io
import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qflat import cli
from qflat import hypersurface as hs
from qflat import quantization as qa
from qflat.fields import coordinate_symbols
from qflat.quadrature import QuadResult, ToleranceNotMet


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


class TestJson:
    @given(st.lists(st.floats(allow_nan=False), max_size=6))
    def test_floats_round_trip_exactly(self, xs):
        assert json.loads(cli.to_json({"x": xs}))["x"] == xs

    def test_special_values_and_numpy(self):
        text = cli.to_json({"a": np.float64(2.0), "b": np.array([1, 2]), "c": float("nan"), "d": -math.inf,
                            "e": np.bool_(True), "f": None})
        back = json.loads(text)
        assert back["a"] == 2.0 and "2.0" in text
        assert back["b"] == [1, 2] and math.isnan(back["c"]) and back["d"] == -math.inf
        assert back["e"] is True and back["f"] is None

    def test_report_round_trip(self):
        rep = qa.quantization_report(8 * math.pi**2 * (1 + 1e-13))
        back = json.loads(cli.to_json(rep.as_dict()))
        assert back == json.loads(json.dumps(rep.as_dict()))
        assert back["total"] == rep.total


class TestCommands:
    def test_qcheck_sphere(self, capsys):
        code, out, _ = run(capsys, "qcheck", "--metric", "sphere", "--format", "json")
        assert code == cli.EXIT_OK
        rep = json.loads(out)["report"]
        assert rep["m"] == 1 and rep["total"] == pytest.approx(8 * math.pi**2, rel=1e-9)

    def test_qcheck_cone_is_a_model_end(self, capsys):
        code, out, err = run(capsys, "qcheck", "--metric", "cone:beta=-0.25")
        assert code == cli.EXIT_OK
        assert "model end, quantization not expected" in err
        assert "report.m" in out

    def test_qcheck_nonquantized_fails(self, capsys, monkeypatch):
        # a total of pi^2 sits an eighth of the way between quantized values
        monkeypatch.setattr(qa, "total_q_integral", lambda w: QuadResult(math.pi**2, 1e-12, True))
        code, out, _ = run(capsys, "qcheck", "--metric", "bump:a=1,s=1", "--format", "json")
        assert code == cli.EXIT_FAIL
        assert json.loads(out)["report"]["quantized"] is False

    def test_degree(self, capsys):
        code, out, _ = run(capsys, "degree", "--surface", "sphere", "--format", "json")
        assert code == cli.EXIT_OK and json.loads(out)["m"] == 1
        code, out, _ = run(capsys, "degree", "--surface", "sphere", "--reverse-orientation", "--format", "json")
        assert code == cli.EXIT_OK and json.loads(out)["m"] == -1

    def test_profile_csv(self, capsys, tmp_path):
        target = tmp_path / "prof.csv"
        code, _, _ = run(capsys, "profile", "--metric", "flat", "--radii", "1,10", "--format", "csv",
                         "--out", str(target))
        assert code == cli.EXIT_OK
        rows = list(csv.reader(io.StringIO(target.read_text())))
        assert tuple(rows[0]) == cli.PROFILE_HEADER
        assert [float(v) for v in rows[2]][0] == 10.0
        assert float(rows[1][3]) == pytest.approx(1.0, abs=1e-8)

    def test_profile_text(self, capsys):
        code, out, _ = run(capsys, "profile", "--metric", "sphere")
        assert code == cli.EXIT_OK
        assert out.split("\n")[0].split() == list(cli.PROFILE_HEADER)
        assert len(out.strip().split("\n")) == 4


class TestVerify:
    def test_subset_passes(self, capsys):
        code, out, _ = run(capsys, "verify", "--only", "constants,pfaffian,holder")
        assert code == cli.EXIT_OK
        lines = out.strip().split("\n")
        assert len(lines) == 3 and all(l.startswith("CHECK ") and l.endswith("PASS") for l in lines)

    def test_tight_tolerance_fails(self, capsys):
        code, out, _ = run(capsys, "verify", "--only", "pfaffian", "--tol", "1e-15")
        assert code == cli.EXIT_FAIL and out.strip().endswith("FAIL")

    def test_json_and_threads(self, capsys, monkeypatch):
        monkeypatch.setenv("QFLAT_THREADS", "3")
        code, out, _ = run(capsys, "verify", "--only", "constants,gbc,degree", "--format", "json")
        data = json.loads(out)
        assert code == cli.EXIT_OK and data["passed"]
        assert [c["name"] for c in data["checks"]] == ["constants", "gbc", "degree"]

    def test_bad_thread_count(self, capsys, monkeypatch):
        monkeypatch.setenv("QFLAT_THREADS", "zero")
        assert run(capsys, "verify", "--only", "constants")[0] == cli.EXIT_CONFIG
        monkeypatch.setenv("QFLAT_THREADS", "0")
        assert run(capsys, "verify", "--only", "constants")[0] == cli.EXIT_CONFIG


class TestConfiguration:
    def test_file_defaults_and_flag_precedence(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"metric": "cone:beta=0.5", "tol": 1e-3, "radii": [1, 2], "format": "csv"}))
        cfg = cli.make_config(["profile", "--config", str(path), "--tol", "1e-6"])
        assert cfg.metric == "cone:beta=0.5" and cfg.tol == 1e-6 and cfg.radii == [1.0, 2.0]
        assert cfg.format == "csv"

    @pytest.mark.parametrize("argv", [
        ["qcheck", "--tol", "-1"],
        ["profile", "--radii", "2,1"],
        ["profile", "--radii", "a,b"],
        ["verify", "--only", "bogus"],
        ["qcheck", "--metric", "torus"],
        ["degree", "--surface", "graph:radial"],
        ["qcheck", "--n", "1"],
        ["frobnicate"],
        ["qcheck", "--format", "xml"],
    ])
    def test_config_errors(self, capsys, argv):
        code, _, err = run(capsys, *argv)
        assert code == cli.EXIT_CONFIG and err

    def test_unreadable_config(self, capsys, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert run(capsys, "qcheck", "--config", str(bad))[0] == cli.EXIT_CONFIG
        assert run(capsys, "qcheck", "--config", str(tmp_path / "missing.json"))[0] == cli.EXIT_CONFIG


class TestFailureCodes:
    def test_degenerate_surface(self, capsys, monkeypatch):
        u = coordinate_symbols(4)
        flat_slice = hs.Immersion([u[0], u[1], u[2], 0, 0], 4, domain_radius=1.0)
        monkeypatch.setattr(hs, "surface_from_id", lambda sid, n=4: hs.Surface([flat_slice], False, sid))
        code, _, err = run(capsys, "degree", "--surface", "whatever")
        assert code == cli.EXIT_DEGENERATE and "degenerate" in err

    def test_unconverged_quadrature(self, capsys, monkeypatch):
        monkeypatch.setattr(qa, "total_q_integral", lambda w: QuadResult(8 * math.pi**2, 1.0, False))
        assert run(capsys, "qcheck", "--metric", "sphere")[0] == cli.EXIT_QUADRATURE

    def test_tolerance_not_met(self, capsys, monkeypatch):
        def boom(w, radii):
            raise ToleranceNotMet("radial integral stalled")

        monkeypatch.setattr(qa, "isoperimetric_profile", boom)
        code, _, err = run(capsys, "profile", "--metric", "sphere")
        assert code == cli.EXIT_QUADRATURE and "quadrature" in err
