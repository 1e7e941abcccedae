import csv
import subprocess
import sys

import pytest

from rmiga.cli import CSV_COLUMNS, RunConfig, main, parse_config
from rmiga.exceptions import ConfigurationError
from rmiga.forms import GrammSpec


def read_rows(out):
    with (out / "results.csv").open(newline="") as fh:
        return list(csv.DictReader(fh))


class TestParse:
    def test_empty_file_gives_defaults(self, tmp_path):
        cfg_file = tmp_path / "empty.cfg"
        cfg_file.write_text("# nothing here\n")
        cfg = parse_config(["--config", str(cfg_file)])
        d = RunConfig()
        assert cfg.formulations == (1, 2, 3, 4, 5, 6)
        assert cfg.p == (2, 3, 4, 5)
        assert cfg.meshes == (5, 10, 20, 40)
        assert cfg.gramm == GrammSpec()
        assert (cfg.k, cfg.q, cfg.l, cfg.solver) == (d.k, d.q, d.l, "auto")

    def test_flags_override_file(self, tmp_path):
        cfg_file = tmp_path / "a.cfg"
        cfg_file.write_text("p = 3\nmesh = 4, 8\ntau1 = 0.5\n")
        cfg = parse_config(["--config", str(cfg_file), "--p", "2"])
        assert cfg.p == (2,)
        assert cfg.meshes == (4, 8)
        assert cfg.gramm.tau1 == 0.5

    def test_unknown_key_rejected(self, tmp_path):
        cfg_file = tmp_path / "bad.cfg"
        cfg_file.write_text("tua1 = 0\n")
        with pytest.raises(ConfigurationError, match="tua1"):
            parse_config(["--config", str(cfg_file)])
        assert main(["--config", str(cfg_file)]) == 2

    def test_unknown_flag_rejected(self):
        assert main(["--tua1", "0"]) == 2

    def test_reduced_flux_without_reaction(self):
        with pytest.raises(ConfigurationError):
            parse_config(["--formulation", "7", "--gamma", "0"])
        assert main(["--formulation", "7", "--gamma", "0"]) == 2

    def test_l2_gramm_accepted(self):
        cfg = parse_config(["--formulation", "1", "--tau1", "0", "--tau2", "0"])
        assert cfg.gramm.tau1 == 0 and cfg.gramm.tau2 == 0

    def test_invalid_spaces_rejected(self):
        assert main(["--formulation", "1", "--p", "1"]) == 2
        assert main(["--formulation", "2", "--k", "5", "--p", "2"]) == 2

    def test_schur_needs_broken_tests(self):
        assert main(["--formulation", "2", "--solver", "schur"]) == 2


class TestRun:
    def test_matrix_rows(self, tmp_path):
        assert main(["--mesh", "2,3", "--out", str(tmp_path)]) == 0
        rows = read_rows(tmp_path)
        assert len(rows) == 6 * 4 * 2
        assert list(rows[0]) == CSV_COLUMNS
        primal = [r for r in rows if r["formulation"] in ("1", "2")]
        assert len(primal) == 2 * 4 * 2
        assert all(r["err_flux"] == "" for r in primal)
        assert all(r["err_flux"] != "" for r in rows if r not in primal)

    def test_single_row(self, tmp_path):
        assert main(["--formulation", "3", "--p", "2", "--mesh", "4", "--out", str(tmp_path)]) == 0
        rows = read_rows(tmp_path)
        assert len(rows) == 1
        assert rows[0]["l"] == "-1/-1"
        assert rows[0]["rate_h1"] == ""

    def test_galerkin_reduction(self, tmp_path):
        args = ["--formulation", "2", "--p", "2", "--k", "1", "--l", "1", "--q", "2"]
        assert main(args + ["--mesh", "5,10", "--out", str(tmp_path)]) == 0
        assert all(float(r["residual_gnorm"]) <= 1e-10 for r in read_rows(tmp_path))

    def test_deterministic_bytes(self, tmp_path):
        args = ["--formulation", "1,4", "--p", "2", "--mesh", "3,6"]
        main(args + ["--out", str(tmp_path / "a")])
        main(args + ["--out", str(tmp_path / "b")])
        a = (tmp_path / "a" / "results.csv").read_bytes()
        assert a == (tmp_path / "b" / "results.csv").read_bytes()
        assert b"\r" not in a
        value = read_rows(tmp_path / "a")[0]["err_h1"]
        mantissa = value.split("e")[0].replace("-", "").replace(".", "")
        assert len(mantissa) == 17

    def test_replay(self, tmp_path, capsys):
        args = ["--formulation", "5,7", "--p", "2", "--mesh", "3,6", "--out", str(tmp_path)]
        assert main(args) == 0
        for row in (1, 2, 3, 4):
            assert main(args + ["--replay", str(row)]) == 0
        assert "REPLAY MATCH" in capsys.readouterr().out
        assert main(args + ["--replay", "9"]) == 2

    def test_replay_mismatch(self, tmp_path):
        args = ["--formulation", "2", "--p", "2", "--mesh", "3", "--out", str(tmp_path)]
        main(args)
        path = tmp_path / "results.csv"
        text = path.read_text()
        row = read_rows(tmp_path)[0]
        path.write_text(text.replace(row["err_h1"], f"{float(row['err_h1']) * 1.001:.16e}"))
        assert main(args + ["--replay", "1"]) == 4

    def test_dump_matrices(self, tmp_path):
        args = ["--formulation", "3", "--p", "2", "--mesh", "2", "--dump-matrices"]
        assert main(args + ["--out", str(tmp_path)]) == 0
        names = sorted(p.name for p in (tmp_path / "matrices").iterdir())
        assert names == ["f3_p2_n2_B.coo", "f3_p2_n2_G.coo", "f3_p2_n2_L.vec"]

    def test_solver_error_exit(self, tmp_path, capsys):
        args = ["--formulation", "2", "--p", "2", "--mesh", "3", "--tau0", "-1", "--tau1", "0"]
        assert main(args + ["--out", str(tmp_path)]) == 3
        assert "formulation 2, p=2, mesh 3x3" in capsys.readouterr().err

    def test_check_gate(self, tmp_path, capsys):
        ok = ["--formulation", "2", "--p", "2", "--mesh", "10,20", "--check"]
        assert main(ok + ["--out", str(tmp_path / "a")]) == 0
        bad = ["--formulation", "2", "--p", "2", "--mesh", "1,2", "--check"]
        assert main(bad + ["--out", str(tmp_path / "b")]) == 4
        assert "CHECK FAIL" in capsys.readouterr().out

    def test_summary_reports_constants(self, tmp_path, capsys):
        main(["--formulation", "1", "--p", "2", "--mesh", "5,10", "--out", str(tmp_path)])
        out = capsys.readouterr().out
        assert "C_h1" in out and "1.995" in out


def test_module_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "rmiga", "--help"], capture_output=True, text=True, check=False
    )
    assert proc.returncode == 0
    assert "--replay" in proc.stdout and "default 5,10,20,40" in proc.stdout
