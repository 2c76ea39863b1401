"""Delimited output contract and the command line front end."""

import os
import subprocess
import sys

import numpy as np
import pytest

from spacetimefv.cli import main, parse_config_file
from spacetimefv.reporting import format_cell, read_rows, write_csv
from spacetimefv.studies import CONVERGENCE_HEADER


class TestFormatCell:
    def test_floats_print_seventeen_digits(self):
        assert format_cell(0.1) == "%.17g" % 0.1
        assert format_cell(np.float64(1.0 / 3.0)) == "%.17g" % (1.0 / 3.0)

    def test_floats_round_trip_bitwise(self):
        rng = np.random.default_rng(2)
        for x in rng.uniform(-1e3, 1e3, 50):
            assert float(format_cell(float(x))) == float(x)

    def test_booleans_print_lowercase(self):
        assert format_cell(True) == "true"
        assert format_cell(False) == "false"
        assert format_cell(np.bool_(True)) == "true"

    def test_none_prints_empty(self):
        assert format_cell(None) == ""

    def test_integers_print_plain(self):
        assert format_cell(7) == "7"
        assert format_cell(np.int64(-3)) == "-3"
        assert format_cell("label") == "label"


class TestCsvFiles:
    HEADER = ["name", "k", "value", "ok"]
    ROWS = [["alpha", 1, 0.1, True], ["beta", 2, None, False]]

    def test_write_read_round_trip(self, tmp_path):
        path = write_csv(str(tmp_path / "t.csv"), self.HEADER, self.ROWS)
        header, rows = read_rows(path)
        assert header == self.HEADER
        assert rows == [["alpha", "1", "%.17g" % 0.1, "true"],
                        ["beta", "2", "", "false"]]

    def test_no_temporary_residue(self, tmp_path):
        write_csv(str(tmp_path / "t.csv"), self.HEADER, self.ROWS)
        assert sorted(p.name for p in tmp_path.iterdir()) == ["t.csv"]

    def test_newline_only_line_endings(self, tmp_path):
        path = write_csv(str(tmp_path / "t.csv"), self.HEADER, self.ROWS)
        data = open(path, "rb").read()
        assert b"\r" not in data
        assert data.endswith(b"\n")

    def test_rewrites_are_byte_identical(self, tmp_path):
        path = str(tmp_path / "t.csv")
        write_csv(path, self.HEADER, self.ROWS)
        first = open(path, "rb").read()
        write_csv(path, self.HEADER, self.ROWS)
        assert open(path, "rb").read() == first

    def test_empty_table_rejected(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(ValueError, match="empty table"):
            read_rows(str(path))


class TestConfigFiles:
    def test_values_parse_with_comments(self, tmp_path):
        cfg = tmp_path / "study.cfg"
        cfg.write_text("# pinned study\n"
                       "scenario = flat-burgers-1d\n"
                       "mesh.cells = 12  # coarse\n"
                       "study.plots = false\n")
        values = parse_config_file(str(cfg))
        assert values == {"scenario_id": "flat-burgers-1d", "cells": 12,
                          "make_plots": False}

    def test_bad_value_reports_path_and_line(self, tmp_path, capsys):
        cfg = tmp_path / "study.cfg"
        cfg.write_text("scenario = flat-burgers-1d\nmesh.cells = twelve\n")
        code = main(["validate-mesh", "--config", str(cfg)])
        assert code == 1
        err = capsys.readouterr().err
        assert "%s:2" % cfg in err
        assert "mesh.cells" in err

    def test_unknown_key_reports_known_keys(self, tmp_path, capsys):
        cfg = tmp_path / "study.cfg"
        cfg.write_text("mesh.width = 3\n")
        code = main(["run", "--config", str(cfg)])
        assert code == 1
        assert "unknown key" in capsys.readouterr().err

    def test_config_drives_validate_mesh(self, tmp_path, capsys):
        out = tmp_path / "out"
        cfg = tmp_path / "study.cfg"
        cfg.write_text("scenario = flat-burgers-1d\n"
                       "mesh.cells = 10\n"
                       "mesh.T = 0.05\n"
                       "study.out = %s\n"
                       "study.plots = false\n" % out)
        assert main(["validate-mesh", "--config", str(cfg)]) == 0
        assert (out / "mesh_summary.csv").exists()
        assert "violations 0" in capsys.readouterr().out


class TestCliCommands:
    def test_run_writes_tables(self, tmp_path, capsys):
        code = main(["run", "--scenario", "flat-burgers-1d", "--cells", "10",
                     "--T", "0.05", "--out", str(tmp_path), "--no-plots"])
        assert code == 0
        for name in ("trajectory.csv", "mesh_summary.csv", "intermediates.csv"):
            assert (tmp_path / name).exists()
        assert "final slice: 10 elements" in capsys.readouterr().out

    def test_converge_writes_table_and_rates(self, tmp_path, capsys):
        code = main(["converge", "--scenario", "flat-burgers-1d",
                     "--cells", "12", "--T", "0.05", "--levels", "2",
                     "--out", str(tmp_path), "--no-plots"])
        assert code == 0
        header, rows = read_rows(str(tmp_path / "convergence.csv"))
        assert header == CONVERGENCE_HEADER
        assert len(rows) == 2
        assert rows[0][4] == ""
        assert float(rows[1][3]) < float(rows[0][3])
        assert "rate" in capsys.readouterr().out

    def test_converge_reruns_byte_identical(self, tmp_path):
        args = ["converge", "--scenario", "flat-burgers-1d", "--cells", "12",
                "--T", "0.05", "--levels", "2", "--no-plots", "--out"]
        assert main(args + [str(tmp_path / "a")]) == 0
        assert main(args + [str(tmp_path / "b")]) == 0
        first = open(tmp_path / "a" / "convergence.csv", "rb").read()
        second = open(tmp_path / "b" / "convergence.csv", "rb").read()
        assert first == second

    def test_check_flux_reports_both_schemes(self, tmp_path, capsys):
        code = main(["check-flux", "--scenario", "flat-burgers-1d",
                     "--cells", "8", "--T", "0.05", "--out", str(tmp_path),
                     "--no-plots"])
        assert code == 0
        out = capsys.readouterr().out
        assert "godunov" in out and "lf" in out
        assert (tmp_path / "flux_properties_lf.csv").exists()
        assert (tmp_path / "flux_properties_godunov.csv").exists()

    def test_missing_scenario_lists_registry(self, capsys):
        assert main(["run"]) == 1
        err = capsys.readouterr().err
        assert "no scenario selected" in err
        assert "torus-advection-2d" in err

    def test_unknown_scenario_exits_one(self, capsys):
        assert main(["run", "--scenario", "nope"]) == 1
        assert "unknown scenario" in capsys.readouterr().err

    def test_unknown_flag_exits_one(self, capsys):
        assert main(["run", "--scenario", "flat-burgers-1d", "--fast"]) == 1
        assert "error:" in capsys.readouterr().err

    def test_bad_final_time_exits_one(self, capsys):
        assert main(["run", "--scenario", "flat-burgers-1d", "--T", "-1"]) == 1
        assert "final time" in capsys.readouterr().err

    def test_underdissipative_diagnose_exits_two(self, tmp_path, capsys):
        code = main(["diagnose", "--scenario", "flat-burgers-1d",
                     "--initial", "two-front", "--cells", "12", "--T", "0.1",
                     "--scheme", "lf", "--lf-lambda-scale", "0.5",
                     "--out", str(tmp_path), "--no-plots"])
        assert code == 2
        err = capsys.readouterr().err
        assert "FAIL:" in err
        assert (tmp_path / "face_residuals.csv").exists()

    def test_module_entry_point_help(self):
        proc = subprocess.run(
            [sys.executable, "-m", "spacetimefv", "--help"],
            capture_output=True, text=True,
            cwd=os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
        assert proc.returncode == 0
        assert "converge" in proc.stdout
