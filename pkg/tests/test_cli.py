"""Config parsing and the command line driver.

Runs use a coarse mesh so each invocation stays around a second; the
full-size benchmark configs are exercised by the acceptance suite.
"""

import os

import numpy as np
import pytest

from shapeopt.cli import main
from shapeopt.config import ConfigError, parse_config
from shapeopt.curves import DiscreteCurve, read_curve, write_curve
from shapeopt.fem import read_mesh
from shapeopt.optimize import read_history, write_history

from conftest import circle, ellipse


def write_cfg(path, text):
    path.write_text(text)
    return str(path)


BASE = """
problem.kind = area_mismatch
problem.a_star = 3.141592653589793
problem.nu = 1e-3
mesh.curve = start.txt
mesh.box = -2 -2 2 2
mesh.h = 0.2
optimizer.max_iter = 3
output.snapshot_every = 1
"""


@pytest.fixture
def workdir(tmp_path):
    write_curve(tmp_path / "start.txt", ellipse(48, 1.3, 0.8))
    write_curve(tmp_path / "circle.txt", circle(48))
    return tmp_path


class TestConfigParsing:
    def test_unknown_key_names_line(self, workdir):
        cfg = write_cfg(workdir / "c.cfg", BASE + "mesh.spacing = 1\n")
        with pytest.raises(ConfigError, match=r"c\.cfg:10: unknown key 'mesh.spacing'"):
            parse_config(cfg)

    def test_duplicate_key_rejected(self, workdir):
        cfg = write_cfg(workdir / "c.cfg", BASE + "mesh.h = 0.3\n")
        with pytest.raises(ConfigError, match="duplicate key 'mesh.h'"):
            parse_config(cfg)

    def test_missing_required_keys_listed(self, workdir):
        cfg = write_cfg(workdir / "c.cfg", "problem.nu = 0\n")
        with pytest.raises(ConfigError, match="missing required keys"):
            parse_config(cfg)

    def test_bad_value_names_line_and_key(self, workdir):
        cfg = write_cfg(workdir / "c.cfg", BASE.replace("mesh.h = 0.2", "mesh.h = fine"))
        with pytest.raises(ConfigError, match="bad value for 'mesh.h'"):
            parse_config(cfg)

    def test_line_without_assignment_rejected(self, workdir):
        cfg = write_cfg(workdir / "c.cfg", BASE + "run fast\n")
        with pytest.raises(ConfigError, match="expected 'section.key = value'"):
            parse_config(cfg)

    def test_box_validation(self, workdir):
        cfg = write_cfg(workdir / "c.cfg", BASE.replace("-2 -2 2 2", "2 2 -2 -2"))
        with pytest.raises(ConfigError, match="x0 < x1"):
            parse_config(cfg)

    def test_defaults_and_path_resolution(self, workdir):
        cfg = parse_config(write_cfg(workdir / "c.cfg", BASE))
        assert cfg["optimizer.method"] == "steepest"
        assert cfg["optimizer.memory"] == 5
        assert cfg["output.svg"] is False
        assert cfg.resolve("mesh.curve") == str(workdir / "start.txt")
        assert cfg.resolve("problem.target_curve") == ""

    def test_comments_and_blanks_skipped(self, workdir):
        cfg = parse_config(write_cfg(workdir / "c.cfg", "# header\n\n" + BASE))
        assert cfg["mesh.h"] == 0.2


class TestRun:
    def test_outputs_written_and_round_trip(self, workdir):
        cfg = write_cfg(workdir / "c.cfg", BASE)
        out = workdir / "result"
        code = main(["run", cfg, "--output", str(out)])
        assert code == 2  # three iterations cannot converge
        history = read_history(out / "history.csv")
        assert len(history) == 4
        assert [r.iteration for r in history] == [0, 1, 2, 3]
        values = [r.value for r in history]
        assert all(b <= a for a, b in zip(values, values[1:]))
        # snapshots and mesh come back through the project readers
        for rec in history:
            snap = read_curve(out / f"curve_{rec.iteration:04d}.txt")
            assert snap.n == 48
        mesh, fields = read_mesh(out / "final.msh")
        assert mesh.n_nodes > 0 and fields == {}
        final_curve = read_curve(out / "curve_0003.txt")
        assert np.array_equal(mesh.nodes[mesh.gamma_loop], final_curve.points)
        summary = (out / "summary.txt").read_text()
        assert "status: max_iter" in summary
        assert "iterations: 3" in summary
        assert (out / "final.vtk").read_text().startswith("# vtk DataFile")

    def test_history_write_read_write_is_identity(self, workdir, tmp_path):
        cfg = write_cfg(workdir / "c.cfg", BASE)
        out = workdir / "result"
        main(["run", cfg, "--output", str(out)])
        first = (out / "history.csv").read_bytes()
        again = tmp_path / "again.csv"
        write_history(again, read_history(out / "history.csv"))
        assert again.read_bytes() == first

    def test_converged_run_exits_zero(self, workdir):
        text = BASE.replace("start.txt", "circle.txt").replace("problem.nu = 1e-3",
                                                               "problem.nu = 0")
        cfg = write_cfg(workdir / "c.cfg", text)
        out = workdir / "conv"
        code = main(["run", cfg, "--output", str(out)])
        assert code == 0
        assert "status: converged" in (out / "summary.txt").read_text()

    def test_dry_run_writes_nothing(self, workdir):
        cfg = write_cfg(workdir / "c.cfg", BASE)
        out = workdir / "dry"
        code = main(["run", cfg, "--output", str(out), "--dry-run"])
        assert code == 0
        assert not out.exists()

    def test_unknown_key_exits_one(self, workdir, capsys):
        cfg = write_cfg(workdir / "c.cfg", BASE + "problem.speed = 9\n")
        code = main(["run", cfg])
        assert code == 1
        err = capsys.readouterr().err
        assert "problem.speed" in err and ":10:" in err

    def test_missing_target_curve_for_tracking(self, workdir):
        text = BASE.replace("area_mismatch", "poisson_tracking")
        cfg = write_cfg(workdir / "c.cfg", text)
        assert main(["run", cfg, "--dry-run"]) == 1

    def test_determinism_identical_history_bytes(self, workdir):
        cfg = write_cfg(workdir / "c.cfg", BASE)
        out1, out2 = workdir / "r1", workdir / "r2"
        assert main(["run", cfg, "--output", str(out1), "--seed", "11"]) == 2
        assert main(["run", cfg, "--output", str(out2), "--seed", "11"]) == 2
        assert (out1 / "history.csv").read_bytes() == (out2 / "history.csv").read_bytes()
        assert (out1 / "curve_0003.txt").read_bytes() == (out2 / "curve_0003.txt").read_bytes()

    def test_svg_emitted_when_enabled(self, workdir):
        cfg = write_cfg(workdir / "c.cfg", BASE + "output.svg = true\n")
        out = workdir / "svg"
        main(["run", cfg, "--output", str(out)])
        text = (out / "final.svg").read_text()
        assert text.startswith("<svg") and "polygon" in text


class TestCheckDerivative:
    CHECK = """
problem.kind = perimeter
mesh.curve = circle.txt
mesh.box = -2 -2 2 2
mesh.h = 0.1
check.fields = 3
check.tolerance = 5e-3
"""

    def test_consistent_battery_exits_zero(self, workdir, capsys):
        cfg = write_cfg(workdir / "chk.cfg", self.CHECK)
        assert main(["check-derivative", cfg, "--seed", "5"]) == 0
        outp = capsys.readouterr().out
        assert "volume vs surface vs finite-difference" in outp
        assert "tangential field" in outp
        assert "OK" in outp

    def test_zero_tolerance_forces_failure(self, workdir, capsys):
        cfg = write_cfg(workdir / "chk.cfg",
                        self.CHECK.replace("check.tolerance = 5e-3",
                                           "check.tolerance = 0"))
        assert main(["check-derivative", cfg, "--seed", "5"]) == 1
        assert "FAIL" in capsys.readouterr().out


class TestValidateCommand:
    def test_circle_passes(self, workdir, capsys):
        assert main(["validate", str(workdir / "circle.txt")]) == 0
        assert "injective: true" in capsys.readouterr().out

    def test_figure_eight_fails(self, workdir, capsys):
        theta = 2.0 * np.pi * np.arange(64) / 64
        pts = np.column_stack([np.sin(2.0 * theta), np.sin(theta)])
        pts += 1e-3 * np.column_stack([np.cos(5 * theta), np.sin(7 * theta)])
        np.savetxt(workdir / "eight.txt", pts, header=str(len(pts)), comments="")
        assert main(["validate", str(workdir / "eight.txt")]) == 1
        assert "simple_closed: false" in capsys.readouterr().out

    def test_pair_reports_distance_and_equivalence(self, workdir, capsys):
        write_curve(workdir / "big.txt", circle(48, radius=2.0))
        code = main(["validate", str(workdir / "circle.txt"), str(workdir / "big.txt"),
                     "--equiv", "0.5"])
        assert code == 0
        outp = capsys.readouterr().out
        assert "hausdorff distance: 1" in outp
        assert "equivalent at tol 0.5: no" in outp


class TestMeshInfo:
    def test_reports_counts(self, workdir, capsys):
        cfg = write_cfg(workdir / "c.cfg", BASE)
        assert main(["mesh-info", cfg]) == 0
        outp = capsys.readouterr().out
        assert "interface nodes: 48" in outp
        assert "min angle:" in outp
