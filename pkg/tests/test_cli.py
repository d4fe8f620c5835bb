import math
import os
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from eigentop import cli, geometry, levelset
from eigentop.cli import (RunConfig, config_echo, main, parse_config, run,
                          sweep, verify, write_history_csv, write_svg_quicklook,
                          write_vtk)


# ---------------------------------------------------------------------------
# configuration parsing
# ---------------------------------------------------------------------------

def test_parse_config_defaults_and_overrides():
    cfg = parse_config("""
        # full-line comment
        problem = density
        m0 = 0.3          # trailing comment
        max_steps = 12
    """)
    assert cfg.problem == "density"
    assert cfg.m0 == 0.3
    assert cfg.max_steps == 12
    assert cfg.objective == "min"            # untouched default
    assert cfg.resolved_c() == 2.0           # density default contrast


def test_parse_config_conductivity_default_c():
    assert parse_config("problem = conductivity").resolved_c() == 1.1


def test_parse_config_rejects_unknown_key():
    with pytest.raises(ValueError, match=r"line 2.*contrast"):
        parse_config("m0 = 0.4\ncontrast = 2")


def test_parse_config_rejects_c_equal_one():
    with pytest.raises(ValueError, match="c must be"):
        parse_config("c = 1.0")


def test_parse_config_rejects_malformed_line():
    with pytest.raises(ValueError, match="line 1"):
        parse_config("just words")
    with pytest.raises(ValueError, match="bad value"):
        parse_config("max_steps = soon")


def test_parse_config_rejects_out_of_range():
    with pytest.raises(ValueError, match="m0"):
        parse_config("m0 = 1.5")
    with pytest.raises(ValueError, match="domain"):
        parse_config("domain = triangle")
    with pytest.raises(ValueError, match="bc"):
        parse_config("bc = periodic")


def test_config_echo_resolves_defaults():
    echo = config_echo(RunConfig(problem="conductivity", domain="disk"))
    d = dict(line.split(" = ", 1) for line in echo.strip().splitlines())
    assert d["c"] == "1.1"
    assert float(d["h"]) == pytest.approx(2.0 / 60.0)


# ---------------------------------------------------------------------------
# writers
# ---------------------------------------------------------------------------

def test_history_csv_layout(tmp_path):
    hist = [(0, 0.5, 0.6, 0.7, 0.01, float("nan"), float("nan")),
            (1, 0.4, 0.6, 0.7, -0.02, 0.3, 1.0)]
    path = tmp_path / "history.csv"
    write_history_csv(hist, str(path))
    lines = path.read_text().splitlines()
    assert lines[0] == "step,lambda1,lambda2,lambda3,ratio12,ratio23,G,nu,dt,wallclock"
    assert len(lines) == 3
    first = lines[1].split(",")
    assert first[0] == "0"
    assert first[7] == "nan"                 # nu has no value before step 1
    assert all(row.split(",")[9] == "0.000" for row in lines[1:])
    r12 = float(first[4])
    assert r12 == pytest.approx(0.5 / 0.6)


def test_vtk_well_formed(tmp_path, square_coarse):
    m = square_coarse
    path = tmp_path / "out.vtk"
    write_vtk(m, str(path),
              point_data={"phi": np.zeros(m.n_vertices)},
              cell_data={"rho": np.ones(m.n_triangles)})
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# vtk DataFile")
    assert f"POINTS {m.n_vertices} double" in lines
    assert f"CELLS {m.n_triangles} {4 * m.n_triangles}" in lines
    assert f"CELL_TYPES {m.n_triangles}" in lines
    assert f"POINT_DATA {m.n_vertices}" in lines
    assert f"CELL_DATA {m.n_triangles}" in lines
    i = lines.index(f"CELL_TYPES {m.n_triangles}")
    assert all(t == "5" for t in lines[i + 1:i + 1 + m.n_triangles])


def test_vtk_rejects_wrong_length(tmp_path, square_coarse):
    with pytest.raises(ValueError, match="wrong length"):
        write_vtk(square_coarse, str(tmp_path / "bad.vtk"),
                  point_data={"u": np.zeros(3)})


def test_svg_two_phase_and_scalar(tmp_path, square_coarse):
    m = square_coarse
    two = tmp_path / "two.svg"
    write_svg_quicklook(m, m.centroids()[:, 0] > 0, str(two))
    root = ET.parse(two).getroot()          # well-formed XML
    polys = [el for el in root.iter() if el.tag.endswith("polygon")]
    assert len(polys) == m.n_triangles
    fills = {el.attrib["fill"] for el in polys}
    assert len(fills) == 2

    grad = tmp_path / "grad.svg"
    write_svg_quicklook(m, m.centroids()[:, 0], str(grad))
    root = ET.parse(grad).getroot()
    fills = {el.attrib["fill"] for el in root.iter()
             if el.tag.endswith("polygon")}
    assert len(fills) > 2


# ---------------------------------------------------------------------------
# end-to-end run / verify / sweep
# ---------------------------------------------------------------------------

def quick_config(tmp_path, **over):
    base = dict(problem="density", objective="min", domain="square",
                h=0.7, max_steps=25, stop_tol=0.0,
                outdir=str(tmp_path / "out"))
    base.update(over)
    return RunConfig(**base)


def test_run_produces_artifacts(tmp_path):
    cfg = quick_config(tmp_path)
    assert run(cfg) == 0
    out = tmp_path / "out"
    for name in ("config-echo.txt", "mesh.txt", "history.csv", "phi.txt",
                 "final.vtk", "final.svg", "summary.txt"):
        assert (out / name).exists(), name
    summary = dict(line.split(" = ", 1)
                   for line in (out / "summary.txt").read_text().splitlines())
    assert summary["status"] == "ok"
    assert float(summary["lambda1"]) > 0
    assert int(summary["best_step"]) >= 1
    hist = (out / "history.csv").read_text().splitlines()
    assert len(hist) == 25 + 2               # header + steps 0..25


def test_run_history_is_deterministic(tmp_path):
    a = quick_config(tmp_path, outdir=str(tmp_path / "a"))
    b = quick_config(tmp_path, outdir=str(tmp_path / "b"))
    assert run(a) == 0 and run(b) == 0
    ta = (tmp_path / "a" / "history.csv").read_bytes()
    tb = (tmp_path / "b" / "history.csv").read_bytes()
    assert ta == tb
    assert (tmp_path / "a" / "phi.txt").read_bytes() == \
        (tmp_path / "b" / "phi.txt").read_bytes()


def test_run_snapshots_written(tmp_path):
    cfg = quick_config(tmp_path, max_steps=4, snapshot_every=2)
    assert run(cfg) == 0
    out = tmp_path / "out"
    assert (out / "snap_000000.vtk").exists() or \
        (out / "snap_0.vtk").exists() or \
        any(p.name.startswith("snap") for p in out.iterdir())


def test_run_reports_numerical_failure(tmp_path, monkeypatch):
    def boom(cfg, mesh, on_step=None):
        err = RuntimeError("synthetic divergence")
        err.history = [(0, 1.0, 2.0, 3.0, 0.0, float("nan"), float("nan"))]
        raise err

    monkeypatch.setattr(cli.levelset, "optimize", boom)
    cfg = quick_config(tmp_path)
    assert run(cfg) == 2
    out = tmp_path / "out"
    assert "failed" in (out / "summary.txt").read_text()
    assert (out / "history.csv").exists()    # partial history preserved


def test_verify_consistency(tmp_path):
    cfg = quick_config(tmp_path, max_steps=40)
    assert run(cfg) == 0
    out = str(tmp_path / "out")
    summary = dict(line.split(" = ", 1)
                   for line in open(os.path.join(out, "summary.txt")))
    code = verify(out)
    text = open(os.path.join(out, "verify.txt")).read()
    assert "volume_invariant = pass" in text
    if summary["criterion_pass"].strip() == "True":
        assert code == 0
    else:
        assert code == 2 and "FAIL" in text


def test_verify_missing_directory(tmp_path):
    assert verify(str(tmp_path / "nope")) == 1


def test_verify_detects_tampered_history(tmp_path):
    cfg = quick_config(tmp_path, max_steps=10)
    assert run(cfg) == 0
    out = tmp_path / "out"
    rows = (out / "history.csv").read_text().splitlines()
    cols = rows[2].split(",")
    cols[6] = "99.0"                         # corrupt a G entry
    rows[2] = ",".join(cols)
    (out / "history.csv").write_text("\n".join(rows) + "\n")
    assert verify(str(out)) == 2
    assert "FAIL" in (out / "verify.txt").read_text()


def test_sweep_runs_and_summarizes(tmp_path, monkeypatch):
    monkeypatch.setenv("EIGENTOP_THREADS", "2")
    cfg = quick_config(tmp_path, problem="conductivity", max_steps=3,
                       outdir=str(tmp_path / "sw"))
    assert sweep(cfg, [0.0, 0.5]) == 0
    assert (tmp_path / "sw" / "eta_0" / "summary.txt").exists()
    assert (tmp_path / "sw" / "eta_0.5" / "summary.txt").exists()
    text = (tmp_path / "sw" / "sweep_summary.txt").read_text()
    assert "symdiff(eta=0, eta=0.5)" in text
    val = float(text.strip().rsplit("= ", 1)[1])
    assert 0.0 <= val <= 1.0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def test_main_oned_subcommand(capsys):
    assert main(["oned", "--c", "5", "--m0", "0.5", "--bc", "dirichlet",
                 "--objective", "min", "--kmax", "2", "--grid", "12"]) == 0
    out = capsys.readouterr().out
    assert "lambda1 = " in out
    assert "criterion = sublevel" in out


def test_main_run_bad_config_is_config_error(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("c = 1.0\n")
    assert main(["run", str(bad)]) == 1
    assert main(["run", str(tmp_path / "missing.cfg")]) == 1


def test_main_run_and_verify_roundtrip(tmp_path):
    cfgfile = tmp_path / "run.cfg"
    cfgfile.write_text(
        "problem = density\nobjective = min\ndomain = square\n"
        f"h = 0.7\nmax_steps = 6\nstop_tol = 0\noutdir = {tmp_path}/o\n")
    assert main(["run", str(cfgfile)]) == 0
    assert (tmp_path / "o" / "summary.txt").exists()
    assert main(["verify", str(tmp_path / "o")]) in (0, 2)
