"""Driver behavior: exit codes, artifact schema, determinism, mode isolation."""

import json
import subprocess
import sys

import numpy as np
import pytest

from efem.cli import main
from efem.postprocess import read_csv_sample

GOOD_CASE = """\
[mesh]
kind = structured
dim = 2
n = 5

[levelset]
kind = plane
point = 0.0 0.5
normal = 0.0 1.0

[materials]
q = 3.0

[boundary]
bottom = dirichlet 0.0
top = dirichlet 1.0
left = neumann
right = neumann

[output]
line_mid = 0.5 0.0 0.5 1.0
csv = yes

[reference]
kind = planar
q = 3.0
"""

SUMMARY_KEYS = {
    "case", "mode", "method", "n_nodes", "n_elements", "n_cut", "n_fallback",
    "nodal_unknowns", "iterations", "residual", "converged",
    "interface_mismatch", "lines", "vtk", "wall_time_s",
}


def write_case(tmp_path, text, name="case.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_missing_materials_exits_2_naming_field(tmp_path, capsys):
    broken = GOOD_CASE.replace("[materials]\nq = 3.0\n\n", "")
    rc = main(["solve", write_case(tmp_path, broken), "--out", str(tmp_path)])
    assert rc == 2
    assert "materials" in capsys.readouterr().err


def test_empty_materials_section_exits_2(tmp_path, capsys):
    broken = GOOD_CASE.replace("q = 3.0\n\n[boundary]", "\n[boundary]", 1)
    rc = main(["solve", write_case(tmp_path, broken), "--out", str(tmp_path)])
    assert rc == 2
    err = capsys.readouterr().err
    assert "materials" in err and ("q" in err or "eps" in err)


def test_unknown_case_name_exits_2(tmp_path, capsys):
    rc = main(["solve", "no_such_case", "--out", str(tmp_path)])
    assert rc == 2
    assert "not found" in capsys.readouterr().err


def test_boundary_tag_mismatch_exits_4(tmp_path, capsys):
    # The structured mesh tags its sides left/right/bottom/top; a case that
    # assigns only invented tags leaves real ones uncovered.
    broken = GOOD_CASE.replace(
        "bottom = dirichlet 0.0\ntop = dirichlet 1.0\nleft = neumann\nright = neumann",
        "north = dirichlet 1.0\nsouth = dirichlet 0.0")
    rc = main(["solve", write_case(tmp_path, broken), "--out", str(tmp_path)])
    assert rc == 4
    assert "incompatible" in capsys.readouterr().err


def test_unreachable_tolerance_exits_3(tmp_path, capsys):
    rc = main(["solve", write_case(tmp_path, GOOD_CASE), "--tol", "1e-300",
               "--out", str(tmp_path)])
    assert rc == 3
    assert "stalled" in capsys.readouterr().err


def test_direct_refuses_large_mesh(tmp_path, capsys):
    rc = main(["solve", write_case(tmp_path, GOOD_CASE), "--h", "0.02",
               "--direct", "--out", str(tmp_path)])
    assert rc == 2
    assert "--direct" in capsys.readouterr().err


def test_threads_must_be_positive(tmp_path, capsys):
    rc = main(["solve", write_case(tmp_path, GOOD_CASE), "--threads", "0",
               "--out", str(tmp_path)])
    assert rc == 2


def test_solve_writes_summary_and_artifacts(tmp_path, capsys):
    rc = main(["solve", "planar_q3", "--out", str(tmp_path)])
    assert rc == 0
    assert "iterations" in capsys.readouterr().out
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert set(summary) == SUMMARY_KEYS
    assert summary["case"] == "planar_q3"
    assert summary["mode"] == "efem"
    assert summary["method"] == "bicgstab"
    assert summary["converged"] is True
    assert summary["n_cut"] > 0
    assert summary["n_fallback"] == 0
    assert summary["nodal_unknowns"] == summary["n_nodes"]
    assert summary["wall_time_s"] > 0.0
    assert (tmp_path / "line_mid.csv").exists()
    assert (tmp_path / "planar_q3.vtk").exists()
    entry = summary["lines"]["line_mid"]
    assert entry["csv"] == "line_mid.csv"
    assert entry["l2_error"] < 1e-7


def test_interface_error_reported_per_mode(tmp_path):
    rc = main(["solve", "planar_q3", "--out", str(tmp_path / "full")])
    assert rc == 0
    full = json.loads((tmp_path / "full" / "summary.json").read_text())
    rc = main(["solve", "planar_q3", "--mode", "efem-nod",
               "--out", str(tmp_path / "nod")])
    assert rc == 0
    nod = json.loads((tmp_path / "nod" / "summary.json").read_text())
    assert full["interface_mismatch"] <= 1e-6
    assert 1e-3 < nod["interface_mismatch"] < 1.0


def test_repeat_runs_are_byte_identical(tmp_path):
    dirs = []
    for run in ("a", "b"):
        out = tmp_path / run
        assert main(["solve", "planar_q3", "--out", str(out)]) == 0
        dirs.append(out)
    a, b = dirs
    assert (a / "line_mid.csv").read_bytes() == (b / "line_mid.csv").read_bytes()
    assert (a / "planar_q3.vtk").read_bytes() == (b / "planar_q3.vtk").read_bytes()
    sa = json.loads((a / "summary.json").read_text())
    sb = json.loads((b / "summary.json").read_text())
    sa.pop("wall_time_s")
    sb.pop("wall_time_s")
    assert sa == sb


def test_modes_share_sampling_geometry(tmp_path):
    """Mode choice changes values, never where or how they are sampled."""
    samples = {}
    for mode in ("standard", "efem-nod", "efem"):
        out = tmp_path / mode
        assert main(["solve", "planar_q3", "--mode", mode,
                     "--out", str(out)]) == 0
        samples[mode] = read_csv_sample(out / "line_mid.csv")
    pts0, _, _, side0 = samples["efem"]
    for mode in ("standard", "efem-nod"):
        pts, _, _, side = samples[mode]
        assert np.array_equal(pts, pts0)
        assert np.array_equal(side, side0)
    assert not np.allclose(samples["standard"][1], samples["efem"][1], atol=1e-6)


def test_h_override_sets_resolution(tmp_path):
    rc = main(["solve", "planar_q3", "--h", "0.3", "--out", str(tmp_path)])
    assert rc == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["n_nodes"] == 16
    assert summary["n_elements"] == 18


def test_converge_two_modes(tmp_path, capsys):
    rc = main(["converge", "planar_q3", "--h-list", "0.3,0.15,0.075",
               "--modes", "efem,standard", "--out", str(tmp_path)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "order" in out
    doc = json.loads((tmp_path / "convergence.json").read_text())
    assert doc["case"] == "planar_q3"
    table = doc["lines"]["line_mid"]
    assert set(table) == {"efem", "standard"}
    # Enriched solves hit the solver-tolerance floor on this exactly
    # representable field; the standard scheme keeps a real mesh error.
    assert all(e < 1e-6 for e in table["efem"]["errors"])
    std = table["standard"]["errors"]
    assert std[0] > std[-1] > 1e-6
    assert np.isfinite(table["efem"]["order"])
    assert table["standard"]["order"] > 0.4


def test_converge_rejects_single_level(tmp_path, capsys):
    rc = main(["converge", "planar_q3", "--h-list", "0.2",
               "--out", str(tmp_path)])
    assert rc == 2
    assert "level" in capsys.readouterr().err


def test_converge_needs_reference(tmp_path, capsys):
    no_ref = GOOD_CASE.split("[reference]")[0]
    rc = main(["converge", write_case(tmp_path, no_ref),
               "--h-list", "0.3,0.15", "--out", str(tmp_path)])
    assert rc == 2
    assert "reference" in capsys.readouterr().err


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "efem.cli", "solve", "planar_q1",
         "--out", str(tmp_path)],
        capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "summary.json").exists()
