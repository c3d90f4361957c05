"""Field reconstruction, line sampling, error norms and exporters."""

import numpy as np
import pytest

from efem.efem_core import MaterialPair, assemble_global
from efem.interface import PlaneLevelSet
from efem.mesh import BoundaryTag, generate_structured
from efem.oracles import box_boundary, planar_levelset, planar_materials, planar_slopes, planar_solution
from efem.postprocess import (
    build_solution,
    crossings,
    eval_field,
    export_csv,
    export_vtk,
    interface_potential_mismatch,
    l2_line_error,
    locate,
    observed_order,
    read_csv_sample,
    recover_enrichment,
    sample_line,
    side_of,
)
from efem.solver import solve


def test_phi_star_vanishes_for_single_material(planar_solver):
    sol = planar_solver(1.0, 5, "efem")
    assert sol.phi_star
    assert max(abs(v) for v in sol.phi_star.values()) < 1e-8


def test_interface_potential_q3(planar_q3_efem):
    for x in (0.1, 0.37, 0.81):
        phi, _ = eval_field(planar_q3_efem, np.array([x, 0.5]))
        assert abs(phi - 0.75) < 1e-6


def test_one_sided_fields_q3(planar_q3_efem):
    lower, upper = planar_slopes(3.0)
    phi_b, E_b = eval_field(planar_q3_efem, np.array([0.3, 0.5]), side=-1)
    phi_a, E_a = eval_field(planar_q3_efem, np.array([0.3, 0.5]), side=+1)
    assert abs(phi_b - phi_a) < 1e-10
    assert abs(E_b[1] - lower) < 1e-6
    assert abs(E_a[1] - upper) < 1e-6


def test_conductor_field_vanishes(planar_solver):
    sol = planar_solver(1e6, 5, "efem")
    for y in (0.62, 0.75, 0.9):
        _, E = eval_field(sol, np.array([0.5, y]))
        assert np.abs(E).max() < 2e-6


def test_eval_matches_exact_solution_everywhere(planar_q3_efem):
    rng = np.random.default_rng(21)
    for _ in range(50):
        x = rng.uniform(0.01, 0.99, size=2)
        phi, E = eval_field(planar_q3_efem, x)
        phi_ex, Ey = planar_solution(3.0, x[1])
        assert abs(phi - phi_ex) < 1e-6
        assert abs(E[1] - Ey) < 1e-5


def test_phi_continuous_at_interface_points(planar_q3_efem):
    rng = np.random.default_rng(22)
    for x in rng.uniform(0.0, 1.0, size=100):
        p = np.array([x, 0.5])
        phi_minus, _ = eval_field(planar_q3_efem, p, side=-1)
        phi_plus, _ = eval_field(planar_q3_efem, p, side=+1)
        assert abs(phi_minus - phi_plus) < 1e-10


def test_tangential_field_continuous(planar_q3_efem):
    for x in (0.15, 0.5, 0.77):
        _, E_minus = eval_field(planar_q3_efem, np.array([x, 0.5]), side=-1)
        _, E_plus = eval_field(planar_q3_efem, np.array([x, 0.5]), side=+1)
        assert abs(E_minus[0] - E_plus[0]) < 1e-8


def test_normal_displacement_continuous(planar_q3_efem):
    eps_below, eps_above = 1.0, 3.0
    for x in (0.15, 0.5, 0.77):
        _, E_minus = eval_field(planar_q3_efem, np.array([x, 0.5]), side=-1)
        _, E_plus = eval_field(planar_q3_efem, np.array([x, 0.5]), side=+1)
        below = eps_below * E_minus[1]
        above = eps_above * E_plus[1]
        assert abs(below - above) < 1e-6 * abs(below)


def test_locate_outside_raises(planar_q3_efem):
    with pytest.raises(ValueError, match="outside the mesh"):
        locate(planar_q3_efem, np.array([1.5, 0.5]))


def test_side_of_matches_levelset(planar_q3_efem):
    e_below = locate(planar_q3_efem, np.array([0.5, 0.1]))
    e_above = locate(planar_q3_efem, np.array([0.5, 0.9]))
    assert side_of(planar_q3_efem, e_below, np.array([0.5, 0.1])) == -1
    assert side_of(planar_q3_efem, e_above, np.array([0.5, 0.9])) == 1


def test_sample_line_is_ordered_and_paired(planar_q3_efem):
    s = sample_line(planar_q3_efem, (0.5, 0.0), (0.5, 1.0), count=101)
    assert (np.diff(s.t) >= 0).all()
    assert s.t.size > 101                      # duplicated records were inserted
    dup = np.nonzero(np.diff(s.t) == 0.0)[0]
    assert dup.size > 0
    for i in dup:
        assert np.array_equal(s.points[i], s.points[i + 1])


def test_sample_line_crossing_pair(planar_q3_efem):
    s = sample_line(planar_q3_efem, (0.5, 0.0), (0.5, 1.0), count=101)
    pairs = crossings(s)
    assert len(pairs) == 1
    rec = pairs[0]
    assert abs(rec["point"][1] - 0.5) < 1e-9
    lower, upper = planar_slopes(3.0)
    assert abs(rec[-1][1][1] - lower) < 1e-6
    assert abs(rec[+1][1][1] - upper) < 1e-6
    assert abs(rec[-1][0] - rec[+1][0]) < 1e-10


def test_l2_error_of_solution_against_itself(planar_q3_efem):
    def reference(p):
        phi, _ = eval_field(planar_q3_efem, p)
        return phi

    err = l2_line_error(planar_q3_efem, reference, (0.5, 0.0), (0.5, 1.0))
    assert err < 1e-14


def test_l2_error_linear_vs_zero(planar_solver):
    sol = planar_solver(1.0, 5, "efem")       # exact solution is phi = y
    err = l2_line_error(sol, lambda p: 0.0, (0.5, 0.0), (0.5, 1.0))
    assert abs(err - np.sqrt(1.0 / 3.0)) < 1e-5


def test_l2_error_against_exact(planar_q3_efem):
    err = l2_line_error(planar_q3_efem, lambda p: planar_solution(3.0, p[1])[0],
                        (0.5, 0.0), (0.5, 1.0))
    assert err < 1e-6


def test_observed_order_recovers_synthetic_slope():
    hs = [0.3, 0.15, 0.075, 0.0375]
    errs = [0.02 * h ** 1.97 for h in hs]
    assert abs(observed_order(hs, errs) - 1.97) < 1e-10


def test_observed_order_needs_two_levels():
    with pytest.raises(ValueError):
        observed_order([0.1], [0.01])


def test_mismatch_small_with_D_large_without(planar_solver, planar_q1_nod):
    with_d = planar_solver(1.0, 5, "efem")
    assert interface_potential_mismatch(with_d) < 1e-6
    assert interface_potential_mismatch(planar_q1_nod) > 1e-3


def test_recover_enrichment_reads_recovery_vectors(planar_q3_efem):
    # reconstructing from the stored solution must replay the stored values
    class FakeAssembled:
        mesh = planar_q3_efem.mesh
        cut_data = planar_q3_efem.cut_data

    star = recover_enrichment(FakeAssembled, planar_q3_efem.phi)
    assert star.keys() == planar_q3_efem.phi_star.keys()
    for e, v in star.items():
        assert abs(v - planar_q3_efem.phi_star[e]) < 1e-15


# ---------------------------------------------------------------------------
# exporters


def _vtk_section(lines, key):
    for i, ln in enumerate(lines):
        if ln.startswith(key):
            return i, ln.split()
    raise AssertionError(f"{key} not found")


def test_vtk_uncut_two_cells(tmp_path):
    mesh = generate_structured(2, 1, 1)
    levelset = PlaneLevelSet((0.0, -5.0), (0.0, 1.0))     # nothing is cut
    boundary = {t: BoundaryTag(t, "dirichlet", 0.0) for t in ("left", "right", "bottom", "top")}
    asm = assemble_global(mesh, levelset, MaterialPair(1.0, 1.0), "efem", boundary)
    sol = build_solution(asm, np.zeros(mesh.n_nodes))
    path = tmp_path / "flat.vtk"
    export_vtk(sol, path)
    lines = path.read_text().splitlines()
    _, pts = _vtk_section(lines, "POINTS")
    assert int(pts[1]) == 4
    _, cells = _vtk_section(lines, "CELLS")
    assert int(cells[1]) == 2
    i, _ = _vtk_section(lines, "CELL_TYPES")
    assert lines[i + 1] == "5"


def test_vtk_cut_triangles_export_children(tmp_path, planar_solver):
    sol = planar_solver(3.0, 1, "efem")       # both triangles of the 1x1 mesh are cut
    path = tmp_path / "cut.vtk"
    export_vtk(sol, path)
    lines = path.read_text().splitlines()
    _, cells = _vtk_section(lines, "CELLS")
    assert int(cells[1]) == 6                 # 3 children per cut triangle
    _, pts = _vtk_section(lines, "POINTS")
    assert int(pts[1]) == 4 + 2 * 2           # corners + 2 virtual points per element
    i, counts = _vtk_section(lines, "POINT_DATA")
    assert int(counts[1]) == int(pts[1])
    _vtk_section(lines, "CELL_DATA")
    _vtk_section(lines, "VECTORS efield double")


def test_vtk_3d_cell_type(tmp_path):
    mesh = generate_structured(3, 1, 1, 1)
    levelset = PlaneLevelSet((0.0, 0.0, -5.0), (0.0, 0.0, 1.0))
    tags = ("left", "right", "bottom", "top", "front", "back")
    boundary = {t: BoundaryTag(t, "dirichlet", 0.0) for t in tags}
    asm = assemble_global(mesh, levelset, MaterialPair(1.0, 1.0), "efem", boundary)
    sol = build_solution(asm, np.zeros(mesh.n_nodes))
    path = tmp_path / "box.vtk"
    export_vtk(sol, path)
    lines = path.read_text().splitlines()
    i, _ = _vtk_section(lines, "CELL_TYPES")
    assert lines[i + 1] == "10"


def test_csv_round_trip_is_bit_exact(tmp_path, planar_q3_efem):
    s = sample_line(planar_q3_efem, (0.3, 0.0), (0.7, 1.0), count=211)
    path = tmp_path / "line.csv"
    export_csv(s, path)
    pts, phi, E, side = read_csv_sample(path)
    assert np.array_equal(pts, s.points)
    assert np.array_equal(phi, s.phi)
    assert np.array_equal(E, s.E)
    assert np.array_equal(side, s.side)
