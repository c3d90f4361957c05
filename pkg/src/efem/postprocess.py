"""Solution evaluation, line sampling, error norms and file export.

The reconstructed potential inside a cut element is
phi_h = sum_i N_i phi_i + Nbar phi*, with the enrichment amplitude phi*
recovered per element from the condensation data.  The electric field
follows the convention E = grad(phi); it is constant per element for uncut
elements and constant per child side for cut ones.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from efem.efem_core import AssembledSystem, CutElementData, barycentric, hat_value
from efem.mesh import Mesh, all_geometry

_CONTAIN_TOL = 1e-9

_trapezoid = getattr(np, "trapezoid", None) or np.trapz


@dataclass
class SolutionField:
    """Nodal solution plus per-element enrichment state for evaluation."""

    mesh: Mesh
    phi: np.ndarray
    mode: str
    element_d: np.ndarray                    # snapped per-element distances
    is_cut: np.ndarray
    cut_data: dict[int, CutElementData]
    phi_star: dict[int, float]
    grads: np.ndarray = field(repr=False, default=None)
    _tree: cKDTree = field(repr=False, default=None)

    def __post_init__(self):
        if self.grads is None:
            _, self.grads = all_geometry(self.mesh)

    @property
    def tree(self) -> cKDTree:
        if self._tree is None:
            centroids = self.mesh.nodes[self.mesh.elements].mean(axis=1)
            self._tree = cKDTree(centroids)
        return self._tree


def recover_enrichment(assembled: AssembledSystem, phi: np.ndarray) -> dict[int, float]:
    """Per-element enrichment amplitudes phi* = r . phi_element."""
    out: dict[int, float] = {}
    for e, data in assembled.cut_data.items():
        if data.recovery is not None:
            out[e] = float(data.recovery @ phi[assembled.mesh.elements[e]])
    return out


def build_solution(assembled: AssembledSystem, phi: np.ndarray) -> SolutionField:
    phi = np.asarray(phi, dtype=float)
    stars = recover_enrichment(assembled, phi)
    return SolutionField(assembled.mesh, phi, assembled.mode,
                         assembled.classification.element_d,
                         assembled.classification.is_cut,
                         assembled.cut_data, stars)


# ---------------------------------------------------------------------------
# point location and evaluation


def locate(sol: SolutionField, x, k: int = 32) -> int:
    """Element whose closure contains x; smallest index wins on faces."""
    found = elements_containing(sol, x, k)
    if not found:
        raise ValueError(f"point {np.asarray(x)} is outside the mesh")
    return found[0]


def elements_containing(sol: SolutionField, x, k: int = 32) -> list[int]:
    """All candidate elements containing x, ascending by element index."""
    x = np.asarray(x, dtype=float)
    m = sol.mesh
    k = min(k, m.n_elements)
    _, idx = sol.tree.query(x, k=k)
    idx = np.atleast_1d(idx)
    hits = [int(e) for e in idx if _inside(sol, int(e), x)]
    if not hits and k < m.n_elements:
        # fall back to a full scan; only reachable for thin stretched meshes
        hits = [e for e in range(m.n_elements) if _inside(sol, e, x)]
    return sorted(hits)


def _inside(sol: SolutionField, e: int, x) -> bool:
    lam = barycentric(sol.mesh.element_coords(e), x)
    return bool(lam.min() >= -_CONTAIN_TOL)


def eval_in_element(sol: SolutionField, e: int, x, side: int = 0):
    """(phi, E) of the reconstructed field of element e at point x.

    side picks the child when x sits exactly on the intra-element interface
    (+1 positive material, -1 negative); elsewhere the interpolated distance
    decides and side is ignored.
    """
    m = sol.mesh
    lam = barycentric(m.element_coords(e), x)
    conn = m.elements[e]
    phi = float(lam @ sol.phi[conn])
    E = sol.grads[e].T @ sol.phi[conn]
    data = sol.cut_data.get(e)
    if data is None:
        return phi, E
    d = sol.element_d[e]
    L = float(lam @ d)
    scale = float(np.abs(d).max())
    s = side if abs(L) <= 1e-12 * scale else (1 if L > 0 else -1)
    if s == 0:
        s = 1
    star = sol.phi_star.get(e, 0.0)
    phi += hat_value(lam, d) * star
    E = E + (data.grad_pos if s > 0 else data.grad_neg) * star
    return phi, E


def eval_field(sol: SolutionField, x, side: int = 0):
    """(phi, E) at point x, locating the containing element first."""
    return eval_in_element(sol, locate(sol, x), x, side)


def side_of(sol: SolutionField, e: int, x) -> int:
    """Material side of x inside element e from the interpolated distance."""
    lam = barycentric(sol.mesh.element_coords(e), x)
    L = float(lam @ sol.element_d[e])
    return 1 if L >= 0.0 else -1


# ---------------------------------------------------------------------------
# line sampling


@dataclass
class LineSample:
    """Samples of the solution along a straight segment.

    Extra sample pairs are inserted at element boundaries and at interface
    crossings; paired entries share coordinates but hold the one-sided
    values, so plots and integrals see the kinks and jumps.
    """

    start: np.ndarray
    end: np.ndarray
    points: np.ndarray           # (k, dim)
    t: np.ndarray                # (k,) parameter in [0, 1]
    phi: np.ndarray              # (k,)
    E: np.ndarray                # (k, dim)
    side: np.ndarray             # (k,) -1 / +1
    element: np.ndarray          # (k,)

    @property
    def arclength(self) -> np.ndarray:
        return self.t * float(np.linalg.norm(self.end - self.start))


def sample_line(sol: SolutionField, start, end, count: int = 1001) -> LineSample:
    if count < 2:
        raise ValueError("count must be at least 2")
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)

    base_t = np.linspace(0.0, 1.0, count)
    pts = start + base_t[:, None] * (end - start)
    elems = [locate(sol, p) for p in pts]

    def point_at(t):
        return start + t * (end - start)

    # element-boundary crossings by recursive bisection on the element id
    entries: list[tuple[float, int, int]] = [(float(t), e, 0) for t, e in zip(base_t, elems)]

    def refine(t0, e0, t1, e1, depth=0):
        if e0 == e1:
            return
        if (t1 - t0) <= 1e-12 or depth > 60:
            # the pair shares one coordinate; phi is continuous across the
            # face so both one-sided records are exact there
            tb = 0.5 * (t0 + t1)
            entries.append((tb, e0, 0))
            entries.append((tb, e1, 0))
            return
        tm = 0.5 * (t0 + t1)
        em = locate(sol, point_at(tm))
        refine(t0, e0, tm, em, depth + 1)
        refine(tm, em, t1, e1, depth + 1)

    for i in range(count - 1):
        if elems[i] != elems[i + 1]:
            refine(base_t[i], elems[i], base_t[i + 1], elems[i + 1])

    entries.sort(key=lambda r: (r[0], r[1]))

    # interface crossings inside cut elements: the interpolated distance is
    # linear along the segment, so the root between same-element samples is exact
    crossings: list[tuple[float, int]] = []
    for (t0, e0, _), (t1, e1, _) in zip(entries[:-1], entries[1:]):
        if e0 != e1 or not sol.is_cut[e0] or t1 <= t0:
            continue
        d = sol.element_d[e0]
        L0 = float(barycentric(sol.mesh.element_coords(e0), point_at(t0)) @ d)
        L1 = float(barycentric(sol.mesh.element_coords(e0), point_at(t1)) @ d)
        if L0 == 0.0 or L1 == 0.0 or (L0 > 0) == (L1 > 0):
            continue
        ts = t0 + (t1 - t0) * L0 / (L0 - L1)
        s_before = 1 if L0 > 0 else -1
        crossings.append((ts, e0))
        entries.append((ts, e0, s_before))
        entries.append((ts, e0, -s_before))

    entries.sort(key=lambda r: (r[0], r[1]))

    rows = []
    for t, e, forced in entries:
        p = point_at(t)
        if forced:
            phi, E = eval_in_element(sol, e, p, side=forced)
            s = forced
        else:
            phi, E = eval_in_element(sol, e, p)
            s = side_of(sol, e, p)
        rows.append((t, p, phi, E, s, e))

    # stable order: ascending t; at equal t keep negative-side-first so the
    # approach side comes before the departure side
    order = sorted(range(len(rows)), key=lambda i: (rows[i][0], i))
    t_arr = np.array([rows[i][0] for i in order])
    return LineSample(
        start, end,
        np.array([rows[i][1] for i in order]),
        t_arr,
        np.array([rows[i][2] for i in order]),
        np.array([rows[i][3] for i in order]),
        np.array([rows[i][4] for i in order], dtype=int),
        np.array([rows[i][5] for i in order], dtype=int),
    )


def crossings(sample: LineSample) -> list[dict]:
    """Paired one-sided records at each interface crossing of a line sample.

    Returns dicts with t, point, element and per-side (phi, E) taken from
    the duplicated sample entries; sides are keyed -1 and +1.
    """
    out: list[dict] = []
    i = 0
    while i + 1 < sample.t.size:
        same_spot = (sample.t[i + 1] == sample.t[i]
                     and sample.element[i + 1] == sample.element[i]
                     and sample.side[i + 1] != sample.side[i])
        if same_spot:
            rec = {"t": float(sample.t[i]),
                   "point": sample.points[i],
                   "element": int(sample.element[i]),
                   int(sample.side[i]): (float(sample.phi[i]), sample.E[i]),
                   int(sample.side[i + 1]): (float(sample.phi[i + 1]), sample.E[i + 1])}
            out.append(rec)
            i += 2
        else:
            i += 1
    return out


def l2_line_error(sol: SolutionField, reference, start, end, count: int = 1001) -> float:
    """Line L2 norm sqrt(int (phi_h - phi_ref)^2 ds) by the trapezoid rule.

    Sample points include forced nodes at element boundaries and interface
    crossings; count is floored at 1000 intervals.  reference is a callable
    point -> phi.
    """
    sample = sample_line(sol, start, end, max(count, 1001))
    ref = np.array([float(reference(p)) for p in sample.points])
    g = (sample.phi - ref) ** 2
    s = sample.arclength
    return float(np.sqrt(_trapezoid(g, s)))


def observed_order(hs, errors) -> float:
    """Least-squares slope of log(error) against log(h)."""
    hs = np.asarray(hs, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if hs.size < 2:
        raise ValueError("need at least two levels for an order estimate")
    return float(np.polyfit(np.log(hs), np.log(errors), 1)[0])


# ---------------------------------------------------------------------------
# interface diagnostics


def interface_potential_mismatch(sol: SolutionField) -> float:
    """Largest inter-element disagreement of phi_h at interface crossings.

    For every interior mesh face crossed by the interface, the two adjacent
    elements reconstruct their own trace; the hat function is identical on
    the shared face, so any disagreement comes from differing enrichment
    amplitudes.  Returns the max absolute mismatch (2D meshes).
    """
    m = sol.mesh
    if m.dim != 2:
        raise ValueError("mismatch scan is defined for 2D meshes")
    inv_conn = {e: {int(n): i for i, n in enumerate(m.elements[e])} for e in range(m.n_elements)}
    worst = 0.0
    for key, (first, second) in m.face_adjacency.items():
        if second is None:
            continue
        (e1, _), (e2, _) = first, second
        a, b = key
        l1a, l1b = inv_conn[e1][a], inv_conn[e1][b]
        d1 = sol.element_d[e1]
        if (d1[l1a] > 0) == (d1[l1b] > 0):
            continue
        xa, xb = m.nodes[a], m.nodes[b]
        t = d1[l1a] / (d1[l1a] - d1[l1b])
        xi = xa + t * (xb - xa)
        p1, _ = eval_in_element(sol, e1, xi, side=1)
        p2, _ = eval_in_element(sol, e2, xi, side=1)
        worst = max(worst, abs(p1 - p2))
    return worst


# ---------------------------------------------------------------------------
# export


_VTK_CELL = {2: 5, 3: 10}        # triangle, tetrahedron


def export_vtk(sol: SolutionField, path) -> None:
    """Legacy ASCII VTK unstructured grid; cut elements appear as children.

    Virtual interface points are duplicated per element on purpose: the two
    reconstructions may disagree there and the jump should be visible.
    """
    m = sol.mesh
    points = [m.nodes[i] for i in range(m.n_nodes)]
    pdata = [float(sol.phi[i]) for i in range(m.n_nodes)]
    cells: list[list[int]] = []
    cdata: list[np.ndarray] = []

    for e in range(m.n_elements):
        conn = m.elements[e]
        data = sol.cut_data.get(e)
        if data is None:
            cells.append([int(i) for i in conn])
            cdata.append(sol.grads[e].T @ sol.phi[conn])
            continue
        star = sol.phi_star.get(e, 0.0)
        local_ids: dict = {}
        for i in range(m.dim + 1):
            local_ids[("n", i)] = int(conn[i])
        for key, xv in data.deco.virtual_nodes.items():
            lam = barycentric(m.element_coords(e), xv)
            phi_v = float(lam @ sol.phi[conn]) + hat_value(lam, sol.element_d[e]) * star
            local_ids[("x", key)] = len(points)
            points.append(np.asarray(xv))
            pdata.append(phi_v)
        base_E = sol.grads[e].T @ sol.phi[conn]
        for child in data.deco.children:
            cells.append([local_ids[r] for r in child.refs])
            gbar = data.grad_pos if child.sign > 0 else data.grad_neg
            cdata.append(base_E + gbar * star)

    with open(path, "w") as f:
        f.write("# vtk DataFile Version 3.0\n")
        f.write("efem solution\n")
        f.write("ASCII\n")
        f.write("DATASET UNSTRUCTURED_GRID\n")
        f.write(f"POINTS {len(points)} double\n")
        for p in points:
            xyz = np.zeros(3)
            xyz[: m.dim] = p
            f.write(" ".join(f"{v:.17g}" for v in xyz) + "\n")
        nv = m.dim + 1
        f.write(f"CELLS {len(cells)} {len(cells) * (nv + 1)}\n")
        for c in cells:
            f.write(f"{nv} " + " ".join(str(i) for i in c) + "\n")
        f.write(f"CELL_TYPES {len(cells)}\n")
        for _ in cells:
            f.write(f"{_VTK_CELL[m.dim]}\n")
        f.write(f"POINT_DATA {len(points)}\n")
        f.write("SCALARS phi double 1\nLOOKUP_TABLE default\n")
        for v in pdata:
            f.write(f"{v:.17g}\n")
        f.write(f"CELL_DATA {len(cells)}\n")
        f.write("VECTORS efield double\n")
        for vec in cdata:
            xyz = np.zeros(3)
            xyz[: m.dim] = vec
            f.write(" ".join(f"{v:.17g}" for v in xyz) + "\n")


def export_csv(sample: LineSample, path) -> None:
    """Line sample as CSV with 17 significant digits (lossless round-trip)."""
    dim = sample.points.shape[1]
    cols = ["x", "y", "z"][:dim]
    header = cols + ["phi"] + [f"E{c}" for c in cols] + ["side"]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for i in range(sample.points.shape[0]):
            row = [f"{v:.17g}" for v in sample.points[i]]
            row.append(f"{sample.phi[i]:.17g}")
            row += [f"{v:.17g}" for v in sample.E[i]]
            row.append(str(int(sample.side[i])))
            w.writerow(row)


def read_csv_sample(path):
    """Parse a sample CSV back into (points, phi, E, side) arrays."""
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    header, body = rows[0], rows[1:]
    dim = sum(1 for c in header if c in ("x", "y", "z"))
    pts = np.array([[float(r[i]) for i in range(dim)] for r in body])
    phi = np.array([float(r[dim]) for r in body])
    E = np.array([[float(r[dim + 1 + i]) for i in range(dim)] for r in body])
    side = np.array([int(r[-1]) for r in body], dtype=int)
    return pts, phi, E, side
