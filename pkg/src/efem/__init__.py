"""Enriched finite elements for multi-material electrostatics.

Solves div(eps * grad(phi)) = 0 on simplex meshes where the material
interface does not conform to element boundaries.  Cut elements carry one
statically condensed enrichment unknown that restores the gradient kink of
the potential across the interface.
"""

from efem.mesh import BoundaryTag, Mesh, MeshError, element_geometry, generate_structured, read_mesh, write_mesh
from efem.interface import (
    CircleLevelSet,
    Classification,
    CutDecomposition,
    DegenerateCutError,
    NodalLevelSet,
    PlaneLevelSet,
    SphereLevelSet,
    classify_elements,
    cut_exterior_faces,
    evaluate_distance,
    nodal_distances,
    snap_distances,
    split_simplex,
)
from efem.efem_core import (
    MODES,
    AssembledSystem,
    CutElementData,
    ElementSystem,
    MaterialPair,
    SingularEnrichmentError,
    SingularSystemError,
    assemble_global,
    barycentric,
    condense,
    element_displacement_terms,
    element_matrices,
    hat_eval,
    hat_gradients,
    hat_value,
)
from efem.solver import (
    DIRECT_LIMIT,
    SolveReport,
    bicgstab,
    direct_solve,
    jacobi_precondition,
    solve,
)
from efem.postprocess import (
    LineSample,
    SolutionField,
    build_solution,
    crossings,
    elements_containing,
    eval_field,
    eval_in_element,
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

__version__ = "0.1.0"
