"""Symmetrized semi-discrete optimal transport between densities on 2-d triangle meshes."""
from .density_mesh import (
    DensityMesh,
    MeshFormatError,
    SiteSet,
    disk_mesh,
    format_mesh,
    make_rng,
    merge_meshes,
    normalized,
    parse_mesh,
    sample_sites,
    square_mesh,
)
from .estimators import SemiDiscreteTransport, SymmetrizedTransport
from .evaluation import baseline_morph, builtin_scenarios, hausdorff, run_benchmark
from .morph import coupled_morph, frame_to_svg, match_vertices, classify_vertices
from .power_diagram import RestrictedPowerDiagram, build_rpd
from .sdot import SolveReport, evaluate_functional, solve_weights
from .symmetrizer import CoupledState, CouplingError, diagnostics, init_coupling, iterate, run

__version__ = "0.1.0"
