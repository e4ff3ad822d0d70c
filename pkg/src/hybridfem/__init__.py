"""2D simplicial mixed and hybridized finite elements.

Raviart-Thomas, BDM, and HDG discretizations of the diffusion model problem
with the projections, liftings, static condensation, and superconvergent
postprocessing that tie them together, plus a manufactured-solution
convergence harness.
"""

from . import errors, harness, mesh, methods, piola, polyspaces, postprocess, projections
from .harness import CASES, StudyConfig, compare_methods, run_study
from .mesh import Mesh, load_mesh, uniform_refine, unit_square
from .methods import (
    FieldTriple,
    ProblemData,
    SpaceDescriptor,
    StabilizationFunction,
    assemble,
    solve_hybridized,
    solve_saddle,
)

__version__ = "0.1.0"
