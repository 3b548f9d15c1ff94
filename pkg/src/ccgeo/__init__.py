"""Numerical Carnot-Caratheodory geometry.

Distance fields for sub-Riemannian metrics via the g_tau eikonal
approximation, ball growth and isoperimetric profiles, conformally invariant
annulus capacities with two-sided brackets, and conformal-type
classification (parabolic vs hyperbolic) from capacity decay or volume
growth.
"""

from .structures import (
    VectorFieldSpec,
    SubRiemannianStructure,
    StructureError,
    build_builtin,
    hausdorff_dimension,
    filtration_ranks,
    g_tau_norm,
    load_structure_file,
    parse_structure_text,
)
from .grid import GridChart, GridError, ScalarField, HorizontalVectorField, horizontal_gradient
from .eikonal import SolverError, DistanceField, solve_eikonal, cc_distance_field
from .graphdist import grid_graph_distance

__version__ = "0.1.0"
