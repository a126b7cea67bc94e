"""Conductivity imaging from the magnitude of one interior current density
field on the unit square: forward simulation (Robin and complete electrode
model) and reconstruction by a regularized weighted least-gradient
iteration, with a split Bregman comparator.

All operations are pure functions of their inputs; fields are immutable
values safe to share between threads.
"""

from .boundary import (
    ElectrodeSet,
    RobinCoefficients,
    base_coefficients,
    electrode_integral,
    electrode_length,
    harmonic_lift,
    smoothed_coefficients,
)
from .bregman import BregmanConfig, BregmanReport, split_bregman_minimize
from .elliptic import (
    SolveStats,
    SparseSystem,
    assemble_cem,
    assemble_laplace_dirichlet,
    assemble_robin,
    boundary_net_flux,
    pcg_solve,
)
from .errors import (
    AssemblyError,
    CdreconError,
    DataError,
    DimensionError,
    FormatError,
    GridError,
    NotSPDError,
    SolverError,
    UsageError,
)
from .fields import (
    BoundaryValues,
    Grid,
    ScalarField,
    VectorField,
    boundary_trace,
    divergence,
    gradient,
    make_grid,
    read_field,
    rel_l2_error,
    weighted_tv,
    write_field,
)
from .forward import (
    ForwardResult,
    add_noise,
    cem_scaling,
    interior_data,
    nonuniqueness_transform,
    solve_cem_forward,
    solve_forward,
)
from .phantom import Ellipse, PhantomSpec, generate_phantom, read_pgm, write_pgm
from .recon import (
    ReconConfig,
    ReconReport,
    ScheduleStudy,
    check_schedule,
    convergence_study,
    functional_G,
    functional_Gdelta,
    level_calibration,
    reconstruct,
    sigma_from_potential,
)

__version__ = "0.1.0"
