"""End-to-end forward simulation: Robin and complete-electrode-model solves,
interior current-density magnitude, noise injection, the CEM-Robin scaling
factor, and the non-uniqueness transform family."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .boundary import (
    ElectrodeSet,
    RobinCoefficients,
    electrode_integral,
    electrode_length,
    positive_electrode_side,
)
from .elliptic import SolveStats, assemble_cem, assemble_robin, pcg_solve
from .errors import DataError, SolverError
from .fields import (
    Grid,
    ScalarField,
    boundary_trace,
    cell_average,
    cells_to_nodes,
    gradient,
    require_same_grid,
)


@dataclass
class ForwardResult:
    """Solution of a forward problem together with its interior data.

    ``cem_voltage`` is the electrode voltage V (CEM solves only);
    ``cem_scale`` holds the Robin-to-CEM scaling factor when computed.
    """

    u: ScalarField
    a: ScalarField
    stats: SolveStats
    cem_voltage: float | None = None
    cem_scale: float | None = None


def interior_data(sigma: ScalarField, u: ScalarField) -> ScalarField:
    """Magnitude of the current density |sigma grad u| at the nodes.

    The cell-centered |grad u| is weighted by the cell-mean conductivity and
    averaged back to nodes over each node's adjacent cells.
    """
    grid = require_same_grid(sigma, u)
    amag = cell_average(sigma) * gradient(u).magnitude2d()
    return ScalarField(grid, cells_to_nodes(amag, grid).reshape(-1))


def _solve(system, grid: Grid, tol: float) -> tuple[np.ndarray, SolveStats]:
    x, stats = pcg_solve(system, tol=tol, max_iter=40 * grid.n)
    if not stats.converged:
        raise SolverError(
            f"forward solve stalled: residual {stats.relative_residual:.3e} "
            f"after {stats.iterations} iterations"
        )
    return x, stats


def solve_forward(
    sigma: ScalarField,
    coeffs: RobinCoefficients,
    grid: Grid,
    tol: float = 1e-10,
) -> ForwardResult:
    """Solve the Robin problem for the given coefficients and synthesize the
    interior data a = |sigma grad u|."""
    system = assemble_robin(sigma, coeffs, None, grid)
    x, stats = _solve(system, grid, tol)
    u = ScalarField(grid, x)
    return ForwardResult(u=u, a=interior_data(sigma, u), stats=stats)


def solve_cem_forward(
    sigma: ScalarField,
    electrodes: ElectrodeSet,
    grid: Grid,
    tol: float = 1e-10,
) -> ForwardResult:
    """Solve the complete electrode model; the bordered unknown is the
    electrode voltage, returned as ``cem_voltage``."""
    system = assemble_cem(sigma, electrodes, grid)
    x, stats = _solve(system, grid, tol)
    v = ScalarField(grid, x[:-1])
    return ForwardResult(
        u=v, a=interior_data(sigma, v), stats=stats, cem_voltage=float(x[-1])
    )


def cem_scaling(
    result: ForwardResult, electrodes: ElectrodeSet, grid: Grid
) -> float:
    """Scaling factor lambda between the sharp Robin solution u0 and the CEM
    solution: 1/lambda = |e| - (1/(zI)) * integral of u0 over e+.

    The equivalent expression through e- agrees by discrete conservation;
    the returned value averages the two. Raises on degenerate scaling.
    """
    tr = boundary_trace(result.u)
    z, cur = electrodes.z, electrodes.current
    length = electrode_length(electrodes, grid)
    pos = positive_electrode_side(electrodes)
    neg = "bottom" if pos == "top" else "top"
    inv_plus = length - electrode_integral(electrodes, grid, tr, pos) / (z * cur)
    inv_minus = length + electrode_integral(electrodes, grid, tr, neg) / (z * cur)
    inv = 0.5 * (inv_plus + inv_minus)
    if abs(inv) < 1e-12:
        raise DataError(f"degenerate CEM scaling: 1/lambda = {inv:.3e}")
    return 1.0 / inv


def add_noise(a: ScalarField, level: float, seed: int) -> ScalarField:
    """Multiplicative uniform noise a * (1 + level * xi), xi ~ U[-1, 1] from
    a seeded generator, clamped at zero from below."""
    if level < 0.0:
        raise DataError(f"noise level must be nonnegative, got {level}")
    if level == 0.0:
        return ScalarField(a.grid, a.values.copy())
    rng = np.random.default_rng(seed)
    xi = rng.uniform(-1.0, 1.0, size=a.values.size)
    return ScalarField(a.grid, np.maximum(a.values * (1.0 + level * xi), 0.0))


def _bump(t: np.ndarray, center: float, halfwidth: float) -> tuple[np.ndarray, np.ndarray]:
    """C1 bump (1 - tau^2)^2 on |tau| < 1 and its derivative, scaled so that
    max |psi'| = 1."""
    tau = (t - center) / halfwidth
    inside = np.abs(tau) < 1.0
    q = np.where(inside, (1.0 - tau**2) ** 2, 0.0)
    dq = np.where(inside, -4.0 * tau * (1.0 - tau**2), 0.0)
    peak = 8.0 / (3.0 * np.sqrt(3.0))  # max of |4 tau (1 - tau^2)| on [-1, 1]
    return q * halfwidth / peak, dq / peak


def nonuniqueness_transform(
    u0: ScalarField,
    sigma: ScalarField,
    strength: float,
    center: float | None = None,
    halfwidth: float | None = None,
) -> tuple[ScalarField, ScalarField]:
    """Apply phi(t) = t + s * psi(t) with a C1 bump psi supported strictly
    between the electrode value ranges of u0.

    psi is normalized so max |psi'| = 1, hence phi' >= 1 - |s| and any
    |s| < 1 is admissible.  Returns (sigma / (phi' o u0), phi o u0): a
    different conductivity whose current density magnitude matches sigma's
    up to discretization error.
    """
    require_same_grid(u0, sigma)
    lo, hi = float(u0.values.min()), float(u0.values.max())
    span = hi - lo
    if span <= 0.0:
        raise DataError("u0 is constant; no admissible transform exists")
    if center is None:
        center = 0.5 * (lo + hi)
    if halfwidth is None:
        halfwidth = 0.2 * span
    if not (lo < center - halfwidth and center + halfwidth < hi):
        raise DataError(
            "bump support must lie strictly inside the range of u0 "
            f"({lo:g}, {hi:g}); got center {center:g}, halfwidth {halfwidth:g}"
        )
    psi, dpsi = _bump(u0.values, center, halfwidth)
    dphi = 1.0 + strength * dpsi
    if np.any(dphi <= 0.0):
        raise DataError(
            f"transform is not increasing: min phi' = {dphi.min():g} "
            f"(need |strength| < 1, got {strength})"
        )
    u_phi = ScalarField(u0.grid, u0.values + strength * psi)
    sigma_phi = ScalarField(sigma.grid, sigma.values / dphi)
    return sigma_phi, u_phi
