"""The inverse solver: weighted-TV functionals, the regularized fixed-point
iteration (solve a uniformly elliptic Robin problem, update the conductivity
from the data over the gradient magnitude), level calibration against the
known background, and schedule convergence studies.

Each outer iteration solves the linearization of the regularized functional
at the current conductivity: div((sigma_k + delta) grad u) = 0 with
(sigma_k + delta) du/dnu + b_eps u = rhs on the boundary, followed by the
update sigma = a / max(|grad u|, floor) at the nodes.

Three right-hand-side modes are available.  "stabilized" (default) keeps
c_eps and omits the delta dh/dnu flux; it is the Euler-Lagrange condition
of the functional whose quadratic penalty is (delta/2) |grad v|^2, and it
is the only mode whose fixed point stays put: anchoring the penalty at the
harmonic lift h injects a spurious O(delta/epsilon) pull along the
data-invariant reparametrization family (see ``level_calibration``), which
shows up as a slow drift of the iterates.  "variational" adds the
delta dh/dnu flux (the exact Euler-Lagrange condition of the h-anchored
penalty) and "flux-only" additionally drops c_eps.

The interior data determines the conductivity only up to the family
sigma -> sigma / (phi' o u), u -> phi o u with phi increasing and equal to
the identity on the electrode value ranges.  When the conductivity near
the boundary is known (a homogeneous margin around the imaged region, the
standard embedding), the family member is identified by regressing the
reconstructed conductivity against the potential level inside the margin
band; ``reconstruct`` interleaves this calibration with the fixed-point
sweeps unless it is disabled.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .boundary import (
    ElectrodeSet,
    RobinCoefficients,
    harmonic_lift,
    smoothed_coefficients,
)
from .elliptic import SolveStats, assemble_robin, pcg_solve
from .errors import DataError, SolverError
from .fields import (
    BoundaryValues,
    Grid,
    ScalarField,
    boundary_trace,
    boundary_weights,
    cells_to_nodes,
    gradient,
    rel_l2_error,
    require_same_grid,
    weighted_tv,
)


@dataclass(frozen=True)
class ReconConfig:
    epsilon: float = 5e-4
    delta: float = 3e-3
    max_outer_iterations: int = 200
    stop_tol: float = 1e-6
    grad_floor: float = 1e-8
    sigma_bounds: tuple[float, float] | None = None
    rhs_mode: str = "stabilized"  # or "variational" | "flux-only"
    initial_sigma: float = 1.0
    transition_width: float | None = None  # None picks 4h
    inner_tol: float = 1e-10
    stop_on_functional: bool = False
    calibrate: bool = True  # identify the reparametrization member from the
    # margin band, taking initial_sigma as the known background level
    calibration_band: float = 0.12

    def validate(self) -> None:
        if self.epsilon <= 0.0:
            raise DataError(f"epsilon must be positive, got {self.epsilon}")
        if self.delta <= 0.0:
            raise DataError(f"delta must be positive, got {self.delta}")
        if self.grad_floor <= 0.0:
            raise DataError(f"grad_floor must be positive, got {self.grad_floor}")
        if self.max_outer_iterations < 1:
            raise DataError("need at least one outer iteration")
        if self.stop_tol <= 0.0:
            raise DataError(f"stop_tol must be positive, got {self.stop_tol}")
        if self.rhs_mode not in ("stabilized", "variational", "flux-only"):
            raise DataError(f"unknown rhs_mode {self.rhs_mode!r}")
        if self.initial_sigma <= 0.0:
            raise DataError(f"initial sigma must be positive, got {self.initial_sigma}")
        if not (0.0 < self.calibration_band < 0.5):
            raise DataError(f"calibration band must be in (0, 0.5), got {self.calibration_band}")
        if self.sigma_bounds is not None:
            lo, hi = self.sigma_bounds
            if not (0.0 < lo <= hi):
                raise DataError(f"sigma bounds must satisfy 0 < lo <= hi, got {self.sigma_bounds}")


@dataclass
class IterationRecord:
    index: int
    g_delta: float
    g: float
    tv_term: float
    boundary_term: float
    delta_term: float
    sigma_change: float
    rel_error: float | None
    solve_iterations: int
    solve_residual: float


_CSV_COLUMNS = (
    "iteration", "g_delta", "g", "tv_term", "boundary_term", "delta_term",
    "sigma_change", "rel_error", "solve_iterations", "solve_residual",
)


@dataclass
class ReconReport:
    records: list[IterationRecord] = field(default_factory=list)
    final_solve: SolveStats | None = None
    # (after-iteration index, max |phi' - 1|) for each calibration applied
    calibrations: list[tuple[int, float]] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.records)

    def g_delta_values(self) -> list[float]:
        return [r.g_delta for r in self.records]

    def non_monotone_steps(self) -> list[int]:
        """Indices where the regularized functional increased (flagged, not
        an error: monotonicity is not guaranteed)."""
        g = self.g_delta_values()
        return [k for k in range(1, len(g)) if g[k] > g[k - 1]]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(_CSV_COLUMNS)
            for r in self.records:
                w.writerow([
                    r.index,
                    f"{r.g_delta:.12g}", f"{r.g:.12g}", f"{r.tv_term:.12g}",
                    f"{r.boundary_term:.12g}", f"{r.delta_term:.12g}",
                    f"{r.sigma_change:.12g}",
                    "" if r.rel_error is None else f"{r.rel_error:.12g}",
                    r.solve_iterations, f"{r.solve_residual:.6g}",
                ])


def boundary_penalty(
    v: ScalarField, coeffs: RobinCoefficients, h: ScalarField
) -> float:
    """0.5 * integral of b (v - h)^2 over the boundary (closed-loop trapezoid)."""
    grid = require_same_grid(v, h)
    w = boundary_weights(grid)
    dv = boundary_trace(v).values - boundary_trace(h).values
    return float(0.5 * np.sum(w * coeffs.b.values * dv * dv))


def functional_G(
    v: ScalarField, a: ScalarField, coeffs: RobinCoefficients, h: ScalarField
) -> float:
    """Weighted-TV functional: integral of a |grad v| plus the boundary
    penalty 0.5 * integral of b (v - h)^2."""
    return weighted_tv(v, a) + boundary_penalty(v, coeffs, h)


def _delta_term(v: ScalarField, h: ScalarField, delta: float) -> float:
    grid = require_same_grid(v, h)
    d = ScalarField(grid, v.values - h.values)
    g = gradient(d)
    return float(0.5 * delta * np.sum(g.x**2 + g.y**2) * grid.h**2)


def functional_Gdelta(
    v: ScalarField,
    a: ScalarField,
    coeffs: RobinCoefficients,
    h: ScalarField,
    delta: float,
) -> float:
    """Regularized functional: G plus (delta/2) * integral of |grad(v-h)|^2."""
    if delta < 0.0:
        raise DataError(f"delta must be nonnegative, got {delta}")
    return functional_G(v, a, coeffs, h) + _delta_term(v, h, delta)


def sigma_from_potential(
    a: ScalarField, v: ScalarField, grad_floor: float
) -> ScalarField:
    """Conductivity update a / max(|grad v|, floor) at the nodes.

    The floor is relative: grad_floor times the maximum nodal gradient
    magnitude.  A constant v (zero gradient everywhere) degenerates to
    a / grad_floor; callers should treat that as a flagged outcome.
    """
    grid = require_same_grid(a, v)
    gmag = cells_to_nodes(gradient(v).magnitude2d(), grid).reshape(-1)
    peak = float(gmag.max())
    floor = grad_floor * peak if peak > 0.0 else grad_floor
    return ScalarField(grid, a.values / np.maximum(gmag, floor))


def _project(values: np.ndarray, bounds: tuple[float, float] | None) -> np.ndarray:
    if bounds is None:
        return values
    return np.clip(values, bounds[0], bounds[1])


def level_calibration(
    sigma: ScalarField,
    u: ScalarField,
    electrodes: ElectrodeSet,
    background: float,
    band: float = 0.12,
    nbins: int = 48,
) -> tuple[ScalarField, ScalarField, float]:
    """Snap a reconstruction onto the reparametrization-family member whose
    conductivity matches the known background inside the boundary margin.

    The interior data is invariant under sigma -> sigma / (phi' o u),
    u -> phi o u for any increasing phi that is the identity on the
    electrode value ranges.  phi' is estimated per potential level as the
    median of sigma / background over the margin band, pinned to 1 on the
    electrode ranges and normalized so phi stays continuous; the returned
    pair is the transformed (sigma, u) together with max |phi' - 1|.
    """
    from .boundary import electrode_quadrature

    grid = require_same_grid(sigma, u)
    x, y = grid.node_coords()
    band_mask = ((x < band) | (x > 1.0 - band) | (y < band) | (y > 1.0 - band)).reshape(-1)
    t = u.values
    t0, t1 = float(t.min()), float(t.max())
    if t1 <= t0 or background <= 0.0:
        return sigma, u, 0.0

    edges = np.linspace(t0, t1, nbins + 1)
    widths = np.diff(edges)
    bin_of = np.clip(np.digitize(t, edges) - 1, 0, nbins - 1)
    dphi = np.ones(nbins)
    for b in range(nbins):
        sel = band_mask & (bin_of == b)
        if int(sel.sum()) >= 8:
            dphi[b] = float(np.median(sigma.values[sel])) / background
    kernel = np.array([0.25, 0.5, 0.25])
    dphi = np.convolve(np.pad(dphi, 1, mode="edge"), kernel, mode="valid")
    dphi = np.clip(dphi, 0.2, 5.0)

    # identity on the electrode value ranges
    tr = boundary_trace(u).values
    pinned = np.zeros(nbins, dtype=bool)
    for side in ("top", "bottom"):
        idx, _ = electrode_quadrature(electrodes, grid, side)
        vals = tr[idx]
        lo_b = int(np.clip(np.digitize(float(vals.min()), edges) - 1, 0, nbins - 1))
        hi_b = int(np.clip(np.digitize(float(vals.max()), edges) - 1, 0, nbins - 1))
        pinned[lo_b:hi_b + 1] = True
    dphi[pinned] = 1.0
    free = ~pinned
    if not free.any():
        return sigma, u, 0.0
    got = float((dphi[free] * widths[free]).sum())
    if got <= 0.0:
        return sigma, u, 0.0
    dphi[free] *= float(widths[free].sum()) / got

    phi_at_edges = np.concatenate([[t0], t0 + np.cumsum(dphi * widths)])
    u_new = np.interp(t, edges, phi_at_edges)
    sigma_new = sigma.values / dphi[bin_of]
    strength = float(np.abs(dphi - 1.0).max())
    return ScalarField(grid, sigma_new), ScalarField(grid, u_new), strength


def reconstruct(
    a: ScalarField,
    electrodes: ElectrodeSet,
    config: ReconConfig,
    grid: Grid,
    ground_truth: ScalarField | None = None,
) -> tuple[ScalarField, ScalarField, ReconReport]:
    """Recover an approximate conductivity from the interior data a.

    Builds the smoothed boundary coefficients and the harmonic lift once,
    then alternates the regularized linear solve with the conductivity
    update until the relative change drops below ``stop_tol`` (or, with
    ``stop_on_functional``, until the regularized functional stalls), up to
    the iteration cap.  With ``calibrate`` enabled, two level-calibration
    passes against the background (= ``initial_sigma``) are interleaved
    with short settling sweeps.  A final extra solve makes the returned
    potential the exact critical point of the linearization at the returned
    conductivity.
    """
    config.validate()
    if a.grid.n != grid.n:
        raise DataError("data grid disagrees with the requested grid")
    if np.any(a.values < 0.0):
        raise DataError("interior data must be nonnegative")
    if float(a.values.max()) == 0.0:
        raise DataError("interior data is identically zero")
    if ground_truth is not None:
        require_same_grid(a, ground_truth)

    coeffs = smoothed_coefficients(
        electrodes, grid, config.epsilon, config.transition_width
    )
    h_field, dh_dn = harmonic_lift(coeffs, grid, tol=config.inner_tol)
    if config.rhs_mode == "stabilized":
        flux = None
        solve_coeffs = coeffs
    elif config.rhs_mode == "variational":
        flux = BoundaryValues(grid, config.delta * dh_dn.values)
        solve_coeffs = coeffs
    else:  # flux-only
        flux = BoundaryValues(grid, config.delta * dh_dn.values)
        solve_coeffs = RobinCoefficients(
            coeffs.b,
            BoundaryValues(grid, np.zeros_like(coeffs.c.values)),
            coeffs.epsilon,
            coeffs.transition_width,
        )

    delta = config.delta
    report = ReconReport()
    state = {"prev_gd": None}

    def solve_at(sigma: ScalarField):
        sigma_eff = ScalarField(grid, sigma.values + delta)
        system = assemble_robin(sigma_eff, solve_coeffs, flux, grid)
        x, stats = pcg_solve(system, tol=config.inner_tol, max_iter=40 * grid.n)
        if not stats.converged:
            raise SolverError(
                f"inner solve stalled after {report.iterations} outer iterations: "
                f"residual {stats.relative_residual:.3e}"
            )
        return ScalarField(grid, x), stats

    def sweep(sigma: ScalarField, budget: int):
        """Fixed-point iterations until the stop rule fires or the budget ends."""
        u = None
        for _ in range(budget):
            u, stats = solve_at(sigma)
            sigma_new = sigma_from_potential(a, u, config.grad_floor)
            sigma_new = ScalarField(grid, _project(sigma_new.values, config.sigma_bounds))
            change = (
                float(np.linalg.norm(sigma_new.values - sigma.values))
                / float(np.linalg.norm(sigma.values))
            )
            tv = weighted_tv(u, a)
            bterm = boundary_penalty(u, coeffs, h_field)
            dterm = _delta_term(u, h_field, delta)
            rel = None if ground_truth is None else rel_l2_error(sigma_new, ground_truth)
            report.records.append(IterationRecord(
                index=report.iterations, g_delta=tv + bterm + dterm, g=tv + bterm,
                tv_term=tv, boundary_term=bterm, delta_term=dterm,
                sigma_change=change, rel_error=rel,
                solve_iterations=stats.iterations,
                solve_residual=stats.relative_residual,
            ))
            sigma = sigma_new
            if config.stop_on_functional:
                gd = tv + bterm + dterm
                prev = state["prev_gd"]
                state["prev_gd"] = gd
                if prev is not None and abs(gd - prev) <= config.stop_tol * abs(prev):
                    break
            elif change <= config.stop_tol:
                break
        return sigma, u

    sigma = ScalarField(grid, np.full(grid.num_nodes, config.initial_sigma))
    sigma, u = sweep(sigma, config.max_outer_iterations)

    if config.calibrate:
        settle = max(8, config.max_outer_iterations // 8)
        for _ in range(2):
            sigma, u, strength = level_calibration(
                sigma, u, electrodes, config.initial_sigma, config.calibration_band
            )
            report.calibrations.append((report.iterations, strength))
            sigma = ScalarField(grid, _project(sigma.values, config.sigma_bounds))
            sigma, u = sweep(sigma, settle)

    # consistency solve: the returned potential solves the linear problem
    # for the returned conductivity exactly (up to solver tolerance)
    u_final, final_stats = solve_at(sigma)
    report.final_solve = final_stats
    return sigma, u_final, report


@dataclass
class ScheduleStudy:
    """Per-step results of a regularization schedule run."""

    deltas: list[float]
    etas: list[float]
    g_delta_values: list[float]
    g_clean_values: list[float]
    rel_errors: list[float]
    tail_ratio: float
    tail_converged: bool

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("step", "delta", "eta", "g_delta", "g_clean", "rel_error"))
            for k in range(len(self.deltas)):
                err = self.rel_errors[k]
                w.writerow([
                    k, f"{self.deltas[k]:.12g}", f"{self.etas[k]:.12g}",
                    f"{self.g_delta_values[k]:.12g}", f"{self.g_clean_values[k]:.12g}",
                    "" if math.isnan(err) else f"{err:.12g}",
                ])


def check_schedule(deltas, etas) -> None:
    """Validate a regularization schedule: deltas strictly decreasing and
    positive, eta_n^2 / delta_n nonnegative and decreasing toward zero."""
    deltas = [float(d) for d in deltas]
    etas = [float(e) for e in etas]
    if len(deltas) != len(etas) or not deltas:
        raise DataError("schedule needs matching, nonempty delta and eta sequences")
    if any(d <= 0.0 for d in deltas):
        raise DataError("schedule deltas must be positive")
    if any(e < 0.0 for e in etas):
        raise DataError("schedule etas must be nonnegative")
    if any(deltas[k + 1] >= deltas[k] for k in range(len(deltas) - 1)):
        raise DataError("schedule deltas must decrease strictly")
    ratios = [e * e / d for e, d in zip(etas, deltas)]
    if any(ratios[k + 1] > ratios[k] + 1e-15 for k in range(len(ratios) - 1)):
        raise DataError("inadmissible schedule: eta^2/delta must not increase")
    if ratios[0] > 0.0 and ratios[-1] >= ratios[0] * (1.0 - 1e-12):
        raise DataError("inadmissible schedule: eta^2/delta must decrease toward zero")


def convergence_study(
    a_clean: ScalarField,
    electrodes: ElectrodeSet,
    grid: Grid,
    deltas,
    etas,
    config: ReconConfig | None = None,
    seed: int = 0,
    tail_fraction: float = 0.1,
    ground_truth: ScalarField | None = None,
) -> ScheduleStudy:
    """Run the reconstruction along a regularization schedule.

    Step n perturbs the clean data at amplitude eta_n (seeded with
    seed + n), reconstructs with delta_n, and records the regularized
    functional at the noisy weight and the plain functional at the clean
    weight.  The tail is declared converged when the spread of the last
    third of the clean-functional values is at most ``tail_fraction`` times
    the spread of the first third.
    """
    from .forward import add_noise

    check_schedule(deltas, etas)
    if config is None:
        config = ReconConfig()
    coeffs = smoothed_coefficients(
        electrodes, grid, config.epsilon, config.transition_width
    )
    h_field, _ = harmonic_lift(coeffs, grid, tol=config.inner_tol)

    g_delta_vals, g_clean_vals, errors = [], [], []
    for k, (d, e) in enumerate(zip(deltas, etas)):
        a_n = add_noise(a_clean, e, seed + k)
        cfg = replace(config, delta=float(d))
        sigma, u, _ = reconstruct(a_n, electrodes, cfg, grid, ground_truth)
        g_delta_vals.append(functional_Gdelta(u, a_n, coeffs, h_field, float(d)))
        g_clean_vals.append(functional_G(u, a_clean, coeffs, h_field))
        errors.append(
            float("nan") if ground_truth is None else rel_l2_error(sigma, ground_truth)
        )

    m = max(1, math.ceil(len(g_clean_vals) / 3))
    head = g_clean_vals[:m]
    tail = g_clean_vals[-m:]
    spread_head = max(head) - min(head)
    spread_tail = max(tail) - min(tail)
    ratio = spread_tail / spread_head if spread_head > 0.0 else 0.0
    return ScheduleStudy(
        deltas=[float(d) for d in deltas],
        etas=[float(e) for e in etas],
        g_delta_values=g_delta_vals,
        g_clean_values=g_clean_vals,
        rel_errors=errors,
        tail_ratio=ratio,
        tail_converged=spread_tail <= tail_fraction * spread_head,
    )
