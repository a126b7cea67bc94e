"""Electrode geometry, sharp and smoothed Robin boundary coefficients, and
the harmonic lift of their quotient.

Two electrodes sit centered on the top and bottom sides of the unit square.
Corner nodes belong to the vertical sides, never to an electrode, so the
stored coefficient value at a corner is the lateral-side one.  Boundary
integrals in the discrete systems are assembled face by face: every
non-corner boundary node owns one face of length h; a corner owns two
half-faces of length h/2, one on each adjacent side (see ``boundary_faces``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, DimensionError, SolverError
from .fields import BoundaryValues, Grid, ScalarField, boundary_loop


@dataclass(frozen=True)
class ElectrodeSet:
    """Centered top/bottom electrode pair.

    aperture: electrode length as a fraction of the side length, in (0, 1].
    z: contact impedance (> 0).  current: net injected current I (> 0).
    top_positive: injection electrode e+ on the top side (flip to reverse
    polarity).
    """

    aperture: float = 1.0
    z: float = 1.0
    current: float = 1.0
    top_positive: bool = True

    def __post_init__(self):
        if not (0.0 < self.aperture <= 1.0):
            raise DataError(f"aperture must be in (0, 1], got {self.aperture}")
        if self.z <= 0.0:
            raise DataError(f"contact impedance must be positive, got {self.z}")
        if self.current <= 0.0:
            raise DataError(f"injected current must be positive, got {self.current}")

    def span(self) -> tuple[float, float]:
        """The x interval covered by each electrode (same for both by symmetry)."""
        half = 0.5 * self.aperture
        return 0.5 - half, 0.5 + half

    def sign_top(self) -> float:
        return 1.0 if self.top_positive else -1.0


@dataclass(frozen=True)
class RobinCoefficients:
    """Boundary coefficient pair (b, c) of the Robin condition
    sigma du/dnu + b u = c, plus the smoothing parameters that built them."""

    b: BoundaryValues
    c: BoundaryValues
    epsilon: float
    transition_width: float

    @property
    def grid(self) -> Grid:
        return self.b.grid

    def __post_init__(self):
        if self.b.grid.n != self.c.grid.n:
            raise DimensionError("b and c live on different grids")


def boundary_faces(grid: Grid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Face decomposition of the boundary for assembly and flux integrals.

    Returns (node_idx, value_idx, weight) arrays over all boundary faces:
    ``node_idx`` is the loop index of the node owning the face (the row the
    face contributes to), ``value_idx`` the loop index whose stored
    coefficient value applies on that face, ``weight`` the face length.
    Non-corner nodes own a single face of length h carrying their own value.
    A corner owns two half-faces of length h/2: the lateral-side face carries
    the corner's own stored value, while the horizontal-side face carries the
    value stored at the adjacent non-corner node of that side (the corner
    rule keeps electrode values off the corner entry itself).
    """
    n = grid.n
    m = n - 1
    nb = 4 * m
    h = grid.h
    # corner loop indices -> loop index of the adjacent node on the corner's
    # horizontal side: (0,0)->(1,0), (m,0)->(m-1,0), (m,m)->(m-1,m), (0,m)->(1,m)
    corners = {0: 1, m: m - 1, 2 * m: 2 * m + 1, 3 * m: 3 * m - 1}
    node_idx, value_idx, weight = [], [], []
    for k in range(nb):
        if k in corners:
            node_idx += [k, k]
            value_idx += [k, corners[k]]
            weight += [0.5 * h, 0.5 * h]
        else:
            node_idx.append(k)
            value_idx.append(k)
            weight.append(h)
    return (np.asarray(node_idx), np.asarray(value_idx), np.asarray(weight))


def _loop_positions(grid: Grid) -> np.ndarray:
    """Arc-length coordinate of each boundary node along the loop, in [0, 4)."""
    return np.arange(grid.num_boundary_nodes) * grid.h


def _electrode_intervals(electrodes: ElectrodeSet) -> dict[str, tuple[float, float]]:
    """Loop-coordinate intervals of the two electrodes.

    Loop coordinate t runs counterclockwise from (0,0): bottom t = x,
    right t = 1 + y, top t = 3 - x, left t = 4 - y.
    """
    xl, xh = electrodes.span()
    return {"bottom": (xl, xh), "top": (3.0 - xh, 3.0 - xl)}


def _circular_interval_distance(t: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Distance from loop positions t to the arc [lo, hi] on a loop of length 4."""
    inside = (t >= lo - 1e-12) & (t <= hi + 1e-12)
    d_lo = np.minimum(np.abs(t - lo), 4.0 - np.abs(t - lo))
    d_hi = np.minimum(np.abs(t - hi), 4.0 - np.abs(t - hi))
    return np.where(inside, 0.0, np.minimum(d_lo, d_hi))


def smoothstep(t: np.ndarray) -> np.ndarray:
    """Quintic smoothstep 6t^5 - 15t^4 + 10t^3 clamped to [0, 1]; its first
    and second derivatives vanish at both ends, making glued profiles C2."""
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (t * (6.0 * t - 15.0) + 10.0)


def _electrode_node_mask(electrodes: ElectrodeSet, grid: Grid, side: str) -> np.ndarray:
    """Mask over loop indices of the nodes on the given side's electrode,
    excluding corners (corner rule)."""
    i, j = boundary_loop(grid)
    xl, xh = electrodes.span()
    x = i * grid.h
    on_side = (j == (grid.n - 1)) if side == "top" else (j == 0)
    interior = (i > 0) & (i < grid.n - 1)
    return on_side & interior & (x >= xl - 1e-12) & (x <= xh + 1e-12)


def base_coefficients(electrodes: ElectrodeSet, grid: Grid) -> RobinCoefficients:
    """Sharp coefficients: b = 1/z and c = +/-I on electrode nodes, zero
    elsewhere (corners excluded per the corner rule); epsilon = width = 0."""
    nb = grid.num_boundary_nodes
    b = np.zeros(nb)
    c = np.zeros(nb)
    s = electrodes.sign_top()
    top = _electrode_node_mask(electrodes, grid, "top")
    bottom = _electrode_node_mask(electrodes, grid, "bottom")
    b[top | bottom] = 1.0 / electrodes.z
    c[top] = s * electrodes.current
    c[bottom] = -s * electrodes.current
    return RobinCoefficients(
        BoundaryValues(grid, b), BoundaryValues(grid, c), epsilon=0.0, transition_width=0.0
    )


def smoothed_coefficients(
    electrodes: ElectrodeSet,
    grid: Grid,
    epsilon: float,
    width: float | None = None,
) -> RobinCoefficients:
    """C2-glued coefficients: b transitions from 1/z on the electrodes to
    epsilon/z at arc distance >= width, c from +/-I to 0, both via the
    quintic smoothstep over the transition band."""
    if not (0.0 < epsilon <= 1.0):
        raise DataError(f"epsilon must be in (0, 1], got {epsilon}")
    if width is None:
        width = 4.0 * grid.h
    if width < 2.0 * grid.h - 1e-12:
        raise DataError(
            f"transition width {width} is unresolvable on spacing h={grid.h}; need >= 2h"
        )
    t = _loop_positions(grid)
    spans = _electrode_intervals(electrodes)
    profiles = {}
    for side, (lo, hi) in spans.items():
        d = _circular_interval_distance(t, lo, hi)
        profiles[side] = np.where(d >= width, 0.0, 1.0 - smoothstep(d / width))
    z, cur = electrodes.z, electrodes.current
    s = electrodes.sign_top()
    b = (epsilon + (1.0 - epsilon) * np.maximum(profiles["top"], profiles["bottom"])) / z
    c = cur * (s * profiles["top"] - s * profiles["bottom"])
    return RobinCoefficients(
        BoundaryValues(grid, b), BoundaryValues(grid, c),
        epsilon=float(epsilon), transition_width=float(width),
    )


def electrode_quadrature(
    electrodes: ElectrodeSet, grid: Grid, side: str
) -> tuple[np.ndarray, np.ndarray]:
    """Trapezoid quadrature over one electrode arc.

    Returns (loop_idx, weights) for the boundary nodes spanned by the
    electrode on the given side ("top" or "bottom"), end nodes at half
    weight.  At full aperture the arc ends are the corners, so the discrete
    electrode length sums to exactly 1.  Apertures whose ends fall between
    nodes snap inward to the spanned nodes.
    """
    if side not in ("top", "bottom"):
        raise ValueError(f"side must be 'top' or 'bottom', got {side!r}")
    i, j = boundary_loop(grid)
    xl, xh = electrodes.span()
    x = i * grid.h
    on_side = (j == (grid.n - 1)) if side == "top" else (j == 0)
    mask = on_side & (x >= xl - 1e-12) & (x <= xh + 1e-12)
    idx = np.flatnonzero(mask)
    if idx.size < 2:
        raise DataError(
            f"aperture {electrodes.aperture} spans fewer than two nodes at n={grid.n}"
        )
    # order by x so the arc ends are first/last
    order = np.argsort(x[idx])
    idx = idx[order]
    w = np.full(idx.size, grid.h)
    w[0] = w[-1] = 0.5 * grid.h
    return idx, w


def electrode_length(electrodes: ElectrodeSet, grid: Grid) -> float:
    """Discrete arc length |e| of one electrode."""
    _, w = electrode_quadrature(electrodes, grid, "top")
    return float(w.sum())


def electrode_integral(
    electrodes: ElectrodeSet, grid: Grid, trace: BoundaryValues, side: str
) -> float:
    """Quadrature of a boundary function over one electrode arc."""
    idx, w = electrode_quadrature(electrodes, grid, side)
    return float(w @ trace.values[idx])


def positive_electrode_side(electrodes: ElectrodeSet) -> str:
    return "top" if electrodes.top_positive else "bottom"


def harmonic_lift(
    coeffs: RobinCoefficients, grid: Grid, tol: float = 1e-10
) -> tuple[ScalarField, BoundaryValues]:
    """Harmonic function with Dirichlet data c/b, and its outward normal
    derivative at boundary nodes by the second-order one-sided stencil
    (3 f0 - 4 f1 + f2) / (2h) along the inward direction, sign flipped.

    Requires epsilon > 0 so that b is positive everywhere.  Corner normal
    derivatives use the lateral-side direction (corner rule).
    """
    if coeffs.epsilon <= 0.0:
        raise DataError("harmonic lift needs epsilon > 0; c/b is undefined off electrodes")
    from . import elliptic  # deferred: elliptic imports this module

    data = BoundaryValues(grid, coeffs.c.values / coeffs.b.values)
    system = elliptic.assemble_laplace_dirichlet(data, grid)
    x, stats = elliptic.pcg_solve(system, tol=tol, max_iter=40 * grid.n)
    if not stats.converged:
        raise SolverError(
            f"harmonic lift solve stalled at residual {stats.relative_residual:.3e}"
        )
    hfield = ScalarField(grid, x)
    U = hfield.values2d
    n, h = grid.n, grid.h
    i, j = boundary_loop(grid)
    dh = np.empty(grid.num_boundary_nodes)
    for k in range(grid.num_boundary_nodes):
        ii, jj = int(i[k]), int(j[k])
        if ii == 0:
            f0, f1, f2 = U[jj, 0], U[jj, 1], U[jj, 2]
        elif ii == n - 1:
            f0, f1, f2 = U[jj, n - 1], U[jj, n - 2], U[jj, n - 3]
        elif jj == 0:
            f0, f1, f2 = U[0, ii], U[1, ii], U[2, ii]
        else:
            f0, f1, f2 = U[n - 1, ii], U[n - 2, ii], U[n - 3, ii]
        dh[k] = (3.0 * f0 - 4.0 * f1 + f2) / (2.0 * h)
    return hfield, BoundaryValues(grid, dh)
