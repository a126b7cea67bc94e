"""Assembly of the discrete elliptic systems (Robin, CEM, Laplace-Dirichlet)
and a preconditioned conjugate gradient solver.

All systems are assembled in a symmetric, h^2-scaled finite-volume form:
an interior row reads sum_edges w_edge * sigma_edge * (u_i - u_j), where
edge conductivities are harmonic means of the two adjacent node values and
edges lying in a boundary row/column carry half weight.  Robin data enters
boundary rows scaled by the face quadrature weights from
``boundary.boundary_faces``, which keeps the matrix symmetric and makes the
discrete solution exact on affine potentials for the sharp full-aperture
configuration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .boundary import (
    ElectrodeSet,
    RobinCoefficients,
    boundary_faces,
    electrode_quadrature,
    positive_electrode_side,
)
from .errors import AssemblyError, DimensionError, NotSPDError
from .fields import BoundaryValues, Grid, ScalarField, boundary_loop


@dataclass
class SparseSystem:
    """Symmetric sparse linear system A x = rhs in CSR form.

    ``extra_unknowns`` counts bordered scalar unknowns appended after the
    nodal ones (1 for the CEM electrode voltage).
    """

    matrix: sp.csr_matrix
    rhs: np.ndarray
    extra_unknowns: int = 0

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]


@dataclass
class SolveStats:
    iterations: int
    relative_residual: float
    preconditioner: str
    converged: bool


def _harmonic_mean(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return 2.0 * a * b / (a + b)


def _edge_entries(sigma2d: np.ndarray, n: int):
    """COO entries of the symmetric edge (flux) part of the operator."""
    rows, cols, vals = [], [], []

    # x-edges between (i,j) and (i+1,j); half weight in the top/bottom rows
    sx = _harmonic_mean(sigma2d[:, :-1], sigma2d[:, 1:])
    wx = np.ones((n, 1))
    wx[0, 0] = wx[-1, 0] = 0.5
    vx = (wx * sx).reshape(-1)
    jj, ii = np.meshgrid(np.arange(n), np.arange(n - 1), indexing="ij")
    k1 = (jj * n + ii).reshape(-1)
    k2 = k1 + 1
    rows += [k1, k2, k1, k2]
    cols += [k1, k2, k2, k1]
    vals += [vx, vx, -vx, -vx]

    # y-edges between (i,j) and (i,j+1); half weight in the left/right columns
    sy = _harmonic_mean(sigma2d[:-1, :], sigma2d[1:, :])
    wy = np.ones((1, n))
    wy[0, 0] = wy[0, -1] = 0.5
    vy = (wy * sy).reshape(-1)
    jj, ii = np.meshgrid(np.arange(n - 1), np.arange(n), indexing="ij")
    k1 = (jj * n + ii).reshape(-1)
    k2 = k1 + n
    rows += [k1, k2, k1, k2]
    cols += [k1, k2, k2, k1]
    vals += [vy, vy, -vy, -vy]

    return (np.concatenate(rows), np.concatenate(cols), np.concatenate(vals))


def _check_positive_sigma(sigma: ScalarField) -> None:
    v = sigma.values
    if np.any(v <= 0.0):
        k = int(np.flatnonzero(v <= 0.0)[0])
        n = sigma.grid.n
        raise AssemblyError(
            f"nonpositive conductivity {v[k]:g} at node (i={k % n}, j={k // n})"
        )


def assemble_robin(
    sigma_eff: ScalarField,
    coeffs: RobinCoefficients,
    flux_rhs: BoundaryValues | None,
    grid: Grid,
) -> SparseSystem:
    """Discrete system for div(sigma_eff grad u) = 0 with
    sigma_eff du/dnu + b u = c + flux_rhs on the boundary."""
    if sigma_eff.grid.n != grid.n or coeffs.grid.n != grid.n:
        raise DimensionError("sigma, coefficients and grid sizes disagree")
    if flux_rhs is not None and flux_rhs.grid.n != grid.n:
        raise DimensionError("flux_rhs grid size disagrees")
    _check_positive_sigma(sigma_eff)

    n = grid.n
    rows, cols, vals = _edge_entries(sigma_eff.values2d, n)

    li, lj = boundary_loop(grid)
    glob = lj * n + li
    node_f, val_f, w_f = boundary_faces(grid)
    bvals = coeffs.b.values
    cvals = coeffs.c.values
    fvals = flux_rhs.values if flux_rhs is not None else np.zeros_like(cvals)

    diag_rows = glob[node_f]
    diag_vals = w_f * bvals[val_f]
    rows = np.concatenate([rows, diag_rows])
    cols = np.concatenate([cols, diag_rows])
    vals = np.concatenate([vals, diag_vals])

    rhs = np.zeros(n * n)
    np.add.at(rhs, diag_rows, w_f * (cvals[val_f] + fvals[val_f]))

    A = sp.coo_matrix((vals, (rows, cols)), shape=(n * n, n * n)).tocsr()
    return SparseSystem(A, rhs)


def assemble_cem(
    sigma: ScalarField, electrodes: ElectrodeSet, grid: Grid
) -> SparseSystem:
    """Bordered symmetric complete-electrode-model system in (v, V).

    Electrode faces carry the impedance condition v + z sigma dv/dnu = +/-V;
    the extra row is the symmetrized net-current constraint (the sum of the
    per-electrode current integrals, each equal to I; their difference is
    implied by discrete conservation).  Off-electrode faces are natural
    (zero flux).
    """
    if sigma.grid.n != grid.n:
        raise DimensionError("sigma and grid sizes disagree")
    _check_positive_sigma(sigma)

    n = grid.n
    N = n * n
    rows, cols, vals = _edge_entries(sigma.values2d, n)
    rows, cols, vals = [rows], [cols], [vals]
    rhs = np.zeros(N + 1)

    li, lj = boundary_loop(grid)
    glob = lj * n + li
    z = electrodes.z
    pos_side = positive_electrode_side(electrodes)
    for side in ("top", "bottom"):
        sgn = 1.0 if side == pos_side else -1.0
        idx, w = electrode_quadrature(electrodes, grid, side)
        g = glob[idx]
        rows.append(g)
        cols.append(g)
        vals.append(w / z)
        rows.append(g)
        cols.append(np.full(g.size, N))
        vals.append(-sgn * w / z)
        rows.append(np.full(g.size, N))
        cols.append(g)
        vals.append(-sgn * w / z)
        rows.append(np.full(g.size, N))
        cols.append(np.full(g.size, N))
        vals.append(w / z)
    rhs[N] = 2.0 * electrodes.current

    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(N + 1, N + 1),
    ).tocsr()
    return SparseSystem(A, rhs, extra_unknowns=1)


def assemble_laplace_dirichlet(
    data: BoundaryValues, grid: Grid, source: np.ndarray | None = None
) -> SparseSystem:
    """Five-point Laplace system with Dirichlet data, boundary rows
    eliminated symmetrically (identity rows, couplings folded into the rhs).

    ``source`` is an optional interior forcing g for -lap(u) = g, given as a
    flat nodal array; it enters interior rows scaled by h^2.
    """
    if data.grid.n != grid.n:
        raise DimensionError("data and grid sizes disagree")
    n = grid.n
    N = n * n
    h2 = grid.h * grid.h

    dmap = np.zeros((n, n))
    li, lj = boundary_loop(grid)
    dmap[lj, li] = data.values

    interior = np.zeros((n, n), dtype=bool)
    interior[1:-1, 1:-1] = True

    rows, cols, vals = [], [], []
    rhs = np.zeros(N)

    jj, ii = np.meshgrid(np.arange(1, n - 1), np.arange(1, n - 1), indexing="ij")
    k = (jj * n + ii).reshape(-1)
    rows.append(k)
    cols.append(k)
    vals.append(np.full(k.size, 4.0))
    if source is not None:
        src = np.asarray(source, dtype=float).reshape(-1)
        if src.size != N:
            raise DimensionError(f"source needs {N} values, got {src.size}")
        rhs[k] += h2 * src[k]

    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        ni, nj = ii + di, jj + dj
        nb_int = interior[nj, ni].reshape(-1)
        nk = (nj * n + ni).reshape(-1)
        rows.append(k[nb_int])
        cols.append(nk[nb_int])
        vals.append(np.full(int(nb_int.sum()), -1.0))
        fold = ~nb_int
        np.add.at(rhs, k[fold], dmap[nj, ni].reshape(-1)[fold])

    kb = (lj * n + li).reshape(-1)
    rows.append(kb)
    cols.append(kb)
    vals.append(np.ones(kb.size))
    rhs[kb] = data.values

    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(N, N),
    ).tocsr()
    return SparseSystem(A, rhs)


def _ic0_factor(A: sp.csr_matrix) -> sp.csr_matrix:
    """Zero-fill incomplete Cholesky factor L (lower triangular, L L^T ~ A).

    Exists with positive diagonal for Stieltjes matrices (symmetric positive
    definite with nonpositive off-diagonal entries), which covers the
    assembled Robin and Laplace systems; raises NotSPDError on breakdown.
    """
    A = A.tocsr()
    A.sort_indices()
    n = A.shape[0]
    indptr, indices, data = A.indptr, A.indices, A.data
    lrows: list[dict] = [dict() for _ in range(n)]
    diag = np.zeros(n)
    for i in range(n):
        row = lrows[i]
        acc = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            k = indices[p]
            if k > i:
                break
            a_ik = data[p]
            if k == i:
                val = a_ik - acc
                if val <= 0.0:
                    raise NotSPDError(
                        f"incomplete Cholesky breakdown at row {i}: pivot {val:g}"
                    )
                diag[i] = math.sqrt(val)
                row[i] = diag[i]
            else:
                rk = lrows[k]
                s = a_ik
                for j, lij in row.items():
                    if j < k:
                        lkj = rk.get(j)
                        if lkj is not None:
                            s -= lij * lkj
                lik = s / diag[k]
                row[k] = lik
                acc += lik * lik
    rows_idx = np.concatenate([np.full(len(r), i) for i, r in enumerate(lrows)])
    cols_idx = np.concatenate([np.fromiter(r.keys(), dtype=int) for r in lrows])
    vals = np.concatenate([np.fromiter(r.values(), dtype=float) for r in lrows])
    return sp.coo_matrix((vals, (rows_idx, cols_idx)), shape=A.shape).tocsr()


def _make_preconditioner(A: sp.csr_matrix, kind: str):
    if kind == "jacobi":
        d = A.diagonal().copy()
        if np.any(d <= 0.0):
            raise NotSPDError("matrix has a nonpositive diagonal entry")
        inv = 1.0 / d
        return lambda r: inv * r
    if kind == "ic":
        L = _ic0_factor(A)
        Lt = L.T.tocsr()

        def apply(r):
            y = spla.spsolve_triangular(L, r, lower=True)
            return spla.spsolve_triangular(Lt, y, lower=False)

        return apply
    if kind == "none":
        return lambda r: r
    raise ValueError(f"unknown preconditioner {kind!r}")


def pcg_solve(
    system: SparseSystem,
    tol: float = 1e-10,
    max_iter: int | None = None,
    preconditioner: str = "jacobi",
) -> tuple[np.ndarray, SolveStats]:
    """Preconditioned conjugate gradients from the zero initial guess.

    Stops when the relative residual ||Ax-b||/||b|| drops below ``tol``
    (verified against the recomputed true residual); returns the best
    iterate with ``converged=False`` if the iteration cap is hit.  Raises
    NotSPDError when a nonpositive-curvature direction is found.
    """
    if not (0.0 < tol < 1.0):
        raise ValueError(f"tol must be in (0, 1), got {tol}")
    A, b = system.matrix, system.rhs
    dim = A.shape[0]
    if max_iter is None:
        max_iter = max(1, 20 * int(round(math.sqrt(dim))))
    if max_iter < 1:
        raise ValueError(f"max_iter must be >= 1, got {max_iter}")
    apply_m = _make_preconditioner(A, preconditioner)

    nb = float(np.linalg.norm(b))
    if nb == 0.0:
        return np.zeros(dim), SolveStats(0, 0.0, preconditioner, True)

    x = np.zeros(dim)
    r = b.copy()
    best_x, best_res = x.copy(), 1.0
    k = 0
    rz_old = 0.0
    p = None
    fresh = True
    while k < max_iter:
        k += 1
        zv = apply_m(r)
        rz = float(r @ zv)
        if fresh:
            p = zv.copy()
            fresh = False
        else:
            p = zv + (rz / rz_old) * p
        rz_old = rz
        Ap = A @ p
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            raise NotSPDError(
                f"nonpositive curvature <p, Ap> = {pAp:.3e} at iteration {k}"
            )
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        res = float(np.linalg.norm(r)) / nb
        if res < best_res:
            best_res = res
            best_x = x.copy()
        if res <= tol:
            # guard against recurrence drift before declaring victory
            true_r = b - A @ x
            true_res = float(np.linalg.norm(true_r)) / nb
            if true_res <= tol:
                return x, SolveStats(k, true_res, preconditioner, True)
            r = true_r
            fresh = True

    true_res = float(np.linalg.norm(b - A @ best_x)) / nb
    return best_x, SolveStats(k, true_res, preconditioner, true_res <= tol)


def boundary_net_flux(
    coeffs: RobinCoefficients, u: ScalarField, flux_rhs: BoundaryValues | None = None
) -> float:
    """Face quadrature of the boundary flux sum (c + flux_rhs - b u) ds.

    Vanishes (to solver tolerance) for any discrete Robin solution: total
    current in equals current out.  Uses the same face decomposition as the
    assembly, so the identity is exact up to the linear-solver residual.
    """
    grid = u.grid
    from .fields import boundary_trace

    tr = boundary_trace(u).values
    node_f, val_f, w_f = boundary_faces(grid)
    c = coeffs.c.values
    bb = coeffs.b.values
    f = flux_rhs.values if flux_rhs is not None else np.zeros_like(c)
    return float(np.sum(w_f * (c[val_f] + f[val_f] - bb[val_f] * tr[node_f])))


def quadratic_energy(system: SparseSystem, x: np.ndarray) -> float:
    """Energy 0.5 x'Ax - rhs'x whose minimizer solves the system."""
    return float(0.5 * x @ (system.matrix @ x) - system.rhs @ x)
