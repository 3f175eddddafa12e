"""Linear elliptic solves on structured grids.

Two problems are covered, both with Dirichlet data on the boundary nodes:

* harmonic extension, ``Lap_h u = 0``;
* the screened problem ``Lap_h u - c u = f`` with ``c >= 0``.

``Lap_h`` is the 3-point (1D) or 5-point (2D) difference Laplacian. With
``c >= 0`` the interior system matrix is a nonsingular M-matrix, so
nonnegative data and ``f <= 0`` give nonnegative solutions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceError
from .grid import BoundarySpec, Grid, ScalarField, embed_boundary, sample_boundary

__all__ = [
    "HarmonicTriple",
    "LinearSolveConfig",
    "discrete_laplacian",
    "harmonic_differences",
    "harmonic_extend",
    "harmonic_extensions",
    "laplacian",
    "scaled_residual",
    "screened_solve",
]

log = logging.getLogger(__name__)

METHODS = ("auto", "direct", "amg", "sor")

# Interior unknowns above which "auto" switches from sparse LU to AMG-CG.
AUTO_DIRECT_LIMIT = 60_000


@dataclass(frozen=True)
class LinearSolveConfig:
    """Settings of one linear solve.

    ``tol`` bounds the diagonally scaled residual (see :func:`scaled_residual`).
    ``omega`` is the SOR factor; ``None`` picks ``2 / (1 + sin(pi h))``.
    """

    tol: float = 1e-10
    max_iter: int = 50_000
    omega: float | None = None
    method: str = "auto"

    def __post_init__(self) -> None:
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.omega is not None and not 0 < self.omega < 2:
            raise ValueError("omega must lie in (0, 2)")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")


@lru_cache(maxsize=16)
def laplacian(grid: Grid) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Interior discrete Laplacian and its coupling to the boundary nodes.

    Returns ``(L, B)`` such that, for a grid function ``u`` with interior part
    ``ui`` and boundary part ``ub``, ``Lap_h u = L @ ui + B @ ub`` at the
    interior nodes (both orderings follow ``grid.interior_index`` and
    ``grid.boundary_index``). Treat the matrices as read-only.
    """
    mats = []
    for h, m in zip(grid.spacing, grid.n):
        mats.append(sp.diags([np.ones(m - 1), -2 * np.ones(m), np.ones(m - 1)], [-1, 0, 1]) / h**2)
    if grid.dim == 1:
        full = mats[0]
    else:
        dx, dy = mats
        full = sp.kron(sp.identity(grid.n[1]), dx) + sp.kron(dy, sp.identity(grid.n[0]))
    full = sp.csr_matrix(full)
    rows = full[grid.interior_index]
    L = sp.csr_matrix(rows[:, grid.interior_index])
    B = sp.csr_matrix(rows[:, grid.boundary_index])
    return L, B


def laplacian_diagonal(grid: Grid) -> float:
    return float(sum(2.0 / h**2 for h in grid.spacing))


def discrete_laplacian(values: np.ndarray, grid: Grid) -> np.ndarray:
    """``Lap_h`` applied at the interior nodes; boundary entries are zero."""
    u = np.asarray(values, dtype=float)
    out = np.zeros_like(u)
    if grid.dim == 1:
        (h,) = grid.spacing
        out[1:-1] = (u[2:] - 2 * u[1:-1] + u[:-2]) / h**2
        return out
    hx, hy = grid.spacing
    out[1:-1, 1:-1] = (u[1:-1, 2:] - 2 * u[1:-1, 1:-1] + u[1:-1, :-2]) / hx**2 + (
        u[2:, 1:-1] - 2 * u[1:-1, 1:-1] + u[:-2, 1:-1]
    ) / hy**2
    return out


def scaled_residual(grid: Grid, u: np.ndarray, c: np.ndarray, f: np.ndarray, bvals: np.ndarray) -> float:
    """Residual of ``Lap_h u - c u = f`` in units of ``u``.

    Each interior residual is divided by its diagonal ``2d/h^2 + c``; the
    maximum is then taken relative to ``max|data| + max|f| h^2 / 2d``.
    """
    lap = discrete_laplacian(u, grid)
    inner = grid.interior_mask
    d0 = laplacian_diagonal(grid)
    r = (lap - c * u - f)[inner] / (d0 + c[inner])
    scale = (np.max(np.abs(bvals)) if bvals.size else 0.0) + np.max(np.abs(f[inner]), initial=0.0) / d0
    if scale == 0:
        scale = 1.0
    return float(np.max(np.abs(r), initial=0.0) / scale)


@lru_cache(maxsize=8)
def _laplace_lu(grid: Grid):
    L, _ = laplacian(grid)
    return spla.splu(sp.csc_matrix(L), permc_spec="MMD_AT_PLUS_A")


def _as_array(v, grid: Grid, name: str) -> np.ndarray:
    if isinstance(v, ScalarField):
        if v.grid != grid:
            raise ValueError(f"{name}: grid mismatch")
        return v.values
    arr = np.asarray(v, dtype=float)
    if arr.ndim == 0:
        return np.full(grid.shape, float(arr))
    if arr.shape != grid.shape:
        raise ValueError(f"{name}: shape {arr.shape} != grid shape {grid.shape}")
    return arr


def boundary_blend(grid: Grid, bvals: np.ndarray) -> np.ndarray:
    """Transfinite (linear/bilinear Coons) blend of the boundary data."""
    g = embed_boundary(grid, bvals)
    if grid.dim == 1:
        s = np.linspace(0.0, 1.0, grid.n[0])
        return (1 - s) * g[0] + s * g[-1]
    s = np.linspace(0.0, 1.0, grid.n[0])[None, :]
    t = np.linspace(0.0, 1.0, grid.n[1])[:, None]
    left, right = g[:, :1], g[:, -1:]
    bottom, top = g[:1, :], g[-1:, :]
    u = (1 - s) * left + s * right + (1 - t) * bottom + t * top
    u -= (1 - s) * (1 - t) * g[0, 0] + s * (1 - t) * g[0, -1] + (1 - s) * t * g[-1, 0] + s * t * g[-1, -1]
    u[grid.boundary_mask] = g[grid.boundary_mask]
    return u


def _sor(grid: Grid, c: np.ndarray, f: np.ndarray, bvals: np.ndarray, cfg: LinearSolveConfig, x0) -> np.ndarray:
    u = boundary_blend(grid, bvals) if x0 is None else np.array(x0, dtype=float)
    u.ravel()[grid.boundary_index] = bvals
    omega = cfg.omega
    if omega is None:
        omega = 2.0 / (1.0 + np.sin(np.pi / (max(grid.n) - 1)))
    d0 = laplacian_diagonal(grid)
    diag = d0 + c
    # strongly screened nodes relax toward plain Gauss-Seidel
    w = 1.0 + (omega - 1.0) * d0 / diag
    idx = np.indices(grid.shape).sum(axis=0)
    colours = [(idx % 2 == k) & grid.interior_mask for k in (0, 1)]
    inner = (slice(1, -1),) * grid.dim
    res = np.inf
    for sweep in range(1, cfg.max_iter + 1):
        for mask in colours:
            if grid.dim == 1:
                (h,) = grid.spacing
                nb = np.zeros_like(u)
                nb[1:-1] = (u[2:] + u[:-2]) / h**2
            else:
                hx, hy = grid.spacing
                nb = np.zeros_like(u)
                nb[inner] = (u[1:-1, 2:] + u[1:-1, :-2]) / hx**2 + (u[2:, 1:-1] + u[:-2, 1:-1]) / hy**2
            gs = (nb - f) / diag
            u[mask] = (1 - w[mask]) * u[mask] + w[mask] * gs[mask]
        if sweep % 10 == 0:
            res = scaled_residual(grid, u, c, f, bvals)
            if res <= cfg.tol:
                return u
    raise ConvergenceError(f"SOR did not converge in {cfg.max_iter} sweeps", residual=res)


def solve_interior(grid: Grid, c: np.ndarray, rhs: np.ndarray, cfg: LinearSolveConfig, x0=None) -> np.ndarray:
    """Solve ``(L - diag(c)) x = rhs`` on the interior unknowns (sparse methods only)."""
    L, _ = laplacian(grid)
    method = cfg.method
    if method in ("auto", "sor"):
        method = "direct" if L.shape[0] <= AUTO_DIRECT_LIMIT or grid.dim == 1 else "amg"
    if method == "direct":
        if not np.any(c):
            return _laplace_lu(grid).solve(rhs)
        A = sp.csc_matrix(L - sp.diags(c))
        return spla.splu(A, permc_spec="MMD_AT_PLUS_A").solve(rhs)
    import pyamg

    A = sp.csr_matrix(sp.diags(c) - L)
    ml = pyamg.ruge_stuben_solver(A)
    x = ml.solve(-rhs, x0=x0, tol=min(1e-12, cfg.tol * 1e-2), maxiter=500, accel="cg")
    return x


def _solve(grid, c, f, bvals, cfg: LinearSolveConfig, x0=None) -> np.ndarray:
    if np.any(c < 0):
        raise ValueError("screening coefficient must be nonnegative")
    if not (np.all(np.isfinite(c)) and np.all(np.isfinite(f)) and np.all(np.isfinite(bvals))):
        raise ValueError("non-finite coefficient, source or boundary data")
    if cfg.method == "sor":
        return _sor(grid, c, f, bvals, cfg, x0)
    _, B = laplacian(grid)
    inner = grid.interior_index
    rhs = f.ravel()[inner] - B @ bvals
    xi = None if x0 is None else np.asarray(x0, dtype=float).ravel()[inner]
    ui = solve_interior(grid, c.ravel()[inner], rhs, cfg, xi)
    u = np.empty(grid.size)
    u[inner] = ui
    u[grid.boundary_index] = bvals
    u = u.reshape(grid.shape)
    res = scaled_residual(grid, u, c, f, bvals)
    if res > cfg.tol:
        if cfg.method != "direct":
            log.debug("iterative solve residual %.3g above tol, retrying with sparse LU", res)
            return _solve(grid, c, f, bvals, LinearSolveConfig(cfg.tol, cfg.max_iter, cfg.omega, "direct"))
        raise ConvergenceError(f"linear solve residual {res:.3g} exceeds tol {cfg.tol:.3g}", residual=res)
    return u


def harmonic_extend(bvals: np.ndarray, grid: Grid, cfg: LinearSolveConfig | None = None) -> ScalarField:
    """Discrete harmonic function with the given boundary node values."""
    cfg = cfg or LinearSolveConfig()
    bvals = np.asarray(bvals, dtype=float)
    if bvals.shape != grid.boundary_index.shape:
        raise ValueError("one boundary value per boundary node expected")
    zero = np.zeros(grid.shape)
    return ScalarField(grid, _solve(grid, zero, zero, bvals, cfg))


def screened_solve(c, f, bvals: np.ndarray, grid: Grid, cfg: LinearSolveConfig | None = None, x0=None) -> ScalarField:
    """Solve ``Lap_h u - c u = f`` with Dirichlet values ``bvals``.

    Parameters
    ----------
    c, f : ScalarField, array of ``grid.shape`` or scalar
        Screening coefficient (must be >= 0) and source. Boundary entries are
        ignored.
    bvals : ndarray
        Values on the boundary nodes, ordered like ``grid.boundary_index``.
    x0 : array, optional
        Initial guess for the iterative methods.

    Raises
    ------
    ValueError
        For negative ``c`` or non-finite input.
    ConvergenceError
        If the scaled residual cannot be brought below ``cfg.tol``.
    """
    cfg = cfg or LinearSolveConfig()
    c = _as_array(c, grid, "c")
    f = _as_array(f, grid, "f")
    bvals = np.asarray(bvals, dtype=float)
    if bvals.shape != grid.boundary_index.shape:
        raise ValueError("one boundary value per boundary node expected")
    return ScalarField(grid, _solve(grid, c, f, bvals, cfg, x0))


@dataclass(frozen=True, eq=False)
class HarmonicTriple:
    """Harmonic extensions of the pairwise trace differences."""

    h12: ScalarField
    h13: ScalarField
    h23: ScalarField

    @property
    def grid(self) -> Grid:
        return self.h12.grid

    def cocycle_residual(self) -> float:
        """``max |h13 - (h12 + h23)|`` over all nodes."""
        return float(np.max(np.abs(self.h13.values - (self.h12.values + self.h23.values))))

    def pair(self, i: int, j: int) -> np.ndarray:
        """Values of ``h_ij`` for any ordered pair of distinct indices in 1..3."""
        table = {(1, 2): self.h12, (1, 3): self.h13, (2, 3): self.h23}
        if (i, j) in table:
            return table[(i, j)].values
        if (j, i) in table:
            return -table[(j, i)].values
        raise KeyError((i, j))


def harmonic_extensions(spec: BoundarySpec, grid: Grid, cfg: LinearSolveConfig | None = None):
    """The three harmonic extensions ``(h1, h2, h3)`` of the traces."""
    phi = sample_boundary(spec, grid)
    return tuple(harmonic_extend(phi[i], grid, cfg) for i in range(3))


def harmonic_differences(spec: BoundarySpec, grid: Grid, cfg: LinearSolveConfig | None = None) -> HarmonicTriple:
    """Solve for ``h12, h13, h23`` independently from the trace differences."""
    phi = sample_boundary(spec, grid)
    return HarmonicTriple(
        harmonic_extend(phi[0] - phi[1], grid, cfg),
        harmonic_extend(phi[0] - phi[2], grid, cfg),
        harmonic_extend(phi[1] - phi[2], grid, cfg),
    )
