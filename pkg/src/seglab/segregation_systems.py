"""Penalised three-component segregation systems and their limits.

System A::

    Lap u_i = (1/eps) u1 u2 u3,                 i = 1, 2, 3

System B (Euler-Lagrange equations of ``E_eps``)::

    Lap u_i = (u_i/eps) prod_{j != i} u_j^2

    E_eps(u) = sum_i int |grad u_i|^2 + (1/eps) int (u1 u2 u3)^2

Both are solved on the interior nodes of a grid with Dirichlet data from a
:class:`BoundarySpec`, along a geometric continuation in ``eps``.

Solvers
-------
``method="newton"`` (default)
    System A: all three equations share one right-hand side, so the discrete
    differences ``u_i - u_j`` are discrete harmonic and equal ``h_i - h_j``.
    Writing ``u2 = v - h12`` and ``u3 = v - h13`` leaves a scalar problem
    ``Lap v = g(v)/eps`` with ``g`` increasing and convex on the admissible
    set. Newton started from the supersolution ``h1`` decreases monotonically.

    System B: Newton on the full 3N system with an energy line search and
    projection onto ``u >= 0``. Where the Hessian is indefinite the step
    uses a Levenberg shift ``H + sigma I`` with the smallest workable
    ``sigma``, then a node-wise PSD-projected Hessian as a last resort.
    Negative curvature is detected inside preconditioned CG. One Gauss-Seidel sweep of
    exact screened solves finishes the last stage, which enforces
    ``0 <= u_i <= h_i``.
``method="picard"``
    Outer Gauss-Seidel over the components, each a linear screened solve with
    lagged coefficient ``c_i``. Simple and positivity preserving, but the
    iteration count grows quickly as ``eps`` shrinks.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .elliptic import (
    HarmonicTriple,
    LinearSolveConfig,
    discrete_laplacian,
    harmonic_extend,
    laplacian,
    laplacian_diagonal,
    screened_solve,
    solve_interior,
)
from .errors import ConvergenceError
from .grid import BoundarySpec, Grid, ScalarField, make_grid, sample_boundary

__all__ = [
    "EnergyReport",
    "EpsSolveConfig",
    "StageRecord",
    "TripleField",
    "energy",
    "limit_a_explicit",
    "line_example",
    "solve_system_a",
    "solve_system_b",
]

log = logging.getLogger(__name__)

SYSTEMS = ("A", "B", "LimitA")

# 3N above which System B switches from sparse LU to AMG-preconditioned CG.
B_DIRECT_LIMIT = 40_000
# Range of the Levenberg shift added to the System B Hessian (same units as -Lap_h)
SIGMA_MIN, SIGMA_MAX = 1e-2, 1e6


@dataclass(frozen=True)
class EpsSolveConfig:
    """Continuation and outer-iteration settings.

    The schedule starts at ``eps_start`` and multiplies by ``ratio`` until
    ``epsilon`` is reached; the last stage is always exactly ``epsilon``.
    """

    epsilon: float = 1e-10
    eps_start: float = 1e-2
    ratio: float = 0.1
    outer_tol: float = 1e-10
    outer_max: int = 200
    inner: LinearSolveConfig = field(default_factory=LinearSolveConfig)
    method: str = "newton"

    def __post_init__(self) -> None:
        if not self.epsilon > 0 or not self.eps_start > 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.ratio < 1:
            raise ValueError("ratio must lie in (0, 1)")
        if not self.outer_tol > 0 or self.outer_max < 1:
            raise ValueError("outer_tol must be positive and outer_max >= 1")
        if self.method not in ("newton", "picard"):
            raise ValueError("method must be 'newton' or 'picard'")

    def schedule(self) -> list[float]:
        """Strictly decreasing stage values ending at ``epsilon``."""
        out = []
        e = self.eps_start
        while e > self.epsilon * (1 + 1e-9):
            out.append(float(f"{e:.12g}"))
            e *= self.ratio
        out.append(self.epsilon)
        return out


@dataclass(frozen=True)
class StageRecord:
    """Outcome of one continuation stage.

    ``energy_trace`` lists ``E_eps`` after each outer iteration (System B
    only). ``residual`` is the diagonally scaled residual of the stage's
    equations at the returned iterate.
    """

    epsilon: float
    iters: int
    final_update: float
    penalty: float
    residual: float
    energy_trace: tuple[float, ...] = ()


@dataclass(frozen=True, eq=False)
class TripleField:
    """Ordered solution triple with solver metadata."""

    u1: ScalarField
    u2: ScalarField
    u3: ScalarField
    epsilon: float
    system: str
    iters: int = 0
    final_update: float = 0.0
    stages: tuple[StageRecord, ...] = ()

    def __post_init__(self) -> None:
        if self.system not in SYSTEMS:
            raise ValueError(f"system must be one of {SYSTEMS}")
        if not (self.u1.grid == self.u2.grid == self.u3.grid):
            raise ValueError("components live on different grids")

    @property
    def grid(self) -> Grid:
        return self.u1.grid

    @property
    def components(self) -> tuple[ScalarField, ScalarField, ScalarField]:
        return (self.u1, self.u2, self.u3)

    def stack(self) -> np.ndarray:
        """Array of shape ``(3,) + grid.shape``."""
        return np.stack([c.values for c in self.components])

    @classmethod
    def from_array(cls, grid: Grid, arr: np.ndarray, epsilon: float, system: str, **kw) -> TripleField:
        return cls(*(ScalarField(grid, np.array(a, dtype=float)) for a in arr), epsilon=epsilon, system=system, **kw)


@dataclass(frozen=True)
class EnergyReport:
    """Discrete energies of a triple; ``penalty = product_L2 / eps``."""

    dirichlet: float
    penalty: float
    total: float
    product_L2: float


# --- energy --------------------------------------------------------------------


def _edge_weights(grid: Grid) -> list[tuple[np.ndarray, int, float]]:
    """(weights, axis, h) for the edge-difference Dirichlet form."""
    if grid.dim == 1:
        (h,) = grid.spacing
        return [(np.full(grid.n[0] - 1, h), 0, h)]
    hx, hy = grid.spacing
    nx, ny = grid.n
    wy = np.full(ny, hy)
    wy[[0, -1]] *= 0.5
    wx = np.full(nx, hx)
    wx[[0, -1]] *= 0.5
    # x-edges: shape (ny, nx-1), length hx, transverse trapezoid weight in y
    ex = np.outer(wy, np.full(nx - 1, hx))
    ey = np.outer(np.full(ny - 1, hy), wx)
    return [(ex, 1, hx), (ey, 0, hy)]


def dirichlet_energy(values: np.ndarray, grid: Grid) -> float:
    """``int |grad u|^2`` from edge differences with trapezoid transverse weights.

    Exact for linear fields and consistent with the 5-point Laplacian: the
    gradient with respect to an interior node value is ``-2 h^d Lap_h u``.
    """
    total = 0.0
    for w, axis, h in _edge_weights(grid):
        d = np.diff(values, axis=axis) / h
        total += float(np.sum(w * d * d))
    return total


def energy(t: TripleField, epsilon: float) -> EnergyReport:
    """Discrete ``E_eps`` of a triple.

    Raises
    ------
    ValueError
        If the components live on different grids or ``epsilon <= 0``.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    grid = t.grid
    dirichlet = sum(dirichlet_energy(c.values, grid) for c in t.components)
    prod = t.u1.values * t.u2.values * t.u3.values
    product_L2 = grid.integrate(prod * prod)
    penalty = product_L2 / epsilon
    return EnergyReport(dirichlet, penalty, dirichlet + penalty, product_L2)


def _penalty(grid: Grid, arr: np.ndarray) -> float:
    p = arr[0] * arr[1] * arr[2]
    return grid.integrate(p * p)


# --- helpers ---------------------------------------------------------------------


def _assemble(grid: Grid, inner: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Full arrays from interior values (k, N) and boundary values (k, nb)."""
    out = np.empty((len(inner), grid.size))
    out[:, grid.interior_index] = inner
    out[:, grid.boundary_index] = phi
    return out.reshape((len(inner),) + grid.shape)


def _interior(grid: Grid, arr: np.ndarray) -> np.ndarray:
    return arr.reshape(len(arr), -1)[:, grid.interior_index]


def _harmonics(phi: np.ndarray, grid: Grid, cfg: LinearSolveConfig) -> np.ndarray:
    return np.stack([harmonic_extend(phi[i], grid, cfg).values for i in range(3)])


def _scaled_residual(grid: Grid, arr: np.ndarray, rhs: np.ndarray, dfdu: np.ndarray) -> float:
    """max over i, interior nodes of ``|Lap u_i - rhs_i| / (2d/h^2 + |drhs_i/du_i|)``."""
    d0 = laplacian_diagonal(grid)
    inner = grid.interior_mask
    worst = 0.0
    for i in range(3):
        r = discrete_laplacian(arr[i], grid) - rhs[i]
        worst = max(worst, float(np.max(np.abs(r[inner]) / (d0 + np.abs(dfdu[i][inner])), initial=0.0)))
    return worst


def _residual_a(grid: Grid, arr: np.ndarray, eps: float) -> float:
    p = arr[0] * arr[1] * arr[2]
    dfdu = [arr[1] * arr[2] / eps, arr[0] * arr[2] / eps, arr[0] * arr[1] / eps]
    return _scaled_residual(grid, arr, [p / eps] * 3, dfdu)


def _residual_b(grid: Grid, arr: np.ndarray, eps: float) -> float:
    c = _coeff_b(arr, eps)
    return _scaled_residual(grid, arr, c * arr, c)


def _coeff_b(arr: np.ndarray, eps: float) -> np.ndarray:
    u1, u2, u3 = arr
    return np.stack([(u2 * u3) ** 2, (u1 * u3) ** 2, (u1 * u2) ** 2]) / eps


def _prepare(spec: BoundarySpec, grid: Grid, cfg: EpsSolveConfig):
    phi = sample_boundary(spec, grid)
    hs = _harmonics(phi, grid, cfg.inner)
    return phi, hs


def _finish(grid, arr, phi, eps, system, stages, iters, final_update) -> TripleField:
    arr = arr.copy()
    flat = arr.reshape(3, -1)
    flat[:, grid.boundary_index] = phi
    return TripleField.from_array(
        grid, arr, eps, system, iters=iters, final_update=final_update, stages=tuple(stages)
    )


# --- System A ------------------------------------------------------------------------


def solve_system_a(spec: BoundarySpec, grid: Grid, cfg: EpsSolveConfig | None = None) -> TripleField:
    """Solve System A along the continuation schedule.

    Returns the triple at ``cfg.epsilon`` with boundary nodes equal to the
    sampled traces. Each stage is recorded in ``TripleField.stages``.

    Raises
    ------
    ConvergenceError
        If a stage exceeds ``cfg.outer_max`` iterations; ``stage`` names it.
    """
    cfg = cfg or EpsSolveConfig()
    phi, hs = _prepare(spec, grid, cfg)
    if cfg.method == "picard":
        return _picard(grid, phi, hs, cfg, "A")
    L, B = laplacian(grid)
    b1 = B @ phi[0]
    hi = _interior(grid, hs)
    h12, h13 = hi[0] - hi[1], hi[0] - hi[2]
    v = hi[0].copy()
    stages, total = [], 0
    for eps in cfg.schedule():
        upd = np.inf
        for it in range(1, cfg.outer_max + 1):
            a, b = v - h12, v - h13
            g = v * a * b
            gp = np.maximum(a * b + v * b + v * a, 0.0)
            F = L @ v + b1 - g / eps
            d = solve_interior(grid, gp / eps, -F, cfg.inner)
            v = v + d
            upd = float(np.max(np.abs(d), initial=0.0))
            if upd < cfg.outer_tol:
                break
        else:
            raise ConvergenceError(
                f"System A stage eps={eps:g}: update {upd:.3g} after {cfg.outer_max} Newton steps",
                residual=upd,
                stage=eps,
            )
        total += it
        arr = _assemble(grid, np.stack([v, v - h12, v - h13]), phi)
        stages.append(StageRecord(eps, it, upd, _penalty(grid, arr), _residual_a(grid, arr, eps)))
        log.info("System A eps=%g: %d Newton steps, update %.2e", eps, it, upd)
    return _finish(grid, arr, phi, cfg.epsilon, "A", stages, total, stages[-1].final_update)


# --- System B ------------------------------------------------------------------------


@lru_cache(maxsize=4)
def _block_structure(grid: Grid):
    L, _ = laplacian(grid)
    N = L.shape[0]
    Lk = sp.csr_matrix(sp.kron(-L, sp.identity(3)))
    base = np.arange(N)[:, None, None] * 3
    rows = np.broadcast_to(base + np.arange(3)[None, :, None], (N, 3, 3)).ravel()
    cols = np.broadcast_to(base + np.arange(3)[None, None, :], (N, 3, 3)).ravel()
    return Lk, rows, cols


def _pcg(A, b, M, tol: float, maxiter: int = 400):
    """Preconditioned CG that gives up (returns None) on negative curvature."""
    x = np.zeros_like(b)
    r = b.copy()
    z = M(r)
    p = z.copy()
    rz = r @ z
    bn = np.linalg.norm(b)
    if bn == 0:
        return x
    for _ in range(maxiter):
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0:
            return None
        a = rz / pAp
        x += a * p
        r -= a * Ap
        if np.linalg.norm(r) <= tol * bn:
            return x
        z = M(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x




def _sa_preconditioner(K: sp.csr_matrix, N: int):
    import pyamg

    ml = pyamg.smoothed_aggregation_solver(
        sp.bsr_matrix(K, blocksize=(3, 3)), B=np.kron(np.ones((N, 1)), np.eye(3))
    )
    return ml.aspreconditioner()


class _NewtonB:
    """Projected Newton iteration for System B on node-interleaved interior unknowns.

    ``obj`` is ``E_eps / h^d`` up to a constant that depends only on the
    boundary data; its half-gradient is ``-Lap_h u_i + P g_i / eps``.
    """

    def __init__(self, grid: Grid, phi: np.ndarray, direct: bool):
        L, B = laplacian(grid)
        self.N = L.shape[0]
        self.Lk, self.rows, self.cols = _block_structure(grid)
        self.bk = np.stack([B @ phi[i] for i in range(3)], axis=1).ravel()
        self.direct = direct
        self.sigma = 1.0

    def obj(self, U: np.ndarray, eps: float) -> float:
        Q = U.reshape(self.N, 3)
        p = Q[:, 0] * Q[:, 1] * Q[:, 2]
        return float(U @ (self.Lk @ U) - 2 * self.bk @ U + (p @ p) / eps)

    def _precond(self, K: sp.csr_matrix):
        if self.direct:
            return spla.splu(sp.csc_matrix(K)).solve
        return _sa_preconditioner(K, self.N)

    def _search(self, U, d, G, eps, E0, slack, t_min):
        """Backtracking on the projected ray; ``None`` if no acceptable step."""
        if d is None or not np.all(np.isfinite(d)) or d @ G >= 0:
            return None
        t = 1.0
        while t >= t_min:
            Un = np.maximum(U + t * d, 0.0)
            if self.obj(Un, eps) <= E0 + slack:
                return Un
            t *= 0.5
        return None

    def step(self, U: np.ndarray, eps: float) -> tuple[np.ndarray, str]:
        N = self.N
        Q = U.reshape(N, 3)
        P = Q.prod(axis=1)
        g = np.stack([Q[:, 1] * Q[:, 2], Q[:, 0] * Q[:, 2], Q[:, 0] * Q[:, 1]], axis=1)
        G = self.Lk @ U - self.bk + (P[:, None] * g).ravel() / eps
        Hn = g[:, :, None] * g[:, None, :]
        for i in range(3):
            for j in range(3):
                if i != j:
                    Hn[:, i, j] += P * Q[:, 3 - i - j]
        w, V = np.linalg.eigh(Hn)
        Hp = np.einsum("nij,nj,nkj->nik", V, np.maximum(w, 0.0), V)
        shape = (3 * N, 3 * N)
        Kf = sp.csr_matrix(self.Lk + sp.csr_matrix((Hn.ravel() / eps, (self.rows, self.cols)), shape=shape))
        Kp = sp.csr_matrix(self.Lk + sp.csr_matrix((Hp.ravel() / eps, (self.rows, self.cols)), shape=shape))
        M = self._precond(Kp)
        E0 = self.obj(U, eps)
        slack = 1e-13 * max(abs(E0), 1.0)

        Un = self._search(U, _pcg(Kf, -G, M, 1e-10), G, eps, E0, slack, 1 / 16)
        if Un is not None:
            return Un, "full"
        # Levenberg shift: near saddles the nodal clipping below is far too strong
        eye = sp.identity(3 * N, format="csr")
        s = max(self.sigma / 10, SIGMA_MIN)
        while s <= SIGMA_MAX:
            Un = self._search(U, _pcg(Kf + s * eye, -G, M, 1e-10), G, eps, E0, slack, 1 / 16)
            if Un is not None:
                self.sigma = s
                return Un, "shifted"
            s *= 4
        d = _pcg(Kp, -G, M, 1e-10)
        if d is None:
            d = spla.splu(sp.csc_matrix(Kp)).solve(-G)
        t = 1.0
        while True:
            Un = np.maximum(U + t * d, 0.0)
            En = self.obj(Un, eps)
            if En <= E0 + slack or t < 1e-8:
                break
            t *= 0.5
        if En > E0 + slack:
            return U, "stalled"
        if t == 1.0:
            # projected steps are short near saddles; expand while it pays off
            while t < 1e6:
                Ut = np.maximum(U + 2 * t * d, 0.0)
                Et = self.obj(Ut, eps)
                if Et >= En:
                    break
                Un, En, t = Ut, Et, 2 * t
        return Un, "projected"


def _gauss_seidel_b(grid: Grid, arr: np.ndarray, phi: np.ndarray, eps: float, cfg: LinearSolveConfig) -> float:
    """One sweep of exact block minimisations; updates ``arr`` in place."""
    upd = 0.0
    for i in range(3):
        j, k = [m for m in range(3) if m != i]
        c = (arr[j] * arr[k]) ** 2 / eps
        new = screened_solve(c, 0.0, phi[i], grid, cfg).values
        upd = max(upd, float(np.max(np.abs(new - arr[i]))))
        arr[i] = new
    return upd


def solve_system_b(spec: BoundarySpec, grid: Grid, cfg: EpsSolveConfig | None = None) -> TripleField:
    """Minimise ``E_eps`` (solve System B) along the continuation schedule.

    The energy after every outer iteration is kept in the stage records and
    is non-increasing within each stage.

    Raises
    ------
    ConvergenceError
        If a stage exceeds ``cfg.outer_max`` iterations or the line search
        stalls; ``stage`` names the stage.
    """
    cfg = cfg or EpsSolveConfig()
    phi, hs = _prepare(spec, grid, cfg)
    if cfg.method == "picard":
        return _picard(grid, phi, hs, cfg, "B")
    N = grid.interior_index.size
    nb = _NewtonB(grid, phi, direct=3 * N <= B_DIRECT_LIMIT)
    U = _interior(grid, hs).T.ravel().copy()
    stages, total = [], 0
    for eps in cfg.schedule():
        trace = []
        upd = np.inf
        for it in range(1, cfg.outer_max + 1):
            Un, kind = nb.step(U, eps)
            upd = float(np.max(np.abs(Un - U), initial=0.0))
            U = Un
            arr = _assemble(grid, U.reshape(N, 3).T, phi)
            trace.append(energy(TripleField.from_array(grid, arr, eps, "B"), eps).total)
            if kind == "stalled" and upd >= cfg.outer_tol:
                raise ConvergenceError(f"System B stage eps={eps:g}: line search stalled", residual=upd, stage=eps)
            if upd < cfg.outer_tol:
                break
        else:
            raise ConvergenceError(
                f"System B stage eps={eps:g}: update {upd:.3g} after {cfg.outer_max} Newton steps",
                residual=upd,
                stage=eps,
            )
        total += it
        stages.append(StageRecord(eps, it, upd, _penalty(grid, arr), _residual_b(grid, arr, eps), tuple(trace)))
        log.info("System B eps=%g: %d Newton steps, update %.2e", eps, it, upd)
    polish = _gauss_seidel_b(grid, arr, phi, cfg.epsilon, cfg.inner)
    last = stages[-1]
    e_final = energy(TripleField.from_array(grid, arr, cfg.epsilon, "B"), cfg.epsilon).total
    stages[-1] = StageRecord(
        last.epsilon,
        last.iters + 1,
        polish,
        _penalty(grid, arr),
        _residual_b(grid, arr, cfg.epsilon),
        last.energy_trace + (e_final,),
    )
    return _finish(grid, arr, phi, cfg.epsilon, "B", stages, total + 1, polish)


# --- outer Gauss-Seidel (Picard) ---------------------------------------------------------


def _picard(grid: Grid, phi: np.ndarray, hs: np.ndarray, cfg: EpsSolveConfig, system: str) -> TripleField:
    arr = hs.copy()
    stages, total = [], 0
    for eps in cfg.schedule():
        trace = []
        upd = np.inf
        for it in range(1, cfg.outer_max + 1):
            if system == "B":
                upd = _gauss_seidel_b(grid, arr, phi, eps, cfg.inner)
                trace.append(energy(TripleField.from_array(grid, arr, eps, "B"), eps).total)
            else:
                upd = 0.0
                for i in range(3):
                    j, k = [m for m in range(3) if m != i]
                    c = arr[j] * arr[k] / eps
                    new = screened_solve(c, 0.0, phi[i], grid, cfg.inner).values
                    upd = max(upd, float(np.max(np.abs(new - arr[i]))))
                    arr[i] = new
            if upd < cfg.outer_tol:
                break
        else:
            raise ConvergenceError(
                f"System {system} stage eps={eps:g}: update {upd:.3g} after {cfg.outer_max} sweeps",
                residual=upd,
                stage=eps,
            )
        total += it
        res = _residual_b(grid, arr, eps) if system == "B" else _residual_a(grid, arr, eps)
        stages.append(StageRecord(eps, it, upd, _penalty(grid, arr), res, tuple(trace)))
    return _finish(grid, arr, phi, cfg.epsilon, system, stages, total, stages[-1].final_update)


# --- limits ------------------------------------------------------------------------------


def limit_a_explicit(h: HarmonicTriple) -> TripleField:
    """The eps -> 0 limit of System A built from the harmonic differences.

    ``u1 = max(h12, h13, 0)``, ``u2 = u1 - h12``, ``u3 = u1 - h13``. The
    differences hold up to one rounding of the subtraction; ``u2 - u3``
    matches ``h23`` up to the cocycle residual of ``h`` as well.
    """
    h12, h13 = h.h12.values, h.h13.values
    u1 = np.maximum(np.maximum(h12, h13), 0.0)
    u2 = u1 - h12
    u3 = u1 - h13
    # max(h12, 0) - h12 is exactly >= 0, likewise for h13
    return TripleField.from_array(h.grid, np.stack([u1, u2, u3]), 0.0, "LimitA")


def line_example(n: int = 1001) -> tuple[TripleField, TripleField]:
    """Closed-form limits of the 1D example on [0, 1].

    Data ``phi1 = (1, 0)``, ``phi2 = (0, 1)``, ``phi3 = (1, 1)`` at ``(x=0, x=1)``.
    System A: ``((1-2x)+, (2x-1)+, max(1-x, x))``; System B: ``((1-2x)+, (2x-1)+, 1)``.
    """
    grid = make_grid(1, [(0.0, 1.0)], n)
    (x,) = grid.coords
    u1 = np.maximum(1 - 2 * x, 0.0)
    u2 = np.maximum(2 * x - 1, 0.0)
    a = TripleField.from_array(grid, np.stack([u1, u2, np.maximum(1 - x, x)]), 0.0, "LimitA")
    b = TripleField.from_array(grid, np.stack([u1, u2, np.ones_like(x)]), 0.0, "B")
    return a, b
