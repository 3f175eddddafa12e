"""Free boundaries of computed triples and their comparison.

An interface point of component ``i`` is the midpoint of a grid edge whose two
end nodes lie on different sides of the threshold, ``u_i > delta`` versus
``u_i <= delta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .elliptic import HarmonicTriple, discrete_laplacian
from .grid import Grid, ScalarField
from .segregation_systems import TripleField

__all__ = [
    "SOURCES",
    "ComparisonMetrics",
    "Diagnostics",
    "InterfaceSet",
    "compare",
    "diagnostics",
    "extract_interfaces",
]

SOURCES = ("SysA", "SysB", "Predicted")


@dataclass(frozen=True, eq=False)
class InterfaceSet:
    """Interface points of one component, sorted by ``(x, y)``."""

    points: np.ndarray
    component: int
    source: str
    active: np.ndarray
    grid: Grid

    def __post_init__(self) -> None:
        if self.component not in (1, 2, 3):
            raise ValueError("component must be 1, 2 or 3")
        pts = np.asarray(self.points, dtype=float).reshape(-1, self.grid.dim)
        for axis, (a, b) in enumerate(self.grid.extents):
            if np.any(pts[:, axis] < a) or np.any(pts[:, axis] > b):
                raise ValueError("interface point outside the domain")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)


def _edge_midpoints(active: np.ndarray, grid: Grid) -> np.ndarray:
    coords = grid.coords
    pts = []
    for axis in range(grid.dim):
        a = [slice(None)] * grid.dim
        b = [slice(None)] * grid.dim
        a[axis] = slice(None, -1)
        b[axis] = slice(1, None)
        a, b = tuple(a), tuple(b)
        mask = active[a] != active[b]
        pts.append(np.stack([0.5 * (c[a][mask] + c[b][mask]) for c in coords], axis=1))
    pts = np.concatenate(pts) if pts else np.empty((0, grid.dim))
    order = np.lexsort(pts.T[::-1]) if len(pts) else np.arange(0)
    return pts[order]


def extract_interfaces(t: TripleField, delta: float, source: str | None = None) -> tuple[InterfaceSet, ...]:
    """Interface set of each component at threshold ``delta``.

    ``source`` defaults from the system tag: ``A`` -> ``SysA``, ``B`` ->
    ``SysB``, ``LimitA`` -> ``Predicted``.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    if source is None:
        source = {"A": "SysA", "B": "SysB", "LimitA": "Predicted"}[t.system]
    out = []
    for i, comp in enumerate(t.components, start=1):
        active = comp.values > delta
        out.append(InterfaceSet(_edge_midpoints(active, t.grid), i, source, active, t.grid))
    return tuple(out)


@dataclass(frozen=True)
class ComparisonMetrics:
    """Distances between two interface sets of the same component.

    Empty against non-empty gives ``inf`` for the point metrics and sets
    ``empty_mismatch``; empty against empty gives zeros.
    """

    hausdorff: float
    mean_nn: float
    area_sym_diff: float
    empty_mismatch: bool = False


def compare(a: InterfaceSet, b: InterfaceSet) -> ComparisonMetrics:
    """Symmetric Hausdorff, mean nearest-neighbour distance and active-set difference.

    ``area_sym_diff`` counts nodes whose activity differs, times the cell area.

    Raises
    ------
    ValueError
        On component or grid mismatch.
    """
    if a.component != b.component:
        raise ValueError(f"component mismatch: {a.component} vs {b.component}")
    if a.grid != b.grid:
        raise ValueError("grid mismatch")
    area = float(np.sum(a.active != b.active)) * a.grid.cell_measure()
    if len(a) == 0 and len(b) == 0:
        return ComparisonMetrics(0.0, 0.0, area)
    if len(a) == 0 or len(b) == 0:
        return ComparisonMetrics(math.inf, math.inf, area, True)
    dab = cKDTree(b.points).query(a.points)[0]
    dba = cKDTree(a.points).query(b.points)[0]
    haus = float(max(dab.max(), dba.max()))
    mean = float((dab.sum() + dba.sum()) / (len(dab) + len(dba)))
    return ComparisonMetrics(haus, mean, area)


@dataclass(frozen=True)
class Diagnostics:
    """Invariant checks of one triple.

    Attributes
    ----------
    min_value : smallest node value over all components.
    max_excess : largest ``u_i - h_i`` (positive means the upper barrier is violated).
    sandwich_violation : ``max(0, -min_value, max_excess)``.
    boundary_error : largest ``|u_i - phi_i|`` on boundary nodes (``nan`` if no data given).
    penalty_integral : ``int (u1 u2 u3)^2``.
    bulk_laplacian : per component, max ``|Lap_h u_i|`` over bulk nodes (the node
        and its stencil neighbours above ``sqrt(eps)``); 0 if there are none.
    bulk_nodes : per component, number of bulk nodes.
    difference_deviation : per pair ``ij``, max ``|(u_i - u_j) - h_ij|`` over nodes
        in the bulk of both ``i`` and ``j``.
    difference_laplacian : per pair, max interior ``|Lap_h (u_i - u_j)|``.
    """

    min_value: float
    max_excess: float
    sandwich_violation: float
    boundary_error: float
    penalty_integral: float
    bulk_laplacian: tuple[float, float, float]
    bulk_nodes: tuple[int, int, int]
    difference_deviation: dict[str, float]
    difference_laplacian: dict[str, float]


def _bulk_mask(values: np.ndarray, grid: Grid, thresh: float) -> np.ndarray:
    above = values > thresh
    mask = grid.interior_mask & above
    inner = (slice(1, -1),) * grid.dim
    ok = np.zeros_like(above)
    sub = above[inner].copy()
    for axis in range(grid.dim):
        for shift in (-1, 1):
            sub &= np.roll(above, shift, axis=axis)[inner]
    ok[inner] = sub
    return mask & ok


def diagnostics(
    t: TripleField,
    h_fields,
    h: HarmonicTriple,
    epsilon: float,
    phi: np.ndarray | None = None,
) -> Diagnostics:
    """Run the invariant checks on a triple.

    Parameters
    ----------
    h_fields : sequence of three ScalarField or arrays
        Harmonic extensions ``h_i`` (upper barriers).
    h : HarmonicTriple
        Harmonic differences.
    epsilon : float
        Penalty parameter; the bulk threshold is ``sqrt(epsilon)``.
    phi : array (3, nb), optional
        Boundary data for the boundary exactness check.
    """
    grid = t.grid
    arr = t.stack()
    hv = np.stack([f.values if isinstance(f, ScalarField) else np.asarray(f) for f in h_fields])
    min_value = float(arr.min())
    max_excess = float((arr - hv).max())
    bnd = float("nan")
    if phi is not None:
        bnd = float(np.max(np.abs(arr.reshape(3, -1)[:, grid.boundary_index] - phi)))
    prod = arr[0] * arr[1] * arr[2]
    thresh = math.sqrt(epsilon)
    bulk = [_bulk_mask(arr[i], grid, thresh) for i in range(3)]
    laps = [discrete_laplacian(arr[i], grid) for i in range(3)]
    bulk_lap = tuple(float(np.max(np.abs(laps[i][bulk[i]]), initial=0.0)) for i in range(3))
    dev, dlap = {}, {}
    inner = grid.interior_mask
    for i, j in ((1, 2), (1, 3), (2, 3)):
        diff = arr[i - 1] - arr[j - 1]
        both = bulk[i - 1] & bulk[j - 1]
        dev[f"{i}{j}"] = float(np.max(np.abs(diff - h.pair(i, j))[both], initial=0.0))
        dlap[f"{i}{j}"] = float(np.max(np.abs(laps[i - 1] - laps[j - 1])[inner], initial=0.0))
    return Diagnostics(
        min_value=min_value,
        max_excess=max_excess,
        sandwich_violation=max(0.0, -min_value, max_excess),
        boundary_error=bnd,
        penalty_integral=grid.integrate(prod * prod),
        bulk_laplacian=bulk_lap,
        bulk_nodes=tuple(int(b.sum()) for b in bulk),
        difference_deviation=dev,
        difference_laplacian=dlap,
    )
