"""Structured node-centred grids, grid functions and Dirichlet trace data.

A grid with ``n`` nodes per axis spans the closed interval, so boundary nodes
carry the Dirichlet data exactly. Two-dimensional arrays are stored with shape
``(ny, nx)``: row ``j`` holds the nodes with ``y = y_j`` and rows are ordered by
increasing ``y``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Mapping, Sequence

import numpy as np

__all__ = [
    "EDGES",
    "BoundaryDataError",
    "BoundarySpec",
    "Grid",
    "ScalarField",
    "boundary_values",
    "make_grid",
    "sample_boundary",
]

# Edge names: low/high side of the x axis, low/high side of the y axis.
EDGES = ("x-", "x+", "y-", "y+")

PRODUCT_TOL = 1e-12

Trace = Callable[[np.ndarray, np.ndarray], np.ndarray]


class BoundaryDataError(ValueError):
    """Boundary data violates nonnegativity or the boundary segregation condition."""


@dataclass(frozen=True)
class Grid:
    """Uniform node-centred grid on an interval or a rectangle.

    ``extents`` holds one ``(a, b)`` pair per axis (x first) and ``n`` the
    node count per axis, boundary nodes included.
    """

    extents: tuple[tuple[float, float], ...]
    n: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.extents) != len(self.n) or len(self.n) not in (1, 2):
            raise ValueError("grid must be 1D or 2D with one extent per axis")
        for (a, b), m in zip(self.extents, self.n):
            if int(m) != m or m < 3:
                raise ValueError(f"need at least 3 nodes per axis, got {m}")
            if not (np.isfinite(a) and np.isfinite(b)) or not b > a:
                raise ValueError(f"degenerate or inverted extent ({a}, {b})")

    @property
    def dim(self) -> int:
        return len(self.n)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple((b - a) / (m - 1) for (a, b), m in zip(self.extents, self.n))

    @property
    def shape(self) -> tuple[int, ...]:
        """Array shape of a grid function, ``(ny, nx)`` in 2D."""
        return tuple(reversed(self.n))

    @property
    def size(self) -> int:
        return int(np.prod(self.n))

    @cached_property
    def axes(self) -> tuple[np.ndarray, ...]:
        return tuple(np.linspace(a, b, m) for (a, b), m in zip(self.extents, self.n))

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        """Coordinate arrays ``(X,)`` or ``(X, Y)``, each of shape ``self.shape``."""
        if self.dim == 1:
            return (self.axes[0],)
        X, Y = np.meshgrid(self.axes[0], self.axes[1], indexing="xy")
        return (X, Y)

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        if self.dim == 1:
            mask[[0, -1]] = True
        else:
            mask[0, :] = mask[-1, :] = True
            mask[:, 0] = mask[:, -1] = True
        mask.flags.writeable = False
        return mask

    @property
    def interior_mask(self) -> np.ndarray:
        return ~self.boundary_mask

    @cached_property
    def boundary_index(self) -> np.ndarray:
        """Flat (C-order) indices of the boundary nodes, ascending."""
        idx = np.flatnonzero(self.boundary_mask)
        idx.flags.writeable = False
        return idx

    @cached_property
    def interior_index(self) -> np.ndarray:
        idx = np.flatnonzero(~self.boundary_mask)
        idx.flags.writeable = False
        return idx

    def edge_masks(self) -> dict[str, np.ndarray]:
        """Boolean node masks of each boundary edge; corners belong to two edges."""
        masks = {}
        if self.dim == 1:
            for name, pos in (("x-", 0), ("x+", -1)):
                m = np.zeros(self.shape, dtype=bool)
                m[pos] = True
                masks[name] = m
            return masks
        for name, sl in (
            ("x-", (slice(None), 0)),
            ("x+", (slice(None), -1)),
            ("y-", (0, slice(None))),
            ("y+", (-1, slice(None))),
        ):
            m = np.zeros(self.shape, dtype=bool)
            m[sl] = True
            masks[name] = m
        return masks

    def node_coords(self, index: int | Sequence[int]) -> tuple[float, ...]:
        """Coordinates of a node given by flat index or array index tuple."""
        if np.isscalar(index):
            index = np.unravel_index(int(index), self.shape)
        return tuple(float(c[tuple(index)]) for c in self.coords)

    def nearest_node(self, point: Sequence[float]) -> tuple[int, ...]:
        """Array index of the node closest to ``point`` (given as (x[, y]))."""
        ijk = []
        for p, (a, _), h, m in zip(point, self.extents, self.spacing, self.n):
            ijk.append(int(np.clip(np.rint((p - a) / h), 0, m - 1)))
        return tuple(reversed(ijk))

    def cell_measure(self) -> float:
        return float(np.prod(self.spacing))

    def trapezoid_weights(self) -> np.ndarray:
        """Nodal quadrature weights of the composite trapezoidal rule."""
        ws = []
        for h, m in zip(self.spacing, self.n):
            w = np.full(m, h)
            w[[0, -1]] *= 0.5
            ws.append(w)
        if self.dim == 1:
            return ws[0]
        return np.outer(ws[1], ws[0])

    def integrate(self, values: np.ndarray) -> float:
        return float(np.sum(self.trapezoid_weights() * values))


def make_grid(dim: int, extents: Sequence[Sequence[float]], n: int | Sequence[int]) -> Grid:
    """Build a uniform grid.

    >>> make_grid(1, [(0.0, 1.0)], 3).axes[0]
    array([0. , 0.5, 1. ])
    """
    if dim not in (1, 2):
        raise ValueError(f"dim must be 1 or 2, got {dim}")
    if np.isscalar(n):
        n = (n,) * dim
    if any(isinstance(m, bool) or int(m) != m for m in n):
        raise ValueError(f"node counts must be integers, got {n}")
    extents = tuple((float(a), float(b)) for a, b in extents)
    if len(extents) == 1 and dim == 2:
        extents = extents * 2
    if len(extents) != dim or len(n) != dim:
        raise ValueError("need one extent and one node count per axis")
    return Grid(extents, tuple(int(m) for m in n))


@dataclass(frozen=True, eq=False)
class ScalarField:
    """One real value per grid node."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        if values.shape != self.grid.shape:
            raise ValueError(f"field shape {values.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("field contains NaN or Inf")
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, grid: Grid) -> ScalarField:
        return cls(grid, np.zeros(grid.shape))

    @property
    def boundary(self) -> np.ndarray:
        return self.values.ravel()[self.grid.boundary_index]

    def __sub__(self, other: ScalarField) -> ScalarField:
        if other.grid != self.grid:
            raise ValueError("grid mismatch")
        return ScalarField(self.grid, self.values - other.values)

    def __add__(self, other: ScalarField) -> ScalarField:
        if other.grid != self.grid:
            raise ValueError("grid mismatch")
        return ScalarField(self.grid, self.values + other.values)


@dataclass(frozen=True)
class BoundarySpec:
    """Dirichlet traces of the three components.

    ``pieces[i]`` maps edge names (see :data:`EDGES`) to vectorised callables
    ``f(x, y)``. Edges missing from a mapping carry zero data for that
    component. In 1D only ``"x-"`` and ``"x+"`` are used and ``y`` is zero.
    """

    pieces: tuple[Mapping[str, Trace], Mapping[str, Trace], Mapping[str, Trace]]
    label: str = "custom"
    meta: Mapping[str, object] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if len(self.pieces) != 3:
            raise ValueError("a boundary spec has exactly three components")
        for p in self.pieces:
            unknown = set(p) - set(EDGES)
            if unknown:
                raise ValueError(f"unknown edge names {sorted(unknown)}")


def boundary_values(spec: BoundarySpec, grid: Grid) -> np.ndarray:
    """Evaluate the traces on the boundary nodes without validation.

    Returns an array of shape ``(3, nb)`` ordered like ``grid.boundary_index``.
    A node on two edges gets, per component, the larger of the two edge
    values. If the resulting corner triple has a nonzero product, its smallest
    nonzero entry is set to zero.
    """
    coords = grid.coords
    x = coords[0]
    y = coords[1] if grid.dim == 2 else np.zeros_like(x)
    full = np.full((3,) + grid.shape, np.nan)  # nan marks "no edge listed"
    owners = np.zeros(grid.shape, dtype=int)
    nonfinite = np.zeros((3,) + grid.shape, dtype=bool)
    for name, mask in grid.edge_masks().items():
        owners += mask
        for i, pieces in enumerate(spec.pieces):
            f = pieces.get(name)
            if f is None:
                continue
            vals = np.broadcast_to(np.asarray(f(x[mask], y[mask]), dtype=float), x[mask].shape)
            nonfinite[i][mask] |= ~np.isfinite(vals)
            full[i][mask] = np.fmax(full[i][mask], vals)
    full = np.where(np.isnan(full), 0.0, full)
    full[nonfinite] = np.nan
    corners = owners > 1
    if np.any(corners):
        trip = full[:, corners]
        bad = np.prod(trip, axis=0) > PRODUCT_TOL
        if np.any(bad):
            sub = trip[:, bad]
            masked = np.where(sub > 0, sub, np.inf)
            k = np.argmin(masked, axis=0)
            sub[k, np.arange(sub.shape[1])] = 0.0
            trip[:, bad] = sub
            full[:, corners] = trip
    flat = full.reshape(3, -1)
    return flat[:, grid.boundary_index].copy()


def sample_boundary(spec: BoundarySpec, grid: Grid) -> np.ndarray:
    """Evaluate and validate the traces; shape ``(3, nb)``.

    Raises
    ------
    BoundaryDataError
        If a trace is negative or non-finite, or if ``phi1*phi2*phi3``
        exceeds ``1e-12`` at a node. The message names the offending node.
    """
    vals = boundary_values(spec, grid)
    for k in range(vals.shape[1]):
        col = vals[:, k]
        if not np.all(np.isfinite(col)) or np.any(col < 0):
            where = grid.node_coords(grid.boundary_index[k])
            raise BoundaryDataError(f"{spec.label}: invalid trace value {col.tolist()} at node {where}")
    prod = np.prod(vals, axis=0)
    bad = np.flatnonzero(prod > PRODUCT_TOL)
    if bad.size:
        k = bad[0]
        where = grid.node_coords(grid.boundary_index[k])
        raise BoundaryDataError(
            f"{spec.label}: phi1*phi2*phi3 = {prod[k]:.3g} at node {where} ({bad.size} nodes violate)"
        )
    return vals


def embed_boundary(grid: Grid, bvals: np.ndarray, fill: float = 0.0) -> np.ndarray:
    """Full grid array with ``bvals`` on the boundary nodes and ``fill`` inside."""
    out = np.full(grid.size, fill, dtype=float)
    out[grid.boundary_index] = bvals
    return out.reshape(grid.shape)
