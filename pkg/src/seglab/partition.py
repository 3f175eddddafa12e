"""Limiting partition predicted from the harmonic differences.

Sign rules for the two-phase regions (``Omega_ij``: components ``i`` and ``j``
positive, the third zero)::

    R12:  h23 > 0 and h13 > 0
    R13:  h23 < 0 and h12 > 0
    R23:  h12 < 0 and h13 < 0

Under ``h13 = h12 + h23`` every node where no ``h_ij`` vanishes falls into
exactly one of these.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .elliptic import HarmonicTriple
from .grid import Grid, ScalarField

__all__ = [
    "PAIRS",
    "InclusionReport",
    "PartitionMap",
    "RegionLabel",
    "TriplePoint",
    "TransversalityEntry",
    "classify",
    "interface_inclusion",
    "predict_partition",
    "transversality_report",
    "triple_points",
    "zero_contours",
]

PAIRS = ("12", "13", "23")


class RegionLabel(IntEnum):
    R12 = 0
    R13 = 1
    R23 = 2
    PURE1 = 3
    PURE2 = 4
    PURE3 = 5
    INTERFACE = 6
    TRIPLE = 7
    UNDECIDED = 8


TWO_PHASE = {RegionLabel.R12: (1, 2), RegionLabel.R13: (1, 3), RegionLabel.R23: (2, 3)}


def _pair_values(h: HarmonicTriple) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return h.h12.values, h.h13.values, h.h23.values


def classify(h: HarmonicTriple, band: float = 0.0) -> np.ndarray:
    """Region label per node (an ``int8`` array of :class:`RegionLabel` values).

    Nodes with ``|h_ij| <= band`` for two or more pairs are TRIPLE; pure-region
    sign patterns come next, then INTERFACE for a single near-zero pair.
    Anything else is UNDECIDED and signals a cocycle violation.
    """
    if band < 0:
        raise ValueError("band must be nonnegative")
    h12, h13, h23 = _pair_values(h)
    near = [np.abs(v) <= band for v in (h12, h13, h23)]
    n_near = near[0].astype(int) + near[1] + near[2]
    labels = np.full(h12.shape, RegionLabel.UNDECIDED, dtype=np.int8)

    rules = [
        (RegionLabel.R12, (h23 > band) & (h13 > band)),
        (RegionLabel.R13, (h23 < -band) & (h12 > band)),
        (RegionLabel.R23, (h12 < -band) & (h13 < -band)),
        (RegionLabel.TRIPLE, n_near >= 2),
        (RegionLabel.PURE1, near[2] & (h12 > band) & (h13 > band)),
        (RegionLabel.PURE2, near[1] & (h12 < -band) & (h23 > band)),
        (RegionLabel.PURE3, near[0] & (h13 < -band) & (h23 < -band)),
        (RegionLabel.INTERFACE, n_near == 1),
    ]
    done = np.zeros(h12.shape, dtype=bool)
    for label, mask in rules:
        sel = mask & ~done
        labels[sel] = label
        done |= sel
    return labels


# --- contours ----------------------------------------------------------------------


def _contours_1d(f: np.ndarray, grid: Grid) -> list[np.ndarray]:
    (x,) = grid.axes
    pos = f >= 0
    out = []
    for k in np.flatnonzero(pos[:-1] != pos[1:]):
        a, b = f[k], f[k + 1]
        t = a / (a - b)
        out.append(np.array([[x[k] + t * (x[k + 1] - x[k])]]))
    return out


def zero_contours(field: ScalarField) -> list[np.ndarray]:
    """Zero level set by marching squares with linear interpolation on cell edges.

    A node value ``>= 0`` counts as positive. Saddle cells are resolved by the
    sign of the cell-centre average. Returns polylines as ``(k, 2)`` arrays of
    ``(x, y)``; closed curves repeat their first vertex. In 1D each crossing
    is returned as a ``(1, 1)`` array.
    """
    grid = field.grid
    f = field.values
    if grid.dim == 1:
        return _contours_1d(f, grid)
    X, Y = grid.coords
    ny, nx = f.shape
    pos = f >= 0

    # crossing points on horizontal edges (j, k)-(j, k+1) and vertical edges (j, k)-(j+1, k)
    def cross(a, b, pa, pb):
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(pa != pb, a / (a - b), np.nan)
        return t

    th = cross(f[:, :-1], f[:, 1:], pos[:, :-1], pos[:, 1:])
    tv = cross(f[:-1, :], f[1:, :], pos[:-1, :], pos[1:, :])
    n_h = ny * (nx - 1)

    def hid(j, k):
        return j * (nx - 1) + k

    def vid(j, k):
        return n_h + j * nx + k

    def point(eid):
        if eid < n_h:
            j, k = divmod(eid, nx - 1)
            t = th[j, k]
            return X[j, k] + t * (X[j, k + 1] - X[j, k]), Y[j, k]
        j, k = divmod(eid - n_h, nx)
        t = tv[j, k]
        return X[j, k], Y[j, k] + t * (Y[j + 1, k] - Y[j, k])

    cells = (pos[:-1, :-1].astype(int) + pos[:-1, 1:] + pos[1:, :-1] + pos[1:, 1:]) % 4 != 0
    adj: dict[int, list[int]] = {}
    for j, k in zip(*np.nonzero(cells)):
        b, r, t, l = hid(j, k), vid(j, k + 1), hid(j + 1, k), vid(j, k)
        hits = [e for e, ok in ((b, pos[j, k] != pos[j, k + 1]), (r, pos[j, k + 1] != pos[j + 1, k + 1]),
                                (t, pos[j + 1, k] != pos[j + 1, k + 1]), (l, pos[j, k] != pos[j + 1, k])) if ok]
        if len(hits) == 2:
            segs = [tuple(hits)]
        else:
            centre = 0.25 * (f[j, k] + f[j, k + 1] + f[j + 1, k] + f[j + 1, k + 1]) >= 0
            # isolate the corners whose sign differs from the centre
            corners = [(pos[j, k], (l, b)), (pos[j, k + 1], (b, r)), (pos[j + 1, k + 1], (r, t)), (pos[j + 1, k], (t, l))]
            segs = [s for p, s in corners if p != centre]
        for a, c in segs:
            adj.setdefault(a, []).append(c)
            adj.setdefault(c, []).append(a)

    seen: set[int] = set()
    lines = []

    def walk(start):
        chain = [start]
        seen.add(start)
        prev, cur = None, start
        while True:
            nxt = [e for e in adj[cur] if e != prev and e not in seen]
            if not nxt:
                closing = [e for e in adj[cur] if e == start and prev is not None and len(chain) > 2]
                if closing:
                    chain.append(start)
                return chain
            prev, cur = cur, nxt[0]
            seen.add(cur)
            chain.append(cur)

    for e in sorted(adj):
        if len(adj[e]) == 1 and e not in seen:
            lines.append(walk(e))
    for e in sorted(adj):
        if e not in seen:
            lines.append(walk(e))
    return [np.array([point(e) for e in chain]) for chain in lines]


def _bilinear(values: np.ndarray, grid: Grid, pts: np.ndarray) -> np.ndarray:
    """Bilinear (linear in 1D) interpolation of node values at points."""
    if grid.dim == 1:
        return np.interp(pts[:, 0], grid.axes[0], values)
    (x0, _), (y0, _) = grid.extents
    hx, hy = grid.spacing
    nx, ny = grid.n
    s = (pts[:, 0] - x0) / hx
    t = (pts[:, 1] - y0) / hy
    k = np.clip(np.floor(s).astype(int), 0, nx - 2)
    j = np.clip(np.floor(t).astype(int), 0, ny - 2)
    s -= k
    t -= j
    v = values
    return (
        v[j, k] * (1 - s) * (1 - t) + v[j, k + 1] * s * (1 - t) + v[j + 1, k] * (1 - s) * t + v[j + 1, k + 1] * s * t
    )


# --- triple points -------------------------------------------------------------------


@dataclass(frozen=True)
class TriplePoint:
    """Common zero of ``h12`` and ``h23`` (hence of ``h13``).

    ``residual`` is ``max(|h12|, |h23|)`` of the interpolants at the point
    relative to the field scale. ``low_precision`` marks a Newton failure where
    the cell centre is returned instead.
    """

    x: float
    y: float
    residual: float
    low_precision: bool = False


def _cell_newton(c1, c2, max_steps: int = 20):
    """Solve two bilinear equations on the unit square; coefficients (a, b, c, d) of a + b s + c t + d s t."""
    s = t = 0.5
    for _ in range(max_steps):
        f1 = c1[0] + c1[1] * s + c1[2] * t + c1[3] * s * t
        f2 = c2[0] + c2[1] * s + c2[2] * t + c2[3] * s * t
        J = np.array([[c1[1] + c1[3] * t, c1[2] + c1[3] * s], [c2[1] + c2[3] * t, c2[2] + c2[3] * s]])
        det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
        if det == 0 or not np.isfinite(det):
            return None
        ds = (J[1, 1] * f1 - J[0, 1] * f2) / det
        dt = (-J[1, 0] * f1 + J[0, 0] * f2) / det
        s, t = s - ds, t - dt
        if abs(ds) < 1e-15 and abs(dt) < 1e-15:
            break
        if abs(s) > 10 or abs(t) > 10:
            return "outside"
    return s, t


def _on_boundary(grid: Grid, pts: np.ndarray) -> np.ndarray:
    out = np.zeros(len(pts), dtype=bool)
    for axis, ((a, b), h) in enumerate(zip(grid.extents, grid.spacing)):
        tol = 1e-12 * h
        out |= (pts[:, axis] <= a + tol) | (pts[:, axis] >= b - tol)
    return out


def triple_points(h: HarmonicTriple) -> list[TriplePoint]:
    """Triple points ``{h12 = 0} and {h23 = 0}`` in the open domain.

    Candidate cells are those where both fields take both signs on the
    corners (a node value ``>= 0`` counts as positive); each is searched by
    a bilinear Newton solve from the cell centre. Points on the boundary are
    dropped. Points are deduplicated and sorted by ``(x, y)``.
    """
    grid = h.grid
    f1, f2 = h.h12.values, h.h23.values
    scale = max(float(np.max(np.abs(f1))), float(np.max(np.abs(f2))), 1e-300)
    if grid.dim == 1:
        (x,) = grid.axes
        out = []
        p1, p2 = f1 >= 0, f2 >= 0
        for k in np.flatnonzero((p1[:-1] != p1[1:]) & (p2[:-1] != p2[1:])):
            s1 = f1[k] / (f1[k] - f1[k + 1])
            s2 = f2[k] / (f2[k] - f2[k + 1])
            if abs(s1 - s2) * grid.spacing[0] <= 1e-10:
                out.append(TriplePoint(float(x[k] + s1 * grid.spacing[0]), 0.0, 0.0))
        return out

    def changes(f):
        p = f >= 0
        s = p[:-1, :-1].astype(int) + p[:-1, 1:] + p[1:, :-1] + p[1:, 1:]
        return (s > 0) & (s < 4)

    X, Y = grid.coords
    hx, hy = grid.spacing
    ny, nx = f1.shape
    found: list[TriplePoint] = []
    tol = 1e-9
    for j, k in zip(*np.nonzero(changes(f1) & changes(f2))):
        coeffs = []
        for f in (f1, f2):
            a, b_, c_, d_ = f[j, k], f[j, k + 1], f[j + 1, k], f[j + 1, k + 1]
            coeffs.append((a, b_ - a, c_ - a, d_ - b_ - c_ + a))
        sol = _cell_newton(*coeffs)
        if sol is None:
            # singular Jacobian: shared zero edges on the boundary are not isolated points
            if j == 0 or k == 0 or j == ny - 2 or k == nx - 2:
                continue
            found.append(TriplePoint(float(X[j, k] + hx / 2), float(Y[j, k] + hy / 2), float("nan"), True))
            continue
        if sol == "outside":
            continue
        s, t = sol
        if not (-tol <= s <= 1 + tol and -tol <= t <= 1 + tol):
            continue
        s, t = min(max(s, 0.0), 1.0), min(max(t, 0.0), 1.0)
        px, py = X[j, k] + s * hx, Y[j, k] + t * hy
        if _on_boundary(grid, np.array([[px, py]]))[0]:
            continue
        r = max(abs(cf[0] + cf[1] * s + cf[2] * t + cf[3] * s * t) for cf in coeffs) / scale
        found.append(TriplePoint(float(px), float(py), float(r)))
    unique: list[TriplePoint] = []
    merge = 1e-6 * min(hx, hy)
    for p in sorted(found, key=lambda q: (q.low_precision, q.x, q.y)):
        if all(np.hypot(p.x - q.x, p.y - q.y) > merge for q in unique):
            unique.append(p)
    return sorted(unique, key=lambda q: (q.x, q.y))


# --- transversality -------------------------------------------------------------------


@dataclass(frozen=True)
class TransversalityEntry:
    pair: str
    min_gradient: float
    samples: int
    degenerate: bool


def _gradient_magnitude(values: np.ndarray, grid: Grid) -> np.ndarray:
    if grid.dim == 1:
        return np.abs(np.gradient(values, grid.spacing[0]))
    gy, gx = np.gradient(values, grid.spacing[1], grid.spacing[0])
    return np.hypot(gx, gy)


def transversality_report(h: HarmonicTriple, threshold: float = 1e-6) -> dict[str, TransversalityEntry]:
    """Smallest ``|grad h_ij|`` sampled at the interior vertices of each zero contour.

    Vertices on the boundary are skipped: the condition concerns the open
    domain, and a zero set meeting a boundary arc of zero data has a vanishing
    gradient there. Without interior vertices the pair is degenerate only if
    the field vanishes identically (``max |h_ij| <= threshold``); otherwise
    ``min_gradient`` is ``inf``. Gradients use central differences (one-sided
    at the boundary) and are interpolated to the vertices.
    """
    out = {}
    for pair, fld in zip(PAIRS, (h.h12, h.h13, h.h23)):
        lines = zero_contours(fld)
        pts = np.concatenate(lines) if lines else np.empty((0, fld.grid.dim))
        pts = pts[~_on_boundary(fld.grid, pts)]
        if len(pts) == 0:
            # no interior zero set: vacuous, unless the field vanishes identically
            flat = float(np.max(np.abs(fld.values))) <= threshold
            out[pair] = TransversalityEntry(pair, 0.0 if flat else math.inf, 0, flat)
            continue
        g = _bilinear(_gradient_magnitude(fld.values, fld.grid), fld.grid, pts)
        m = float(np.min(g))
        out[pair] = TransversalityEntry(pair, m, int(len(pts)), m < threshold)
    return out


# --- partition map -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PartitionMap:
    """Predicted labels, zero contours per pair and triple points."""

    grid: Grid
    labels: np.ndarray
    contours: dict[str, list[np.ndarray]]
    triples: list[TriplePoint]
    band: float = 0.0
    counts: dict[str, int] = field(default_factory=dict)


def predict_partition(h: HarmonicTriple, band: float = 0.0) -> PartitionMap:
    labels = classify(h, band)
    contours = {p: zero_contours(f) for p, f in zip(PAIRS, (h.h12, h.h13, h.h23))}
    counts = {lab.name: int(np.sum(labels == lab)) for lab in RegionLabel}
    return PartitionMap(h.grid, labels, contours, triple_points(h), band, counts)


@dataclass(frozen=True)
class InclusionReport:
    """Grid edges separating two different two-phase regions.

    For each such edge between ``R_ij`` and ``R_ik`` the zero of ``h_jk`` on
    that edge is located; ``max_value`` is its largest interpolated ``|h_jk|``
    and ``max_distance`` its largest distance to the ``h_jk`` contour vertices.
    """

    edges: int
    max_value: float
    max_distance: float


def interface_inclusion(pmap: PartitionMap, h: HarmonicTriple) -> InclusionReport:
    from scipy.spatial import cKDTree

    grid = h.grid
    labels = pmap.labels
    X = grid.coords
    edges, worst_v, worst_d = 0, 0.0, 0.0
    trees = {}
    for p in PAIRS:
        lines = pmap.contours[p]
        trees[p] = cKDTree(np.concatenate(lines)) if lines else None
    axes = range(grid.dim)
    for axis in axes:
        a = [slice(None)] * grid.dim
        b = [slice(None)] * grid.dim
        a[axis] = slice(None, -1)
        b[axis] = slice(1, None)
        la, lb = labels[tuple(a)], labels[tuple(b)]
        for ra, pa in TWO_PHASE.items():
            for rb, pb in TWO_PHASE.items():
                if ra == rb:
                    continue
                shared = set(pa) & set(pb)
                jk = "".join(str(m) for m in sorted(set(pa) ^ set(pb)))
                if len(shared) != 1:
                    continue
                mask = (la == ra) & (lb == rb)
                if not np.any(mask):
                    continue
                f = h.pair(int(jk[0]), int(jk[1]))
                fa, fb = f[tuple(a)][mask], f[tuple(b)][mask]
                t = fa / (fa - fb)
                pts = np.stack([c[tuple(a)][mask] + t * (c[tuple(b)][mask] - c[tuple(a)][mask]) for c in X], axis=1)
                vals = np.abs(_bilinear(f, grid, pts))
                edges += int(mask.sum())
                worst_v = max(worst_v, float(vals.max()))
                tree = trees[jk]
                d = np.inf if tree is None else float(tree.query(pts)[0].max())
                worst_d = max(worst_d, d)
    return InclusionReport(edges, worst_v, worst_d)
