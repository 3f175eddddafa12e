"""The nine boundary configurations on [-1, 1]^2 and a JSON loader for custom data.

Angles are full-plane angles ``atan2(y, x)``. Boundary portions not listed for a
component carry zero data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .grid import EDGES, PRODUCT_TOL, BoundarySpec, Grid, boundary_values, make_grid

__all__ = [
    "CATALOG",
    "CatalogEntry",
    "get_bc",
    "line_example_spec",
    "load_spec",
    "spec_from_dict",
    "validate_catalog",
    "validate_spec",
]

ALL = EDGES


def _theta(x, y):
    return np.arctan2(y, x)


def _const(c: float):
    return lambda x, y: np.full(np.shape(x), c, dtype=float)


def _on(edges, f):
    return {e: f for e in edges}


def _lobe(i: int, shift: float = 0.0):
    return lambda x, y: np.maximum(0.0, np.cos(_theta(x, y) - 2 * np.pi * i / 3 - shift))


def _bump(cx: float, cy: float):
    return lambda x, y: np.maximum(0.0, 1.0 - np.hypot(x - cx, y - cy) / 2)


def _bc1():
    return tuple(_on(ALL, _lobe(i)) for i in (1, 2, 3))


def _bc2():
    return tuple(_on(ALL, _lobe(i, np.pi / 4)) for i in (1, 2, 3))


def _bc3():
    return ({"y-": _const(1.0)}, {"y+": _const(1.0)}, _on(("x-", "x+"), _const(0.5)))


def _bc4():
    return (
        _on(ALL, lambda x, y: np.maximum(x, 0.0)),
        _on(ALL, lambda x, y: np.maximum(-x, 0.0)),
        _on(ALL, _const(0.25)),
    )


def _bc5():
    return (_on(("y-", "y+"), _const(1.0)), _on(("x-", "x+"), _const(1.0)), _on(ALL, _const(0.3)))


def _bc6():
    return (_on(ALL, _bump(-1, -1)), _on(ALL, _bump(1, 1)), _on(ALL, _bump(1, -1)))


def _bc7():
    return (
        _on(("y-", "y+"), lambda x, y: np.sin(np.pi * (x + 1) / 2)),
        _on(("y-", "y+"), lambda x, y: np.maximum(np.cos(np.pi * (x + 1) / 2), 0.0)),
        _on(("x-", "x+"), _const(0.3)),
    )


def _bc8():
    return (
        {"y-": lambda x, y: np.where(x < 0, 1.0, 0.0)},
        {"y-": lambda x, y: np.where(x > 0, 1.0, 0.0)},
        {"y+": _const(1.0)},
    )


def _bc9():
    return (_on(("y-", "x-"), _const(1.0)), _on(("y+", "x+"), _const(1.0)), _on(ALL, _const(0.2)))


@dataclass(frozen=True)
class CatalogEntry:
    id: int
    spec: BoundarySpec
    description: str


_TABLE: list[tuple[Callable[[], tuple], str]] = [
    (_bc1, "phi_i = max(0, cos(theta - 2 pi i/3))"),
    (_bc2, "phi_i = max(0, cos(theta - 2 pi i/3 - pi/4))"),
    (_bc3, "phi1 = 1 on y=-1; phi2 = 1 on y=1; phi3 = 0.5 on x=+-1"),
    (_bc4, "phi1 = x+; phi2 = (-x)+; phi3 = 0.25"),
    (_bc5, "phi1 = 1 on y=+-1; phi2 = 1 on x=+-1; phi3 = 0.3"),
    (_bc6, "phi_i = max(0, 1 - |z - c_i|/2), c = (-1,-1), (1,1), (1,-1)"),
    (_bc7, "phi1 = sin(pi(x+1)/2), phi2 = cos(pi(x+1)/2)+ on y=+-1; phi3 = 0.3 on x=+-1"),
    (_bc8, "phi1 = 1 on y=-1, x<0; phi2 = 1 on y=-1, x>0; phi3 = 1 on y=1"),
    (_bc9, "phi1 = 1 on y=-1 and x=-1; phi2 = 1 on y=1 and x=1; phi3 = 0.2"),
]

CATALOG: tuple[CatalogEntry, ...] = tuple(
    CatalogEntry(k + 1, BoundarySpec(make(), label=f"bc{k + 1}"), desc)
    for k, (make, desc) in enumerate(_TABLE)
)


def get_bc(id: int) -> BoundarySpec:
    """Boundary spec of catalog entry ``id`` (1..9)."""
    if isinstance(id, bool) or not isinstance(id, (int, np.integer)) or not 1 <= id <= len(CATALOG):
        raise KeyError(f"unknown boundary condition id {id!r}; expected 1..{len(CATALOG)}")
    return CATALOG[int(id) - 1].spec


def line_example_spec() -> BoundarySpec:
    """Data of the 1D example on (0, 1): phi1 = (1, 0), phi2 = (0, 1), phi3 = (1, 1)."""
    return BoundarySpec(
        ({"x-": _const(1.0)}, {"x+": _const(1.0)}, {"x-": _const(1.0), "x+": _const(1.0)}),
        label="line",
    )


def validate_spec(spec: BoundarySpec, grid: Grid) -> dict[str, Any]:
    """Report the largest boundary product and smallest boundary value (never raises)."""
    vals = boundary_values(spec, grid)
    max_product = float(np.max(np.prod(vals, axis=0)))
    min_value = float(np.min(vals))
    return {
        "label": spec.label,
        "max_product": max_product,
        "min_value": min_value,
        "valid": bool(max_product <= PRODUCT_TOL and min_value >= 0 and np.all(np.isfinite(vals))),
    }


def validate_catalog(grid: Grid | None = None) -> list[dict[str, Any]]:
    if grid is None:
        grid = make_grid(2, [(-1, 1), (-1, 1)], 201)
    return [{"id": e.id, **validate_spec(e.spec, grid)} for e in CATALOG]


# --- JSON custom specs -------------------------------------------------------

_EDGE_NAMES = {"x=-1": ("x-",), "x=1": ("x+",), "y=-1": ("y-",), "y=1": ("y+",), "all": ALL}


def _compile(expr: Any) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """Turn a JSON expression into a vectorised ``f(x, y)``.

    Vocabulary: numbers, ``"x"``, ``"y"``, ``"theta"``, and single-key objects
    ``{"const": c}``, ``{"plus": e}``, ``{"cos": e}``, ``{"sin": e}``,
    ``{"max": [e1, e2]}``, ``{"affine": [a, b, e]}`` (meaning ``a*e + b``).
    """
    if isinstance(expr, bool):
        raise ValueError("booleans are not expressions")
    if isinstance(expr, (int, float)):
        return _const(float(expr))
    if expr == "x":
        return lambda x, y: np.asarray(x, dtype=float)
    if expr == "y":
        return lambda x, y: np.asarray(y, dtype=float)
    if expr == "theta":
        return _theta
    if isinstance(expr, dict) and len(expr) == 1:
        (op, arg), = expr.items()
        if op == "const":
            if isinstance(arg, bool) or not isinstance(arg, (int, float)):
                raise ValueError("const takes a number")
            return _const(float(arg))
        if op in ("plus", "cos", "sin"):
            f = _compile(arg)
            fn = {"plus": lambda v: np.maximum(v, 0.0), "cos": np.cos, "sin": np.sin}[op]
            return lambda x, y: fn(f(x, y))
        if op == "max":
            if not isinstance(arg, list) or len(arg) != 2:
                raise ValueError("max takes two expressions")
            f, g = _compile(arg[0]), _compile(arg[1])
            return lambda x, y: np.maximum(f(x, y), g(x, y))
        if op == "affine":
            if not isinstance(arg, list) or len(arg) != 3:
                raise ValueError("affine takes [a, b, expr]")
            a, b = float(arg[0]), float(arg[1])
            f = _compile(arg[2])
            return lambda x, y: a * f(x, y) + b
    raise ValueError(f"unsupported expression {expr!r}")


def spec_from_dict(doc: dict[str, Any]) -> BoundarySpec:
    """Build a spec from ``{"label": ..., "components": [[{edge, expr}, ...] x3]}``.

    Several entries on the same edge combine by maximum, like corner values.
    """
    comps = doc.get("components")
    if not isinstance(comps, list) or len(comps) != 3:
        raise ValueError("'components' must be a list of three entry lists")
    pieces = []
    for entries in comps:
        per_edge: dict[str, list] = {}
        for entry in entries:
            edge = entry.get("edge")
            if edge not in _EDGE_NAMES:
                raise ValueError(f"unknown edge {edge!r}; expected one of {sorted(_EDGE_NAMES)}")
            f = _compile(entry.get("expr"))
            for e in _EDGE_NAMES[edge]:
                per_edge.setdefault(e, []).append(f)
        pieces.append({e: _combine(fs) for e, fs in per_edge.items()})
    return BoundarySpec(tuple(pieces), label=str(doc.get("label", "custom")), meta={"source": doc})


def _combine(fs):
    if len(fs) == 1:
        return fs[0]
    return lambda x, y: np.maximum.reduce([np.broadcast_to(f(x, y), np.shape(x)) for f in fs])


def load_spec(path: str | Path) -> BoundarySpec:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    spec = spec_from_dict(doc)
    if spec.label == "custom":
        spec = BoundarySpec(spec.pieces, label=Path(path).stem, meta=spec.meta)
    return spec

