"""Plain-text and PGM output of fields, contours, labels and triples."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import numpy as np

from .grid import Grid, ScalarField
from .partition import PAIRS, RegionLabel

__all__ = [
    "LABEL_PALETTE",
    "dump_json",
    "read_field_csv",
    "write_contours_csv",
    "write_field_csv",
    "write_field_pgm",
    "write_labels_pgm",
    "write_triple",
]

# grey level per region label in the label PGM
LABEL_PALETTE = {
    RegionLabel.R12: 40,
    RegionLabel.R13: 100,
    RegionLabel.R23: 160,
    RegionLabel.PURE1: 200,
    RegionLabel.PURE2: 215,
    RegionLabel.PURE3: 230,
    RegionLabel.INTERFACE: 255,
    RegionLabel.TRIPLE: 0,
    RegionLabel.UNDECIDED: 128,
}


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if np.isnan(v):
            return "nan"
        if np.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def dump_json(obj: Any, path: str | Path) -> None:
    """Write JSON with sorted keys; non-finite floats become strings."""
    text = json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def _header(grid: Grid) -> str:
    if grid.dim == 1:
        (x0, x1), = grid.extents
        return f"# {grid.n[0]} 1 {x0!r} {x1!r} 0.0 0.0"
    (x0, x1), (y0, y1) = grid.extents
    return f"# {grid.n[0]} {grid.n[1]} {x0!r} {x1!r} {y0!r} {y1!r}"


def write_field_csv(field: ScalarField, path: str | Path) -> None:
    """CSV matrix, one row per ``y`` (increasing), header ``# nx ny x0 x1 y0 y1``."""
    vals = np.atleast_2d(field.values)
    lines = [_header(field.grid)]
    lines += [",".join(repr(float(v)) for v in row) for row in vals]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_field_csv(path: str | Path) -> ScalarField:
    from .grid import make_grid

    with open(path, encoding="utf-8") as fh:
        head = fh.readline().split()
    nx, ny = int(head[1]), int(head[2])
    x0, x1, y0, y1 = map(float, head[3:7])
    vals = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    if ny == 1 and y0 == y1:
        grid = make_grid(1, [(x0, x1)], nx)
        return ScalarField(grid, vals.ravel())
    grid = make_grid(2, [(x0, x1), (y0, y1)], (nx, ny))
    return ScalarField(grid, vals)


def _pgm(arr: np.ndarray, path: str | Path) -> None:
    img = np.atleast_2d(arr)[::-1]  # first image row is the top (largest y)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.astype(np.uint8).tobytes())


def write_field_pgm(field: ScalarField, path: str | Path) -> dict[str, float]:
    """8-bit PGM with linear min-max scaling; the scaling goes to ``<path>.json``."""
    v = np.atleast_2d(field.values)
    lo, hi = float(v.min()), float(v.max())
    span = hi - lo
    scaled = np.zeros_like(v) if span == 0 else np.rint((v - lo) / span * 255)
    _pgm(scaled, path)
    meta = {"min": lo, "max": hi, "levels": 255, "value": "min + grey * (max - min) / 255"}
    dump_json(meta, str(path) + ".json")
    return meta


def write_labels_pgm(labels: np.ndarray, path: str | Path) -> None:
    """Region labels as grey levels; the palette goes to ``<path>.json``."""
    lut = np.zeros(len(RegionLabel), dtype=np.uint8)
    for lab, grey in LABEL_PALETTE.items():
        lut[lab] = grey
    _pgm(lut[labels], path)
    dump_json({lab.name: grey for lab, grey in LABEL_PALETTE.items()}, str(path) + ".json")


def write_contours_csv(contours: dict[str, list[np.ndarray]], path: str | Path) -> None:
    """Polylines as rows ``pair,poly_id,x,y`` (``y`` is 0 in 1D)."""
    lines = ["pair,poly_id,x,y"]
    for pair in PAIRS:
        for pid, poly in enumerate(contours.get(pair, [])):
            for v in poly:
                y = float(v[1]) if len(v) > 1 else 0.0
                lines.append(f"{pair},{pid},{float(v[0])!r},{y!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_triple(t, directory: str | Path, stem: str, manifest: dict[str, Any]) -> None:
    """Three CSV matrices ``<stem>_u{1,2,3}.csv`` plus ``<stem>.json``."""
    directory = Path(directory)
    for i, comp in enumerate(t.components, start=1):
        write_field_csv(comp, directory / f"{stem}_u{i}.csv")
    dump_json(manifest, directory / f"{stem}.json")
