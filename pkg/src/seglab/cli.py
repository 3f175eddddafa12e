"""Command line driver: run experiments, write artifacts, sweep parameters.

Exit codes: 0 ok, 2 hard invariant failure, 3 convergence failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .bc_catalog import CATALOG, get_bc, line_example_spec, load_spec, validate_spec
from .elliptic import harmonic_differences, harmonic_extensions
from .errors import ConvergenceError
from .fieldio import (
    dump_json,
    write_contours_csv,
    write_field_csv,
    write_field_pgm,
    write_labels_pgm,
    write_triple,
)
from .grid import BoundaryDataError, BoundarySpec, Grid, make_grid, sample_boundary
from .interface_lab import compare, diagnostics, extract_interfaces
from .partition import RegionLabel, interface_inclusion, predict_partition, transversality_report
from .segregation_systems import (
    EpsSolveConfig,
    TripleField,
    energy,
    limit_a_explicit,
    line_example,
    solve_system_a,
    solve_system_b,
)

__all__ = ["RunManifest", "RunReport", "main", "run_experiment", "sweep"]

log = logging.getLogger("seglab")

SCHEMA_VERSION = "1.0"
SYSTEM_CHOICES = ("a", "b", "limit", "predicted")
EXIT_OK, EXIT_INVARIANT, EXIT_CONVERGENCE, EXIT_IO = 0, 2, 3, 4

# acceptance thresholds recorded with every report
TOL = {
    "nonnegativity": -1e-12,
    "upper_barrier": 1e-10,
    "penalty": 1e-6,
    "monotone_slack": 1e-10,
    "energy_slack": 1e-8,
    "cocycle": 1e-8,
    "bulk_laplacian": 1e-4,
    "difference_laplacian": 1e-4,
    "oracle_sup": 5e-3,
    "oracle_gap": 0.4,
    "transversality": 1e-6,
}


@dataclass(frozen=True)
class RunManifest:
    """Inputs of one run; together with the tool version they fix every output.

    ``bc`` is a catalog id ``"1"``..``"9"``, ``"line"`` for the 1D example or a
    path to a JSON spec. ``n=None`` means 201 (2D) or 1001 (1D); ``delta=None``
    means ``sqrt(epsilon)``.
    """

    bc: str
    n: int | None = None
    epsilon: float = 1e-10
    delta: float | None = None
    systems: tuple[str, ...] = SYSTEM_CHOICES
    out: str | None = None
    eps_start: float = 1e-2
    tool_version: str = __version__

    def __post_init__(self) -> None:
        bad = set(self.systems) - set(SYSTEM_CHOICES)
        if bad:
            raise ValueError(f"unknown systems {sorted(bad)}; choose from {SYSTEM_CHOICES}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.delta is not None and not self.delta > 0:
            raise ValueError("delta must be positive")

    @property
    def is_line(self) -> bool:
        return self.bc == "line"

    @property
    def grid_n(self) -> int:
        return self.n if self.n is not None else (1001 if self.is_line else 201)

    @property
    def threshold(self) -> float:
        return self.delta if self.delta is not None else math.sqrt(self.epsilon)

    def run_name(self) -> str:
        label = Path(self.bc).stem if self.bc.endswith(".json") else (self.bc if self.is_line else f"bc{self.bc}")
        return f"{label}_n{self.grid_n}"

    def resolve(self) -> tuple[BoundarySpec, Grid]:
        if self.is_line:
            return line_example_spec(), make_grid(1, [(0.0, 1.0)], self.grid_n)
        grid = make_grid(2, [(-1.0, 1.0)], self.grid_n)
        if self.bc.isdigit():
            return get_bc(int(self.bc)), grid
        return load_spec(self.bc), grid

    def public(self) -> dict[str, Any]:
        d = asdict(self)
        d.pop("out")
        d["n"] = self.grid_n
        d["delta"] = self.threshold
        d["systems"] = list(self.systems)
        return d


@dataclass(eq=False)
class RunReport:
    """JSON-ready report plus the in-memory objects it was computed from."""

    data: dict[str, Any]
    exit_code: int
    timings: dict[str, float] = field(default_factory=dict)
    triples: dict[str, TripleField] = field(default_factory=dict)
    harmonic: Any = None
    partition: Any = None

    def check(self, name: str) -> dict[str, Any]:
        for c in self.data["checks"]:
            if c["name"] == name:
                return c
        raise KeyError(name)

    def failed(self) -> list[str]:
        return [c["name"] for c in self.data["checks"] if not c["passed"]]


class _Checks:
    def __init__(self):
        self.items: list[dict[str, Any]] = []

    def add(self, name: str, value: float, threshold: float, passed: bool, hard: bool = False) -> None:
        self.items.append(
            {"name": name, "value": float(value), "threshold": float(threshold), "passed": bool(passed), "hard": hard}
        )

    def at_most(self, name, value, threshold, hard=False):
        self.add(name, value, threshold, value <= threshold, hard)

    def at_least(self, name, value, threshold, hard=False):
        self.add(name, value, threshold, value >= threshold, hard)


def _stage_dict(s) -> dict[str, Any]:
    d = asdict(s)
    d["energy_trace"] = list(s.energy_trace)
    return d


def _monotone(values: Sequence[float]) -> float:
    """Largest increase between consecutive values (0 if non-increasing)."""
    inc = [b - a for a, b in zip(values, values[1:])]
    return max([0.0] + inc) if inc else 0.0


def _system_section(t: TripleField, eps_eval: float, diag, chk: _Checks, tag: str, solved: bool) -> dict[str, Any]:
    en = energy(t, eps_eval)
    sec = {
        "epsilon": t.epsilon,
        "iters": t.iters,
        "final_update": t.final_update,
        "stages": [_stage_dict(s) for s in t.stages],
        "energy": asdict(en),
        "diagnostics": asdict(diag),
        "converged": True,
        "error": None,
    }
    chk.at_least(f"{tag}.nonnegativity", diag.min_value, TOL["nonnegativity"], hard=solved)
    if solved:
        chk.at_most(f"{tag}.boundary_exact", diag.boundary_error, 0.0, hard=True)
    chk.at_most(f"{tag}.upper_barrier", diag.max_excess, TOL["upper_barrier"])
    chk.at_most(f"{tag}.penalty", diag.penalty_integral, TOL["penalty"])
    if t.stages:
        chk.at_most(f"{tag}.penalty_monotone", _monotone([s.penalty for s in t.stages]), TOL["monotone_slack"])
    if solved:
        chk.at_most(f"{tag}.bulk_laplacian", max(diag.bulk_laplacian), TOL["bulk_laplacian"])
    if tag == "A":
        chk.at_most("A.difference_laplacian", max(diag.difference_laplacian.values()), TOL["difference_laplacian"])
    if tag == "B":
        worst = max((_monotone(s.energy_trace) for s in t.stages), default=0.0)
        chk.at_most("B.energy_monotone", worst, TOL["energy_slack"])
    return sec


def _oracle_checks(triples: dict[str, TripleField], interfaces, grid: Grid, chk: _Checks) -> dict[str, Any]:
    la, lb = line_example(grid.n[0])
    out: dict[str, Any] = {}
    h = grid.spacing[0]
    for tag, ref in (("A", la), ("B", lb)):
        if tag not in triples:
            continue
        err = float(np.max(np.abs(triples[tag].stack() - ref.stack())))
        out[f"{tag}_sup_error"] = err
        chk.at_most(f"oracle.{tag}_sup_error", err, TOL["oracle_sup"])
        src = "SysA" if tag == "A" else "SysB"
        pts = np.concatenate([interfaces[src][i].points.ravel() for i in (0, 1)])
        dist = float(np.max(np.abs(pts - 0.5))) if pts.size else math.inf
        out[f"{tag}_free_boundary_distance"] = dist
        chk.at_most(f"oracle.{tag}_free_boundary", dist, h * (1 + 1e-9))
    if "A" in triples and "B" in triples:
        gap = float(np.max(np.abs(triples["A"].u3.values - triples["B"].u3.values)))
        out["u3_gap"] = gap
        chk.at_least("oracle.u3_gap", gap, TOL["oracle_gap"])
    return out


def run_experiment(manifest: RunManifest) -> RunReport:
    """Harmonic extensions, requested solves, prediction, extraction, comparison.

    Writes artifacts to ``manifest.out/<run name>`` when ``out`` is set.
    Solver failures are recorded in the report rather than raised; an unreadable
    spec file raises ``OSError``.
    """
    timings: dict[str, float] = {}
    t0 = time.perf_counter()
    spec, grid = manifest.resolve()
    chk = _Checks()
    eps = manifest.epsilon
    delta = manifest.threshold
    tol_if = 2 * max(grid.spacing)
    data: dict[str, Any] = {
        "schema_version": SCHEMA_VERSION,
        "tool_version": manifest.tool_version,
        "manifest": manifest.public(),
        "grid": {"dim": grid.dim, "n": list(grid.n), "extents": [list(e) for e in grid.extents], "spacing": list(grid.spacing)},
        "interface_tolerance": tol_if,
        "thresholds": dict(TOL),
    }
    val = validate_spec(spec, grid)
    data["boundary"] = val
    report = RunReport(data, EXIT_OK, timings)
    try:
        phi = sample_boundary(spec, grid)
    except BoundaryDataError as exc:
        chk.add("boundary.valid", val["max_product"], 1e-12, False, hard=True)
        data.update(checks=chk.items, systems={}, comparisons=[], interfaces={}, error=str(exc))
        data["status"] = {"exit_code": EXIT_INVARIANT, "hard_failures": ["boundary.valid"], "soft_failures": []}
        report.exit_code = EXIT_INVARIANT
        if manifest.out is not None:
            d = Path(manifest.out) / manifest.run_name()
            d.mkdir(parents=True, exist_ok=True)
            dump_json(data, d / "report.json")
        return report
    chk.add("boundary.valid", val["max_product"], 1e-12, True, hard=True)

    hs = harmonic_extensions(spec, grid)
    h = harmonic_differences(spec, grid)
    report.harmonic = h
    data["harmonic"] = {"cocycle_residual": h.cocycle_residual()}
    chk.at_most("cocycle", h.cocycle_residual(), TOL["cocycle"])
    timings["harmonic"] = time.perf_counter() - t0

    cfg = EpsSolveConfig(epsilon=eps, eps_start=max(manifest.eps_start, eps))
    systems: dict[str, Any] = {}
    triples: dict[str, TripleField] = {}
    exit_code = EXIT_OK
    for key, tag, solver in (("a", "A", solve_system_a), ("b", "B", solve_system_b)):
        if key not in manifest.systems:
            continue
        ts = time.perf_counter()
        try:
            t = solver(spec, grid, cfg)
        except ConvergenceError as exc:
            systems[tag] = {"converged": False, "error": str(exc), "failed_stage": exc.stage}
            chk.add(f"{tag}.converged", exc.residual if exc.residual is not None else math.nan, cfg.outer_tol, False, hard=True)
            exit_code = max(exit_code, EXIT_CONVERGENCE)
            continue
        finally:
            timings[f"solve_{tag}"] = time.perf_counter() - ts
        chk.add(f"{tag}.converged", t.final_update, cfg.outer_tol, True, hard=True)
        triples[tag] = t
        diag = diagnostics(t, hs, h, eps, phi)
        systems[tag] = _system_section(t, eps, diag, chk, tag, solved=True)

    limit = limit_a_explicit(h)
    if "limit" in manifest.systems:
        triples["LimitA"] = limit
        diag = diagnostics(limit, hs, h, eps, phi)
        sec = _system_section(limit, eps, diag, chk, "LimitA", solved=False)
        prod = limit.u1.values * limit.u2.values * limit.u3.values
        chk.at_most("LimitA.product_zero", float(np.max(np.abs(prod))), 0.0)
        systems["LimitA"] = sec
    data["systems"] = systems

    if "predicted" in manifest.systems:
        ts = time.perf_counter()
        pm = predict_partition(h)
        report.partition = pm
        inc = interface_inclusion(pm, h)
        trans = transversality_report(h, TOL["transversality"])
        data["partition"] = {
            "counts": pm.counts,
            "contours": {p: len(v) for p, v in pm.contours.items()},
            "triple_points": [asdict(p) for p in pm.triples],
            "inclusion": asdict(inc),
            "transversality": {k: asdict(v) for k, v in trans.items()},
        }
        chk.at_most("partition.undecided", pm.counts[RegionLabel.UNDECIDED.name], 0)
        chk.at_most("partition.inclusion_distance", inc.max_distance, 1e-12)
        degenerate = [k for k, v in trans.items() if v.degenerate]
        chk.at_most("partition.transversality_flags", len(degenerate), 0)
        timings["partition"] = time.perf_counter() - ts

    interfaces = {}
    for tag, src in (("A", "SysA"), ("B", "SysB")):
        if tag in triples:
            interfaces[src] = extract_interfaces(triples[tag], delta)
    if "predicted" in manifest.systems:
        interfaces["Predicted"] = extract_interfaces(limit, delta, "Predicted")
    data["interfaces"] = {src: [len(s) for s in sets] for src, sets in interfaces.items()}
    comps = []
    names = [s for s in ("SysA", "SysB", "Predicted") if s in interfaces]
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            for c in range(3):
                m = compare(interfaces[a][c], interfaces[b][c])
                comps.append({"pair": f"{a}-{b}", "component": c + 1, **asdict(m)})
                chk.at_most(f"hausdorff.{a}-{b}.u{c + 1}", m.hausdorff, tol_if * (1 + 1e-9))
    data["comparisons"] = comps

    if manifest.is_line:
        data["oracle"] = _oracle_checks(triples, interfaces, grid, chk)

    hard = [c["name"] for c in chk.items if c["hard"] and not c["passed"]]
    soft = [c["name"] for c in chk.items if not c["hard"] and not c["passed"]]
    if hard and exit_code == EXIT_OK:
        exit_code = EXIT_INVARIANT
    data["checks"] = chk.items
    data["status"] = {"exit_code": exit_code, "hard_failures": hard, "soft_failures": soft}
    report.exit_code = exit_code
    report.triples = triples
    timings["total"] = time.perf_counter() - t0
    if manifest.out is not None:
        _write_outputs(manifest, report, grid, hs, h)
    return report


def _write_outputs(manifest: RunManifest, report: RunReport, grid: Grid, hs, h) -> Path:
    d = Path(manifest.out) / manifest.run_name()
    d.mkdir(parents=True, exist_ok=True)
    dump_json(report.data, d / "report.json")
    dump_json(report.timings, d / "timings.json")
    for i, f in enumerate(hs, start=1):
        write_field_csv(f, d / f"h{i}.csv")
    for name, f in (("h12", h.h12), ("h13", h.h13), ("h23", h.h23)):
        write_field_csv(f, d / f"{name}.csv")
    for tag, t in report.triples.items():
        sec = report.data["systems"][tag]
        man = {"system": t.system, "epsilon": t.epsilon, "iters": t.iters, "final_update": t.final_update, "energy": sec["energy"]}
        write_triple(t, d, f"sys{tag}", man)
        if grid.dim == 2:
            for i, comp in enumerate(t.components, start=1):
                write_field_pgm(comp, d / f"sys{tag}_u{i}.pgm")
    if report.partition is not None:
        write_contours_csv(report.partition.contours, d / "contours.csv")
        if grid.dim == 2:
            write_labels_pgm(report.partition.labels, d / "labels.pgm")
    return d


# --- sweeps ---------------------------------------------------------------------------------

SWEEP_AXES = {"epsilon": float, "n": int, "delta": float}


def _trend(prev: float | None, cur: float) -> str:
    if prev is None or not (math.isfinite(prev) and math.isfinite(cur)):
        return "start" if prev is None else "n/a"
    if cur < prev:
        return "down"
    if cur > prev:
        return "up"
    return "equal"


def sweep(template: RunManifest, axis: str, values: Sequence[float], csv_path: str | Path | None = None) -> list[RunReport]:
    """Run the template once per value of ``axis`` and aggregate to CSV.

    Raises
    ------
    ValueError
        For an unknown axis or values that are not sorted.
    """
    if axis not in SWEEP_AXES:
        raise ValueError(f"axis must be one of {sorted(SWEEP_AXES)}")
    values = [SWEEP_AXES[axis](v) for v in values]
    if not values:
        raise ValueError("no sweep values")
    if values != sorted(values) and values != sorted(values, reverse=True):
        raise ValueError("sweep values must be sorted")
    reports = []
    for v in values:
        m = replace(template, **{axis: v})
        if template.out is not None:
            m = replace(m, out=str(Path(template.out) / f"{axis}={v:g}"))
        reports.append(run_experiment(m))
    if csv_path is not None:
        _write_sweep_csv(axis, values, reports, csv_path)
    return reports


def _max_hausdorff(report: RunReport, pair: str) -> float:
    vals = [c["hausdorff"] for c in report.data.get("comparisons", []) if c["pair"] == pair]
    return max(vals) if vals else math.nan


def _write_sweep_csv(axis: str, values, reports: list[RunReport], path) -> None:
    cols = [axis, "exit_code"]
    for tag in ("A", "B"):
        cols += [f"penalty_{tag}", f"penalty_trend_{tag}", f"energy_{tag}"]
    cols += ["hausdorff_SysA-SysB", "hausdorff_SysA-Predicted", "hausdorff_SysB-Predicted", "failed_checks"]
    prev: dict[str, float | None] = {"A": None, "B": None}
    rows = []
    for v, r in zip(values, reports):
        row: dict[str, Any] = {axis: repr(v), "exit_code": r.exit_code}
        for tag in ("A", "B"):
            sec = r.data.get("systems", {}).get(tag)
            if sec and sec.get("converged"):
                p = sec["diagnostics"]["penalty_integral"]
                row[f"penalty_{tag}"] = repr(p)
                row[f"penalty_trend_{tag}"] = _trend(prev[tag], p)
                row[f"energy_{tag}"] = repr(sec["energy"]["total"])
                prev[tag] = p
            else:
                row[f"penalty_{tag}"] = row[f"penalty_trend_{tag}"] = row[f"energy_{tag}"] = ""
        for pair in ("SysA-SysB", "SysA-Predicted", "SysB-Predicted"):
            row[f"hausdorff_{pair}"] = repr(_max_hausdorff(r, pair))
        row["failed_checks"] = ";".join(r.failed())
        rows.append(row)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


# --- command line ----------------------------------------------------------------------------


def _parse_systems(text: str) -> tuple[str, ...]:
    items = tuple(s.strip().lower() for s in text.split(",") if s.strip())
    bad = set(items) - set(SYSTEM_CHOICES)
    if bad or not items:
        raise argparse.ArgumentTypeError(f"systems must be a comma list from {','.join(SYSTEM_CHOICES)}")
    return tuple(s for s in SYSTEM_CHOICES if s in items)


def _parse_delta(text: str) -> float | None:
    if text == "auto":
        return None
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("delta must be a float or 'auto'") from None
    if not v > 0:
        raise argparse.ArgumentTypeError("delta must be positive")
    return v


def _parse_sweep(text: str) -> tuple[str, list[str]]:
    axis, _, vals = text.partition("=")
    if axis not in SWEEP_AXES or not vals:
        raise argparse.ArgumentTypeError(f"sweep must look like axis=v1,v2 with axis in {sorted(SWEEP_AXES)}")
    return axis, [v for v in vals.split(",") if v]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="seglab", description="Penalised segregation systems and their free boundaries.")
    p.add_argument("--bc", default="1", help="catalog id 1-9, 'all', 'line' (1D example), 'list', or a JSON spec path")
    p.add_argument("--n", type=int, default=None, help="nodes per axis (default 201, or 1001 for 'line')")
    p.add_argument("--epsilon", type=float, default=1e-10)
    p.add_argument("--eps-start", type=float, default=1e-2, help="first continuation stage")
    p.add_argument("--delta", type=_parse_delta, default=None, help="interface threshold or 'auto' (sqrt(epsilon))")
    p.add_argument("--systems", type=_parse_systems, default=SYSTEM_CHOICES, help="comma list of a,b,limit,predicted")
    p.add_argument("--out", default="runs", help="output directory")
    p.add_argument("--sweep", type=_parse_sweep, default=None, metavar="AXIS=V1,V2,...")
    p.add_argument("--workers", type=int, default=1, help="parallel runs when --bc all")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _summary(m: RunManifest, r: RunReport) -> str:
    failed = r.failed()
    tail = "all checks passed" if not failed else "failed: " + ", ".join(failed)
    return f"{m.run_name()}: exit {r.exit_code}; {tail}"


def _run_one(m: RunManifest) -> tuple[str, int]:
    try:
        r = run_experiment(m)
    except OSError as exc:
        return f"{m.run_name()}: I/O error: {exc}", EXIT_IO
    return _summary(m, r), r.exit_code


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    if args.bc == "list":
        for e in CATALOG:
            print(f"{e.id}: {e.description}")
        return EXIT_OK
    bcs = [str(e.id) for e in CATALOG] if args.bc == "all" else [args.bc]
    for bc in bcs:
        if not (bc.isdigit() or bc == "line" or Path(bc).is_file()):
            print(f"error: unknown boundary condition {bc!r} (no such catalog id or file)", file=sys.stderr)
            return EXIT_IO
        if bc.isdigit() and not 1 <= int(bc) <= len(CATALOG):
            print(f"error: catalog id must be 1..{len(CATALOG)}", file=sys.stderr)
            return EXIT_IO
    try:
        manifests = [
            RunManifest(bc=bc, n=args.n, epsilon=args.epsilon, delta=args.delta, systems=args.systems,
                        out=args.out, eps_start=args.eps_start)
            for bc in bcs
        ]
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    code = EXIT_OK
    if args.sweep is not None:
        axis, vals = args.sweep
        for m in manifests:
            try:
                reps = sweep(m, axis, vals, Path(args.out) / f"sweep_{axis}_{m.run_name()}.csv")
            except ValueError as exc:
                print(f"error: {exc}", file=sys.stderr)
                return EXIT_IO
            except OSError as exc:
                print(f"error: I/O failure: {exc}", file=sys.stderr)
                return EXIT_IO
            for r in reps:
                print(_summary(replace(m, **{axis: SWEEP_AXES[axis](r.data["manifest"][axis])}), r))
                code = max(code, r.exit_code)
        return code
    if args.workers > 1 and len(manifests) > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_run_one, manifests))
    else:
        results = [_run_one(m) for m in manifests]
    for line, c in results:
        print(line)
        code = max(code, c)
    return code


if __name__ == "__main__":
    raise SystemExit(main())
