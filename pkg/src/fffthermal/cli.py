"""Command-line entry point: ``fffthermal <subcommand> ...``."""
from __future__ import annotations

import argparse
import logging
import math
import os
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import io
from .calibration import (CalibrationError, CalibrationProblem, Case, ResponseModel,
                          fit, sweep)
from .compare import ComparisonError, cmd_compare
from .config import ConfigError, RunConfig, parse_config
from .mesostructure import GeometryError, VoxelGrid, save_grid, write_vtk_grid
from .thermal import SolverError, run_transient, write_vtk_field

log = logging.getLogger("fffthermal")

_ERRORS = (ConfigError, GeometryError, SolverError, CalibrationError, ComparisonError,
           io.DataFormatError, OSError, ValueError)


class UsageError(ValueError):
    pass


def _load(path: str, args) -> RunConfig:
    cfg = parse_config(path)
    scenario = cfg.scenario
    if getattr(args, "dt", None) is not None:
        if not args.dt > 0:
            raise UsageError(f"--dt must be > 0, got {args.dt}")
        scenario = replace(scenario, dt=args.dt)
    geometry = cfg.geometry
    if getattr(args, "coarsen", None) is not None:
        if args.coarsen < 1:
            raise UsageError(f"--coarsen must be >= 1, got {args.coarsen}")
        geometry = replace(geometry, coarsen=args.coarsen)
    return replace(cfg, scenario=scenario, geometry=geometry)


def _threads(args) -> int:
    n = args.threads if args.threads is not None else (os.cpu_count() or 1)
    if n < 1:
        raise UsageError(f"--threads must be >= 1, got {n}")
    return n


def _describe(grid: VoxelGrid) -> str:
    nx, ny, nz = grid.shape
    dx, dy, dz = grid.spacing
    return (f"{nx}x{ny}x{nz} = {grid.n_cells} cells, spacing {dx:.4g}x{dy:.4g}x{dz:.4g} mm, "
            f"PLA fraction {grid.pla_fraction:.4f}")


# -- subcommands -----------------------------------------------------------

def cmd_gen_mesh(args) -> int:
    cfg = _load(args.config, args)
    grid = cfg.geometry.build()
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    if out.suffix.lower() == ".vtk":
        write_vtk_grid(grid, out, cfg.name)
    else:
        save_grid(grid, out)
    if args.vtk:
        write_vtk_grid(grid, args.vtk, cfg.name)
    print(f"{cfg.name}: {_describe(grid)} -> {out}")
    return 0


def cmd_simulate(args) -> int:
    cfg = _load(args.config, args)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    grid = cfg.geometry.build()
    every = args.snapshot_every if args.snapshot_every is not None else cfg.output.snapshot_every
    if every < 0:
        raise UsageError(f"--snapshot-every must be >= 0, got {every}")
    next_snap = [every]
    written = []

    def on_step(field_):
        if every and field_.time >= next_snap[0] - 1e-9:
            path = out / f"field_{int(round(field_.time)):06d}.vtk"
            write_vtk_field(field_, path)
            written.append(path)
            while next_snap[0] <= field_.time + 1e-9:
                next_snap[0] += every

    t0 = time.perf_counter()
    result = run_transient(grid, cfg.scenario, cfg.materials.pla, cfg.materials.air,
                           on_step=on_step if every else None)
    wall = time.perf_counter() - t0
    io.write_probe_csv(result.probes, out / "probes.csv")
    write_vtk_field(result.final, out / "final.vtk")
    if cfg.output.plots and not args.no_plots:
        from .plotting import plot_probes
        plot_probes(result.probes, out / "probes.png", cfg.name)
    mean = result.probes.mean
    lines = [
        f"config          : {cfg.name}",
        f"grid            : {_describe(grid)}",
        f"duration        : {cfg.scenario.duration:g} s, dt {cfg.scenario.dt:g} s",
        f"final mean      : {mean[-1]:.4f} degC",
        f"wall clock      : {wall:.2f} s",
        f"snapshots       : {len(written)}",
    ]
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


def _experiment(cfg: RunConfig, args):
    path = getattr(args, "experiment", None) or cfg.resolve(cfg.calibration.experiment)
    if path is None:
        raise UsageError("no experiment trace: set calibration.experiment in the config "
                         "or pass --experiment")
    return io.ingest_experiment(path)


def _problem(cfg: RunConfig, args, case: int) -> CalibrationProblem:
    trace = _experiment(cfg, args)
    scenario = cfg.scenario
    end = float(trace.times[-1])
    if end < scenario.duration:
        scenario = replace(scenario, duration=max(end, scenario.dt))
    grid = cfg.geometry.build()
    coarse = None
    cf = cfg.calibration.coarse_factor
    if cf and cf > cfg.geometry.coarsen:
        coarse = cfg.geometry.build(cf)
    cal = cfg.calibration
    return CalibrationProblem(Case(case), trace, grid, scenario, cfg.materials.pla,
                              cfg.materials.air, cal.h_bounds, cal.T_c_side_bounds,
                              cal.T_c_top_bounds, cal.lattice, coarse, _threads(args))


def _report_paths(output: str, default: str) -> tuple[Path, Path]:
    """``-o`` names either a CSV file or a directory that receives ``default``."""
    out = Path(output)
    if out.suffix.lower() != ".csv":
        out.mkdir(parents=True, exist_ok=True)
        return out / default, out
    out.parent.mkdir(parents=True, exist_ok=True)
    return out, out.parent


def cmd_calibrate(args) -> int:
    cfg = _load(args.config, args)
    case = args.case if args.case is not None else cfg.calibration.case
    problem = _problem(cfg, args, case)
    result = fit(problem, polish=not args.no_polish)
    table_path, folder = _report_paths(args.output, "cost_table.csv")
    stem = table_path.stem
    io.write_cost_table(result.table, table_path)
    summary = result.summary()
    (folder / f"{stem}_summary.txt").write_text(summary + "\n")
    model = ResponseModel(problem.grid, problem.scenario, problem.pla, problem.air)
    sim = model.trace(result.h, result.T_c_side, result.T_c_top)
    io.write_table(folder / f"{stem}_fit.csv", ["time_s", "sim_mean_C"],
                   zip(model.times, sim))
    if cfg.output.plots and not args.no_plots:
        from .plotting import plot_cost_table, plot_fit
        plot_cost_table(result.table, folder / f"{stem}.png", f"{cfg.name}, case {case}")
        plot_fit(model.times, sim, problem.trace, folder / f"{stem}_fit.png",
                 f"{cfg.name}, case {case}")
    print(summary)
    return 0


def parse_param(spec: str) -> tuple[str, np.ndarray]:
    """``name=start:stop:step`` (inclusive stop) or ``name=v1,v2,...``."""
    name, sep, rng = spec.partition("=")
    name = name.strip()
    if not sep or not name:
        raise UsageError(f"--param {spec!r}: expected name=start:stop:step")
    try:
        if ":" in rng:
            parts = [float(p) for p in rng.split(":")]
            if len(parts) != 3:
                raise ValueError
            start, stop, stp = parts
            if stp <= 0 or stop < start:
                raise UsageError(f"--param {spec!r}: need step > 0 and stop >= start")
            n = int(math.floor((stop - start) / stp + 1e-9)) + 1
            values = start + stp * np.arange(n)
        else:
            values = np.array([float(v) for v in rng.split(",") if v.strip()])
            if values.size == 0:
                raise ValueError
    except UsageError:
        raise
    except ValueError:
        raise UsageError(f"--param {spec!r}: expected name=start:stop:step or "
                         f"name=v1,v2,...") from None
    return name, values


def cmd_sweep(args) -> int:
    cfg = _load(args.config, args)
    case = args.case if args.case is not None else cfg.calibration.case
    values = dict(parse_param(p) for p in args.param)
    problem = _problem(cfg, args, case)
    bounds = dict(zip(problem.names, problem.bounds))
    for name, vals in values.items():
        if name in bounds:
            lo, hi = bounds[name]
            if name != "h" and (vals.min() < lo or vals.max() > hi):
                log.warning("%s values outside bounds [%g, %g]", name, lo, hi)
    rows = sweep(problem, values)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    io.write_cost_table(rows, out)
    if cfg.output.plots and not args.no_plots:
        from .plotting import plot_cost_table
        plot_cost_table(rows, out.with_suffix(".png"), f"{cfg.name}, case {case}")
    best = min(rows, key=lambda r: r.cost)
    print(f"{len(rows)} points -> {out}")
    print(f"best: h={best.h:g} T_c_side={best.T_c_side:g} T_c_top={best.T_c_top:g} "
          f"rmse={best.cost:.5f} degC")
    return 0


def cmd_compare_cli(args) -> int:
    configs = [_load(p, args) for p in args.configs]
    report = cmd_compare(configs, threshold_pct=args.threshold, threads=_threads(args),
                         transient=not args.steady_only)
    table_path, folder = _report_paths(args.output, "comparison.csv")
    stem = table_path.stem
    io.write_table(table_path, ["variant", "cells", "steady_mean_C", "wall_clock_s"],
                   [(v.name, v.n_cells, v.steady_mean, v.wall_clock) for v in report.variants])
    io.write_table(folder / f"{stem}_pairs.csv",
                   ["a", "b", "steady_dev_C", "steady_dev_pct", "max_dev_C", "max_dev_pct",
                    "exceeds"],
                   [(p.a, p.b, p.steady_C, p.steady_pct, p.max_C, p.max_pct, int(p.exceeds))
                    for p in report.pairs])
    traces = [v for v in report.variants if v.series is not None]
    if traces:
        n = min(v.series.times.size for v in traces)
        io.write_table(folder / f"{stem}_traces.csv",
                       ["time_s"] + [f"{v.name}_mean_C" for v in traces],
                       [(traces[0].series.times[i], *(float(v.series.mean[i]) for v in traces))
                        for i in range(n)])
    summary = report.summary()
    (folder / f"{stem}_summary.txt").write_text(summary + "\n")
    if configs[0].output.plots and not args.no_plots:
        from .plotting import plot_comparison
        plot_comparison(report, folder / f"{stem}.png")
    print(summary)
    return 0


# -- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="fffthermal",
        description="Voxel heat-transfer simulation and convective calibration "
                    "for FFF-printed specimens.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, threads=False):
        sp.add_argument("--dt", type=float, help="time step in s (overrides the config)")
        sp.add_argument("--coarsen", type=int, help="mesh coarsening factor")
        if threads:
            sp.add_argument("--threads", type=int,
                            help="worker threads (default: available cores)")

    g = sub.add_parser("gen-mesh", help="build the voxel grid of a config")
    g.add_argument("config")
    g.add_argument("-o", "--output", required=True,
                   help="binary grid file (or .vtk for a VTK file)")
    g.add_argument("--vtk", help="also write a VTK file here")
    common(g)
    g.set_defaults(func=cmd_gen_mesh)

    s = sub.add_parser("simulate", help="run the heating transient")
    s.add_argument("config")
    s.add_argument("-o", "--output", required=True, help="output directory")
    s.add_argument("--snapshot-every", type=float, help="seconds between VTK field snapshots")
    s.add_argument("--no-plots", action="store_true")
    common(s)
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("calibrate", help="fit h and ambient temperatures to an experiment")
    c.add_argument("config")
    c.add_argument("--case", type=int, choices=(1, 2, 3))
    c.add_argument("--experiment", help="experiment CSV (overrides the config)")
    c.add_argument("-o", "--output", required=True, help="cost table .csv or a directory")
    c.add_argument("--no-polish", action="store_true",
                   help="skip the full-resolution refinement after a coarse search")
    c.add_argument("--no-plots", action="store_true")
    common(c, threads=True)
    c.set_defaults(func=cmd_calibrate)

    m = sub.add_parser("compare", help="compare geometry variants under one scenario")
    m.add_argument("configs", nargs="+")
    m.add_argument("-o", "--output", required=True, help="report .csv or a directory")
    m.add_argument("--threshold", type=float, default=2.0,
                   help="flag pairs deviating more than this percent of the rise")
    m.add_argument("--steady-only", action="store_true", help="skip the transient runs")
    m.add_argument("--no-plots", action="store_true")
    common(m, threads=True)
    m.set_defaults(func=cmd_compare_cli)

    w = sub.add_parser("sweep", help="cost table over a parameter lattice")
    w.add_argument("config")
    w.add_argument("--param", action="append", required=True,
                   help="name=start:stop:step, repeatable (names: h, T_c, T_c_side, T_c_top)")
    w.add_argument("--case", type=int, choices=(1, 2, 3))
    w.add_argument("--experiment", help="experiment CSV (overrides the config)")
    w.add_argument("-o", "--output", required=True, help="cost table CSV")
    w.add_argument("--no-plots", action="store_true")
    common(w, threads=True)
    w.set_defaults(func=cmd_sweep)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except _ERRORS as exc:
        print(f"fffthermal {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
