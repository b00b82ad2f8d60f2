"""Run several geometry variants under one scenario and tabulate differences."""
from __future__ import annotations

import itertools
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .config import RunConfig
from .mesostructure import VoxelGrid
from .thermal import ProbeSeries, ThermalScenario, run_transient, steady_probes


class ComparisonError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class VariantResult:
    name: str
    n_cells: int
    shape: tuple[int, int, int]
    steady_mean: float          # degC, steady-state probe mean
    series: Optional[ProbeSeries]
    wall_clock: float           # s spent in the transient run (steady solve if none)


@dataclass(frozen=True)
class PairDeviation:
    a: str
    b: str
    steady_C: float
    steady_pct: float           # percent of the mean steady rise above T_a
    max_C: float                # largest trace difference; nan without traces
    max_pct: float
    exceeds: bool


@dataclass(frozen=True, eq=False)
class ComparisonReport:
    scenario: ThermalScenario
    variants: tuple[VariantResult, ...]
    pairs: tuple[PairDeviation, ...]
    threshold_pct: float

    @property
    def flagged(self) -> tuple[PairDeviation, ...]:
        return tuple(p for p in self.pairs if p.exceeds)

    def variant(self, name: str) -> VariantResult:
        for v in self.variants:
            if v.name == name:
                return v
        raise KeyError(name)

    def summary(self) -> str:
        lines = [f"{'variant':<24}{'cells':>10}{'steady mean degC':>18}{'wall s':>10}"]
        for v in self.variants:
            lines.append(f"{v.name:<24}{v.n_cells:>10d}{v.steady_mean:>18.4f}{v.wall_clock:>10.2f}")
        lines.append("")
        lines.append(f"pairwise steady deviation (threshold {self.threshold_pct:g}% of rise)")
        for p in self.pairs:
            flag = "  EXCEEDS" if p.exceeds else ""
            lines.append(f"  {p.a} vs {p.b}: {p.steady_C:.4f} degC = {p.steady_pct:.2f}%"
                         f"{flag}")
        return "\n".join(lines)


def _run_variant(name: str, grid: VoxelGrid, cfg: RunConfig, scenario: ThermalScenario,
                 transient: bool) -> VariantResult:
    pla, air = cfg.materials.pla, cfg.materials.air
    series = None
    t0 = time.perf_counter()
    if transient:
        series = run_transient(grid, scenario, pla, air).probes
        wall = time.perf_counter() - t0
        steady = float(steady_probes(grid, scenario, pla=pla, air=air).mean())
    else:
        steady = float(steady_probes(grid, scenario, pla=pla, air=air).mean())
        wall = time.perf_counter() - t0
    return VariantResult(name, grid.n_cells, grid.shape, steady, series, wall)


def _unique_names(configs: Sequence[RunConfig]) -> list[str]:
    names = [c.name for c in configs]
    seen: dict[str, int] = {}
    out = []
    for n in names:
        if names.count(n) > 1:
            seen[n] = seen.get(n, 0) + 1
            out.append(f"{n}#{seen[n]}")
        else:
            out.append(n)
    return out


def cmd_compare(configs: Sequence[RunConfig], threshold_pct: float = 2.0,
                threads: int = 1, transient: bool = True,
                dt: Optional[float] = None,
                grids: Optional[Sequence[VoxelGrid]] = None) -> ComparisonReport:
    """Simulate every variant and report pairwise steady-state deviations.

    All configs must share the same scenario.  ``grids`` overrides the grids
    the configs would build (useful when the caller already has them).
    ``transient=False`` skips the heating runs and times the steady solves.
    """
    if len(configs) < 2:
        raise ComparisonError("compare needs at least two variants")
    scenario = configs[0].scenario
    for cfg in configs[1:]:
        if cfg.scenario != scenario:
            raise ComparisonError(
                f"scenario of {cfg.name!r} differs from {configs[0].name!r}: "
                f"{cfg.scenario} vs {scenario}")
    if dt is not None:
        scenario = replace(scenario, dt=dt)
    if grids is None:
        grids = [c.geometry.build() for c in configs]
    elif len(grids) != len(configs):
        raise ComparisonError("one grid per config is required")
    names = _unique_names(configs)

    jobs = list(zip(names, grids, configs))
    run = lambda job: _run_variant(job[0], job[1], job[2], scenario, transient)  # noqa: E731
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            variants = list(pool.map(run, jobs))
    else:
        variants = [run(j) for j in jobs]

    pairs = []
    for va, vb in itertools.combinations(variants, 2):
        rise = 0.5 * ((va.steady_mean - scenario.T_a) + (vb.steady_mean - scenario.T_a))
        d = abs(va.steady_mean - vb.steady_mean)
        pct = 100.0 * d / abs(rise) if rise else (0.0 if d == 0 else math.inf)
        if va.series is not None and vb.series is not None:
            n = min(va.series.times.size, vb.series.times.size)
            m = float(np.max(np.abs(va.series.mean[:n] - vb.series.mean[:n])))
            mpct = 100.0 * m / abs(rise) if rise else (0.0 if m == 0 else math.inf)
        else:
            m = mpct = math.nan
        pairs.append(PairDeviation(va.name, vb.name, d, pct, m, mpct, pct > threshold_pct))
    return ComparisonReport(scenario, tuple(variants), tuple(pairs), threshold_pct)
