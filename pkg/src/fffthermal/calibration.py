"""Fitting convective parameters to measured heating curves.

Three hypotheses for the ambient air are supported:

* CASE1: air at room temperature on every free surface (only ``h`` is fitted)
* CASE2: one elevated air temperature for all free surfaces
* CASE3: separate air temperatures for the side faces and the top face

For a fixed ``h`` the heat equation is linear in the bed, side-air and
top-air temperatures, so the probe-mean trace is a fixed combination of three
unit responses.  These are computed once per ``h`` and reused for every
ambient temperature the search visits.
"""
from __future__ import annotations

import enum
import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import lsq_linear, minimize

from .mesostructure import VoxelGrid
from .thermal import (AIR_PROPS, PLA_PROPS, MaterialProperties, SolverError,
                      ThermalScenario, assemble, apply_dirichlet,
                      default_probe_positions, pcg, probe_operator)

log = logging.getLogger(__name__)


class CalibrationError(RuntimeError):
    pass


class Case(enum.IntEnum):
    CASE1 = 1
    CASE2 = 2
    CASE3 = 3


@dataclass(frozen=True, eq=False)
class ExperimentTrace:
    """Measured heating curve.  ``probes`` holds per-point columns if known."""

    specimen: str
    times: np.ndarray
    mean: np.ndarray
    probes: Optional[np.ndarray] = None
    envelope: Optional[tuple[np.ndarray, np.ndarray]] = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        mean = np.asarray(self.mean, dtype=float)
        if times.shape != mean.shape or times.ndim != 1:
            raise ValueError("times and mean must be 1D arrays of equal length")
        if times.size and np.any(np.diff(times) < 0):
            raise ValueError("experiment times must be non-decreasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "mean", mean)

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0]) if self.times.size else 0.0


def _collapse_duplicates(times: np.ndarray, values: np.ndarray):
    uniq, inv = np.unique(times, return_inverse=True)
    if uniq.size == times.size:
        order = np.argsort(times, kind="stable")
        return times[order], values[order]
    sums = np.bincount(inv, weights=values)
    counts = np.bincount(inv)
    return uniq, sums / counts


def cost(sim_times: np.ndarray, sim_mean: np.ndarray, exp: ExperimentTrace) -> float:
    """RMSE (degC) between a simulated mean trace and the experiment.

    The experiment is linearly interpolated onto the simulated sample times
    that fall inside its time range.  Samples sharing a timestamp are
    averaged first.
    """
    sim_times = np.asarray(sim_times, dtype=float)
    sim_mean = np.asarray(sim_mean, dtype=float)
    if exp.times.size == 0:
        raise CalibrationError(f"experiment {exp.specimen!r} has no samples")
    et, em = _collapse_duplicates(exp.times, exp.mean)
    sel = (sim_times >= et[0] - 1e-9) & (sim_times <= et[-1] + 1e-9)
    if not sel.any():
        raise CalibrationError(
            f"no overlap between simulation [{sim_times[0]:g}, {sim_times[-1]:g}] s and "
            f"experiment {exp.specimen!r} [{et[0]:g}, {et[-1]:g}] s")
    ref = np.interp(sim_times[sel], et, em)
    return float(np.sqrt(np.mean((sim_mean[sel] - ref) ** 2)))


def series_cost(series, exp: ExperimentTrace) -> float:
    return cost(series.times, series.mean, exp)


# -- forward model ---------------------------------------------------------

class ResponseModel:
    """Probe-mean traces for one grid and fixed bed/room temperatures.

    ``trace(h, T_c_side, T_c_top)`` superposes three unit responses
    computed with the same backward-Euler / CG stepping as ``run_transient``.
    """

    def __init__(self, grid: VoxelGrid, scenario: ThermalScenario,
                 pla: MaterialProperties = PLA_PROPS, air: MaterialProperties = AIR_PROPS,
                 probes: Optional[np.ndarray] = None):
        if scenario.T_b is None:
            raise CalibrationError("calibration needs a bed temperature")
        self.grid = grid
        self.scenario = scenario
        self.base = apply_dirichlet(assemble(grid, pla, air), grid, 1.0)
        pos = default_probe_positions(grid) if probes is None else np.asarray(probes, float)
        P = probe_operator(grid, pos)
        self.p_mean = np.asarray(P.mean(axis=0)).ravel()
        self.times = np.arange(0.0, math.floor(scenario.duration + 1e-9) + 1.0)
        self._cache: dict[float, np.ndarray] = {}

    def unit_responses(self, h: float) -> np.ndarray:
        """(n_times, 3) probe-mean rise per degree of bed, side-air, top-air excess."""
        key = round(float(h), 12)
        got = self._cache.get(key)
        if got is not None:
            return got
        sc, base = self.scenario, self.base
        dt = sc.dt
        K = (base.K + h * (base.K_robin_side + base.K_robin_top)).tocsr()
        m = base.C / dt
        fixed = base.fixed
        fi = np.flatnonzero(~fixed)
        bi = np.flatnonzero(fixed)
        A = (K + sp.diags(m)).tocsr()
        Af = A[fi]
        Aff = Af[:, fi].tocsr()
        forcing = np.column_stack([
            -Af[:, bi] @ np.ones(bi.size),
            h * base.r_side[fi],
            h * base.r_top[fi],
        ])
        diag = Aff.diagonal()
        U = np.zeros((base.n, 3))
        U[bi, 0] = 1.0
        n_steps = int(math.ceil(sc.duration / dt - 1e-9))
        step_t = np.minimum(np.arange(n_steps + 1) * dt, sc.duration)
        vals = np.empty((n_steps + 1, 3))
        vals[0] = 0.0  # initial excess is zero, bed clamps from the first step on
        Uf = U[fi]
        prev = Uf
        mf = m[fi][:, None]
        # same accuracy as stepping absolute temperatures of order one degree
        atol = 1e-8 * float(np.linalg.norm(mf))
        for n in range(1, n_steps + 1):
            guess = 2.0 * Uf - prev
            prev = Uf
            Uf = pcg(Aff, mf * Uf + forcing, x0=guess, diag=diag, atol=atol)[0]
            U[fi] = Uf
            vals[n] = self.p_mean @ U
        out = np.column_stack([np.interp(self.times, step_t, vals[:, c]) for c in range(3)])
        self._cache[key] = out
        return out

    def trace(self, h: float, T_c_side: float, T_c_top: float) -> np.ndarray:
        sc = self.scenario
        u = self.unit_responses(h)
        w = np.array([sc.T_b - sc.T_a, T_c_side - sc.T_a, T_c_top - sc.T_a])
        return sc.T_a + u @ w


# -- problem definition ----------------------------------------------------

@dataclass(eq=False)
class CalibrationProblem:
    case: Case
    trace: ExperimentTrace
    grid: VoxelGrid
    scenario: ThermalScenario = field(default_factory=ThermalScenario)
    pla: MaterialProperties = PLA_PROPS
    air: MaterialProperties = AIR_PROPS
    h_bounds: tuple[float, float] = (5.0, 60.0)
    T_c_side_bounds: Optional[tuple[float, float]] = None
    T_c_top_bounds: Optional[tuple[float, float]] = None
    lattice: int = 5
    coarse_grid: Optional[VoxelGrid] = None
    threads: int = 1

    def __post_init__(self):
        self.case = Case(self.case)
        sc = self.scenario
        if sc.T_b is None:
            raise CalibrationError("calibration needs a bed temperature")
        lo_t, hi_t = sorted((sc.T_a, sc.T_b))
        if self.T_c_side_bounds is None:
            self.T_c_side_bounds = (lo_t, hi_t)
        if self.T_c_top_bounds is None:
            self.T_c_top_bounds = (lo_t, hi_t)
        for name in ("h_bounds", "T_c_side_bounds", "T_c_top_bounds"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise CalibrationError(f"{name} must be ordered, got ({lo}, {hi})")
        if self.h_bounds[0] < 0:
            raise CalibrationError("h bounds must be non-negative")
        if self.lattice < 1:
            raise CalibrationError("lattice needs at least one point per parameter")

    @property
    def names(self) -> tuple[str, ...]:
        return {Case.CASE1: ("h",), Case.CASE2: ("h", "T_c"),
                Case.CASE3: ("h", "T_c_side", "T_c_top")}[self.case]

    @property
    def bounds(self) -> list[tuple[float, float]]:
        if self.case is Case.CASE1:
            return [self.h_bounds]
        if self.case is Case.CASE2:
            lo = max(self.T_c_side_bounds[0], self.T_c_top_bounds[0])
            hi = min(self.T_c_side_bounds[1], self.T_c_top_bounds[1])
            if lo > hi:
                lo, hi = self.T_c_side_bounds
            return [self.h_bounds, (lo, hi)]
        return [self.h_bounds, self.T_c_side_bounds, self.T_c_top_bounds]

    def expand(self, x: Sequence[float]) -> tuple[float, float, float]:
        """Free parameters -> (h, T_c_side, T_c_top)."""
        if self.case is Case.CASE1:
            return float(x[0]), self.scenario.T_a, self.scenario.T_a
        if self.case is Case.CASE2:
            return float(x[0]), float(x[1]), float(x[1])
        return float(x[0]), float(x[1]), float(x[2])

    def scenario_for(self, h: float, T_c_side: float, T_c_top: float) -> ThermalScenario:
        sc = self.scenario
        return ThermalScenario(T_b=sc.T_b, T_a=sc.T_a, T_c_side=T_c_side, T_c_top=T_c_top,
                               h=h, q_vol=0.0, duration=sc.duration, dt=sc.dt)


@dataclass(frozen=True)
class CostRow:
    h: float
    T_c_side: float
    T_c_top: float
    cost: float


@dataclass(frozen=True, eq=False)
class FitResult:
    case: Case
    h: float
    T_c_side: float
    T_c_top: float
    rmse: float
    table: tuple[CostRow, ...] = ()
    n_evaluations: int = 0

    def summary(self) -> str:
        lines = [
            f"case            : {int(self.case)}",
            f"h               : {self.h:.4f} W/(m^2 K)",
            f"T_c_side        : {self.T_c_side:.4f} degC",
            f"T_c_top         : {self.T_c_top:.4f} degC",
            f"rmse            : {self.rmse:.5f} degC",
            f"lattice points  : {len(self.table)}",
            f"evaluations     : {self.n_evaluations}",
        ]
        return "\n".join(lines)


def _lattice_values(problem: CalibrationProblem) -> list[np.ndarray]:
    return [np.linspace(lo, hi, problem.lattice) if problem.lattice > 1 else np.array([0.5 * (lo + hi)])
            for lo, hi in problem.bounds]


def _model(problem: CalibrationProblem, grid: Optional[VoxelGrid] = None) -> ResponseModel:
    return ResponseModel(grid if grid is not None else problem.grid, problem.scenario,
                         problem.pla, problem.air)


def sweep(problem: CalibrationProblem, values: Optional[dict] = None,
          model: Optional[ResponseModel] = None) -> list[CostRow]:
    """Cost at every lattice point of the case's free parameters.

    ``values`` maps parameter names (see ``problem.names``) to explicit
    value lists; missing names fall back to ``problem.lattice`` points
    spread over the bounds.
    """
    if model is None:
        model = _model(problem, problem.coarse_grid)
    axes = _lattice_values(problem)
    if values:
        unknown = set(values) - set(problem.names)
        if unknown:
            raise CalibrationError(
                f"case {int(problem.case)} has no parameter(s) {sorted(unknown)}; "
                f"free parameters are {list(problem.names)}")
        axes = [np.atleast_1d(np.asarray(values.get(n, ax), dtype=float))
                for n, ax in zip(problem.names, axes)]
    points = list(itertools.product(*axes))

    # the expensive part depends on h only; fan those out
    hs = sorted({p[0] for p in points})

    def prepare(h):
        try:
            model.unit_responses(h)
        except SolverError as exc:
            return h, exc
        return h, None

    if problem.threads > 1 and len(hs) > 1:
        with ThreadPoolExecutor(problem.threads) as pool:
            failures = dict(pool.map(prepare, hs))
    else:
        failures = dict(prepare(h) for h in hs)

    rows = []
    errors = []
    for p in points:
        h, tcs, tct = problem.expand(p)
        if failures.get(p[0]) is not None:
            errors.append(f"h={h:g}, T_c_side={tcs:g}, T_c_top={tct:g}: {failures[p[0]]}")
            rows.append(CostRow(h, tcs, tct, math.inf))
            continue
        c = cost(model.times, model.trace(h, tcs, tct), problem.trace)
        rows.append(CostRow(h, tcs, tct, c))
    if errors:
        for e in errors:
            log.warning("lattice point failed: %s", e)
        if len(errors) == len(points):
            raise CalibrationError("every lattice point failed:\n" + "\n".join(errors))
    return rows


def _profile(problem: CalibrationProblem, model: ResponseModel, h: float):
    """Best ambient temperatures at fixed ``h`` and the resulting cost.

    The trace is affine in the ambient temperatures, so the inner problem is
    a bounded linear least-squares fit over the samples ``cost`` compares.
    """
    sc = problem.scenario
    u = model.unit_responses(h)
    et, em = _collapse_duplicates(problem.trace.times, problem.trace.mean)
    t = model.times
    sel = (t >= et[0] - 1e-9) & (t <= et[-1] + 1e-9)
    if not sel.any():
        raise CalibrationError(f"no overlap between simulation and experiment "
                               f"{problem.trace.specimen!r}")
    u = u[sel]
    y = np.interp(t[sel], et, em) - sc.T_a - u[:, 0] * (sc.T_b - sc.T_a)
    if problem.case is Case.CASE1:
        return (sc.T_a, sc.T_a), float(np.sqrt(np.mean(y ** 2)))
    if problem.case is Case.CASE2:
        A = (u[:, 1] + u[:, 2])[:, None]
    else:
        A = u[:, 1:]
    bounds = problem.bounds[1:]
    lo = np.array([b[0] for b in bounds]) - sc.T_a
    hi = np.array([b[1] for b in bounds]) - sc.T_a
    x = lo.copy()       # temperatures with collapsed bounds stay pinned
    free = hi > lo
    if free.any():
        rest = y - A[:, ~free] @ x[~free]
        x[free] = lsq_linear(A[:, free], rest, bounds=(lo[free], hi[free]),
                             method="bvls").x
    c = float(np.sqrt(np.mean((A @ x - y) ** 2)))
    temps = x + sc.T_a
    if problem.case is Case.CASE2:
        return (float(temps[0]), float(temps[0])), c
    return (float(temps[0]), float(temps[1])), c


def _refine(problem: CalibrationProblem, model: ResponseModel, h0: float,
            step: float, xatol: float):
    """Nelder-Mead on ``h`` with the ambient temperatures profiled out."""
    lo, hi = problem.h_bounds
    evals = [0]

    def objective(x):
        evals[0] += 1
        h = float(np.clip(x[0], lo, hi))
        try:
            return _profile(problem, model, h)[1]
        except SolverError:
            return math.inf

    if hi - lo <= 0:
        h = lo
    else:
        second = h0 + step if h0 + step <= hi else h0 - step
        res = minimize(objective, [h0], method="Nelder-Mead", bounds=[(lo, hi)],
                       options={"xatol": xatol, "fatol": math.inf, "maxiter": 500,
                                "initial_simplex": np.array([[h0], [second]])})
        h = float(np.clip(res.x[0], lo, hi))
    temps, c = _profile(problem, model, h)
    return (h, *temps), c, evals[0] + 1


def fit(problem: CalibrationProblem, values: Optional[dict] = None,
        xatol: float = 0.1, polish: bool = True) -> FitResult:
    """Lattice sweep followed by a Nelder-Mead refinement from the best point.

    During refinement the ambient temperatures are not simplex coordinates:
    for each trial ``h`` they are solved exactly by bounded linear least
    squares, which removes the long, narrow valley between ``h`` and the side
    temperature that stalls a full three-parameter simplex.

    When ``problem.coarse_grid`` is set the sweep and the first refinement
    use it, and ``polish`` repeats the refinement on ``problem.grid``.
    """
    coarse = problem.coarse_grid is not None
    model = _model(problem, problem.coarse_grid)
    table = sweep(problem, values, model)
    finite = [r for r in table if math.isfinite(r.cost)]
    if not finite:
        raise CalibrationError("all lattice candidates failed")
    best = min(finite, key=lambda r: r.cost)
    h_axis = _lattice_values(problem)[0]
    step = max((h_axis[-1] - h_axis[0]) / max(len(h_axis) - 1, 1) / 2.0, 2.0 * xatol)
    params, c, n_eval = _refine(problem, model, best.h, step, xatol)
    if coarse and polish:
        fine = _model(problem)
        params, c, more = _refine(problem, fine, params[0], 4 * xatol, xatol)
        n_eval += more
        best_cost = cost(fine.times, fine.trace(best.h, best.T_c_side, best.T_c_top),
                         problem.trace)
    else:
        best_cost = best.cost
    if best_cost < c:
        params, c = (best.h, best.T_c_side, best.T_c_top), best_cost
    h, tcs, tct = params
    return FitResult(problem.case, float(h), float(tcs), float(tct), c, tuple(table),
                     n_eval + len(table))


@dataclass(frozen=True)
class ValidationRow:
    specimen: str
    rmse: float
    steady_sim: float
    steady_exp: float
    steady_error: float        # degC, sim - exp at the last shared sample
    steady_error_pct: float    # percent of the experimental rise above T_a


def validate(result: FitResult, problems: Sequence[CalibrationProblem]) -> list[ValidationRow]:
    """Run every specimen with the fitted parameters and score it."""
    rows = []
    for prob in problems:
        model = _model(prob)
        sim = model.trace(result.h, result.T_c_side, result.T_c_top)
        rmse = cost(model.times, sim, prob.trace)
        t_end = min(model.times[-1], prob.trace.times[-1])
        s_sim = float(np.interp(t_end, model.times, sim))
        et, em = _collapse_duplicates(prob.trace.times, prob.trace.mean)
        s_exp = float(np.interp(t_end, et, em))
        rise = s_exp - prob.scenario.T_a
        pct = 100.0 * abs(s_sim - s_exp) / abs(rise) if rise else math.inf
        rows.append(ValidationRow(prob.trace.specimen, rmse, s_sim, s_exp, s_sim - s_exp, pct))
    return rows


def synthetic_trace(grid: VoxelGrid, scenario: ThermalScenario, noise: float = 0.0,
                    seed: Optional[int] = None, specimen: str = "synthetic",
                    pla: MaterialProperties = PLA_PROPS,
                    air: MaterialProperties = AIR_PROPS) -> ExperimentTrace:
    """Probe-mean trace of a known scenario with optional Gaussian noise."""
    model = ResponseModel(grid, scenario, pla, air)
    mean = model.trace(scenario.h, scenario.T_c_side, scenario.T_c_top)
    if noise:
        mean = mean + np.random.default_rng(seed).normal(0.0, noise, mean.size)
    return ExperimentTrace(specimen, model.times.copy(), mean)
