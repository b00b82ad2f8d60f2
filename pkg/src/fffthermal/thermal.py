"""Transient heat conduction on voxel grids.

Trilinear 8-node bricks, row-sum lumped capacity, Dirichlet bed at z = 0 and
convective (Robin) free surfaces split into side and top zones.  Time
integration is backward Euler; linear systems are solved with Jacobi
preconditioned conjugate gradients unless a direct factorization is asked for.

Units: grids are in mm, everything here is SI internally (m, s, W, J) with
temperatures in degrees Celsius.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesostructure import AIR, PLA, VoxelGrid

MM = 1e-3


class SolverError(RuntimeError):
    """Linear solver failure (non-convergence or singular system)."""

    def __init__(self, message, residual: float = float("nan")):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class MaterialProperties:
    density: float        # kg/m^3
    specific_heat: float  # J/(kg K)
    conductivity: float   # W/(m K)

    def __post_init__(self):
        if min(self.density, self.specific_heat, self.conductivity) <= 0:
            raise ValueError(f"material properties must be positive: {self}")

    @property
    def volumetric_heat_capacity(self) -> float:
        return self.density * self.specific_heat


PLA_PROPS = MaterialProperties(1240.0, 1800.0, 0.13)
AIR_PROPS = MaterialProperties(1.2, 1005.0, 0.026)


@dataclass(frozen=True)
class ThermalScenario:
    """Boundary and initial conditions for one heating run.

    ``T_b=None`` leaves the bottom face adiabatic instead of clamped.
    """

    T_b: Optional[float] = 56.0
    T_a: float = 25.0
    T_c_side: float = 56.0
    T_c_top: float = 27.0
    h: float = 25.0
    q_vol: float = 0.0
    duration: float = 2400.0
    dt: float = 1.0

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError(f"duration must be > 0, got {self.duration}")
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if self.h < 0:
            raise ValueError(f"h must be >= 0, got {self.h}")

    @property
    def bounds(self) -> tuple[float, float]:
        temps = [self.T_a, self.T_c_side, self.T_c_top]
        if self.T_b is not None:
            temps.append(self.T_b)
        return min(temps), max(temps)


@dataclass(frozen=True, eq=False)
class TemperatureField:
    grid: VoxelGrid
    values: np.ndarray  # nodal, C-order over (nx+1, ny+1, nz+1)
    time: float = 0.0

    def __post_init__(self):
        if self.values.shape != (self.grid.n_nodes,):
            raise ValueError(
                f"field has {self.values.size} values, grid has {self.grid.n_nodes} nodes")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("temperature field contains non-finite values")

    def as_array(self) -> np.ndarray:
        nx, ny, nz = self.grid.shape
        return self.values.reshape(nx + 1, ny + 1, nz + 1)

    @property
    def top(self) -> np.ndarray:
        return self.as_array()[:, :, -1]


@dataclass(frozen=True, eq=False)
class ProbeSeries:
    positions: np.ndarray     # (n_probes, 2) in mm on the top face
    times: np.ndarray         # s
    temperatures: np.ndarray  # (n_times, n_probes)

    def __post_init__(self):
        if self.times.size > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("probe sample times must be strictly increasing")

    @property
    def mean(self) -> np.ndarray:
        return self.temperatures.mean(axis=1)


# -- element matrices ------------------------------------------------------

_CORNERS = np.array(list(itertools.product((0, 1), repeat=3)))  # index 4a+2b+c


def element_matrices(dx: float, dy: float, dz: float) -> tuple[np.ndarray, np.ndarray]:
    """Unit-conductivity stiffness and unit-capacity consistent mass of a brick.

    Both by 2x2x2 Gauss quadrature on the trilinear shape functions.
    """
    g = 1.0 / math.sqrt(3.0)
    pts = (0.5 - 0.5 * g, 0.5 + 0.5 * g)  # on [0, 1], weights 1/2 each
    h = np.array([dx, dy, dz])
    ke = np.zeros((8, 8))
    me = np.zeros((8, 8))
    for xi in itertools.product(pts, repeat=3):
        xi = np.array(xi)
        # N_c = prod over axes of (xi if c else 1 - xi)
        f = np.where(_CORNERS == 1, xi, 1.0 - xi)
        df = np.where(_CORNERS == 1, 1.0, -1.0)
        n = f.prod(axis=1)
        grad = np.empty((8, 3))
        for ax in range(3):
            other = [o for o in range(3) if o != ax]
            grad[:, ax] = df[:, ax] * f[:, other].prod(axis=1) / h[ax]
        w = 0.125 * dx * dy * dz
        ke += w * grad @ grad.T
        me += w * np.outer(n, n)
    return ke, me


def _face_mass(a: float, b: float) -> np.ndarray:
    m1a = a / 6.0 * np.array([[2.0, 1.0], [1.0, 2.0]])
    m1b = b / 6.0 * np.array([[2.0, 1.0], [1.0, 2.0]])
    return np.kron(m1a, m1b)


# -- assembly --------------------------------------------------------------

def _node_index(shape):
    nx, ny, nz = shape
    return np.arange((nx + 1) * (ny + 1) * (nz + 1)).reshape(nx + 1, ny + 1, nz + 1)


def _stencil_matrix(node_shape, stencil: dict) -> sp.csr_matrix:
    """Build a sparse matrix from per-offset coefficient arrays on the node lattice."""
    idx = np.arange(int(np.prod(node_shape))).reshape(node_shape)
    rows, cols, data = [], [], []
    for off, coef in stencil.items():
        sl_r = tuple(slice(max(0, -o), n - max(0, o)) for o, n in zip(off, node_shape))
        sl_c = tuple(slice(max(0, o), n - max(0, -o)) for o, n in zip(off, node_shape))
        vals = coef[sl_r]
        keep = vals != 0
        if not keep.any():
            continue
        rows.append(idx[sl_r][keep])
        cols.append(idx[sl_c][keep])
        data.append(vals[keep])
    n = idx.size
    if not rows:
        return sp.csr_matrix((n, n))
    m = sp.coo_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n))
    return m.tocsr()


def _assemble_cells(shape, cell_coef: np.ndarray, ke: np.ndarray):
    """Scatter a per-cell scaled 8x8 element matrix into stencil form."""
    node_shape = tuple(n + 1 for n in shape)
    stencil: dict = {}
    nx, ny, nz = shape
    for p in range(8):
        cp = _CORNERS[p]
        for q in range(8):
            v = ke[p, q]
            if v == 0:
                continue
            off = tuple(_CORNERS[q] - cp)
            arr = stencil.get(off)
            if arr is None:
                arr = stencil[off] = np.zeros(node_shape)
            arr[cp[0]:cp[0] + nx, cp[1]:cp[1] + ny, cp[2]:cp[2] + nz] += v * cell_coef
    return stencil


@dataclass(frozen=True, eq=False)
class ThermalSystem:
    """Semi-discrete system ``C dT/dt + K T = F`` with optional fixed nodes.

    ``K_robin_side/top`` and ``r_side/top`` are the unit-coefficient surface
    operators, kept so convective parameters can be swapped without
    reassembling the conduction part.
    """

    grid: VoxelGrid
    K: sp.csr_matrix
    C: np.ndarray
    F: np.ndarray
    K_robin_side: sp.csr_matrix
    K_robin_top: sp.csr_matrix
    r_side: np.ndarray
    r_top: np.ndarray
    fixed: Optional[np.ndarray] = None        # bool mask
    fixed_values: Optional[np.ndarray] = None
    zones: tuple = ()
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return self.C.size

    @property
    def free(self) -> np.ndarray:
        if self.fixed is None:
            return np.ones(self.n, dtype=bool)
        return ~self.fixed


def assemble(grid: VoxelGrid, pla: MaterialProperties = PLA_PROPS,
             air: MaterialProperties = AIR_PROPS) -> ThermalSystem:
    """Conductivity matrix and lumped capacity for ``grid`` (no boundary terms)."""
    dx, dy, dz = (s * MM for s in grid.spacing)
    ke, me = element_matrices(dx, dy, dz)
    mat = grid.material
    k_cell = np.where(mat == PLA, pla.conductivity, air.conductivity)
    rc_cell = np.where(mat == PLA, pla.volumetric_heat_capacity, air.volumetric_heat_capacity)
    node_shape = tuple(n + 1 for n in grid.shape)
    K = _stencil_matrix(node_shape, _assemble_cells(grid.shape, k_cell, ke))
    # row-sum lumping; for a brick every row of me sums to V/8
    lumped = me.sum(axis=1)
    C = np.zeros(node_shape)
    nx, ny, nz = grid.shape
    for p in range(8):
        a, b, c = _CORNERS[p]
        C[a:a + nx, b:b + ny, c:c + nz] += lumped[p] * rc_cell
    Ks, Kt, rs, rt = _robin_operators(grid)
    n = grid.n_nodes
    return ThermalSystem(grid, K, C.ravel(), np.zeros(n), Ks, Kt, rs, rt)


def _robin_operators(grid: VoxelGrid):
    """Unit-h surface mass matrices and load vectors for side and top faces."""
    nx, ny, nz = grid.shape
    dx, dy, dz = (s * MM for s in grid.spacing)
    node_shape = (nx + 1, ny + 1, nz + 1)
    idx = _node_index(grid.shape)
    side_rows, side_cols, side_vals = [], [], []
    top_rows, top_cols, top_vals = [], [], []
    r_side = np.zeros(node_shape)
    r_top = np.zeros(node_shape)

    def add_face(plane_nodes, a, b, rows, cols, vals, load):
        # plane_nodes: (na+1, nb+1) node indices of a face lattice with cell sizes a, b
        fm = _face_mass(a, b)
        quad = np.stack([plane_nodes[:-1, :-1], plane_nodes[:-1, 1:],
                         plane_nodes[1:, :-1], plane_nodes[1:, 1:]], axis=-1).reshape(-1, 4)
        for p in range(4):
            for q in range(4):
                rows.append(quad[:, p])
                cols.append(quad[:, q])
                vals.append(np.full(quad.shape[0], fm[p, q]))
        np.add.at(load.reshape(-1), quad.ravel(), a * b / 4.0)

    add_face(idx[0, :, :], dy, dz, side_rows, side_cols, side_vals, r_side)
    add_face(idx[-1, :, :], dy, dz, side_rows, side_cols, side_vals, r_side)
    add_face(idx[:, 0, :], dx, dz, side_rows, side_cols, side_vals, r_side)
    add_face(idx[:, -1, :], dx, dz, side_rows, side_cols, side_vals, r_side)
    add_face(idx[:, :, -1], dx, dy, top_rows, top_cols, top_vals, r_top)

    n = idx.size

    def build(rows, cols, vals):
        return sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(n, n)).tocsr()

    return (build(side_rows, side_cols, side_vals), build(top_rows, top_cols, top_vals),
            r_side.ravel(), r_top.ravel())


def bottom_nodes(grid: VoxelGrid) -> np.ndarray:
    mask = np.zeros(tuple(n + 1 for n in grid.shape), dtype=bool)
    mask[:, :, 0] = True
    return mask.ravel()


def apply_dirichlet(system: ThermalSystem, grid: VoxelGrid, T_b: float) -> ThermalSystem:
    """Clamp every node on z = 0 to ``T_b`` (eliminated at solve time)."""
    fixed = bottom_nodes(grid)
    values = np.where(fixed, float(T_b), 0.0)
    return replace(system, fixed=fixed, fixed_values=values, _cache={})


def apply_robin(system: ThermalSystem, grid: VoxelGrid, scenario: ThermalScenario,
                zones: tuple = ("side", "top")) -> ThermalSystem:
    """Add convective exchange on the free surfaces.

    Side faces exchange with ``T_c_side``, the top face with ``T_c_top``.
    Leaving a zone out of ``zones`` makes it adiabatic.  Internal heat
    generation ``q_vol`` is added to the load as well.
    """
    h = scenario.h
    K = system.K
    F = system.F.copy()
    if h != 0:
        if "side" in zones:
            K = K + h * system.K_robin_side
            F += h * scenario.T_c_side * system.r_side
        if "top" in zones:
            K = K + h * system.K_robin_top
            F += h * scenario.T_c_top * system.r_top
        K = K.tocsr()
    zones = tuple(z for z in ("side", "top") if z in zones) if h != 0 else ()
    if scenario.q_vol:
        F += scenario.q_vol * nodal_volume(grid)
    return replace(system, K=K, F=F, zones=zones, _cache={})


def nodal_volume(grid: VoxelGrid) -> np.ndarray:
    """Lumped volume share of each node (m^3); integral of each shape function."""
    dx, dy, dz = (s * MM for s in grid.spacing)
    nx, ny, nz = grid.shape
    vol = np.zeros((nx + 1, ny + 1, nz + 1))
    for a, b, c in _CORNERS:
        vol[a:a + nx, b:b + ny, c:c + nz] += dx * dy * dz / 8.0
    return vol.ravel()


def build_system(grid: VoxelGrid, scenario: ThermalScenario,
                 pla: MaterialProperties = PLA_PROPS,
                 air: MaterialProperties = AIR_PROPS,
                 zones: tuple = ("side", "top")) -> ThermalSystem:
    system = apply_robin(assemble(grid, pla, air), grid, scenario, zones)
    if scenario.T_b is not None:
        system = apply_dirichlet(system, grid, scenario.T_b)
    return system


# -- linear solvers --------------------------------------------------------

def pcg(A, b: np.ndarray, x0: Optional[np.ndarray] = None, rtol: float = 1e-8,
        maxiter: Optional[int] = None, diag: Optional[np.ndarray] = None,
        atol: float = 0.0) -> tuple[np.ndarray, int]:
    """Jacobi-preconditioned conjugate gradients.

    Stops when ``||b - A x|| <= max(rtol * ||b||, atol)``.  A 2D ``b`` is treated as
    independent right-hand sides iterated together, each with its own
    step lengths.  Returns the solution and the iteration count; raises
    SolverError if ``maxiter`` (default 10 n) is exhausted.
    """
    n = b.shape[0]
    if maxiter is None:
        maxiter = 10 * n
    if diag is None:
        diag = A.diagonal()
    if np.any(diag <= 0):
        raise SolverError("matrix has non-positive diagonal; system is not SPD")
    vec = b.ndim == 1
    B = b.reshape(n, -1).astype(float)
    inv_d = (1.0 / diag)[:, None]
    bnorm = np.linalg.norm(B, axis=0)
    X = np.zeros_like(B) if x0 is None else np.array(x0, dtype=float).reshape(n, -1).copy()
    zero = bnorm == 0.0
    X[:, zero] = 0.0
    tol = np.maximum(rtol * np.where(zero, 1.0, bnorm), atol)
    R = B - A @ X
    R[:, zero] = 0.0
    rn = np.linalg.norm(R, axis=0)
    it = 0
    if np.all(rn <= tol):
        return (X[:, 0] if vec else X), 0
    Z = inv_d * R
    P = Z.copy()
    rz = np.einsum("ij,ij->j", R, Z)
    for it in range(1, maxiter + 1):
        AP = A @ P
        pAp = np.einsum("ij,ij->j", P, AP)
        active = rn > tol
        if np.any(pAp[active] <= 0):
            raise SolverError("conjugate gradients hit non-positive curvature",
                              float(np.max(rn / np.where(zero, 1.0, bnorm))))
        alpha = np.where(active, rz / np.where(pAp > 0, pAp, 1.0), 0.0)
        X += alpha * P
        R -= alpha * AP
        rn = np.linalg.norm(R, axis=0)
        if np.all(rn <= tol):
            return (X[:, 0] if vec else X), it
        Z = inv_d * R
        rz_new = np.einsum("ij,ij->j", R, Z)
        beta = np.where(rz > 0, rz_new / np.where(rz > 0, rz, 1.0), 0.0)
        P = Z + beta * P
        rz = rz_new
    rel = float(np.max(rn / np.where(zero, 1.0, bnorm)))
    raise SolverError(f"conjugate gradients did not converge in {maxiter} iterations, "
                      f"relative residual {rel:.3e}", rel)


class _StepOperator:
    """Reduced backward-Euler operator for fixed ``(system, dt)``."""

    def __init__(self, system: ThermalSystem, dt: float, solver: str, rtol: float = 1e-8):
        self.system = system
        self.dt = dt
        self.solver = solver
        self.rtol = rtol
        self.m = system.C / dt
        A = (system.K + sp.diags(self.m)).tocsr()
        self.free = system.free
        self.fi = np.flatnonzero(self.free)
        if system.fixed is not None and system.fixed.any():
            bi = np.flatnonzero(system.fixed)
            Af = A[self.fi]
            self.A = Af[:, self.fi].tocsr()
            self.rhs_fixed = system.F[self.fi] - Af[:, bi] @ system.fixed_values[bi]
        else:
            self.A = A
            self.rhs_fixed = system.F.copy()
        self.diag = self.A.diagonal()
        self._lu = None
        if solver == "direct":
            self._lu = spla.factorized(self.A.tocsc())
        elif solver != "cg":
            raise ValueError(f"unknown solver {solver!r}")

    def solve(self, b, x0=None):
        if self._lu is not None:
            return self._lu(b)
        return pcg(self.A, b, x0=x0, diag=self.diag, rtol=self.rtol)[0]

    def advance(self, T: np.ndarray) -> np.ndarray:
        b = self.m[self.fi] * T[self.fi] + self.rhs_fixed
        out = np.empty_like(T)
        out[self.fi] = self.solve(b, x0=T[self.fi])
        if self.system.fixed is not None:
            out[self.system.fixed] = self.system.fixed_values[self.system.fixed]
        return out


def _operator(system: ThermalSystem, dt: float, solver: str,
              rtol: float = 1e-8) -> _StepOperator:
    key = ("step", float(dt), solver, float(rtol))
    op = system._cache.get(key)
    if op is None:
        op = system._cache[key] = _StepOperator(system, dt, solver, rtol)
    return op


def step(state: TemperatureField, system: ThermalSystem, dt: float,
         solver: str = "cg", rtol: float = 1e-8) -> TemperatureField:
    """One backward-Euler step ``(C/dt + K) T' = C/dt T + F`` with fixed nodes eliminated.

    ``rtol`` is the CG stopping threshold on the residual relative to the
    right-hand side; ``solver="direct"`` factorizes the step matrix once.
    """
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    op = _operator(system, dt, solver, rtol)
    return TemperatureField(state.grid, op.advance(state.values), state.time + dt)


# -- probes ----------------------------------------------------------------

def default_probe_positions(grid: VoxelGrid) -> np.ndarray:
    """Top-face center plus the four quarter points of the footprint (mm)."""
    lx, ly, _ = grid.extent
    frac = [(0.5, 0.5), (0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75)]
    return np.array([(fx * lx, fy * ly) for fx, fy in frac])


def probe_operator(grid: VoxelGrid, positions: np.ndarray) -> sp.csr_matrix:
    """Sparse (n_probes x n_nodes) bilinear interpolation on the top face."""
    nx, ny, nz = grid.shape
    dx, dy, _ = grid.spacing
    idx = _node_index(grid.shape)
    rows, cols, vals = [], [], []
    for p, (x, y) in enumerate(np.asarray(positions, dtype=float)):
        fx = min(max(x / dx, 0.0), nx)
        fy = min(max(y / dy, 0.0), ny)
        i0 = min(int(fx), nx - 1)
        j0 = min(int(fy), ny - 1)
        tx, ty = fx - i0, fy - j0
        for di, dj, w in ((0, 0, (1 - tx) * (1 - ty)), (1, 0, tx * (1 - ty)),
                          (0, 1, (1 - tx) * ty), (1, 1, tx * ty)):
            rows.append(p)
            cols.append(idx[i0 + di, j0 + dj, nz])
            vals.append(w)
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(positions), grid.n_nodes))


# -- drivers ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TransientResult:
    probes: ProbeSeries
    final: TemperatureField


def initial_field(grid: VoxelGrid, scenario: ThermalScenario) -> TemperatureField:
    return TemperatureField(grid, np.full(grid.n_nodes, float(scenario.T_a)), 0.0)


def run_transient(grid: VoxelGrid, scenario: ThermalScenario,
                  pla: MaterialProperties = PLA_PROPS, air: MaterialProperties = AIR_PROPS,
                  probes: Optional[np.ndarray] = None, solver: str = "cg",
                  system: Optional[ThermalSystem] = None,
                  on_step: Optional[Callable[[TemperatureField], None]] = None,
                  rtol: float = 1e-8) -> TransientResult:
    """Heat the specimen from ``T_a`` for ``scenario.duration`` seconds.

    Probes are sampled on the top face every second (linear interpolation
    in time when ``dt`` does not divide 1 s).  ``on_step`` is called with
    every new field, e.g. to write snapshots.
    """
    if system is None:
        system = build_system(grid, scenario, pla, air)
    positions = default_probe_positions(grid) if probes is None else np.asarray(probes, float)
    P = probe_operator(grid, positions)
    sample_times = np.arange(0.0, math.floor(scenario.duration + 1e-9) + 1.0)
    samples = np.empty((sample_times.size, positions.shape[0]))
    field_ = initial_field(grid, scenario)
    prev_t, prev_v = 0.0, P @ field_.values
    samples[0] = prev_v
    nxt = 1
    n_steps = int(math.ceil(scenario.duration / scenario.dt - 1e-9))
    op = _operator(system, scenario.dt, solver, rtol)
    T = field_.values
    t = 0.0
    for n in range(1, n_steps + 1):
        T = op.advance(T)
        t = min(n * scenario.dt, scenario.duration)
        cur_v = P @ T
        while nxt < sample_times.size and sample_times[nxt] <= t + 1e-9:
            s = sample_times[nxt]
            w = 1.0 if t == prev_t else (s - prev_t) / (t - prev_t)
            samples[nxt] = (1 - w) * prev_v + w * cur_v
            nxt += 1
        prev_t, prev_v = t, cur_v
        if on_step is not None:
            on_step(TemperatureField(grid, T, t))
    series = ProbeSeries(positions, sample_times[:nxt], samples[:nxt])
    return TransientResult(series, TemperatureField(grid, T, t))


def steady_state(grid: VoxelGrid, scenario: ThermalScenario,
                 pla: MaterialProperties = PLA_PROPS, air: MaterialProperties = AIR_PROPS,
                 solver: str = "cg", rtol: float = 1e-10,
                 system: Optional[ThermalSystem] = None) -> TemperatureField:
    """Solve ``K T = F`` with the bed constraint (the ``t -> inf`` limit)."""
    if system is None:
        system = build_system(grid, scenario, pla, air)
    has_fixed = system.fixed is not None and system.fixed.any()
    if scenario.h == 0 and not has_fixed:
        raise SolverError("steady state is singular: no Dirichlet bed and h = 0, "
                          "add a bed temperature or convective exchange")
    K = system.K
    fi = np.flatnonzero(system.free)
    rhs = system.F.copy()
    if has_fixed:
        bi = np.flatnonzero(system.fixed)
        Kf = K[fi]
        A = Kf[:, fi].tocsr()
        rhs = rhs[fi] - Kf[:, bi] @ system.fixed_values[bi]
    else:
        A = K
    if A.shape[0] == 0:
        x = np.empty(0)
    elif solver == "direct":
        x = spla.spsolve(A.tocsc(), rhs)
    else:
        x0 = np.full(A.shape[0], scenario.T_a)
        x, _ = pcg(A, rhs, x0=x0, rtol=rtol)
    T = np.empty(grid.n_nodes)
    T[fi] = x
    if has_fixed:
        T[system.fixed] = system.fixed_values[system.fixed]
    return TemperatureField(grid, T, math.inf)


def steady_probes(grid: VoxelGrid, scenario: ThermalScenario, **kw) -> np.ndarray:
    field_ = steady_state(grid, scenario, **kw)
    return probe_operator(grid, default_probe_positions(grid)) @ field_.values


def heat_balance(system: ThermalSystem, field_: TemperatureField,
                 scenario: ThermalScenario) -> tuple[float, float]:
    """Bed influx and total convective outflux (W) for a field.

    The influx is the reaction at the clamped nodes, so at steady state with
    no internal source the two agree up to the solver tolerance.
    """
    T = field_.values
    influx = 0.0
    if system.fixed is not None:
        influx = float((system.K @ T - system.F)[system.fixed].sum())
    out = 0.0
    if "side" in system.zones:
        out += (system.K_robin_side @ T).sum() - scenario.T_c_side * system.r_side.sum()
    if "top" in system.zones:
        out += (system.K_robin_top @ T).sum() - scenario.T_c_top * system.r_top.sum()
    return influx, float(scenario.h * out)


def write_vtk_field(field_: TemperatureField, path, title: str = "temperature") -> None:
    """Legacy VTK structured points with POINT_DATA temperature."""
    grid = field_.grid
    nx, ny, nz = grid.shape
    values = field_.as_array().transpose(2, 1, 0).ravel()
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(f"{title} t={field_.time:g}s\n")
        fh.write("ASCII\nDATASET STRUCTURED_POINTS\n")
        fh.write(f"DIMENSIONS {nx + 1} {ny + 1} {nz + 1}\n")
        fh.write("ORIGIN {:.9g} {:.9g} {:.9g}\n".format(*grid.origin))
        fh.write("SPACING {:.9g} {:.9g} {:.9g}\n".format(*grid.spacing))
        fh.write(f"POINT_DATA {grid.n_nodes}\n")
        fh.write("SCALARS temperature double 1\nLOOKUP_TABLE default\n")
        for start in range(0, values.size, 8):
            fh.write(" ".join(f"{v:.9g}" for v in values[start:start + 8]) + "\n")
