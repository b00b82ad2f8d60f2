import math
from dataclasses import replace

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from dense_reference import reference_transient
from fffthermal.mesostructure import (AIR, PLA, InfillSpec, Pattern, VoxelGrid,
                                      build_continuum_grid, coarsen, simplify_infill,
                                      FilamentSection)
from fffthermal.thermal import (AIR_PROPS, PLA_PROPS, MaterialProperties, ProbeSeries,
                                SolverError, TemperatureField, ThermalScenario, apply_dirichlet,
                                apply_robin, assemble, build_system, default_probe_positions,
                                element_matrices, heat_balance, initial_field, pcg,
                                probe_operator, run_transient, steady_probes, steady_state, step,
                                write_vtk_field)


def _grid(shape, spacing=(0.45, 0.45, 0.2), material=None):
    mat = np.full(shape, PLA, dtype=np.uint8) if material is None else material
    return VoxelGrid(mat, spacing)


# -- assembly --------------------------------------------------------------

def test_element_matrices_properties():
    ke, me = element_matrices(1e-3, 2e-3, 0.5e-3)
    assert np.allclose(ke, ke.T)
    assert np.allclose(ke.sum(axis=1), 0.0, atol=1e-15)
    assert np.all(np.linalg.eigvalsh(ke) > -1e-12)
    assert me.sum() == pytest.approx(1e-3 * 2e-3 * 0.5e-3)


def test_single_cell_row_sums_zero():
    s = assemble(_grid((1, 1, 1)))
    assert np.allclose(s.K @ np.ones(8), 0.0, atol=1e-15)


def test_single_cell_capacity():
    s = assemble(_grid((1, 1, 1)))
    assert s.C.sum() == pytest.approx(1240 * 1800 * 0.45e-3 * 0.45e-3 * 0.2e-3, rel=1e-12)
    assert s.C.sum() == pytest.approx(9.04e-5, rel=1e-3)
    assert np.all(s.C > 0)


def test_assembled_matrix_spsd():
    rng = np.random.default_rng(1)
    g = _grid((3, 2, 2), material=rng.integers(0, 2, (3, 2, 2)).astype(np.uint8))
    K = assemble(g).K.toarray()
    assert np.allclose(K, K.T, atol=1e-18)
    assert np.linalg.eigvalsh(K).min() > -1e-12


@pytest.mark.parametrize("lower, upper", [(PLA, PLA), (PLA, AIR), (AIR, PLA)])
def test_two_cell_series_resistance(lower, upper):
    mat = np.array([[[lower, upper]]], dtype=np.uint8)
    g = _grid((1, 1, 2), spacing=(1.0, 1.0, 0.5), material=mat)
    K = assemble(g).K.toarray()
    T = np.zeros(g.n_nodes)
    nodes = np.arange(g.n_nodes).reshape(2, 2, 3)
    bottom, middle, top = nodes[:, :, 0].ravel(), nodes[:, :, 1].ravel(), nodes[:, :, 2].ravel()
    T[bottom] = 1.0
    # solve for the free middle plane
    T[middle] = np.linalg.solve(K[np.ix_(middle, middle)], -K[np.ix_(middle, bottom)] @ T[bottom])
    flux = (K @ T)[bottom].sum()
    k = {PLA: PLA_PROPS.conductivity, AIR: AIR_PROPS.conductivity}
    area, dz = 1e-6, 0.5e-3
    expected = 1.0 / (dz / (k[lower] * area) + dz / (k[upper] * area))
    assert flux == pytest.approx(expected, rel=1e-12)


# -- boundary conditions ---------------------------------------------------

def test_robin_h0_leaves_system_unchanged():
    g = _grid((2, 2, 2))
    base = assemble(g)
    s = apply_robin(base, g, ThermalScenario(h=0.0))
    assert (s.K != base.K).nnz == 0
    assert np.array_equal(s.F, base.F)


def test_all_dirichlet_temperature_gives_uniform_steady():
    g = _grid((3, 3, 4))
    sc = ThermalScenario(T_b=56, T_c_side=56, T_c_top=56, h=25)
    assert np.allclose(steady_state(g, sc).values, 56.0, atol=1e-8)


@given(st.floats(0.1, 200.0))
@settings(max_examples=15, deadline=None)
def test_ambient_equal_to_bed_gives_uniform_steady(h):
    g = _grid((2, 3, 2))
    sc = ThermalScenario(T_b=40, T_c_side=40, T_c_top=40, h=h)
    assert np.allclose(steady_state(g, sc).values, 40.0, atol=1e-7)


def _column():
    # 2 mm tall column; side faces adiabatic, top convects to 27 degC
    g = _grid((1, 1, 10), spacing=(0.45, 0.45, 0.2))
    sc = ThermalScenario(T_b=56, T_c_side=27, T_c_top=27, h=25)
    return g, sc, build_system(g, sc, zones=("top",))


def test_column_steady_oracle():
    g, sc, system = _column()
    expected = (65 * 56 + 25 * 27) / 90
    top = steady_state(g, sc, system=system).top
    assert np.allclose(top, expected, rtol=1e-9)
    assert expected == pytest.approx(47.94, abs=0.01)


@pytest.mark.parametrize("solver", ["cg", "direct"])
def test_bottom_nodes_clamped_every_step(solver):
    g, sc, system = _column()
    f = initial_field(g, sc)
    bottom = g.n_nodes and np.arange(g.n_nodes).reshape(2, 2, 11)[:, :, 0].ravel()
    for _ in range(5):
        f = step(f, system, 1.0, solver=solver)
        assert np.all(f.values[bottom] == 56.0)


# -- time stepping ---------------------------------------------------------

def test_step_with_zero_conduction_is_identity():
    g = _grid((2, 2, 2))
    system = assemble(g)
    system = replace(system, K=sp.csr_matrix(system.K.shape))
    rng = np.random.default_rng(0)
    f = TemperatureField(g, rng.uniform(20, 60, g.n_nodes))
    assert np.allclose(step(f, system, 1.0).values, f.values, rtol=1e-12)


def test_insulated_uniform_field_is_stationary():
    g = _grid((3, 2, 2))
    sc = ThermalScenario(T_b=None, h=0.0)
    system = build_system(g, sc)
    f = TemperatureField(g, np.full(g.n_nodes, 33.0))
    assert np.allclose(step(f, system, 5.0).values, 33.0, rtol=1e-12)


def test_step_rejects_bad_dt():
    g = _grid((1, 1, 1))
    with pytest.raises(ValueError):
        step(initial_field(g, ThermalScenario()), build_system(g, ThermalScenario()), 0.0)


def test_lumped_cooling_time_constant():
    # very conductive 1 mm cube: the cell stays isothermal and decays exponentially
    g = _grid((1, 1, 1), spacing=(1.0, 1.0, 1.0))
    props = MaterialProperties(1240.0, 1800.0, 1e4)
    h, T0, Tc = 25.0, 60.0, 20.0
    tau = props.volumetric_heat_capacity * 1e-9 / (h * 5e-6)
    sc = ThermalScenario(T_b=None, T_a=T0, T_c_side=Tc, T_c_top=Tc, h=h,
                         duration=tau, dt=tau / 100)
    system = build_system(g, sc, props, props)
    f = initial_field(g, sc)
    for _ in range(100):
        f = step(f, system, sc.dt)
    ratio = (f.values.mean() - Tc) / (T0 - Tc)
    assert ratio == pytest.approx(math.exp(-1), rel=0.02)


def test_internal_source_heats_insulated_block():
    g = _grid((2, 2, 2))
    q = 1e6
    sc = ThermalScenario(T_b=None, h=0.0, q_vol=q, duration=10.0, dt=1.0)
    f = run_transient(g, sc).final
    rate = q / PLA_PROPS.volumetric_heat_capacity
    assert np.allclose(f.values, 25.0 + rate * 10.0, rtol=1e-9)


@pytest.mark.parametrize("shape", [(1, 1, 1), (2, 1, 3), (3, 3, 3), (2, 3, 2)])
@pytest.mark.parametrize("T_b", [56.0, None])
@pytest.mark.parametrize("solver, rtol", [("cg", 1e-14), ("direct", None)])
def test_matches_dense_reference(shape, T_b, solver, rtol):
    rng = np.random.default_rng(sum(shape))
    mat = rng.integers(0, 2, shape).astype(np.uint8)
    g = _grid(shape, spacing=(0.6, 0.45, 0.3), material=mat)
    sc = ThermalScenario(T_b=T_b, T_a=22.0, T_c_side=48.0, T_c_top=31.0, h=17.0, dt=0.7)
    ref = reference_transient(mat, g.spacing, {PLA: PLA_PROPS, AIR: AIR_PROPS}, sc, 12)
    system = build_system(g, sc)
    f = initial_field(g, sc)
    for n in range(1, 13):
        f = step(f, system, sc.dt, solver=solver, rtol=rtol or 1e-8)
        assert np.max(np.abs(f.values - ref[n])) < 1e-10


# -- linear solver ---------------------------------------------------------

def _spd(n, seed=0):
    rng = np.random.default_rng(seed)
    A = sp.random(n, n, density=0.2, random_state=seed)
    A = A @ A.T + sp.diags(rng.uniform(1, 2, n))
    return A.tocsr()


def test_default_tolerance_is_close_to_reference():
    shape = (3, 3, 3)
    mat = np.random.default_rng(5).integers(0, 2, shape).astype(np.uint8)
    g = _grid(shape, material=mat)
    sc = ThermalScenario(dt=1.0)
    ref = reference_transient(mat, g.spacing, {PLA: PLA_PROPS, AIR: AIR_PROPS}, sc, 10)
    f = initial_field(g, sc)
    system = build_system(g, sc)
    for _ in range(10):
        f = step(f, system, sc.dt)
    assert np.max(np.abs(f.values - ref[-1])) < 1e-5


def test_pcg_solves_and_handles_columns():
    A = _spd(40)
    B = np.random.default_rng(3).normal(size=(40, 3))
    X, _ = pcg(A, B, rtol=1e-12)
    assert np.allclose(A @ X, B, atol=1e-9)
    for c in range(3):
        assert np.allclose(pcg(A, B[:, c], rtol=1e-12)[0], X[:, c], atol=1e-9)


def test_pcg_zero_rhs():
    x, it = pcg(_spd(5), np.zeros(5))
    assert it == 0 and np.all(x == 0)


def test_pcg_reports_residual_on_failure():
    A = _spd(60)
    with pytest.raises(SolverError) as info:
        pcg(A, np.ones(60), maxiter=1, rtol=1e-14)
    assert info.value.residual > 1e-14
    assert "did not converge" in str(info.value)


def test_pcg_rejects_indefinite_diagonal():
    with pytest.raises(SolverError):
        pcg(sp.diags([1.0, -1.0]).tocsr(), np.ones(2))


# -- probes and drivers ----------------------------------------------------

def test_default_probes():
    g = build_continuum_grid(30, 30, 20)
    pos = default_probe_positions(g)
    assert pos.shape == (5, 2)
    assert pos[0] == pytest.approx((15, 15))
    assert {tuple(p) for p in pos[1:]} == {(7.5, 7.5), (7.5, 22.5), (22.5, 7.5), (22.5, 22.5)}


def test_probe_interpolation_exact_for_bilinear_field():
    g = _grid((4, 3, 2), spacing=(1.0, 2.0, 1.0))
    x = np.arange(5)[:, None, None] * 1.0
    y = np.arange(4)[None, :, None] * 2.0
    z = np.arange(3)[None, None, :] * 1.0
    T = (3 + 2 * x - y + 0.5 * x * y + 0 * z).ravel()
    pos = np.array([[0.3, 0.7], [3.9, 5.5], [2.0, 3.0]])
    vals = probe_operator(g, pos) @ T
    expect = 3 + 2 * pos[:, 0] - pos[:, 1] + 0.5 * pos[:, 0] * pos[:, 1]
    assert np.allclose(vals, expect)


def test_flat_traces_when_everything_at_room_temperature():
    g = _grid((3, 3, 3))
    sc = ThermalScenario(T_b=25, T_a=25, T_c_side=25, T_c_top=25, duration=30)
    r = run_transient(g, sc)
    assert r.probes.times[0] == 0 and r.probes.times[-1] == 30
    assert np.allclose(np.diff(r.probes.times), 1.0)
    assert np.allclose(r.probes.temperatures, 25.0)


def test_sub_second_steps_sample_at_one_hertz():
    g = _grid((2, 2, 2))
    sc = ThermalScenario(duration=5.0, dt=0.25)
    r = run_transient(g, sc)
    assert np.allclose(r.probes.times, np.arange(6.0))


def test_s1_coarse_heating(s1_coarse, reference_scenario):
    r = run_transient(s1_coarse, reference_scenario)
    mean = r.probes.mean
    assert np.all(np.diff(mean) >= -1e-9)
    slope = (mean[-1] - mean[-61]) / 60.0
    assert 0 <= slope < 0.01
    assert mean[-1] < steady_probes(s1_coarse, reference_scenario).mean()


def test_time_step_self_convergence():
    g = coarsen(build_continuum_grid(30, 30, 20), 2)
    sc = ThermalScenario(duration=60.0)
    coarse = run_transient(g, sc).probes.mean[-1]
    fine = run_transient(g, replace(sc, dt=0.1)).probes.mean[-1]
    assert abs(coarse - fine) < 0.1


def test_low_infill_heats_faster():
    sec = FilamentSection()
    sc = ThermalScenario()
    t90 = []
    for spec in (InfillSpec(Pattern.DENSE, 1.0), InfillSpec(Pattern.RECTILINEAR, 0.25)):
        g = simplify_infill(spec, 30, 30, 20, sec, 5)
        mean = run_transient(g, sc).probes.mean
        target = 25 + 0.9 * (steady_probes(g, sc).mean() - 25)
        t90.append(int(np.argmax(mean >= target)))
    assert t90[1] < t90[0]


def test_transient_limit_matches_steady(s1_coarse, reference_scenario):
    sc = replace(reference_scenario, duration=40000.0, dt=20.0)
    mean = run_transient(s1_coarse, sc).probes.mean
    assert abs(mean[-1] - mean[-2]) < 1e-4
    assert abs(mean[-1] - steady_probes(s1_coarse, sc).mean()) < 0.05


def test_steady_needs_a_constraint():
    g = _grid((2, 2, 2))
    with pytest.raises(SolverError, match="Dirichlet"):
        steady_state(g, ThermalScenario(T_b=None, h=0.0))


def test_steady_without_bed_relaxes_to_ambient():
    g = _grid((2, 2, 2))
    sc = ThermalScenario(T_b=None, T_c_side=30.0, T_c_top=30.0, h=10.0)
    assert np.allclose(steady_state(g, sc).values, 30.0, atol=1e-8)


# -- invariants ------------------------------------------------------------

temps = st.floats(0.0, 100.0)


@given(seed=st.integers(0, 10_000), T_a=temps, T_b=temps, Tcs=temps, Tct=temps,
       h=st.floats(0.0, 100.0), dt=st.sampled_from([0.1, 1.0, 10.0]))
@settings(max_examples=30, deadline=None)
def test_discrete_maximum_principle(seed, T_a, T_b, Tcs, Tct, h, dt):
    rng = np.random.default_rng(seed)
    shape = tuple(rng.integers(1, 4, 3))
    g = _grid(shape, material=rng.integers(0, 2, shape).astype(np.uint8))
    sc = ThermalScenario(T_b=T_b, T_a=T_a, T_c_side=Tcs, T_c_top=Tct, h=h,
                         duration=10 * dt, dt=dt)
    lo, hi = sc.bounds
    tol = 1e-7 * max(1.0, abs(hi))
    seen = []
    run_transient(g, sc, on_step=lambda f: seen.append((f.values.min(), f.values.max())))
    mins, maxs = zip(*seen)
    assert min(mins) >= lo - tol and max(maxs) <= hi + tol


@given(seed=st.integers(0, 10_000), rise=st.floats(0.5, 40.0), h=st.floats(1.0, 60.0))
@settings(max_examples=20, deadline=None)
def test_monotone_heating(seed, rise, h):
    rng = np.random.default_rng(seed)
    shape = tuple(rng.integers(1, 5, 3))
    g = _grid(shape, material=rng.integers(0, 2, shape).astype(np.uint8))
    T_a = 25.0
    Tcs, Tct = T_a + rng.uniform(0, rise, 2)
    sc = ThermalScenario(T_b=T_a + rise, T_a=T_a, T_c_side=Tcs, T_c_top=Tct, h=h, duration=60)
    mean = run_transient(g, sc).probes.mean
    assert np.all(np.diff(mean) >= -1e-9)


# The two properties above are stated for arbitrary grids and fail on flat
# bricks: the trilinear edge coupling along x is
# k (-bc/9a + ac/18b + ab/18c), positive once a cell is flat enough, and the
# consistent convective face mass adds positive couplings of its own. On
# cubes the edge terms vanish and every other coupling is negative, so
# without convection the step matrix is an M-matrix for any material mix and
# the bound is guaranteed.

@given(seed=st.integers(0, 10_000), T_a=temps, T_b=temps, dt=st.sampled_from([0.1, 1.0, 10.0]))
@settings(max_examples=30, deadline=None)
def test_maximum_principle_cubic_cells_insulated(seed, T_a, T_b, dt):
    rng = np.random.default_rng(seed)
    shape = tuple(rng.integers(1, 4, 3))
    g = _grid(shape, spacing=(0.45, 0.45, 0.45), material=rng.integers(0, 2, shape).astype(np.uint8))
    sc = ThermalScenario(T_b=T_b, T_a=T_a, T_c_side=T_a, T_c_top=T_a, h=0.0,
                         duration=10 * dt, dt=dt)
    lo, hi = sc.bounds
    tol = 1e-7 * max(1.0, abs(hi))
    seen = []
    run_transient(g, sc, on_step=lambda f: seen.append((f.values.min(), f.values.max())))
    mins, maxs = zip(*seen)
    assert min(mins) >= lo - tol and max(maxs) <= hi + tol


def test_steady_energy_balance():
    spec = InfillSpec(Pattern.RECTILINEAR, 0.25)
    g = simplify_infill(spec, 30, 30, 20, FilamentSection(), 2)
    sc = ThermalScenario()
    system = build_system(g, sc)
    f = steady_state(g, sc, system=system)
    influx, outflux = heat_balance(system, f, sc)
    assert influx > 0
    assert abs(influx - outflux) <= 0.005 * abs(influx)


def test_steady_symmetry_under_xy_swap():
    rng = np.random.default_rng(7)
    m = rng.integers(0, 2, (6, 6, 5)).astype(np.uint8)
    m = np.maximum(m, m.transpose(1, 0, 2))
    g = _grid((6, 6, 5), spacing=(0.45, 0.45, 0.2), material=m)
    T = steady_state(g, ThermalScenario()).as_array()
    assert np.max(np.abs(T - T.transpose(1, 0, 2))) < 1e-8


# -- data types and output -------------------------------------------------

def test_field_invariants():
    g = _grid((1, 1, 1))
    with pytest.raises(ValueError):
        TemperatureField(g, np.zeros(7))
    with pytest.raises(ValueError):
        TemperatureField(g, np.full(8, np.nan))


def test_probe_series_invariants():
    with pytest.raises(ValueError):
        ProbeSeries(np.zeros((1, 2)), np.array([0.0, 0.0]), np.zeros((2, 1)))
    s = ProbeSeries(np.zeros((2, 2)), np.array([0.0, 1.0]), np.array([[1.0, 3.0], [2.0, 6.0]]))
    assert np.allclose(s.mean, [2.0, 4.0])


def test_scenario_invariants():
    for bad in ({"duration": 0}, {"dt": -1}, {"h": -0.1}):
        with pytest.raises(ValueError):
            ThermalScenario(**bad)


def test_material_invariants():
    with pytest.raises(ValueError):
        MaterialProperties(1.0, 0.0, 1.0)


def test_vtk_field(tmp_path):
    g = _grid((2, 1, 1))
    T = np.arange(g.n_nodes, dtype=float)
    write_vtk_field(TemperatureField(g, T, 12.0), tmp_path / "f.vtk")
    lines = (tmp_path / "f.vtk").read_text().splitlines()
    assert "POINT_DATA 12" in lines
    vals = [float(v) for v in " ".join(lines[lines.index("LOOKUP_TABLE default") + 1:]).split()]
    # x fastest: first two values are nodes (0,0,0) and (1,0,0)
    assert vals[:2] == [0.0, 4.0]
    assert sorted(vals) == list(T)


def test_dirichlet_marks_bottom_plane():
    g = _grid((2, 2, 3))
    s = apply_dirichlet(assemble(g), g, 50.0)
    fixed = s.fixed.reshape(3, 3, 4)
    assert fixed[:, :, 0].all() and not fixed[:, :, 1:].any()
