from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import integrate

from elastic_spde.coefficients import CoefficientSet, InitialLaw
from elastic_spde.fdsolver import (
    SolverConfig,
    TailMassWarning,
    WeakBCMonitor,
    analytic_elastic_solution,
    compare_particle_vs_solver,
    kappa_limit_study,
    mass_loss_series,
    solve_spde_path,
    weak_bc_residual,
)
from elastic_spde.kernels import GridFunction, elastic_kernel
from elastic_spde.particles import SimConfig, simulate
from elastic_spde.rng import NoisePath

BUMP = InitialLaw.gaussian_bump(1.0, 0.1)
HEAT = CoefficientSet.constant(0.0, 1.0, 0.0, 1.0)
NOISY = CoefficientSet.constant(0.0, 1.0, 0.5, 1.0)


def cfg(dx=0.01, dt=1e-4, x_max=6.0, **kw):
    return SolverConfig.from_density(BUMP.density_v0, x_max, dx, dt, **kw)


def test_config_validation():
    good = cfg()
    with pytest.raises(ValueError):
        SolverConfig(x_max=6.0, dx=0.01, dt=1e-4, V0=GridFunction(0.02, good.V0.values[::2]))
    with pytest.raises(ValueError):
        SolverConfig(x_max=6.0, dx=0.01, dt=1e-4, V0=GridFunction(0.01, -good.V0.values))
    with pytest.raises(ValueError):
        SolverConfig(x_max=6.0, dx=0.01, dt=1e-4, V0=GridFunction(0.01, 2 * good.V0.values))
    with pytest.raises(ValueError):
        cfg(boundary="dirichlet")
    m = good.manifest()
    assert m["stability_guard"] == 0.0625 and m["noise_courant_limit"] == 0.25


def test_analytic_oracle_matches_adaptive_quadrature():
    x = np.array([0.0, 0.4, 1.1])
    got = analytic_elastic_solution(BUMP.density_v0, x, 0.5, 1.0, (0.0, 2.0))
    for xi, g in zip(x, got):
        ref, _ = integrate.quad(lambda y: elastic_kernel(0.5, 1.0, xi, y) * BUMP.density_v0(y), 0, 2, epsabs=1e-14, points=[1.0])
        assert g == pytest.approx(ref, abs=1e-12)


def test_heat_equation_against_kernel_solution():
    noise = NoisePath.generate(0, 0.5, 1e-3)
    res = solve_spde_path(HEAT, noise, cfg(0.004, 2e-4))
    exact = analytic_elastic_solution(BUMP.density_v0, res.x, 0.5, 1.0, (0.0, 2.5))
    assert res.final.l1_distance(GridFunction(0.004, exact)) < 5e-4


def test_reflecting_conserves_mass():
    noise = NoisePath.generate(0, 1.0, 1e-3)
    res = solve_spde_path(HEAT, noise, cfg(0.01, 1e-3, x_max=8.0, boundary="reflecting"))
    assert np.max(np.abs(res.mass - res.mass[0])) <= 1e-6
    assert np.all(mass_loss_series(res).predicted == 0)


def test_absorbing_mass_strictly_decreases():
    noise = NoisePath.generate(0, 0.5, 1e-3)
    res = solve_spde_path(HEAT, noise, cfg(0.01, 1e-3, boundary="absorbing"))
    assert np.all(np.diff(res.mass[5:]) < 0)
    with pytest.raises(ValueError):
        mass_loss_series(res)


def test_rho_zero_output_ignores_the_noise_path():
    a = solve_spde_path(HEAT, NoisePath.generate(1, 0.2, 1e-3), cfg(0.02, 1e-3))
    b = solve_spde_path(HEAT, NoisePath.generate(2, 0.2, 1e-3), cfg(0.02, 1e-3))
    assert np.array_equal(a.final.values, b.final.values)


def test_same_noise_same_output_and_positivity():
    noise = NoisePath.generate(5, 0.3, 1e-3)
    c = cfg(0.01, 2.5e-5, x_max=6.0)
    a = solve_spde_path(NOISY, noise, c)
    b = solve_spde_path(NOISY, noise, c)
    assert np.array_equal(a.final.values, b.final.values) and np.array_equal(a.mass, b.mass)
    assert np.min(a.min_value) >= -1e-8 * np.max(c.V0.values)
    assert np.all(np.diff(a.mass) <= 1e-12)


def test_transport_guard():
    noise = NoisePath.generate(0, 0.1, 1e-3)
    with pytest.raises(ValueError, match="dt"):
        solve_spde_path(NOISY, noise, cfg(0.01, 1e-3))


def test_noise_must_refine_to_solver_dt():
    with pytest.raises(ValueError):
        solve_spde_path(HEAT, NoisePath.generate(0, 0.1, 1e-3), cfg(0.01, 3e-4))


def test_tail_warning():
    c = SolverConfig.from_density(InitialLaw.gaussian_bump(2.5, 0.3).density_v0, 3.0, 0.02, 1e-3)
    with pytest.warns(TailMassWarning):
        solve_spde_path(HEAT, NoisePath.generate(0, 0.1, 1e-3), c)


def test_mass_loss_examples():
    noise = NoisePath.generate(0, 0.5, 1e-3)
    res = solve_spde_path(HEAT, noise, cfg(0.01, 1e-4))
    ml = mass_loss_series(res)
    assert ml.relative_gap <= 0.05
    far = SolverConfig.from_density(InitialLaw.gaussian_bump(4.0, 0.1).density_v0, 8.0, 0.01, 1e-4)
    quiet = mass_loss_series(solve_spde_path(HEAT, NoisePath.generate(0, 0.05, 1e-3), far))
    assert abs(quiet.predicted[-1]) < 1e-12 and abs(quiet.actual[-1]) < 1e-12
    assert np.all(mass_loss_series(res, kappa=0.0).predicted == 0)


def test_weak_boundary_residual_reflecting():
    noise = NoisePath.generate(0, 0.5, 1e-3)
    res = solve_spde_path(HEAT, noise, cfg(0.01, 1e-4, boundary="reflecting"), keep_all=True)
    assert weak_bc_residual(res, noise, HEAT.with_kappa(0.0), 0.01).sup < 1e-10


def test_weak_boundary_residual_and_order():
    noise = NoisePath.generate(0, 0.5, 4e-4)
    sups = []
    for dx, dt in [(0.02, 4e-4), (0.01, 2e-4), (0.005, 1e-4)]:
        c = cfg(dx, dt)
        mon = WeakBCMonitor(HEAT, 0.01, c.V0.x, 1.0)
        solve_spde_path(HEAT, noise, c, observers=[mon])
        sups.append(mon.residual(noise).sup)
    assert sups[-1] <= 5e-3
    for a, b in zip(sups, sups[1:]):
        assert 1.5 <= a / b <= 4


def test_monitor_and_stored_series_agree():
    noise = NoisePath.generate(3, 0.1, 1e-3)
    c = cfg(0.02, 2.5e-5, x_max=6.0)
    mon = WeakBCMonitor(NOISY, 0.05, c.V0.x, 1.0)
    res = solve_spde_path(NOISY, noise, c, keep_all=True, observers=[mon])
    np.testing.assert_array_equal(mon.residual(noise).cumulative, weak_bc_residual(res, noise, NOISY, 0.05).cumulative)
    with pytest.raises(ValueError):
        weak_bc_residual(solve_spde_path(NOISY, noise, c), noise, NOISY, 0.05)


def test_kappa_limit_study_small():
    noise = NoisePath.generate(0, 0.2, 1e-3)
    tab = kappa_limit_study([0.0, 0.1, 1.0, 10.0, 100.0], noise, NOISY, cfg(0.02, 1e-4))
    assert tab.d_reflecting[0] == 0.0
    assert np.all(np.diff(tab.d_absorbing) < 0) and np.all(np.diff(tab.d_reflecting) > 0)
    assert tab.mass_absorbing < tab.mass[-1] < tab.mass[0] == pytest.approx(tab.mass_reflecting)


def test_compare_errors_and_t0_sampling():
    noise = NoisePath.generate(0, 0.1, 1e-2)
    sim = simulate(SimConfig(N=100_000, T=0.1, dt=1e-2, snapshot_times=(0.0, 0.1), seed=0), HEAT, BUMP, noise)
    sol = solve_spde_path(HEAT, noise, cfg(0.01, 1e-3, snapshot_times=(0.0, 0.1)))
    comp = compare_particle_vs_solver(sim, sol, 0.05)
    assert comp.l1[0] <= 0.01
    with pytest.raises(ValueError):
        compare_particle_vs_solver(sim, sol, 0.013)
    other = solve_spde_path(HEAT, noise, cfg(0.01, 1e-3, snapshot_times=(0.0,)))
    with pytest.raises(ValueError):
        compare_particle_vs_solver(sim, other, 0.05)


def test_csv_outputs(tmp_path):
    res = solve_spde_path(HEAT, NoisePath.generate(0, 0.01, 1e-3), cfg(0.1, 1e-3, snapshot_times=(0.0, 0.01)))
    res.mass_csv(tmp_path / "m.csv")
    res.snapshots_csv(tmp_path / "s.csv")
    assert (tmp_path / "m.csv").read_text().splitlines()[0] == "t,mass,boundary_value,tail_mass"
    assert len((tmp_path / "s.csv").read_text().splitlines()) == 1 + 2 * res.x.size
