from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from elastic_spde.coefficients import CoefficientSet
from elastic_spde.kernels import KernelParams, reflecting_kernel
from elastic_spde.measures import (
    BoundaryConditionError,
    EmpiricalMeasure,
    bin_grid_function,
    bounded_lipschitz_distance,
    density_estimate,
    elastic_test_function,
    h_minus1_proxy,
    histogram_edges,
    interval_mass,
    interval_masses,
    martingale_components,
    pair,
    require_elastic,
)
from elastic_spde.kernels import GridFunction
from elastic_spde.rng import NoisePath

atoms_s = st.lists(st.floats(0.0, 5.0), min_size=1, max_size=12)


def em(xs, n=None):
    return EmpiricalMeasure.from_positions(np.asarray(xs, dtype=float), n)


def test_interval_mass_examples():
    m = em([0.5, 1.5, 2.5])
    assert interval_mass(m, 1.0, 3.0) == pytest.approx(2 / 3)
    assert interval_mass(m, 3.0, 4.0) == 0.0
    with pytest.raises(ValueError):
        interval_mass(m, 2.0, 1.0)


def test_interval_mass_matches_linear_scan():
    rng = np.random.default_rng(3)
    x = rng.exponential(1.0, 500)
    m = em(x, 800)
    for _ in range(1000):
        a, b = np.sort(rng.uniform(0, 5, 2))
        if a == b:
            continue
        assert interval_mass(m, a, b) == pytest.approx(np.count_nonzero((x > a) & (x < b)) / 800, abs=1e-15)
    bs = np.linspace(0.1, 4, 9)
    np.testing.assert_array_equal(interval_masses(m, 0.0, bs), [interval_mass(m, 0.0, b) for b in bs])


def test_pair_examples():
    assert pair(em([0.7]), np.cos) == pytest.approx(math.cos(0.7))
    m = em([1.0, 2.0, 3.0], 5)
    assert pair(m, lambda x: 1.0) == pytest.approx(m.total_mass)
    assert pair(em([1.0, 2.0]), lambda x: x**2) == pytest.approx(2.5)


@given(atoms_s, st.floats(-3, 3), st.floats(-3, 3))
def test_pair_linear_in_phi(xs, a, b):
    m = em(xs)
    lhs = pair(m, lambda x: a * np.sin(x) + b * x)
    assert lhs == pytest.approx(a * pair(m, np.sin) + b * pair(m, lambda x: x), abs=1e-9)


def test_bl_distance_examples():
    m = em([0.3, 1.2])
    assert bounded_lipschitz_distance(m, m).value == 0.0
    assert bounded_lipschitz_distance(em([0.0]), em([1.0]), h=0.01).value == pytest.approx(1.0, abs=1e-9)
    assert bounded_lipschitz_distance(em([0.0]), em([5.0]), h=0.01).value == pytest.approx(2.0, abs=1e-9)


@given(st.floats(0.0, 6.0), st.floats(0.0, 6.0))
def test_bl_distance_two_atoms(x, y):
    d = bounded_lipschitz_distance(em([x]), em([y]), h=0.005)
    target = min(2.0, abs(x - y))
    assert d.value - 1e-9 <= target <= d.upper + 1e-9


@given(atoms_s, atoms_s, atoms_s)
def test_bl_distance_is_a_metric(a, b, c):
    ma, mb, mc = em(a, 12), em(b, 12), em(c, 12)
    h = 0.01
    dab = bounded_lipschitz_distance(ma, mb, h)
    dba = bounded_lipschitz_distance(mb, ma, h)
    assert dab.value == pytest.approx(dba.value, abs=1e-9)
    assert dab.value <= 2.0 + 1e-9
    dac = bounded_lipschitz_distance(ma, mc, h)
    dcb = bounded_lipschitz_distance(mc, mb, h)
    assert dab.value <= dac.upper + dcb.upper + 1e-9


def test_h_minus1_proxy_examples():
    p = KernelParams(0.05, 1.0)
    grid = (8.0, 0.01)
    m = em([0.5, 1.0, 2.0])
    assert h_minus1_proxy(m, m, p, grid) == 0.0
    m2 = em([0.6, 1.3])
    assert h_minus1_proxy(m, m2, p, grid) == pytest.approx(h_minus1_proxy(m2, m, p, grid), rel=1e-12)


def test_h_minus1_proxy_separates_shifted_laws():
    rng = np.random.default_rng(4)
    p, grid = KernelParams(0.05, 1.0), (10.0, 0.02)
    same, shifted = [], []
    for _ in range(10):
        a, b, c = (1.0 + rng.exponential(1.0, 10_000) for _ in range(3))
        same.append(h_minus1_proxy(em(a), em(b), p, grid))
        shifted.append(h_minus1_proxy(em(a), em(c + 0.5), p, grid))
    gap = np.mean(shifted) - np.mean(same)
    se = math.sqrt(np.var(same, ddof=1) / 10 + np.var(shifted, ddof=1) / 10)
    assert gap > 3 * se


def test_h_minus1_proxy_decreases_with_n():
    rng = np.random.default_rng(5)
    p, grid = KernelParams(0.05, 0.0), (10.0, 0.02)
    means = []
    for n in (500, 5000):
        vals = [h_minus1_proxy(em(1 + rng.exponential(1, n)), em(1 + rng.exponential(1, n)), p, grid) for _ in range(20)]
        means.append(np.mean(vals))
    assert means[1] < means[0]


def test_density_estimates():
    u = (np.arange(1_000_000) + 0.5) / 1_000_000
    h = density_estimate(em(u), bin_width=0.01, x_max=1.0)
    assert np.max(np.abs(h.density - 1.0)) < 0.02
    assert h.integral() == pytest.approx(1.0)
    moll = density_estimate(em([1.0]), "mollified", params=KernelParams(0.1, 0.0), grid=(4.0, 0.05))
    np.testing.assert_allclose(moll.values, reflecting_kernel(0.1, moll.x, 1.0), rtol=1e-14)
    empty = density_estimate(em([], 3), "mollified", params=KernelParams(0.1, 1.0), grid=(4.0, 0.05))
    assert np.all(empty.values == 0)


def test_bin_grid_function_integrates_exactly_for_linear_data():
    V = GridFunction.from_function(lambda x: 2.0 - 0.5 * x, 4.0, 0.01)
    b = bin_grid_function(V, histogram_edges(4.0, 0.05))
    assert b.integral() == pytest.approx(V.integral(), abs=1e-12)
    with pytest.raises(ValueError):
        bin_grid_function(V, np.array([0.0, 0.013]))


@given(st.floats(0.0, 10.0), st.floats(0.1, 3.0))
def test_elastic_test_functions_satisfy_the_boundary_condition(kappa, lam):
    phi = elastic_test_function(kappa, lam)
    assert phi.boundary_defect(kappa) < 1e-8
    require_elastic(phi, kappa)
    x = np.linspace(0.01, 3, 7)
    h = 1e-5
    np.testing.assert_allclose(phi.d1(x), (phi.f(x + h) - phi.f(x - h)) / (2 * h), rtol=1e-6, atol=1e-8)


def test_require_elastic_rejects_mismatch():
    with pytest.raises(BoundaryConditionError):
        require_elastic(elastic_test_function(1.0, 1.0), 2.0)


def test_static_particles_give_zero_martingale():
    c = CoefficientSet.constant(0.0, 1.0, 0.0, 0.0)
    c0 = CoefficientSet(mu=c.mu, sigma=lambda t, x: np.zeros_like(np.asarray(x, float)), rho=c.rho, kappa=0.0,
                        bound_C=2.0)
    noise = NoisePath.generate(0, 0.1, 0.01)
    m = em([0.5, 1.0, 1.5])
    traj = [(t, m) for t in noise.t_grid]
    st_ = martingale_components(traj, noise, c0, elastic_test_function(0.0, 1.0))
    assert np.all(st_.M == 0) and np.all(st_.S == 0) and np.all(st_.C == 0)
