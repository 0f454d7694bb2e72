from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import norm

from elastic_spde.coefficients import CoefficientSet, InitialLaw
from elastic_spde.measures import EmpiricalMeasure
from elastic_spde.particles import (
    MeanFieldDrift,
    NumericalAbort,
    ParticleSystemState,
    SimConfig,
    draw_clocks,
    lipschitz_probe,
    pair_boundary_probability,
    pair_probability_ceiling,
    simulate,
    simulate_nonlinear,
    step,
)
from elastic_spde.rng import NoisePath

# 1 - int int G^{E,1}_1(x, y) nu_0(dy) dx for nu_0 = N(1, 0.1^2) truncated at 0 (mpmath quadrature)
EXPECTED_LOSS_T1 = 0.114790036424990999623
BASE = CoefficientSet.constant(0.0, 1.0, 0.0, 1.0)
BUMP = InitialLaw.gaussian_bump(1.0, 0.1)


def state_of(x, chi, dt=0.1):
    x = np.atleast_1d(np.asarray(x, float))
    n = x.size
    return ParticleSystemState(x, np.zeros(n), np.atleast_1d(np.asarray(chi, float)), np.ones(n, bool),
                               np.full(n, np.nan), 0, dt)


def test_step_without_motion():
    s = state_of(1.0, math.inf)
    step(s, CoefficientSet.constant(0.0, 0.0, 0.0, 0.0), 0.3, 0.1)
    assert s.X[0] == 1.0 and s.L[0] == 0.0


def test_step_one_skorokhod_reflection():
    s = state_of(0.2, math.inf)
    step(s, CoefficientSet.constant(-5.0, 0.0, 0.0, 0.0), 0.0, 0.1)  # increment -0.5
    assert s.X[0] == 0.0 and s.L[0] == pytest.approx(0.3)
    assert s.alive[0]


def test_absorbing_clock_kills_on_first_contact():
    s = state_of([0.2, 2.0], draw_clocks(0, 0, 2, math.inf))
    step(s, CoefficientSet.constant(-5.0, 0.0, 0.0, math.inf), 0.0, 0.1)
    assert list(s.alive) == [False, True]
    assert s.tau[0] == pytest.approx(0.1) and math.isnan(s.tau[1])
    x_dead, l_dead = s.X[0], s.L[0]
    step(s, CoefficientSet.constant(-5.0, 0.0, 0.0, math.inf), 0.0, 0.1)
    assert s.X[0] == x_dead and s.L[0] == l_dead  # frozen


def test_step_rejects_mismatched_dt_and_non_finite_positions():
    with pytest.raises(ValueError):
        step(state_of(1.0, 1.0), BASE, 0.0, 0.2)
    with pytest.raises(NumericalAbort):
        step(state_of(1.0, 1.0), CoefficientSet.constant(0.0, 1.0, 0.0, 1.0), math.inf, 0.1)


def test_reflecting_run_keeps_all_mass():
    cfg = SimConfig(N=2000, T=0.5, dt=1e-2, kappa=0.0, snapshot_times=(0.0, 0.25, 0.5), seed=1)
    r = simulate(cfg, CoefficientSet.constant(0.0, 1.0, 0.5, 0.0), BUMP, NoisePath.generate(1, 0.5, 1e-2))
    assert np.all(r.loss == 0)
    assert all(m.total_mass == 1.0 for _, m in r.snapshots)
    assert np.all(r.j_series == 0)


def test_single_particle_kill_time_is_first_crossing_and_replays():
    cfg = SimConfig(N=1, T=3.0, dt=1e-3, seed=12)
    noise = NoisePath.generate(12, 3.0, 1e-3)
    seen = []
    r = simulate(cfg, BASE, BUMP, noise, observers=[lambda k, t, s, mu: seen.append((s.L[0], s.chi[0], s.alive[0]))])
    r2 = simulate(cfg, BASE, BUMP, noise)
    assert np.array_equal(r.tau, r2.tau, equal_nan=True)
    if not math.isnan(r.tau[0]):
        k = int(round(r.tau[0] / 1e-3))
        L, chi, _ = seen[k]
        assert L > chi
        assert all(l <= c for l, c, _ in seen[:k])


def test_mass_bookkeeping_and_local_time_support():
    cfg = SimConfig(N=3000, T=0.3, dt=1e-2, seed=2)
    noise = NoisePath.generate(2, 0.3, 1e-2)
    coeffs = CoefficientSet.constant(-0.5, 1.0, 0.5, 2.0)
    prev = {}

    def obs(k, t, s, mu):
        assert s.n_alive + np.count_nonzero(~s.alive) == s.N
        if prev:
            dL = s.L - prev["L"]
            assert np.all(dL >= 0)
            moved = dL > 0
            assert np.all(s.X[moved & s.alive] == 0.0)
            newly_dead = prev["alive"] & ~s.alive
            assert np.all(dL[~prev["alive"]] == 0)
            assert np.all(s.L[newly_dead] > s.chi[newly_dead])
        assert np.all(s.L[s.alive] <= s.chi[s.alive])
        prev["L"], prev["alive"] = s.L.copy(), s.alive.copy()

    r = simulate(cfg, coeffs, BUMP.__class__.uniform(0.01, 0.5), noise, observers=[obs])
    np.testing.assert_array_equal(r.alive_counts + r.killed_counts, cfg.N)


@given(st.floats(0.05, 5.0), st.floats(1.0, 20.0))
def test_clocks_are_monotonically_coupled_in_kappa(k1, factor):
    k2 = k1 * factor
    cfg = dict(N=400, T=0.2, dt=1e-2, seed=5)
    noise = NoisePath.generate(5, 0.2, 1e-2)
    law = InitialLaw.uniform(0.01, 0.3)
    r1 = simulate(SimConfig(kappa=k1, **cfg), BASE, law, noise)
    r2 = simulate(SimConfig(kappa=k2, **cfg), BASE, law, noise)
    killed1, killed2 = ~np.isnan(r1.tau), ~np.isnan(r2.tau)
    assert np.all(killed2[killed1])


def test_snapshot_times_must_lie_on_the_grid():
    with pytest.raises(ValueError):
        SimConfig(N=10, T=1.0, dt=0.1, snapshot_times=(0.05,))
    with pytest.raises(ValueError):
        SimConfig(N=0, T=1.0, dt=0.1)


def test_noise_grid_mismatch_is_rejected():
    with pytest.raises(ValueError):
        simulate(SimConfig(N=10, T=1.0, dt=0.1), BASE, BUMP, NoisePath.generate(0, 1.0, 0.05))


def test_expected_loss_matches_kernel_quadrature():
    # reflected Euler loses local time at O(sqrt(dt)); dt = 1e-4 keeps the bias below 3 SE at N = 1e5
    N = 100_000
    cfg = SimConfig(N=N, T=1.0, dt=1e-4, seed=2024)
    r = simulate(cfg, BASE, BUMP, NoisePath.generate(2024, 1.0, 1e-4))
    loss = float(r.loss[-1])
    se = math.sqrt(loss * (1 - loss) / N)
    assert abs(loss - EXPECTED_LOSS_T1) <= 3 * se


def test_zero_interaction_is_bit_identical_to_linear():
    cfg = SimConfig(N=1000, T=0.2, dt=1e-2, snapshot_times=(0.1, 0.2), seed=8)
    noise = NoisePath.generate(8, 0.2, 1e-2)
    lin = simulate(cfg, CoefficientSet.constant(0.3, 1.0, 0.5, 1.0), BUMP, noise)
    non = simulate_nonlinear(cfg, CoefficientSet.constant(0.0, 1.0, 0.5, 1.0), BUMP, noise, MeanFieldDrift(a=0.3, b=0.0))
    for (_, a), (_, b) in zip(lin.snapshots, non.snapshots):
        assert np.array_equal(a.atoms, b.atoms)
    assert np.array_equal(lin.tau, non.tau, equal_nan=True)
    assert np.array_equal(lin.capped_local_time, non.capped_local_time)


def test_mean_reversion_decreases_mean_without_noise():
    cfg = SimConfig(N=500, T=1.0, dt=1e-2, snapshot_times=tuple(np.round(np.arange(0, 1.01, 0.1), 10)), seed=3)
    zero_sigma = CoefficientSet(mu=lambda t, x: 0 * x, sigma=lambda t, x: 0 * np.asarray(x, float),
                                rho=lambda t: 0.0, kappa=1.0, bound_C=2.0)
    drift = MeanFieldDrift(a=0.0, b=-1.0, f_kind="clipped-linear", clip=5.0)
    r = simulate_nonlinear(cfg, zero_sigma, InitialLaw.uniform(1.0, 3.0), NoisePath.generate(3, 1.0, 1e-2), drift)
    means = [float(np.mean(m.atoms)) for _, m in r.snapshots]
    assert all(b <= a + 1e-15 for a, b in zip(means, means[1:]))
    assert not r.lipschitz_flags


def test_lipschitz_probe_on_random_pairs():
    rng = np.random.default_rng(0)
    drift = MeanFieldDrift(a=0.5, b=-2.0, f_kind="tanh")
    pairs = []
    for _ in range(100):
        a = rng.exponential(1.0, rng.integers(1, 60))
        b = np.abs(a + rng.normal(0, 10 ** rng.uniform(-3, 0), a.size))[: rng.integers(1, a.size + 1)]
        pairs.append((EmpiricalMeasure(a, 60), EmpiricalMeasure(b, 60)))
    assert lipschitz_probe(drift, pairs) == []
    assert lipschitz_probe(drift, pairs, c=1e-3)  # a too small constant is caught


def test_pair_probability_examples():
    p, se = pair_boundary_probability(0.3, 1.0, 20.0, 10_000, seed=1, law=InitialLaw.uniform(0.1, 5.0))
    assert p == 1.0
    target = (norm.cdf(-0.9) - norm.cdf(-1.1)) ** 2  # 0.0023419854691878197
    p, se = pair_boundary_probability(0.0, 1.0, 0.1, 1_000_000, seed=2, law=1.0)
    assert abs(p - target) <= 3 * se
    p, se = pair_boundary_probability(0.5, 1.0, 0.05, 10_000_000, seed=3, law=0.0 + 1e-12)
    assert p <= pair_probability_ceiling(0.5, 1.0, 0.05) + 3 * se
    assert pair_probability_ceiling(0.5, 1.0, 0.05) == pytest.approx(2 * 0.05**2 / (math.pi * math.sqrt(0.75)))
    with pytest.raises(ValueError):
        pair_boundary_probability(1.0, 1.0, 0.1, 10, seed=0)
