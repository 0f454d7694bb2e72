"""Correlated reflected diffusions on [0, inf) with elastic killing.

Euler-Maruyama with the one-step Skorokhod map: the pre-point
Y = X + mu dt + sigma (rho dW0 + sqrt(1 - rho^2) dW^i) is reflected to
X' = max(Y, 0) and the local time grows by max(-Y, 0).  A particle dies at
the end of the first step where its local time exceeds its Exponential(kappa)
clock.  The first-crossing of the clock is resolved only at step granularity,
a known O(dt^1/2) bias of the reflected Euler local time.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .coefficients import CoefficientSet, InitialLaw
from .measures import EmpiricalMeasure, TestFunction, bounded_lipschitz_distance, require_elastic
from .rng import NoisePath, Stream, normals, steps_for, uniforms


class NumericalAbort(ArithmeticError):
    pass


@dataclass
class SimConfig:
    N: int
    T: float
    dt: float
    kappa: float | None = None  # None -> coeffs.kappa; 0 reflecting, inf absorbing
    snapshot_times: Sequence[float] = ()
    seed: int = 0
    replication: int = 0

    def __post_init__(self):
        if self.N < 1:
            raise ValueError(f"N must be >= 1, got {self.N}")
        self.n_steps = steps_for(self.T, self.dt)
        for s in self.snapshot_times:
            k = s / self.dt
            if abs(k - round(k)) > 1e-6 or not 0 <= round(k) <= self.n_steps:
                raise ValueError(f"snapshot time {s} is not on the time grid")

    def snapshot_steps(self) -> set[int]:
        return {int(round(s / self.dt)) for s in self.snapshot_times}


@dataclass
class ParticleSystemState:
    X: np.ndarray
    L: np.ndarray
    chi: np.ndarray
    alive: np.ndarray
    tau: np.ndarray
    k: int
    dt: float

    @property
    def t(self) -> float:
        return self.k * self.dt

    @property
    def N(self) -> int:
        return self.X.size

    @property
    def n_alive(self) -> int:
        return int(np.count_nonzero(self.alive))

    def measure(self) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.X[self.alive], self.N)

    def copy(self) -> ParticleSystemState:
        return ParticleSystemState(
            self.X.copy(), self.L.copy(), self.chi.copy(), self.alive.copy(), self.tau.copy(), self.k, self.dt
        )


def draw_clocks(seed: int, replication: int, N: int, kappa: float) -> np.ndarray:
    """Exponential(kappa) clocks from shared uniforms, so clocks at different
    kappa are coupled path by path (chi = -log u / kappa)."""
    if kappa == 0:
        return np.full(N, np.inf)
    if math.isinf(kappa):
        return np.zeros(N)
    u = uniforms(seed, Stream.CLOCK, replication, size=N)
    return -np.log(u) / kappa


def initial_state(config: SimConfig, law: InitialLaw, kappa: float) -> ParticleSystemState:
    N = config.N
    X = law.sample(uniforms(config.seed, Stream.INITIAL, config.replication, size=N))
    if not np.all(X > 0):
        raise ValueError("initial law produced non-positive samples")
    return ParticleSystemState(
        X=np.asarray(X, dtype=float),
        L=np.zeros(N),
        chi=draw_clocks(config.seed, config.replication, N, kappa),
        alive=np.ones(N, dtype=bool),
        tau=np.full(N, np.nan),
        k=0,
        dt=config.dt,
    )


def step(state: ParticleSystemState, coeffs: CoefficientSet, dw0: float, dt: float, z=None, mu_values=None) -> None:
    """Advance ``state`` in place by one step of size dt.

    ``z`` are standard normals indexed by particle and ``mu_values`` an optional
    drift override, both over all N particles (entries of dead ones unused).
    """
    if abs(dt - state.dt) > 1e-15 * max(dt, 1.0):
        raise ValueError(f"step dt={dt} does not match state dt={state.dt}")
    t = state.t
    x = state.X
    alive = state.alive
    if z is None:
        z = np.zeros(state.N)
    mu = coeffs.mu(t, x) if mu_values is None else mu_values
    sig = coeffs.sigma(t, x)
    rho = float(coeffs.rho(t))
    y = x + mu * dt + sig * (rho * dw0 + math.sqrt(1.0 - rho * rho) * math.sqrt(dt) * z)
    finite = np.isfinite(y)
    if not np.all(finite | ~alive):
        bad = int(np.flatnonzero(~finite & alive)[0])
        raise NumericalAbort(f"non-finite position for particle {bad} at t={t + dt:g}")
    l_new = np.where(alive, state.L + np.maximum(-y, 0.0), state.L)
    killed = alive & (l_new > state.chi)
    survivors = alive & ~killed
    state.X = np.where(survivors, np.maximum(y, 0.0), np.where(killed, 0.0, x))
    state.L = l_new
    state.alive = survivors
    state.k += 1
    if killed.any():
        state.tau[killed] = state.t


# ---------------------------------------------------------------------------
# drift depending on the empirical measure


_LIBRARY = {
    "tanh": (np.tanh, lambda c: 1.0, lambda c: 1.0),
    "clipped-linear": (None, lambda c: c, lambda c: 1.0),
}


@dataclass(frozen=True)
class MeanFieldDrift:
    """mu(t, x, nu) = a + b <nu, f> with f bounded Lipschitz.

    ``f_kind`` is ``"tanh"`` or ``"clipped-linear"`` (x clipped at ``clip``).
    ``lipschitz_c`` defaults to |b| max(sup|f|, Lip f), the constant for which
    |mu(nu) - mu(nu~)| <= c d0(nu, nu~).
    """

    a: float = 0.0
    b: float = 0.0
    f_kind: str = "tanh"
    clip: float = 5.0
    lipschitz_c: float | None = None

    def __post_init__(self):
        if self.f_kind not in _LIBRARY:
            raise ValueError(f"unknown interaction function {self.f_kind!r}")
        if self.lipschitz_c is None:
            _, sup, lip = _LIBRARY[self.f_kind]
            object.__setattr__(self, "lipschitz_c", abs(self.b) * max(sup(self.clip), lip(self.clip)))

    def f(self, x):
        if self.f_kind == "tanh":
            return np.tanh(x)
        return np.minimum(x, self.clip)

    def value(self, positions: np.ndarray, n_total: int) -> float:
        """Drift value for the measure with atoms ``positions`` of mass 1/n_total."""
        mean_f = float(np.sum(self.f(positions))) / n_total if positions.size else 0.0
        return self.a + self.b * mean_f

    def __call__(self, t, x, m: EmpiricalMeasure):
        return np.full(np.shape(x), self.value(m.atoms, m.n_total))


def lipschitz_probe(drift: MeanFieldDrift, pairs, c: float | None = None, h: float | None = None) -> list[dict]:
    """Pairs (nu, nu~) where |mu(nu) - mu(nu~)| > c * (upper bound on d0).

    Using the upper bound of the d0 approximation means a flag is a certain
    violation, never a quadrature artefact.
    """
    c = drift.lipschitz_c if c is None else c
    flags = []
    for i, (m1, m2) in enumerate(pairs):
        gap = abs(drift.value(m1.atoms, m1.n_total) - drift.value(m2.atoms, m2.n_total))
        d0 = bounded_lipschitz_distance(m1, m2, h)
        if gap > c * d0.upper + 1e-12:
            flags.append({"pair": i, "gap": gap, "d0": d0.value, "c": c})
    return flags


# ---------------------------------------------------------------------------
# simulation


@dataclass
class SimResult:
    t_grid: np.ndarray
    snapshots: list[tuple[float, EmpiricalMeasure]]
    killed_counts: np.ndarray  # cumulative #{tau_i <= t_k}
    alive_counts: np.ndarray
    capped_local_time: np.ndarray  # (1/N) sum_i min(L_i, chi_i) at t_k
    tau: np.ndarray
    N: int
    kappa: float
    lipschitz_flags: list[dict] = field(default_factory=list)
    final_state: ParticleSystemState | None = None
    snapshot_raw: list[np.ndarray] = field(default_factory=list, repr=False)  # by particle, NaN once killed

    def snapshot_at(self, t: float) -> EmpiricalMeasure:
        for s, m in self.snapshots:
            if abs(s - t) < 1e-9:
                return m
        raise KeyError(f"no snapshot at t={t}")

    @property
    def loss(self) -> np.ndarray:
        return self.killed_counts / self.N

    @property
    def j_series(self) -> np.ndarray:
        """kappa (1/N) sum L_{t ^ tau_i} - loss, i.e. J^N(phi) / phi(0)."""
        if self.kappa == 0:
            return np.zeros_like(self.loss)
        if math.isinf(self.kappa):
            return np.full_like(self.loss, np.nan)
        return self.kappa * self.capped_local_time - self.loss

    def loss_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("t", "loss"))
            for t, v in zip(self.t_grid, self.loss):
                w.writerow((repr(float(t)), repr(float(v))))

    def snapshot_csv(self, path, index: int) -> None:
        t, m = self.snapshots[index]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("position",))
            for x in m.atoms:
                w.writerow((repr(float(x)),))


Observer = Callable[[int, float, ParticleSystemState, np.ndarray], None]


def simulate(
    config: SimConfig,
    coeffs: CoefficientSet,
    law: InitialLaw,
    noise: NoisePath,
    observers: Sequence[Observer] = (),
    drift: MeanFieldDrift | None = None,
    lipschitz_check: bool = False,
) -> SimResult:
    """Run the particle system on the common-noise path ``noise``.

    Observers are called at every grid time t_k, before the step out of t_k,
    with the drift values (over all N particles) that step will use.
    """
    kappa = coeffs.kappa if config.kappa is None else config.kappa
    if abs(noise.dt - config.dt) > 1e-15 or noise.n_steps != config.n_steps:
        raise ValueError("noise grid does not match the simulation grid")
    state = initial_state(config, law, kappa)
    K, N = config.n_steps, config.N
    snap_steps = config.snapshot_steps()
    killed = np.zeros(K + 1, dtype=np.int64)
    alive = np.zeros(K + 1, dtype=np.int64)
    capped = np.zeros(K + 1)
    snapshots = []
    raw = []
    flags: list[dict] = []
    prev_snapshot = None
    for k in range(K + 1):
        n_alive = state.n_alive
        alive[k] = n_alive
        killed[k] = N - n_alive
        capped[k] = float(np.sum(np.minimum(state.L, state.chi))) / N if kappa > 0 else float(np.sum(state.L)) / N
        x_alive = state.X[state.alive]
        if drift is None:
            mu_values = coeffs.mu(state.t, state.X)
        else:
            mu_values = np.full(N, drift.value(x_alive, N))
        if k in snap_steps:
            m = EmpiricalMeasure(x_alive, N)
            snapshots.append((state.t, m))
            raw.append(np.where(state.alive, state.X, np.nan))
            if lipschitz_check and drift is not None and prev_snapshot is not None:
                for f in lipschitz_probe(drift, [(prev_snapshot, m)]):
                    f["t"] = state.t
                    flags.append(f)
            prev_snapshot = m
        for obs in observers:
            obs(k, state.t, state, mu_values)
        if k == K:
            break
        z = normals(config.seed, Stream.IDIOSYNCRATIC, config.replication, k, size=N)
        step(state, coeffs, float(noise.increments[k]), config.dt, z=z, mu_values=mu_values)
    return SimResult(
        t_grid=noise.t_grid,
        snapshots=snapshots,
        killed_counts=killed,
        alive_counts=alive,
        capped_local_time=capped,
        tau=state.tau.copy(),
        N=N,
        kappa=kappa,
        lipschitz_flags=flags,
        final_state=state,
        snapshot_raw=raw,
    )


def simulate_nonlinear(config, coeffs, law, noise, drift: MeanFieldDrift, observers=(), lipschitz_check=True):
    """simulate with the drift frozen at the empirical measure of the step start."""
    return simulate(config, coeffs, law, noise, observers, drift=drift, lipschitz_check=lipschitz_check)


class PairingRecorder:
    """Observer accumulating <nu, phi>, <nu, mu phi'>, <nu, sigma^2 phi''>, <nu, sigma rho phi'>."""

    def __init__(self, phis: Sequence[TestFunction], coeffs: CoefficientSet, n_steps: int, kappa: float | None = None):
        kappa = coeffs.kappa if kappa is None else kappa
        for phi in phis:
            require_elastic(phi, kappa)
        self.phis = list(phis)
        self.coeffs = coeffs
        self.data = np.zeros((len(self.phis), 4, n_steps + 1))
        self.t = np.zeros(n_steps + 1)

    def __call__(self, k, t, state, mu_values):
        a = state.alive
        x = state.X[a]
        mu_values = mu_values[a]
        w = 1.0 / state.N
        self.t[k] = t
        if x.size == 0:
            return
        sig = self.coeffs.sigma(t, x)
        rho = float(self.coeffs.rho(t))
        for i, phi in enumerate(self.phis):
            d1 = phi.d1(x)
            self.data[i, 0, k] = w * np.sum(phi.f(x))
            self.data[i, 1, k] = w * np.sum(mu_values * d1)
            self.data[i, 2, k] = w * np.sum(sig * sig * phi.d2(x))
            self.data[i, 3, k] = w * np.sum(sig * rho * d1)

    def series(self, i: int):
        from .measures import PairingSeries

        return PairingSeries(self.t.copy(), *(self.data[i, j].copy() for j in range(4)))


# ---------------------------------------------------------------------------
# pair boundary probability


def pair_probability_ceiling(rho: float, t: float, eps: float) -> float:
    """2 eps^2 / (pi sqrt(1 - rho^2) t)."""
    return 2.0 * eps * eps / (math.pi * math.sqrt(1.0 - rho * rho) * t)


def pair_boundary_probability(rho, t, eps, M, seed, law=1.0, chunk: int = 1_000_000) -> tuple[float, float]:
    """Monte Carlo estimate (and SE) of P(0 < |X0 + W1_t| < eps, 0 < |Y0 + W2_t| < eps).

    ``law`` is an InitialLaw or a number (Dirac initial position).
    """
    if not abs(rho) < 1 or t <= 0 or eps <= 0:
        raise ValueError("need |rho| < 1, t > 0, eps > 0")
    hits = 0
    done = 0
    c = 0
    s = math.sqrt(t)
    while done < M:
        n = min(chunk, M - done)
        g = normals(seed, Stream.PAIR, c, size=2 * n).reshape(2, n)
        w1 = s * g[0]
        w2 = s * (rho * g[0] + math.sqrt(1 - rho * rho) * g[1])
        if isinstance(law, InitialLaw):
            u = uniforms(seed, Stream.PAIR, c, 1, size=2 * n).reshape(2, n)
            x0, y0 = law.sample(u[0]), law.sample(u[1])
        else:
            x0 = y0 = float(law)
        a = np.abs(x0 + w1)
        b = np.abs(y0 + w2)
        hits += int(np.count_nonzero((a > 0) & (a < eps) & (b > 0) & (b < eps)))
        done += n
        c += 1
    p = hits / M
    return p, math.sqrt(max(p * (1 - p), 0.0) / M)
