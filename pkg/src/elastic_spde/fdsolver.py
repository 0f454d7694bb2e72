"""Finite-volume solver for the linear SPDE with a noisy Robin boundary.

    dV = d_xx(a V) dt - d_x(mu V) dt - rho d_x(sigma V) dW0,   a = sigma^2 / 2,

on [0, x_max] with total flux d_x(aV) - mu V - rho sigma V dW0/dt = kappa a V at
x = 0 and V(x_max) = 0.  Nodes x_j = j dx; node 0 owns the half cell
[0, dx/2], which is the same discrete flux balance as eliminating a ghost node
at -dx.  Each step applies the explicit centred noise and drift fluxes at t_n
(Ito, left endpoint) and then backward-Euler diffusion with the Robin loss
kappa a_0 V_0 in the implicit row.  Mass is sum_j w_j V_j with w_0 = dx/2.

Centred explicit fluxes can overdraw a cell when rho sigma |dW0| is comparable
to dx (steep tails, the boundary half cell).  A donor-cell outflow limiter
rescales those fluxes; the implicit diffusion matrix is an M-matrix, so V
stays non-negative.  The number of limited cells is reported.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .coefficients import CoefficientSet
from .kernels import GridFunction, elastic_kernel, reflecting_kernel, uniform_grid
from .particles import NumericalAbort
from .rng import NoisePath, steps_for

BOUNDARIES = ("elastic", "absorbing", "reflecting")


class TailMassWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SolverConfig:
    x_max: float
    dx: float
    dt: float
    V0: GridFunction
    boundary: str = "elastic"
    kappa: float | None = None  # elastic only; None -> coeffs.kappa
    stability_guard: float = 0.0625  # require rho^2 sigma^2 dt <= guard * dx^2
    snapshot_times: tuple = ()
    tail_width: float = 0.5  # tail monitor window [x_max - tail_width, x_max]
    tail_tol: float = 1e-6
    positivity_tol: float = 1e-8  # relative to max V0

    def __post_init__(self):
        if not (self.dx > 0 and self.dt > 0 and self.x_max > 0):
            raise ValueError("dx, dt and x_max must be positive")
        if self.boundary not in BOUNDARIES:
            raise ValueError(f"boundary must be one of {BOUNDARIES}, got {self.boundary!r}")
        if self.kappa is not None and not self.kappa >= 0:
            raise ValueError("kappa must be >= 0")
        if not self.stability_guard > 0:
            raise ValueError("stability_guard must be > 0")
        if abs(self.V0.dx - self.dx) > 1e-12 * self.dx or abs(self.V0.x_max - self.x_max) > 1e-9:
            raise ValueError("V0 grid does not match (x_max, dx)")
        v = self.V0.values
        if np.any(v < 0):
            raise ValueError("V0 must be non-negative")
        if _mass(v, self.dx) > 1 + 1e-9:
            raise ValueError(f"V0 integrates to {_mass(v, self.dx)} > 1")

    @classmethod
    def from_density(cls, density, x_max, dx, dt, **kw) -> SolverConfig:
        """Sample a density on the grid, zero the right edge, and cap its mass at 1."""
        x = uniform_grid(x_max, dx)
        v = np.asarray(density(x), dtype=float)
        v[-1] = 0.0
        m = _mass(v, dx)
        if m > 1:
            v = v / m
        return cls(x_max=x_max, dx=dx, dt=dt, V0=GridFunction(dx, v), **kw)

    def effective_kappa(self, coeffs: CoefficientSet) -> float:
        if self.boundary == "reflecting":
            return 0.0
        if self.boundary == "absorbing":
            return math.inf
        return coeffs.kappa if self.kappa is None else self.kappa

    def with_boundary(self, boundary: str, kappa: float | None = None) -> SolverConfig:
        from dataclasses import replace

        return replace(self, boundary=boundary, kappa=kappa)

    def manifest(self) -> dict:
        return {
            "x_max": self.x_max,
            "dx": self.dx,
            "dt": self.dt,
            "boundary": self.boundary,
            "kappa": self.kappa,
            "scheme": "semi-implicit finite volume: explicit noise and drift, backward-Euler diffusion",
            "stability_guard": self.stability_guard,
            "dt_over_dx2": self.dt / self.dx**2,
            "noise_courant_limit": math.sqrt(self.stability_guard),
            "tail_width": self.tail_width,
            "tail_tol": self.tail_tol,
        }


def _weights(M: int, dx: float) -> np.ndarray:
    w = np.full(M + 1, dx)
    w[0] = w[-1] = 0.5 * dx
    return w


def _mass(v: np.ndarray, dx: float) -> float:
    return float(dx * (np.sum(v) - 0.5 * (v[0] + v[-1])))


@dataclass
class SolverResult:
    x: np.ndarray
    t: np.ndarray
    mass: np.ndarray
    boundary_value: np.ndarray  # V_t(0)
    sigma0: np.ndarray  # sigma(t, 0)
    tail_mass: np.ndarray
    min_value: np.ndarray
    snapshots: list[tuple[float, GridFunction]]
    final: GridFunction
    kappa: float
    info: dict = field(default_factory=dict)
    snapshots_all: list = field(default_factory=list, repr=False)

    def snapshot(self, t: float) -> GridFunction:
        for s, V in self.snapshots:
            if abs(s - t) < 1e-9:
                return V
        raise KeyError(f"no snapshot at t={t}")

    def mass_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("t", "mass", "boundary_value", "tail_mass"))
            for row in zip(self.t, self.mass, self.boundary_value, self.tail_mass):
                w.writerow(tuple(repr(float(v)) for v in row))

    def snapshots_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("t", "x", "V"))
            for s, V in self.snapshots:
                for x, v in zip(V.x, V.values):
                    w.writerow((repr(float(s)), repr(float(x)), repr(float(v))))


def _noise_for(noise: NoisePath, dt: float, T: float | None) -> NoisePath:
    ratio = noise.dt / dt
    factor = int(round(ratio))
    if factor < 1 or abs(ratio - factor) > 1e-9:
        raise ValueError(f"solver dt={dt} is not an integer refinement of noise dt={noise.dt}")
    out = noise.refined(factor) if factor > 1 else noise
    if T is not None and steps_for(T, dt) > out.n_steps:
        raise ValueError("noise path is shorter than the requested horizon")
    return out


def _explicit_update(E: np.ndarray, V: np.ndarray, w: np.ndarray) -> np.ndarray:
    """V_j + (E_{j+1/2} - E_{j-1/2}) / w_j for j = 0..M-1 (no flux into x = 0)."""
    Vs = V[:-1].copy()
    Vs[0] += E[0] / w[0]
    Vs[1:] += (E[1:] - E[:-1]) / w[1:-1]
    return Vs


def _limit_outflow(E: np.ndarray, V: np.ndarray, w: np.ndarray, max_iter: int = 50) -> int:
    """Rescale explicit interface fluxes (in place) where a cell would go negative.

    Only cells whose net update is negative have their outgoing fluxes scaled
    down, to exactly what they hold plus what flows in; this can starve a
    neighbour, so the pass repeats.  Scaling a flux by its donor's factor keeps
    the update conservative.  Returns the number of limited cells.
    """
    # E is the flux F dt of dV = d_x F: E > 0 carries mass from j+1 to j
    n = 0
    for _ in range(max_iter):
        Vs = _explicit_update(E, V, w)
        bad = Vs < 0
        if not bad.any():
            return n
        n += int(np.count_nonzero(bad))
        out = np.zeros(V.size)
        inn = np.zeros(V.size)
        out[:-1] += np.maximum(-E, 0.0)
        out[1:] += np.maximum(E, 0.0)
        inn[:-1] += np.maximum(E, 0.0)
        inn[1:] += np.maximum(-E, 0.0)
        scale = np.ones(V.size)
        idx = np.flatnonzero(bad)
        scale[idx] = np.clip((w[idx] * np.maximum(V[idx], 0.0) + inn[idx]) / out[idx], 0.0, 1.0)
        E[:] = np.where(E > 0, E * scale[1:], E * scale[:-1])
    # fall back to the gross-outflow bound, which cannot fail
    out = np.zeros(V.size)
    out[:-1] += np.maximum(-E, 0.0)
    out[1:] += np.maximum(E, 0.0)
    hold = w * np.maximum(V, 0.0)
    over = out > hold
    scale = np.ones(V.size)
    scale[over] = hold[over] / out[over]
    E[:] = np.where(E > 0, E * scale[1:], E * scale[:-1])
    return n + int(np.count_nonzero(over))


def _check_transport_guard(coeffs: CoefficientSet, config: SolverConfig, x: np.ndarray, K: int) -> None:
    """The explicit noise flux moves mass rho sigma dW0 per step; keep its
    typical Courant number rho sigma sqrt(dt) / dx below sqrt(guard)."""
    ts = np.linspace(0.0, K * config.dt, 11)
    worst = max(float(abs(coeffs.rho(t))) * float(np.max(np.abs(coeffs.sigma(t, x)))) for t in ts)
    if worst**2 * config.dt > config.stability_guard * config.dx**2 * (1 + 1e-12):
        dt_max = config.stability_guard * config.dx**2 / worst**2
        raise ValueError(
            f"explicit noise transport: rho^2 sigma^2 dt = {worst**2 * config.dt:.3e} exceeds "
            f"stability_guard * dx^2 = {config.stability_guard * config.dx**2:.3e}; use dt <= {dt_max:.3e}"
        )


def solve_spde_path(
    coeffs: CoefficientSet,
    noise: NoisePath,
    config: SolverConfig,
    T: float | None = None,
    keep_all: bool = False,
    observers=(),
) -> SolverResult:
    """Solve on one common-noise path up to T (default: the end of the path).

    ``keep_all`` stores V at every step (needed by weak_bc_residual);
    ``observers`` are called as ``obs(k, t_k, V)`` at every grid time.
    """
    noise = _noise_for(noise, config.dt, T)
    K = noise.n_steps if T is None else steps_for(T, config.dt)
    dt, dx = config.dt, config.dx
    kappa = config.effective_kappa(coeffs)
    absorbing = math.isinf(kappa)
    x = config.V0.x
    M = x.size - 1
    xh = x[:-1] + 0.5 * dx  # interfaces j + 1/2, j = 0..M-1
    w = _weights(M, dx)
    tail = x >= config.x_max - config.tail_width
    snap_steps = {}
    for s in config.snapshot_times:
        k = s / dt
        if abs(k - round(k)) > 1e-6 or not 0 <= round(k) <= K:
            raise ValueError(f"snapshot time {s} is not on the solver grid")
        snap_steps[int(round(k))] = float(s)

    _check_transport_guard(coeffs, config, x, K)
    V = config.V0.values.copy()
    if absorbing:
        V[0] = 0.0
    V[-1] = 0.0
    vmax0 = float(np.max(config.V0.values))
    floor = -config.positivity_tol * vmax0

    mass = np.empty(K + 1)
    v0 = np.empty(K + 1)
    s0 = np.empty(K + 1)
    tails = np.empty(K + 1)
    mins = np.empty(K + 1)
    snapshots = []
    every = []
    n_limited = 0
    ab = np.zeros((3, M))  # unknowns j = 0..M-1; V_M = 0
    for k in range(K + 1):
        t = k * dt
        m = _mass(V, dx)
        mass[k] = m
        v0[k] = V[0]
        s0[k] = float(coeffs.sigma(t, 0.0))
        tails[k] = float(np.sum(w[tail] * V[tail]))
        mins[k] = float(np.min(V))
        if k in snap_steps:
            snapshots.append((snap_steps[k], GridFunction(dx, V.copy())))
        if keep_all:
            every.append(V.copy())
        for obs in observers:
            obs(k, t, V)
        if m > 1 + 1e-6:
            raise NumericalAbort(f"mass {m:.9f} > 1 + 1e-6 at step {k}, t={t:g}")
        if mins[k] < floor:
            j = int(np.argmin(V))
            raise NumericalAbort(f"V({x[j]:g}) = {V[j]:.3e} below positivity floor at step {k}, t={t:g}")
        if not np.isfinite(m):
            raise NumericalAbort(f"non-finite solution at step {k}, t={t:g}")
        if k == K:
            break

        dW = float(noise.increments[k])
        sig = coeffs.sigma(t, x)
        a = 0.5 * sig * sig
        rho = float(coeffs.rho(t))
        mu_h = coeffs.mu(t, xh)
        sv = sig * V
        # explicit drift + noise flux at interfaces (positive = to the right)
        E = -dt * mu_h * 0.5 * (V[:-1] + V[1:]) - rho * dW * 0.5 * (sv[:-1] + sv[1:])
        n_limited += _limit_outflow(E, V, w)
        Vs = _explicit_update(E, V, w)

        # backward Euler: w_j V_j - dt [D_{j+1/2} - D_{j-1/2}] + [j=0] dt kappa a_0 V_0 = w_j Vs_j,
        # D_{j+1/2} = (a_{j+1} V_{j+1} - a_j V_j) / dx; rows divided by w_j
        r = dt / dx
        diag = w[:M] + 2.0 * r * a[:M]
        diag[0] = w[0] + r * a[0]
        rhs = w[:M] * Vs
        ab[0, 1:] = -r * a[1:M]  # V_{j+1} in row j
        ab[1] = diag
        ab[2, :-1] = -r * a[: M - 1]  # V_{j} in row j+1
        if absorbing:
            ab[1, 0] = 1.0
            ab[0, 1] = 0.0
            ab[2, 0] = 0.0
            rhs[0] = 0.0
        else:
            ab[1, 0] += dt * kappa * a[0]
        try:
            sol = solve_banded((1, 1), ab, rhs, check_finite=False)
        except (np.linalg.LinAlgError, ValueError) as e:
            raise NumericalAbort(f"tridiagonal solve failed at step {k}, t={t:g}: {e}") from e
        V[:M] = sol
        V[M] = 0.0

    if float(np.max(tails)) > config.tail_tol:
        warnings.warn(f"tail mass near x_max reached {np.max(tails):.3e} > {config.tail_tol:g}", TailMassWarning, stacklevel=2)
    info = config.manifest()
    info.update(
        n_steps=K,
        kappa_effective=None if absorbing else kappa,
        max_tail_mass=float(np.max(tails)),
        limited_cells=n_limited,
        min_value=float(np.min(mins)),
        noise_dt=noise.dt,
        noise_seed=noise.master_seed,
        noise_replication=noise.replication,
        noise_refinement=noise.refinement,
    )
    return SolverResult(
        x=x,
        t=np.arange(K + 1) * dt,
        mass=mass,
        boundary_value=v0,
        sigma0=s0,
        tail_mass=tails,
        min_value=mins,
        snapshots=snapshots,
        final=GridFunction(dx, V.copy()),
        kappa=kappa,
        info=info,
        snapshots_all=every,
    )


# ---------------------------------------------------------------------------
# diagnostics


@dataclass(frozen=True)
class MassLoss:
    t: np.ndarray
    rate: np.ndarray  # -kappa sigma(t,0)^2/2 V_t(0)
    predicted: np.ndarray  # cumulative loss, left-endpoint sums
    actual: np.ndarray  # mass(0) - mass(t)

    @property
    def relative_gap(self) -> float:
        a = float(self.actual[-1])
        if a == 0:
            return 0.0 if self.predicted[-1] == 0 else math.inf
        return abs(float(self.predicted[-1]) - a) / abs(a)

    @property
    def absolute_gap(self) -> float:
        return abs(float(self.predicted[-1]) - float(self.actual[-1]))


def mass_loss_series(result: SolverResult, coeffs: CoefficientSet | None = None, kappa: float | None = None) -> MassLoss:
    """Boundary loss rate kappa sigma(t,0)^2/2 V_t(0) and its cumulative integral.

    The scheme removes kappa a_0 V_0^{n+1} dt per step (implicit), so the
    cumulative sum uses the right-endpoint value to match it.
    """
    kappa = result.kappa if kappa is None else kappa
    if math.isinf(kappa):
        raise ValueError("mass-loss rate is undefined for the absorbing boundary")
    t = result.t
    if coeffs is not None:
        s0 = np.array([float(coeffs.sigma(s, 0.0)) for s in t])
    else:
        s0 = result.sigma0
    rate = -kappa * 0.5 * s0 * s0 * result.boundary_value
    dt = np.diff(t)
    a_left = kappa * 0.5 * s0[:-1] ** 2
    pred = np.concatenate(([0.0], np.cumsum(a_left * result.boundary_value[1:] * dt)))
    return MassLoss(t=t, rate=rate, predicted=pred, actual=result.mass[0] - result.mass)


@dataclass(frozen=True)
class WeakBCResidual:
    t: np.ndarray
    pairing: np.ndarray  # <V_t, phi_eps>
    cumulative: np.ndarray  # <V_t, phi> - <V_0, phi> - (sum of the right-hand side increments)

    @property
    def sup(self) -> float:
        return float(np.max(np.abs(self.cumulative)))


class WeakBCMonitor:
    """Solver observer accumulating the weak boundary identity on the fly.

    Per step it records <V, phi_eps> and the left-endpoint increment
    (-kappa <V, a G_eps(0, .)> + <V, mu gbar>) dt + <V, rho sigma gbar> dW0,
    where gbar = g_eps(0, .) = phi_eps'.
    """

    def __init__(self, coeffs: CoefficientSet, eps: float, x: np.ndarray, kappa: float):
        from .kernels import boundary_test_function, elastic_correction, elastic_kernel_at_boundary

        if math.isinf(kappa):
            raise ValueError("weak boundary identity needs a finite kappa")
        self.coeffs, self.eps, self.kappa, self.x = coeffs, eps, kappa, x
        self.w = _weights(x.size - 1, x[1] - x[0])
        self.phi = boundary_test_function(eps, kappa, x)
        self.gbar = elastic_correction(eps, kappa, 0.0, x)
        self.G0 = elastic_kernel_at_boundary(eps, kappa, x)
        self.t: list[float] = []
        self.P: list[float] = []
        self.drift: list[float] = []  # dt-coefficient
        self.noise: list[float] = []  # dW0-coefficient

    def __call__(self, k, t, V):
        c, x = self.coeffs, self.x
        wv = self.w * V
        sig = c.sigma(t, x)
        self.t.append(t)
        self.P.append(float(np.dot(wv, self.phi)))
        self.drift.append(float(-self.kappa * np.dot(wv, 0.5 * sig * sig * self.G0) + np.dot(wv, c.mu(t, x) * self.gbar)))
        self.noise.append(float(c.rho(t)) * float(np.dot(wv, sig * self.gbar)))

    def residual(self, noise: NoisePath) -> WeakBCResidual:
        t = np.array(self.t)
        dt = float(t[1] - t[0])
        noise = _noise_for(noise, dt, float(t[-1]))
        K = t.size - 1
        incr = np.array(self.drift[:K]) * dt + np.array(self.noise[:K]) * noise.increments[:K]
        P = np.array(self.P)
        rhs = np.concatenate(([0.0], np.cumsum(incr)))
        return WeakBCResidual(t=t, pairing=P, cumulative=P - P[0] - rhs)


def weak_bc_residual(result: SolverResult, noise: NoisePath, coeffs: CoefficientSet, eps: float) -> WeakBCResidual:
    """Cumulative residual of the weak boundary identity for a stored V series.

    d<V, phi_eps> + kappa <V, a G_eps(0, .)> dt - <V, mu gbar> dt - <V, rho sigma gbar> dW0,
    pairings with the solver's trapezoid weights and left-endpoint Ito sums.
    Needs a solve with keep_all=True; WeakBCMonitor does the same online.
    """
    if not result.snapshots_all:
        raise ValueError("weak_bc_residual needs a solve with keep_all=True")
    mon = WeakBCMonitor(coeffs, eps, result.x, result.kappa)
    for k, V in enumerate(result.snapshots_all):
        mon(k, float(result.t[k]), V)
    return mon.residual(noise)


@dataclass(frozen=True)
class KappaLimitTable:
    kappa: np.ndarray
    d_absorbing: np.ndarray  # L1(V^kappa_T, V^A_T)
    d_reflecting: np.ndarray  # L1(V^kappa_T, V^R_T)
    mass: np.ndarray  # int V^kappa_T
    mass_absorbing: float
    mass_reflecting: float

    def rows(self):
        return [(float(k), float(a), float(r), float(m)) for k, a, r, m in
                zip(self.kappa, self.d_absorbing, self.d_reflecting, self.mass)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("kappa", "d_absorbing", "d_reflecting", "mass"))
            for row in self.rows():
                w.writerow(tuple(repr(v) for v in row))


def kappa_limit_study(kappas, noise: NoisePath, coeffs: CoefficientSet, config: SolverConfig,
                      T: float | None = None, map_fn=map) -> KappaLimitTable:
    """L1 distances at T from the elastic solutions to the absorbing and reflecting ones.

    All solves share ``config`` (except the boundary) and the noise path.
    ``map_fn`` may be a pool's map; results are gathered in ladder order.
    """
    kappas = [float(k) for k in kappas]
    cfgs = [config.with_boundary("absorbing"), config.with_boundary("reflecting")]
    cfgs += [config.with_boundary("elastic", k) for k in kappas]
    finals = list(map_fn(lambda c: solve_spde_path(coeffs, noise, c, T=T).final, cfgs))
    VA, VR, rest = finals[0], finals[1], finals[2:]
    return KappaLimitTable(
        kappa=np.array(kappas),
        d_absorbing=np.array([V.l1_distance(VA) for V in rest]),
        d_reflecting=np.array([V.l1_distance(VR) for V in rest]),
        mass=np.array([V.integral() for V in rest]),
        mass_absorbing=VA.integral(),
        mass_reflecting=VR.integral(),
    )


@dataclass(frozen=True)
class Comparison:
    t: np.ndarray
    l1: np.ndarray  # L1 between the binned particle and solver densities
    mass_diff: np.ndarray  # |nu^N_t[0, inf) - int V_t|
    stat: np.ndarray  # half-sample estimate of the particle sampling part of l1
    bin_width: float

    def rows(self):
        return [(float(t), float(a), float(b), float(c)) for t, a, b, c in zip(self.t, self.l1, self.mass_diff, self.stat)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("t", "l1", "mass_diff", "stat_component"))
            for row in self.rows():
                w.writerow(tuple(repr(v) for v in row))


def _half_histograms(raw: np.ndarray, edges: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    out = []
    for part in (raw[0::2], raw[1::2]):
        x = part[np.isfinite(part)]
        counts, _ = np.histogram(x, bins=edges)
        out.append(counts / part.size)
    return out[0], out[1]


def compare_particle_vs_solver(sim, solver: SolverResult, bin_width: float) -> Comparison:
    """Binned L1 distance and mass gap between nu^N_t and V_t at shared snapshot times.

    The sampling part of the L1 distance is estimated from the two halves
    (even and odd particle indices) of the same run, which are conditionally
    independent given W0: L1(half_1, half_2) / 2 ~ L1(nu^N, E[nu^N | W0]).
    ``sim`` is a particles.SimResult run on the same W0 path.
    """
    from .measures import bin_grid_function, histogram_density, histogram_edges

    if abs(bin_width / solver.x[1] - round(bin_width / solver.x[1])) > 1e-9:
        raise ValueError("bin width must be a multiple of the solver dx")
    edges = histogram_edges(float(solver.x[-1]), bin_width)
    ts, l1, md, st = [], [], [], []
    for (t, m), raw in zip(sim.snapshots, sim.snapshot_raw or [None] * len(sim.snapshots)):
        try:
            V = solver.snapshot(t)
        except KeyError as e:
            raise ValueError(f"particle snapshot at t={t} has no solver counterpart") from e
        hp = histogram_density(m, edges)
        hv = bin_grid_function(V, edges)
        ts.append(t)
        l1.append(hp.l1_distance(hv))
        md.append(abs(m.total_mass - V.integral()))
        if raw is not None:
            a, b = _half_histograms(raw, edges)
            st.append(0.5 * float(np.sum(np.abs(a - b))))
        else:
            st.append(math.nan)
    if not ts:
        raise ValueError("no snapshots to compare")
    return Comparison(np.array(ts), np.array(l1), np.array(md), np.array(st), bin_width)


def analytic_elastic_solution(density, x, t: float, kappa: float, support, sigma: float = 1.0, panels: int = 64, order: int = 20):
    """int G^{E,kappa}_{sigma^2 t}(x, y) density(y) dy for mu = 0, rho = 0.

    Composite Gauss-Legendre over ``support`` (``panels`` x ``order`` nodes);
    accurate to round-off when the kernel width sigma sqrt(t) spans many panels.
    kappa = 0 and kappa = inf give the reflecting and absorbing solutions.
    """
    from scipy.special import roots_legendre

    from .kernels import gaussian_kernel

    if not t > 0:
        raise ValueError("t must be > 0")
    eps = sigma * sigma * t
    x = np.asarray(x, dtype=float)
    nodes, weights = roots_legendre(order)
    edges = np.linspace(support[0], support[1], panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    y = (mid[:, None] + half[:, None] * nodes[None, :]).ravel()
    wy = (half[:, None] * weights[None, :]).ravel() * np.asarray(density(y), dtype=float)
    out = np.zeros_like(x)
    for i in range(0, y.size, 64):
        yy = y[i : i + 64]
        if math.isinf(kappa):
            k = gaussian_kernel(eps, x[:, None] - yy) - gaussian_kernel(eps, x[:, None] + yy)
        elif kappa == 0:
            k = reflecting_kernel(eps, x[:, None], yy)
        else:
            k = elastic_kernel(eps, kappa, x[:, None], yy)
        out += k @ wy[i : i + 64]
    return out
