"""Empirical measures of surviving particles and the analytics built on them."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize, sparse

from .kernels import GridFunction, KernelParams, antiderivative, mollify


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Atoms of mass 1/N at the alive positions (N = original particle count)."""

    atoms: np.ndarray
    n_total: int

    def __post_init__(self):
        a = np.sort(np.asarray(self.atoms, dtype=float))
        if a.size and a[0] < 0:
            raise ValueError("atoms must be >= 0")
        if self.n_total < max(1, a.size):
            raise ValueError("n_total must be >= number of atoms and >= 1")
        a.setflags(write=False)
        object.__setattr__(self, "atoms", a)

    @classmethod
    def from_positions(cls, positions, n_total: int | None = None) -> EmpiricalMeasure:
        positions = np.asarray(positions, dtype=float)
        return cls(positions, positions.size if n_total is None else n_total)

    @property
    def atom_weight(self) -> float:
        return 1.0 / self.n_total

    @property
    def total_mass(self) -> float:
        return self.atoms.size / self.n_total

    def __len__(self):
        return self.atoms.size


def interval_mass(m: EmpiricalMeasure, a: float, b: float) -> float:
    """Mass of the open interval (a, b)."""
    if not a < b:
        raise ValueError(f"need a < b, got a={a}, b={b}")
    lo = np.searchsorted(m.atoms, a, side="right")
    hi = np.searchsorted(m.atoms, b, side="left")
    return max(hi - lo, 0) * m.atom_weight


def interval_masses(m: EmpiricalMeasure, a: float, bs) -> np.ndarray:
    """interval_mass(m, a, b) for every b in ``bs``."""
    lo = np.searchsorted(m.atoms, a, side="right")
    hi = np.searchsorted(m.atoms, np.asarray(bs, dtype=float), side="left")
    return np.maximum(hi - lo, 0) * m.atom_weight


def pair(m: EmpiricalMeasure, phi: Callable) -> float:
    """<m, phi>."""
    if m.atoms.size == 0:
        return 0.0
    v = np.asarray(phi(m.atoms), dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("test function is non-finite on the support")
    return float(np.sum(np.broadcast_to(v, m.atoms.shape))) * m.atom_weight


# ---------------------------------------------------------------------------
# bounded-Lipschitz distance


@dataclass(frozen=True)
class BLDistance:
    value: float
    error_bound: float

    @property
    def upper(self) -> float:
        return self.value + self.error_bound


def _grid_masses(m: EmpiricalMeasure, h: float, n_nodes: int) -> np.ndarray:
    """Split each atom linearly between its two neighbouring grid nodes."""
    out = np.zeros(n_nodes)
    if m.atoms.size == 0:
        return out
    pos = m.atoms / h
    j = np.minimum(np.floor(pos).astype(int), n_nodes - 2)
    frac = pos - j
    np.add.at(out, j, (1.0 - frac) * m.atom_weight)
    np.add.at(out, j + 1, frac * m.atom_weight)
    return out


def bounded_lipschitz_distance(m1: EmpiricalMeasure, m2: EmpiricalMeasure, h: float | None = None) -> BLDistance:
    """sup <psi, m1 - m2> over psi with |psi| <= 1 and Lipschitz constant <= 1.

    The sup is taken over functions piecewise linear on a grid of spacing h
    (an LP with the chain constraints |psi_{j+1} - psi_j| <= h), which gives
    value <= d0 <= value + (h/2) |m1 - m2|_TV.
    """
    x_max = max(m1.atoms[-1] if len(m1) else 0.0, m2.atoms[-1] if len(m2) else 0.0, 1e-12)
    if h is None:
        h = 1e-3 * x_max
    M = max(int(math.ceil(x_max / h)), 1) + 1
    c = _grid_masses(m1, h, M + 1) - _grid_masses(m2, h, M + 1)
    tv = float(np.abs(c).sum())
    if tv == 0.0:
        return BLDistance(0.0, 0.0)
    n = c.size
    D = sparse.diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1], shape=(n - 1, n), format="csr")
    A = sparse.vstack([D, -D], format="csr")
    res = optimize.linprog(
        -c, A_ub=A, b_ub=np.full(2 * (n - 1), h), bounds=(-1.0, 1.0), method="highs"
    )
    if not res.success:
        raise RuntimeError(f"bounded-Lipschitz LP failed: {res.message}")
    value = max(float(-res.fun), 0.0)
    return BLDistance(value, 0.5 * h * _tv(m1, m2))


def _tv(m1: EmpiricalMeasure, m2: EmpiricalMeasure) -> float:
    """Total variation of m1 - m2 (atoms at equal positions cancel)."""
    xs = np.concatenate((m1.atoms, m2.atoms))
    w = np.concatenate((np.full(len(m1), m1.atom_weight), np.full(len(m2), -m2.atom_weight)))
    if xs.size == 0:
        return 0.0
    uniq, inv = np.unique(xs, return_inverse=True)
    net = np.zeros(uniq.size)
    np.add.at(net, inv, w)
    return float(np.abs(net).sum())


# ---------------------------------------------------------------------------
# H^-1 proxy


def h_minus1_proxy(m1: EmpiricalMeasure, m2: EmpiricalMeasure, params: KernelParams, grid) -> float:
    """||antiderivative(T(m1 - m2))||_2 + |integral of T(m1 - m2)|.

    ``grid`` is a GridFunction template or an ``(x_max, dx)`` pair.
    """
    diff = mollify(m1, params, grid) - mollify(m2, params, grid)
    anti = antiderivative(diff, tail_tol=math.inf)
    return anti.l2_norm() + abs(diff.integral())


# ---------------------------------------------------------------------------
# test functions and martingale components


@dataclass(frozen=True)
class TestFunction:
    """A test function with its first two derivatives."""

    f: Callable
    d1: Callable
    d2: Callable
    name: str = "phi"

    __test__ = False  # not a pytest class

    def __call__(self, x):
        return self.f(x)

    def boundary_defect(self, kappa: float, h: float = 1e-5) -> float:
        """|phi'(0) - kappa phi(0)| with phi'(0) by central differences."""
        d = (float(self.f(h)) - float(self.f(-h))) / (2 * h)
        return abs(d - kappa * float(self.f(0.0)))


def elastic_test_function(kappa: float, lam: float) -> TestFunction:
    """(1 + kappa x) exp(-lam x^2), which has phi'(0) = kappa phi(0)."""

    def f(x):
        x = np.asarray(x, dtype=float)
        return (1 + kappa * x) * np.exp(-lam * x * x)

    def d1(x):
        x = np.asarray(x, dtype=float)
        return np.exp(-lam * x * x) * (kappa - 2 * lam * x - 2 * lam * kappa * x * x)

    def d2(x):
        x = np.asarray(x, dtype=float)
        return np.exp(-lam * x * x) * (
            -2 * lam - 6 * lam * kappa * x + 4 * lam**2 * x * x + 4 * lam**2 * kappa * x**3
        )

    return TestFunction(f, d1, d2, name=f"phi_k{kappa:g}_l{lam:g}")


class BoundaryConditionError(ValueError):
    pass


def require_elastic(phi: TestFunction, kappa: float, tol: float = 1e-8) -> None:
    if math.isinf(kappa):
        defect = abs(float(phi.f(0.0)))
    else:
        defect = phi.boundary_defect(kappa)
    if defect > tol * max(1.0, abs(kappa * float(phi.f(0.0))) if not math.isinf(kappa) else 1.0):
        raise BoundaryConditionError(
            f"test function {phi.name} violates phi'(0) = kappa phi(0) (defect {defect:.3g}, kappa={kappa})"
        )


@dataclass
class PairingSeries:
    """Per-step pairings needed for the martingale components of one phi."""

    t: np.ndarray
    value: np.ndarray  # <nu_k, phi>
    drift: np.ndarray  # <nu_k, mu phi'>
    diffusion: np.ndarray  # <nu_k, sigma^2 phi''>
    noise: np.ndarray  # <nu_k, sigma rho phi'>


@dataclass
class MartingaleStats:
    """M, S, C series for one test function (single run), or ensemble summaries."""

    name: str
    t: np.ndarray
    M: np.ndarray
    S: np.ndarray
    C: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("t", "M", "S", "C"))
            for row in zip(self.t, self.M, self.S, self.C):
                w.writerow(tuple(repr(float(v)) for v in row))


def martingale_from_pairings(p: PairingSeries, w0_path: np.ndarray, dt: float, name: str = "phi") -> MartingaleStats:
    """Left-endpoint Riemann sums of the compensators."""
    comp = np.concatenate(([0.0], np.cumsum((p.drift[:-1] + 0.5 * p.diffusion[:-1]) * dt)))
    M = p.value - p.value[0] - comp
    qv = np.concatenate(([0.0], np.cumsum(p.noise[:-1] ** 2 * dt)))
    cross = np.concatenate(([0.0], np.cumsum(p.noise[:-1] * dt)))
    S = M**2 - qv
    C = M * w0_path - cross
    return MartingaleStats(name, p.t, M, S, C)


def martingale_components(trajectory, noise, coeffs, phi: TestFunction, drift=None) -> MartingaleStats:
    """M^phi, S^phi, C^phi from snapshots on the full simulation grid.

    ``trajectory`` is a sequence of (t, EmpiricalMeasure); ``drift`` optionally
    overrides mu with a callable (t, x, measure) for measure-dependent drifts.
    """
    require_elastic(phi, coeffs.kappa)
    times = np.array([t for t, _ in trajectory])
    if times.size != noise.n_steps + 1 or not np.allclose(times, noise.t_grid, rtol=0, atol=1e-12):
        raise ValueError("trajectory must hold a snapshot at every point of the noise grid")
    rows = [pairing_row(t, m, coeffs, phi, drift) for t, m in trajectory]
    p = PairingSeries(times, *(np.array(col) for col in zip(*rows)))
    return martingale_from_pairings(p, noise.path, noise.dt, phi.name)


def pairing_row(t, m: EmpiricalMeasure, coeffs, phi: TestFunction, drift=None, mu_values=None):
    x = m.atoms
    w = m.atom_weight
    if x.size == 0:
        return 0.0, 0.0, 0.0, 0.0
    if mu_values is None:
        mu_values = drift(t, x, m) if drift is not None else coeffs.mu(t, x)
    sig = coeffs.sigma(t, x)
    rho = float(coeffs.rho(t))
    d1 = phi.d1(x)
    return (
        w * float(np.sum(phi.f(x))),
        w * float(np.sum(mu_values * d1)),
        w * float(np.sum(sig * sig * phi.d2(x))),
        w * float(np.sum(sig * rho * d1)),
    )


# ---------------------------------------------------------------------------
# density estimates


@dataclass(frozen=True)
class BinnedDensity:
    """Piecewise-constant density on bins [edges[j], edges[j+1])."""

    edges: np.ndarray
    density: np.ndarray
    notes: tuple[str, ...] = field(default=())

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def masses(self) -> np.ndarray:
        return self.density * self.widths

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    def integral(self) -> float:
        return float(np.sum(self.masses))

    def l1_distance(self, other: BinnedDensity) -> float:
        if self.edges.shape != other.edges.shape or not np.array_equal(self.edges, other.edges):
            raise ValueError("densities are binned differently")
        return float(np.sum(np.abs(self.masses - other.masses)))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("bin_left", "mass"))
            for left, mass in zip(self.edges[:-1], self.masses):
                w.writerow((repr(float(left)), repr(float(mass))))


def histogram_edges(x_max: float, bin_width: float) -> np.ndarray:
    n = int(math.ceil(x_max / bin_width - 1e-9))
    return bin_width * np.arange(n + 1)


def histogram_density(m: EmpiricalMeasure, edges) -> BinnedDensity:
    """mass / bin width per bin; atoms beyond the last edge are reported."""
    edges = np.asarray(edges, dtype=float)
    counts = np.diff(np.searchsorted(m.atoms, edges, side="left"))
    # an atom exactly at x = 0 belongs to the first bin
    mass = counts * m.atom_weight
    beyond = m.atoms.size - int(counts.sum())
    notes = (f"{beyond} atoms outside [{edges[0]:g}, {edges[-1]:g})",) if beyond else ()
    return BinnedDensity(edges, mass / np.diff(edges), notes)


def density_estimate(m: EmpiricalMeasure, method: str = "histogram", *, bin_width: float | None = None,
                     x_max: float | None = None, params: KernelParams | None = None, grid=None):
    """Histogram (BinnedDensity) or kernel-mollified (GridFunction) density of m.

    The mollified estimate integrates to total_mass only for kappa = 0; for
    kappa > 0 the elastic kernel loses mass near the boundary.
    """
    if method == "histogram":
        if bin_width is None:
            raise ValueError("histogram needs bin_width")
        if x_max is None:
            x_max = (m.atoms[-1] if len(m) else 0.0) + bin_width
        return histogram_density(m, histogram_edges(x_max, bin_width))
    if method == "mollified":
        if params is None or grid is None:
            raise ValueError("mollified density needs params and grid")
        return mollify(m, params, grid)
    raise ValueError(f"unknown density method {method!r}")


def bin_grid_function(V: GridFunction, edges) -> BinnedDensity:
    """Integrate a grid density over bins whose edges are grid nodes (trapezoid)."""
    edges = np.asarray(edges, dtype=float)
    idx = np.rint(edges / V.dx).astype(int)
    if not np.allclose(idx * V.dx, edges, rtol=0, atol=1e-9 * V.dx) or idx[-1] > V.M:
        raise ValueError("bin edges must coincide with solver grid nodes")
    panels = 0.5 * V.dx * (V.values[1:] + V.values[:-1])
    cum = np.concatenate(([0.0], np.cumsum(panels)))
    masses = cum[idx[1:]] - cum[idx[:-1]]
    return BinnedDensity(edges, masses / np.diff(edges))


def write_metrics_csv(path, rows) -> None:
    """rows: iterable of (name, value, se)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("name", "value", "se"))
        for name, value, se in rows:
            w.writerow((name, repr(float(value)), repr(float(se))))
