"""Half-line heat kernels (Gaussian, reflecting, elastic), the elastic boundary
test function, kernel mollification and the anti-derivative on uniform grids.

The elastic correction is evaluated as

    kappa * erfcx(z) * exp(-(x + y)^2 / (2 eps)),   z = (x + y + kappa eps) / sqrt(2 eps),

which equals kappa * exp(kappa (x+y) + kappa^2 eps / 2) * erfc(z) exactly but never
forms the overflowing exponential prefactor.  erfcx is scipy's Faddeeva-based
scaled complementary error function (relative accuracy ~1e-15).
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

SQRT_2PI = math.sqrt(2.0 * math.pi)
# y-integrals are truncated at x + kappa*eps + TRUNCATION_SIGMAS*sqrt(eps)
TRUNCATION_SIGMAS = 12.0
_CHUNK = 2_000_000


@dataclass(frozen=True)
class KernelParams:
    epsilon: float
    kappa: float = 0.0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if not self.kappa >= 0:
            raise ValueError(f"kappa must be >= 0, got {self.kappa}")


@dataclass(frozen=True)
class GridFunction:
    """Samples f(x_j) on x_j = j * dx, j = 0..M (left endpoint always 0)."""

    dx: float
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if not self.dx > 0:
            raise ValueError(f"dx must be > 0, got {self.dx}")
        if v.ndim != 1 or v.size < 3:
            raise ValueError("need at least three grid values (M >= 2)")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid values must be finite")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, f, x_max: float, dx: float) -> GridFunction:
        x = uniform_grid(x_max, dx)
        return cls(dx, np.asarray(f(x), dtype=float))

    @classmethod
    def zeros_like(cls, other: GridFunction) -> GridFunction:
        return cls(other.dx, np.zeros_like(other.values))

    @property
    def M(self) -> int:
        return self.values.size - 1

    @property
    def x0(self) -> float:
        return 0.0

    @property
    def x(self) -> np.ndarray:
        return self.dx * np.arange(self.values.size)

    @property
    def x_max(self) -> float:
        return self.dx * self.M

    def integral(self) -> float:
        return float(integrate.trapezoid(self.values, dx=self.dx))

    def l2_norm(self) -> float:
        return math.sqrt(integrate.trapezoid(self.values**2, dx=self.dx))

    def l1_distance(self, other: GridFunction) -> float:
        _check_same_grid(self, other)
        return float(integrate.trapezoid(np.abs(self.values - other.values), dx=self.dx))

    def __sub__(self, other: GridFunction) -> GridFunction:
        _check_same_grid(self, other)
        return GridFunction(self.dx, self.values - other.values)

    def __add__(self, other: GridFunction) -> GridFunction:
        _check_same_grid(self, other)
        return GridFunction(self.dx, self.values + other.values)

    def __mul__(self, c: float) -> GridFunction:
        return GridFunction(self.dx, c * self.values)

    __rmul__ = __mul__

    def to_csv(self, path, header=("x", "value")) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for xi, vi in zip(self.x, self.values):
                w.writerow((repr(float(xi)), repr(float(vi))))


def _check_same_grid(a: GridFunction, b: GridFunction) -> None:
    if a.dx != b.dx or a.values.size != b.values.size:
        raise ValueError("grid functions live on different grids")


def uniform_grid(x_max: float, dx: float) -> np.ndarray:
    M = int(round(x_max / dx))
    if M < 2:
        raise ValueError(f"grid too coarse: x_max={x_max}, dx={dx}")
    return dx * np.arange(M + 1)


# ---------------------------------------------------------------------------
# kernels


def gaussian_kernel(eps, x):
    """Heat kernel on the line with variance ``eps``."""
    x = np.asarray(x, dtype=float)
    return np.exp(-(x * x) / (2.0 * eps)) / math.sqrt(2.0 * math.pi * eps)


def gaussian_kernel_dx(eps, x):
    x = np.asarray(x, dtype=float)
    return -x / eps * gaussian_kernel(eps, x)


def reflecting_kernel(eps, x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return gaussian_kernel(eps, x - y) + gaussian_kernel(eps, x + y)


def elastic_correction(eps, kappa, x, y):
    """The erfc correction subtracted from the reflecting kernel.

    ``kappa = inf`` returns the Dirichlet limit 2 p_eps(x + y).
    """
    s = np.asarray(x, dtype=float) + np.asarray(y, dtype=float)
    if kappa == 0:
        return np.zeros_like(s)
    if math.isinf(kappa):
        return 2.0 * gaussian_kernel(eps, s)
    z = (s + kappa * eps) / math.sqrt(2.0 * eps)
    return kappa * special.erfcx(z) * np.exp(-(s * s) / (2.0 * eps))


def elastic_kernel(eps, kappa, x, y):
    """Transition density of Brownian motion on [0, inf) killed elastically at 0."""
    return reflecting_kernel(eps, x, y) - elastic_correction(eps, kappa, x, y)


def elastic_kernel_at_boundary(eps, kappa, y):
    """G_eps(0, y); the density that concentrates at the boundary as eps -> 0."""
    return elastic_kernel(eps, kappa, 0.0, y)


class QuadratureFailure(ArithmeticError):
    pass


def boundary_test_function(eps, kappa, x, epsrel: float = 1e-9):
    """phi(x) = integral over y in [0, inf) of G_eps(x, y).

    The reflecting part integrates to exactly one; the correction part is
    integrated numerically on [0, x + kappa eps + 12 sqrt(eps)].
    """
    if not eps > 0:
        raise ValueError(f"eps must be > 0, got {eps}")
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(xs < 0):
        raise ValueError("x must be >= 0")
    out = np.ones_like(xs)
    if kappa == 0:
        return out if np.ndim(x) else float(out[0])
    if math.isinf(kappa):
        out = special.erf(xs / math.sqrt(2.0 * eps))
        return out if np.ndim(x) else float(out[0])
    for i, xi in enumerate(xs):
        y_max = xi + kappa * eps + TRUNCATION_SIGMAS * math.sqrt(eps)
        val, err, info = integrate.quad(
            lambda y: float(elastic_correction(eps, kappa, xi, y)),
            0.0,
            y_max,
            epsrel=epsrel,
            epsabs=1e-15,
            limit=200,
            full_output=True,
        )[:3]
        if err > max(epsrel * abs(val), 1e-13) or info.get("ier", 0) not in (0, None):
            raise QuadratureFailure(
                f"boundary_test_function: eps={eps}, kappa={kappa}, x={xi}, value={val}, abserr={err}"
            )
        out[i] = 1.0 - val
    return out if np.ndim(x) else float(out[0])


# ---------------------------------------------------------------------------
# mollification and anti-derivative


def mollify(measure, params: KernelParams, out_grid) -> GridFunction:
    """The smoothing operator T_eps with the elastic kernel.

    ``measure`` is an empirical measure (anything with ``atoms`` and
    ``atom_weight``) or a GridFunction; ``out_grid`` is a GridFunction whose
    grid is reused, or a ``(x_max, dx)`` pair.
    """
    if isinstance(out_grid, GridFunction):
        dx, x = out_grid.dx, out_grid.x
    else:
        x_max, dx = out_grid
        x = uniform_grid(x_max, dx)
    eps, kappa = params.epsilon, params.kappa
    out = np.zeros_like(x)
    if isinstance(measure, GridFunction):
        y = measure.x
        w = np.full(y.size, measure.dx)
        w[0] = w[-1] = 0.5 * measure.dx
        weights = w * measure.values
    else:
        y = np.asarray(measure.atoms, dtype=float)
        weights = np.full(y.size, float(measure.atom_weight))
    if y.size == 0:
        return GridFunction(dx, out)
    rows = max(1, _CHUNK // y.size)
    for start in range(0, x.size, rows):
        xs = x[start : start + rows, None]
        out[start : start + rows] = elastic_kernel(eps, kappa, xs, y[None, :]) @ weights
    return GridFunction(dx, out)


class TailWarning(UserWarning):
    pass


def antiderivative(f: GridFunction, tail_tol: float = 1e-8) -> GridFunction:
    """-(integral of f over [x_j, x_max]) by right-to-left cumulative trapezoid."""
    v = f.values
    if abs(v[-1]) > tail_tol:
        warnings.warn(
            f"antiderivative: |f(x_max)| = {abs(v[-1]):.3g} exceeds tail tolerance {tail_tol:g}",
            TailWarning,
            stacklevel=2,
        )
    panels = 0.5 * f.dx * (v[1:] + v[:-1])
    tail = np.concatenate((np.cumsum(panels[::-1])[::-1], [0.0]))
    return GridFunction(f.dx, -tail)


# ---------------------------------------------------------------------------
# identity residuals


def _fd_step(eps):
    return 1e-5 * math.sqrt(eps)


def derivative_switch_residual(eps, kappa, points, relative: bool = True) -> float:
    """Largest residual of the two derivative-switching identities.

    (i)  d_y G + d_x G - 2 d_x p(x+y) + 2 d_x g = 0
    (ii) d_yy G - d_xx G = 0

    First derivatives use central differences with step 1e-5 sqrt(eps).  The
    second-derivative stencil uses 1e-3 sqrt(eps): at 1e-5 sqrt(eps) round-off
    alone is ~1e-6 relative, while the O(h^2) truncation terms of d_yy and d_xx
    cancel because d_y^4 G = d_x^4 G.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if np.any(pts <= 0):
        raise ValueError("sample points must lie in (0, inf)^2")
    x, y = pts[:, 0], pts[:, 1]
    G = lambda a, b: elastic_kernel(eps, kappa, a, b)
    g = lambda a, b: elastic_correction(eps, kappa, a, b)
    h = _fd_step(eps)
    dGy = (G(x, y + h) - G(x, y - h)) / (2 * h)
    dGx = (G(x + h, y) - G(x - h, y)) / (2 * h)
    dp = (gaussian_kernel(eps, x + y + h) - gaussian_kernel(eps, x + y - h)) / (2 * h)
    dg = (g(x + h, y) - g(x - h, y)) / (2 * h)
    r1 = np.abs(dGy + dGx - 2 * dp + 2 * dg)
    s1 = np.abs(dGy) + np.abs(dGx) + 2 * np.abs(dp) + 2 * np.abs(dg)

    h2 = 1e-3 * math.sqrt(eps)
    G0 = G(x, y)
    dGyy = (G(x, y + h2) - 2 * G0 + G(x, y - h2)) / h2**2
    dGxx = (G(x + h2, y) - 2 * G0 + G(x - h2, y)) / h2**2
    r2 = np.abs(dGyy - dGxx)
    s2 = np.abs(dGyy) + np.abs(dGxx)
    if relative:
        floor = 1e-300
        return float(max(np.max(r1 / np.maximum(s1, floor)), np.max(r2 / np.maximum(s2, floor))))
    return float(max(r1.max(), r2.max()))


def robin_residual(eps, kappa, others, kernel=None) -> float:
    """Relative residual of d_x G(0, y) = kappa G(0, y) and d_y G(x, 0) = kappa G(x, 0).

    ``kernel(eps, kappa, x, y)`` replaces the elastic kernel (fault injection).
    """
    K = elastic_kernel if kernel is None else kernel
    o = np.asarray(others, dtype=float)
    h = _fd_step(eps)
    worst = 0.0
    for first in (True, False):
        if first:
            d = (K(eps, kappa, h, o) - K(eps, kappa, -h, o)) / (2 * h)
            G0 = K(eps, kappa, 0.0, o)
        else:
            d = (K(eps, kappa, o, h) - K(eps, kappa, o, -h)) / (2 * h)
            G0 = K(eps, kappa, o, 0.0)
        scale = np.maximum(np.abs(d) + kappa * np.abs(G0), np.abs(G0) / math.sqrt(eps))
        worst = max(worst, float(np.max(np.abs(d - kappa * G0) / scale)))
    return worst


def correction_bound_excess(eps, kappa, x, y) -> float:
    """max over points of g / (kappa exp(-(x+y)^2 / 2eps)) - 1, clipped at 0,
    together with any negativity of g; zero when the bound holds."""
    g = elastic_correction(eps, kappa, x, y)
    if kappa == 0:
        return float(np.max(np.abs(g)))
    s = np.asarray(x, dtype=float) + np.asarray(y, dtype=float)
    bound = kappa * np.exp(-(s * s) / (2.0 * eps))
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(bound > 0, g / bound, np.where(g > 0, np.inf, 0.0))
    return float(max(np.max(ratio) - 1.0, -np.min(g), 0.0))


def chapman_kolmogorov_residual(s, t, kappa, x, y) -> float:
    """|int G_s(x,z) G_t(z,y) dz - G_{s+t}(x,y)| relative to G_{s+t}(x,y)."""
    upper = x + y + 10.0 * math.sqrt(s + t)
    val, _ = integrate.quad(
        lambda z: float(elastic_kernel(s, kappa, x, z) * elastic_kernel(t, kappa, z, y)),
        0.0,
        upper,
        epsabs=1e-14,
        epsrel=1e-12,
        limit=400,
        points=[p for p in (x, y) if 0 < p < upper] or None,
    )
    exact = float(elastic_kernel(s + t, kappa, x, y))
    return abs(val - exact) / max(abs(exact), 1e-300)


def contraction_ratio(f: GridFunction, params: KernelParams) -> float:
    """||T_eps f||_2 / ||f||_2 on the grid of f."""
    Tf = mollify(f, params, f)
    return Tf.l2_norm() / f.l2_norm()


def kernel_table(eps, kappa, xs, ys, path) -> None:
    """Dump G_eps(x, y) on a product grid as CSV (x, y, value)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("x", "y", "value"))
        for xi in xs:
            vals = elastic_kernel(eps, kappa, xi, np.asarray(ys, dtype=float))
            for yi, v in zip(ys, vals):
                w.writerow((repr(float(xi)), repr(float(yi)), repr(float(v))))
