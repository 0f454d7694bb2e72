"""Model coefficients (mu, sigma, rho, kappa), standing-assumption checks and the
scale transformation used by the analytic baselines."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

import numpy as np
from scipy import integrate, optimize, stats

from .expressions import compile_expression

FD_STEP = 1e-5
QUAD_EPSREL = 1e-10
QUAD_EPSABS = 1e-14


def _d1(f, step=FD_STEP):
    """Five-point central first derivative in x of f(t, x)."""
    h = step

    def df(t, x):
        x = np.asarray(x, dtype=float)
        return (-f(t, x + 2 * h) + 8 * f(t, x + h) - 8 * f(t, x - h) + f(t, x - 2 * h)) / (12 * h)

    return df


def _d2(f, step=FD_STEP):
    """Five-point central second derivative in x of f(t, x)."""
    h = step

    def d2f(t, x):
        x = np.asarray(x, dtype=float)
        return (
            -f(t, x + 2 * h) + 16 * f(t, x + h) - 30 * f(t, x) + 16 * f(t, x - h) - f(t, x - 2 * h)
        ) / (12 * h * h)

    return d2f


def _dt(f, step=FD_STEP):
    """Five-point central time derivative of f(t, x); one-sided near t = 0."""
    h = step

    def dtf(t, x):
        x = np.asarray(x, dtype=float)
        t = float(t)
        if t >= 2 * h:
            return (-f(t + 2 * h, x) + 8 * f(t + h, x) - 8 * f(t - h, x) + f(t - 2 * h, x)) / (12 * h)
        return (-3 * f(t, x) + 4 * f(t + h, x) - f(t + 2 * h, x)) / (2 * h)

    return dtf


@dataclass(frozen=True)
class CoefficientSet:
    """Immutable model data.

    ``mu`` and ``sigma`` are vectorised callables ``f(t, x)``; ``rho`` is a
    callable ``f(t)``.  ``kappa`` may be ``math.inf`` (absorbing limit).
    Derivatives not supplied are replaced by five-point central differences
    with step ``FD_STEP``.
    """

    mu: Callable
    sigma: Callable
    rho: Callable
    kappa: float
    bound_C: float
    dmu_dx: Callable | None = None
    d2mu_dx2: Callable | None = None
    dsigma_dx: Callable | None = None
    d2sigma_dx2: Callable | None = None
    dsigma_dt: Callable | None = None
    source: Mapping[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.kappa >= 0:
            raise ValueError(f"kappa must be >= 0, got {self.kappa}")
        if not self.bound_C > 0:
            raise ValueError(f"bound_C must be > 0, got {self.bound_C}")
        fill = {
            "dmu_dx": lambda: _d1(self.mu),
            "d2mu_dx2": lambda: _d2(self.mu),
            "dsigma_dx": lambda: _d1(self.sigma),
            "d2sigma_dx2": lambda: _d2(self.sigma),
            "dsigma_dt": lambda: _dt(self.sigma),
        }
        for name, make in fill.items():
            if getattr(self, name) is None:
                object.__setattr__(self, name, make())

    @classmethod
    def constant(cls, mu=0.0, sigma=1.0, rho=0.0, kappa=1.0, bound_C=2.0) -> CoefficientSet:
        zero = _const(0.0)
        return cls(
            mu=_const(mu),
            sigma=_const(sigma),
            rho=_const_t(rho),
            kappa=kappa,
            bound_C=bound_C,
            dmu_dx=zero,
            d2mu_dx2=zero,
            dsigma_dx=zero,
            d2sigma_dx2=zero,
            dsigma_dt=zero,
            source={"mu": mu, "sigma": sigma, "rho": rho, "kappa": kappa, "bound_C": bound_C},
        )

    @classmethod
    def from_config(cls, cfg: Mapping[str, Any]) -> CoefficientSet:
        """Build from a config section with keys mu, sigma, rho, kappa, bound_C.

        Each coefficient is a number, an expression string, or a table
        ``{kind = "constant" | "affine" | "tanh-ramp", ...}``.
        """
        mu = coefficient_function(cfg.get("mu", 0.0))
        sigma = coefficient_function(cfg.get("sigma", 1.0))
        rho_tx = coefficient_function(cfg.get("rho", 0.0), variable="t")
        kappa = float(cfg.get("kappa", 1.0))
        return cls(
            mu=mu,
            sigma=sigma,
            rho=lambda t: rho_tx(t, 0.0),
            kappa=kappa,
            bound_C=float(cfg.get("bound_C", 2.0)),
            source=dict(cfg),
        )

    def with_kappa(self, kappa: float) -> CoefficientSet:
        src = dict(self.source)
        src["kappa"] = kappa
        return CoefficientSet(
            mu=self.mu,
            sigma=self.sigma,
            rho=self.rho,
            kappa=kappa,
            bound_C=self.bound_C,
            dmu_dx=self.dmu_dx,
            d2mu_dx2=self.d2mu_dx2,
            dsigma_dx=self.dsigma_dx,
            d2sigma_dx2=self.d2sigma_dx2,
            dsigma_dt=self.dsigma_dt,
            source=src,
        )

    @property
    def boundary(self) -> str:
        if self.kappa == 0:
            return "reflecting"
        if math.isinf(self.kappa):
            return "absorbing"
        return "elastic"


def _const(c):
    c = float(c)

    def f(t, x):
        return np.full(np.shape(x), c)

    return f


def _const_t(c):
    c = float(c)
    return lambda t: c


def coefficient_function(spec, variable: str = "x") -> Callable:
    """Turn a config value into a vectorised ``f(t, x)``.

    ``variable`` names the argument the built-ins act on (``"t"`` for rho).
    """
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        return _const(spec)
    if isinstance(spec, str):
        return compile_expression(spec)
    if isinstance(spec, Mapping):
        kind = spec.get("kind")
        p = {k: float(v) for k, v in spec.items() if k != "kind"}
        pick = (lambda t, x: np.asarray(x, dtype=float)) if variable == "x" else (
            lambda t, x: np.full(np.shape(x), float(t))
        )
        if kind == "constant":
            return _const(p.get("value", 0.0))
        if kind == "affine":
            a, b = p.get("a", 0.0), p.get("b", 0.0)
            return lambda t, x: a + b * pick(t, x)
        if kind == "tanh-ramp":
            a, b, c = p.get("a", 0.0), p.get("b", 1.0), p.get("c", 1.0)
            return lambda t, x: a + b * np.tanh(c * pick(t, x))
        raise ValueError(f"unknown coefficient kind {kind!r}")
    raise ValueError(f"cannot interpret coefficient {spec!r}")


@dataclass(frozen=True)
class Violation:
    constraint: str
    t: float
    x: float
    value: float


@dataclass
class ValidationReport:
    violations: list[Violation]
    n_t: int
    n_x: int
    x_max: float
    mu_tilde_bound: float
    dt_sigma_integral: float
    notes: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __len__(self):
        return len(self.violations)

    def constraints(self) -> set[str]:
        return {v.constraint for v in self.violations}


def validate_assumptions(coeffs: CoefficientSet, t_grid, x_grid) -> ValidationReport:
    """Sample the standing coefficient assumptions on ``t_grid`` x ``x_grid``.

    Every violated constraint is recorded with its location; non-finite values
    are violations in their own right.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    x_grid = np.asarray(x_grid, dtype=float)
    if t_grid.size == 0 or x_grid.size == 0:
        raise ValueError("grids must be nonempty")
    if not (np.all(np.isfinite(t_grid)) and np.all(np.isfinite(x_grid))):
        raise ValueError("grids must be finite")
    C = coeffs.bound_C
    out: list[Violation] = []

    def check(name, values, bad_mask, t):
        values = np.broadcast_to(values, x_grid.shape)
        nonfinite = ~np.isfinite(values)
        for j in np.flatnonzero(nonfinite):
            out.append(Violation(f"non-finite {name}", float(t), float(x_grid[j]), float(values[j])))
        with np.errstate(invalid="ignore"):
            bad = bad_mask(values) & ~nonfinite
        for j in np.flatnonzero(bad):
            out.append(Violation(name, float(t), float(x_grid[j]), float(values[j])))

    derivs = [
        ("mu", coeffs.mu),
        ("d/dx mu", coeffs.dmu_dx),
        ("d2/dx2 mu", coeffs.d2mu_dx2),
        ("sigma", coeffs.sigma),
        ("d/dx sigma", coeffs.dsigma_dx),
        ("d2/dx2 sigma", coeffs.d2sigma_dx2),
    ]
    sup_dt_integral = 0.0
    for t in t_grid:
        for label, fn in derivs:
            check(f"|{label}| exceeds bound_C", fn(t, x_grid), lambda v: np.abs(v) > C, t)
        check("sigma below 1/bound_C", coeffs.sigma(t, x_grid), lambda v: v < 1.0 / C, t)
        r = np.asarray(coeffs.rho(t), dtype=float)
        if not np.isfinite(r):
            out.append(Violation("non-finite rho", float(t), math.nan, float(r)))
        elif not (0.0 <= r < 1.0):
            out.append(Violation("rho outside [0,1)", float(t), math.nan, float(r)))
        dts = np.abs(coeffs.dsigma_dt(t, x_grid))
        if x_grid.size > 1 and np.all(np.isfinite(dts)):
            sup_dt_integral = max(sup_dt_integral, float(integrate.trapezoid(dts, x_grid)))

    mu_tilde_bound = 0.0
    if not any(v.constraint.startswith("sigma below") or "non-finite" in v.constraint for v in out):
        xs = x_grid[x_grid >= 0]
        for t in t_grid:
            for x in xs:
                mu_tilde_bound = max(mu_tilde_bound, abs(transformed_drift(coeffs, t, x)))
    else:
        mu_tilde_bound = math.nan

    out.sort(key=lambda v: (v.constraint, v.t, -math.inf if math.isnan(v.x) else v.x))
    notes = [
        f"integrability of |d/dt sigma| spot-checked on [0, {float(x_grid.max()):g}] only",
        f"grid density: {t_grid.size} times x {x_grid.size} positions",
    ]
    return ValidationReport(
        violations=out,
        n_t=t_grid.size,
        n_x=x_grid.size,
        x_max=float(x_grid.max()),
        mu_tilde_bound=mu_tilde_bound,
        dt_sigma_integral=sup_dt_integral,
        notes=notes,
    )


class QuadratureError(ArithmeticError):
    pass


def _quad(f, a, b):
    def g(y):
        v = float(f(y))
        if not math.isfinite(v):
            raise QuadratureError(f"non-finite integrand at y={y}")
        return v

    val, _ = integrate.quad(g, a, b, epsrel=QUAD_EPSREL, epsabs=QUAD_EPSABS, limit=200)
    return val


def scale_transform(coeffs: CoefficientSet, t: float, x: float) -> float:
    """zeta(t, x): integral of 1/sigma(t, y) over [0, x]."""
    if x < 0:
        raise ValueError(f"x must be >= 0, got {x}")
    if x == 0:
        return 0.0
    return _quad(lambda y: 1.0 / coeffs.sigma(t, y), 0.0, x)


def inverse_scale_transform(coeffs: CoefficientSet, t: float, z: float) -> float:
    """Numeric inverse of zeta(t, .); bracketed by z/C <= x <= C z."""
    if z < 0:
        raise ValueError(f"z must be >= 0, got {z}")
    if z == 0:
        return 0.0
    C = coeffs.bound_C
    lo, hi = z / C, z * C
    return optimize.brentq(lambda x: scale_transform(coeffs, t, x) - z, lo, hi, xtol=1e-14, rtol=1e-14)


def transformed_drift(coeffs: CoefficientSet, t: float, x: float) -> float:
    """Drift of the scale-transformed particle at (t, x)."""
    if x < 0:
        raise ValueError(f"x must be >= 0, got {x}")
    mu, sig, dsig = (float(f(t, x)) for f in (coeffs.mu, coeffs.sigma, coeffs.dsigma_dx))
    local = mu / sig - dsig
    if not math.isfinite(local):
        raise QuadratureError(f"non-finite local drift at t={t}, x={x}")
    if x == 0:
        return local
    corr = _quad(lambda y: coeffs.dsigma_dt(t, y) / coeffs.sigma(t, y) ** 2, 0.0, x)
    return local - corr


# ---------------------------------------------------------------------------
# initial law


@dataclass(frozen=True)
class InitialLaw:
    """Initial distribution on (0, inf).

    ``ppf`` maps uniforms to samples (so draws are keyed by the caller's
    stream); ``density`` evaluates the L2 density V0.
    """

    ppf: Callable[[np.ndarray], np.ndarray]
    density: Callable[[np.ndarray], np.ndarray]
    support: tuple[float, float]
    tail_alpha_probe: tuple[float, ...] = (0.5, 1.0, 2.0)
    source: Mapping[str, Any] = field(default_factory=dict, compare=False)

    def sample(self, u: np.ndarray) -> np.ndarray:
        return self.ppf(np.asarray(u, dtype=float))

    def density_v0(self, x: np.ndarray) -> np.ndarray:
        return self.density(np.asarray(x, dtype=float))

    def tail_mass(self, lam: float) -> float:
        hi = self.support[1]
        if lam >= hi:
            return 0.0
        val, _ = integrate.quad(self.density, max(lam, self.support[0]), hi, epsabs=1e-300, limit=200)
        return val

    @classmethod
    def gaussian_bump(cls, center: float = 1.0, width: float = 0.1) -> InitialLaw:
        """Normal(center, width^2) truncated to (0, inf)."""
        a = -center / width
        dist = stats.truncnorm(a, np.inf, loc=center, scale=width)
        hi = center + 40 * width
        return cls(
            ppf=dist.ppf,
            density=dist.pdf,
            support=(0.0, hi),
            source={"law": "gaussian-bump", "center": center, "width": width},
        )

    @classmethod
    def uniform(cls, a: float = 1.0, b: float = 2.0) -> InitialLaw:
        if not 0 < a < b:
            raise ValueError(f"need 0 < a < b, got a={a}, b={b}")

        def pdf(x):
            x = np.asarray(x, dtype=float)
            return np.where((x > a) & (x < b), 1.0 / (b - a), 0.0)

        return cls(
            ppf=lambda u: a + (b - a) * u,
            density=pdf,
            support=(a, b),
            source={"law": "uniform", "a": a, "b": b},
        )

    @classmethod
    def point(cls, x0: float, width: float = 1e-3) -> InitialLaw:
        """Narrow bump standing in for a Dirac mass (an L2 density is required)."""
        return cls.gaussian_bump(x0, width)

    @classmethod
    def from_config(cls, cfg: Mapping[str, Any]) -> InitialLaw:
        law = cfg.get("law", "gaussian-bump")
        if law == "gaussian-bump":
            return cls.gaussian_bump(float(cfg.get("center", 1.0)), float(cfg.get("width", 0.1)))
        if law == "uniform":
            return cls.uniform(float(cfg.get("a", 1.0)), float(cfg.get("b", 2.0)))
        raise ValueError(f"unknown initial law {law!r}")


@dataclass
class InitialLawReport:
    all_positive: bool
    density_mass: float
    tail_ratios: dict[float, list[float]]
    ok: bool


def check_initial_law(law: InitialLaw, samples: np.ndarray, lam_grid=None) -> InitialLawReport:
    """Check positivity, unit mass of V0 and faster-than-exponential tails."""
    samples = np.asarray(samples)
    mass, _ = integrate.quad(law.density, law.support[0], law.support[1], limit=400, points=None)
    if lam_grid is None:
        lam_grid = np.linspace(law.support[0], law.support[0] + 10.0, 21)[1:]
    ratios = {}
    tails_ok = True
    for alpha in law.tail_alpha_probe:
        r = [law.tail_mass(lam) * math.exp(alpha * lam) for lam in lam_grid]
        ratios[alpha] = r
        if not r[-1] <= 1e-3 * max(max(r), 1e-300):
            tails_ok = False
    positive = bool(np.all(samples > 0))
    return InitialLawReport(
        all_positive=positive,
        density_mass=mass,
        tail_ratios=ratios,
        ok=positive and abs(mass - 1.0) < 1e-8 and tails_ok,
    )

