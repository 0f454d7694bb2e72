"""Typed experiment configuration read from TOML.

Sections mirror the modules: [experiment], [coefficients], [initial],
[particles], [solver], [ladders], [mc], [interaction].  Unknown sections or
keys are errors.  Every subcommand has its own defaults; a config file only
overrides them.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields
from typing import Any, Mapping

import tomli
import tomli_w

COMMANDS = (
    "verify-kernels",
    "convergence",
    "class-lambda",
    "compare",
    "kappa-limits",
    "mass-loss",
    "simulate",
    "solve",
)
MODES = ("elastic", "absorbing", "reflecting")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentSection:
    kind: str = "simulate"
    seed: int = 0
    out: str = "runs"
    threads: int = 1


@dataclass(frozen=True)
class CoefficientSection:
    mu: Any = 0.0  # number, expression string or {kind = ...} table
    sigma: Any = 1.0
    rho: Any = 0.5
    kappa: float = 1.0
    mode: str = "elastic"
    bound_C: float = 2.0


@dataclass(frozen=True)
class InitialSection:
    law: str = "gaussian-bump"
    center: float = 1.0
    width: float = 0.1
    a: float = 1.0
    b: float = 2.0


@dataclass(frozen=True)
class ParticleSection:
    N: int = 10_000
    T: float = 1.0
    dt: float = 1e-3
    N_ladder: tuple[int, ...] = ()
    snapshot_times: tuple[float, ...] = ()


@dataclass(frozen=True)
class SolverSection:
    dx: float = 0.01
    dt: float = 2.5e-5
    x_max: float = 0.0  # 0 -> max(support nu0) + 6 max sigma sqrt(T)
    stability_guard: float = 0.0625


@dataclass(frozen=True)
class LadderSection:
    epsilon: tuple[float, ...] = (0.1, 0.05, 0.02, 0.01)
    kappa: tuple[float, ...] = (0.01, 0.1, 1.0, 10.0, 100.0)
    lam: tuple[float, ...] = (0.5, 1.0, 2.0)  # test functions (1 + kappa x) exp(-lam x^2)


@dataclass(frozen=True)
class MCSection:
    replications: int = 20
    min_replications: int = 20
    pair_samples: int = 1_000_000


@dataclass(frozen=True)
class InteractionSection:
    enabled: bool = False
    a: float = 0.0
    b: float = 0.0
    f: str = "tanh"
    clip: float = 5.0
    lipschitz_c: float = 0.0  # 0 -> |b| max(sup f, Lip f)
    probe_pairs: int = 100


SECTIONS = {
    "experiment": ExperimentSection,
    "coefficients": CoefficientSection,
    "initial": InitialSection,
    "particles": ParticleSection,
    "solver": SolverSection,
    "ladders": LadderSection,
    "mc": MCSection,
    "interaction": InteractionSection,
}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    coefficients: CoefficientSection = field(default_factory=CoefficientSection)
    initial: InitialSection = field(default_factory=InitialSection)
    particles: ParticleSection = field(default_factory=ParticleSection)
    solver: SolverSection = field(default_factory=SolverSection)
    ladders: LadderSection = field(default_factory=LadderSection)
    mc: MCSection = field(default_factory=MCSection)
    interaction: InteractionSection = field(default_factory=InteractionSection)

    def __post_init__(self):
        _validate(self)

    # -- serialisation -------------------------------------------------
    def to_dict(self) -> dict:
        out = {}
        for name in SECTIONS:
            sec = getattr(self, name)
            out[name] = {f.name: _plain(getattr(sec, f.name)) for f in fields(sec)}
        return out

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], base: ExperimentConfig | None = None) -> ExperimentConfig:
        base = base or cls()
        unknown = set(data) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
        kw = {}
        for name, sec_cls in SECTIONS.items():
            current = getattr(base, name)
            given = data.get(name, {})
            if not isinstance(given, Mapping):
                raise ConfigError(f"[{name}] must be a table")
            kw[name] = _section(sec_cls, current, given, name)
        return cls(**kw)

    @classmethod
    def from_toml(cls, text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
        try:
            data = tomli.loads(text)
        except tomli.TOMLDecodeError as e:
            raise ConfigError(f"invalid TOML: {e}") from e
        return cls.from_dict(data, base)

    def replace(self, **sections) -> ExperimentConfig:
        """Override fields: replace(particles={"N": 100}, mc={"replications": 2})."""
        return ExperimentConfig.from_dict(sections, self)

    # -- derived objects ------------------------------------------------
    def coefficient_set(self):
        from ..coefficients import CoefficientSet

        c = self.coefficients
        kappa = {"elastic": c.kappa, "absorbing": math.inf, "reflecting": 0.0}[c.mode]
        return CoefficientSet.from_config(
            {"mu": c.mu, "sigma": c.sigma, "rho": c.rho, "kappa": kappa, "bound_C": c.bound_C}
        )

    def initial_law(self):
        from ..coefficients import InitialLaw

        i = self.initial
        return InitialLaw.from_config({"law": i.law, "center": i.center, "width": i.width, "a": i.a, "b": i.b})

    def interaction_drift(self):
        from ..particles import MeanFieldDrift

        it = self.interaction
        if not it.enabled:
            return None
        return MeanFieldDrift(a=it.a, b=it.b, f_kind=it.f, clip=it.clip, lipschitz_c=it.lipschitz_c or None)


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    if isinstance(v, Mapping):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, float) and math.isinf(v):
        return v  # TOML has inf
    return v


def _coerce(value, default, where: str):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be a boolean")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be an integer")
        if isinstance(value, float) and not value.is_integer():  # ints pass exactly, even above 2^53
            raise ConfigError(f"{where} must be an integer")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where} must be a list")
        proto = default[0] if default else None
        if proto is None:
            return tuple(value)
        return tuple(_coerce(v, proto, f"{where}[{i}]") for i, v in enumerate(value))
    # free-form coefficient values (number, string or table)
    if isinstance(value, bool):
        raise ConfigError(f"{where} must be a number, expression or table")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, Mapping):
        return dict(value)
    if isinstance(value, str):
        return value
    raise ConfigError(f"{where} has unsupported type {type(value).__name__}")


_LIST_PROTOS = {
    ("particles", "N_ladder"): 0,
    ("particles", "snapshot_times"): 0.0,
    ("ladders", "epsilon"): 0.0,
    ("ladders", "kappa"): 0.0,
    ("ladders", "lam"): 0.0,
}


def _section(sec_cls, current, given: Mapping[str, Any], name: str):
    names = {f.name for f in fields(sec_cls)}
    unknown = set(given) - names
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(sorted(unknown))}")
    kw = {}
    for f in fields(sec_cls):
        cur = getattr(current, f.name)
        if f.name not in given:
            kw[f.name] = cur
            continue
        where = f"{name}.{f.name}"
        if (name, f.name) in _LIST_PROTOS:
            proto = _LIST_PROTOS[(name, f.name)]
            val = given[f.name]
            if not isinstance(val, (list, tuple)):
                raise ConfigError(f"{where} must be a list")
            kw[f.name] = tuple(_coerce(v, proto, f"{where}[{i}]") for i, v in enumerate(val))
        elif name == "coefficients" and f.name in ("mu", "sigma", "rho"):
            kw[f.name] = _coerce(given[f.name], None, where)
        else:
            kw[f.name] = _coerce(given[f.name], cur, where)
    return sec_cls(**kw)


def _validate(cfg: ExperimentConfig) -> None:
    e, c, p, s, m = cfg.experiment, cfg.coefficients, cfg.particles, cfg.solver, cfg.mc
    if e.kind not in COMMANDS:
        raise ConfigError(f"experiment.kind must be one of {COMMANDS}, got {e.kind!r}")
    if not 0 <= e.seed < 2**64:
        raise ConfigError("experiment.seed must be a 64-bit unsigned integer")
    if e.threads < 1:
        raise ConfigError("experiment.threads must be >= 1")
    if c.mode not in MODES:
        raise ConfigError(f"coefficients.mode must be one of {MODES}, got {c.mode!r}")
    if not c.kappa >= 0 or not c.bound_C > 0:
        raise ConfigError("coefficients.kappa must be >= 0 and bound_C > 0")
    positive = {
        "particles.N": p.N,
        "particles.T": p.T,
        "particles.dt": p.dt,
        "solver.dx": s.dx,
        "solver.dt": s.dt,
        "solver.stability_guard": s.stability_guard,
        "mc.replications": m.replications,
        "mc.min_replications": m.min_replications,
        "mc.pair_samples": m.pair_samples,
        "initial.width": cfg.initial.width,
    }
    for k, v in positive.items():
        if not v > 0:
            raise ConfigError(f"{k} must be positive, got {v}")
    if s.x_max < 0:
        raise ConfigError("solver.x_max must be >= 0 (0 selects the default)")
    for k, vals in {
        "particles.N_ladder": p.N_ladder,
        "ladders.epsilon": cfg.ladders.epsilon,
        "ladders.lam": cfg.ladders.lam,
    }.items():
        if any(not v > 0 for v in vals):
            raise ConfigError(f"{k} entries must be positive")
    if any(not v >= 0 for v in cfg.ladders.kappa):
        raise ConfigError("ladders.kappa entries must be >= 0")
    if any(not 0 <= v <= p.T for v in p.snapshot_times):
        raise ConfigError("particles.snapshot_times must lie in [0, T]")
    if cfg.initial.law not in ("gaussian-bump", "uniform"):
        raise ConfigError(f"initial.law must be 'gaussian-bump' or 'uniform', got {cfg.initial.law!r}")
    if cfg.interaction.f not in ("tanh", "clipped-linear"):
        raise ConfigError("interaction.f must be 'tanh' or 'clipped-linear'")
    if cfg.interaction.lipschitz_c < 0:
        raise ConfigError("interaction.lipschitz_c must be >= 0")


def load_config(path, kind: str | None = None) -> ExperimentConfig:
    """Read a TOML file on top of the defaults of its subcommand.

    ``kind`` (from the CLI) wins if the file does not name one; a file naming
    a different kind is an error.
    """
    try:
        with open(path, "rb") as fh:
            data = tomli.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except tomli.TOMLDecodeError as e:
        raise ConfigError(f"invalid TOML in {path}: {e}") from e
    file_kind = data.get("experiment", {}).get("kind") if isinstance(data.get("experiment"), Mapping) else None
    if kind is not None and file_kind is not None and file_kind != kind:
        raise ConfigError(f"config is for {file_kind!r}, not {kind!r}")
    kind = kind or file_kind or "simulate"
    return ExperimentConfig.from_dict(data, default_config(kind))


def default_config(kind: str) -> ExperimentConfig:
    """Defaults per subcommand (the baseline data: mu = 0, sigma = 1, bump at 1)."""
    if kind not in COMMANDS:
        raise ConfigError(f"unknown subcommand {kind!r}")
    base = ExperimentConfig(experiment=ExperimentSection(kind=kind, out=f"runs/{kind}"))
    d: dict[str, dict] = {}
    if kind == "verify-kernels":
        d = {"ladders": {"epsilon": [0.01, 0.1, 1.0]}}
    elif kind == "convergence":
        d = {
            "particles": {"N": 10_000, "T": 0.5, "dt": 1e-3, "N_ladder": [2500, 10_000, 40_000]},
            "mc": {"replications": 200, "min_replications": 50},
        }
    elif kind == "class-lambda":
        d = {
            "particles": {"N": 100_000, "T": 0.5, "dt": 1e-3, "snapshot_times": [0.1, 0.2, 0.3, 0.4, 0.5]},
            "ladders": {"epsilon": [0.02, 0.03, 0.05, 0.08, 0.12, 0.2, 0.3]},
            "mc": {"replications": 10, "min_replications": 10},
        }
    elif kind == "compare":
        d = {
            "particles": {"N": 100_000, "T": 1.0, "dt": 2.5e-4, "N_ladder": [100_000, 400_000],
                          "snapshot_times": [0.0, 0.5, 1.0]},
            "solver": {"dx": 0.01, "dt": 2.5e-5, "x_max": 8.0},
            "ladders": {"kappa": [0.0, 1.0]},
        }
    elif kind == "kappa-limits":
        d = {"particles": {"T": 1.0, "dt": 1e-3}, "solver": {"dx": 0.01, "dt": 2.5e-5, "x_max": 8.0}}
    elif kind == "mass-loss":
        d = {
            "particles": {"N": 10_000, "T": 0.5, "dt": 2.5e-4},
            "solver": {"dx": 0.01, "dt": 2.5e-5, "x_max": 8.0},
            "mc": {"replications": 20, "min_replications": 20},
        }
    elif kind == "simulate":
        d = {"particles": {"N": 10_000, "T": 1.0, "dt": 1e-3, "snapshot_times": [0.0, 0.5, 1.0]}}
    elif kind == "solve":
        d = {"particles": {"T": 1.0, "dt": 1e-3, "snapshot_times": [0.0, 0.5, 1.0]},
             "solver": {"dx": 0.01, "dt": 2.5e-5, "x_max": 8.0}}
    return ExperimentConfig.from_dict(d, base) if d else base


def to_jsonable(cfg: ExperimentConfig) -> dict:
    """Config echo for manifests (inf written as the string 'inf')."""

    def fix(v):
        if isinstance(v, float) and math.isinf(v):
            return "inf"
        if isinstance(v, list):
            return [fix(x) for x in v]
        if isinstance(v, dict):
            return {k: fix(x) for k, x in v.items()}
        return v

    return fix(cfg.to_dict())


__all__ = [
    "COMMANDS",
    "ConfigError",
    "ExperimentConfig",
    "default_config",
    "load_config",
    "to_jsonable",
    "dataclasses",
]
