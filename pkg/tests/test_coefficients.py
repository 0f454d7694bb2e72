from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from elastic_spde.coefficients import (
    CoefficientSet,
    InitialLaw,
    check_initial_law,
    inverse_scale_transform,
    scale_transform,
    transformed_drift,
    validate_assumptions,
)
from elastic_spde.expressions import ExpressionError, compile_expression

T_GRID = np.linspace(0, 1, 5)
X_GRID = np.linspace(0, 5, 26)


def test_constant_coefficients_validate():
    rep = validate_assumptions(CoefficientSet.constant(0.0, 1.0, 0.5, 1.0, 2.0), T_GRID, X_GRID)
    assert rep.ok and len(rep) == 0


def test_small_sigma_is_flagged():
    rep = validate_assumptions(CoefficientSet.constant(0.0, 0.01, 0.5), T_GRID, X_GRID)
    assert "sigma below 1/bound_C" in rep.constraints()


def test_steep_drift_is_flagged():
    c = CoefficientSet.from_config({"mu": "3*x", "sigma": 1.0, "rho": 0.5})
    rep = validate_assumptions(c, T_GRID, X_GRID)
    assert "|d/dx mu| exceeds bound_C" in rep.constraints()
    assert all(v.x >= 0 for v in rep.violations)


def test_rho_outside_range_and_non_finite_values_are_flagged():
    c = CoefficientSet.from_config({"mu": "1/(x-1)", "sigma": 1.0, "rho": 1.0})
    rep = validate_assumptions(c, T_GRID, np.array([0.0, 1.0, 2.0]))
    assert "rho outside [0,1)" in rep.constraints()
    assert any(k.startswith("non-finite") for k in rep.constraints())


def test_scale_transform_examples():
    assert scale_transform(CoefficientSet.constant(sigma=1.0), 0.0, 0.7) == pytest.approx(0.7, abs=1e-12)
    assert scale_transform(CoefficientSet.constant(sigma=2.0), 0.0, 1.0) == pytest.approx(0.5, abs=1e-12)
    c = CoefficientSet.from_config({"sigma": "1 + x^2"})
    assert scale_transform(c, 0.0, 1.0) == pytest.approx(math.pi / 4, rel=1e-10)


def test_transformed_drift_examples():
    assert transformed_drift(CoefficientSet.constant(0.0, 1.0), 0.0, 1.0) == 0.0
    assert transformed_drift(CoefficientSet.constant(1.0, 2.0), 0.0, 1.0) == pytest.approx(0.5)
    c = CoefficientSet.from_config({"mu": 0.0, "sigma": "1 + 0.1*t*x"})
    # mpmath: -0.1 - int_0^1 0.1 y / (1 + 0.1 y)^2 dy
    assert transformed_drift(c, 1.0, 1.0) == pytest.approx(-0.144010888952339517, rel=1e-8)


@given(st.floats(0.0, 4.0), st.floats(0.0, 4.0))
def test_scale_transform_monotone_and_lipschitz(x, y):
    c = CoefficientSet.from_config({"sigma": "1 + 0.5*tanh(x)^2", "bound_C": 2.0})
    zx, zy = scale_transform(c, 0.3, x), scale_transform(c, 0.3, y)
    if x < y:
        assert zx < zy
    assert abs(zy - zx) <= c.bound_C * abs(y - x) + 1e-12


@given(st.floats(0.01, 5.0))
def test_inverse_scale_transform_roundtrip(z):
    c = CoefficientSet.from_config({"sigma": "1 + 0.5*tanh(x)^2", "bound_C": 2.0})
    assert scale_transform(c, 0.0, inverse_scale_transform(c, 0.0, z)) == pytest.approx(z, rel=1e-10)


def test_initial_laws():
    for law in (InitialLaw.gaussian_bump(1.0, 0.1), InitialLaw.uniform(1.0, 2.0)):
        u = np.linspace(1e-6, 1 - 1e-6, 1001)
        rep = check_initial_law(law, law.sample(u))
        assert rep.ok, rep
    assert InitialLaw.uniform(1, 2).tail_mass(2.5) == 0.0
    with pytest.raises(ValueError):
        InitialLaw.uniform(2, 1)


def test_expressions_are_sandboxed():
    f = compile_expression("exp(-x) + t")
    assert f(1.0, np.array([0.0]))[0] == pytest.approx(2.0)
    for bad in ("__import__('os')", "x.real", "open('f')", "lambda: 1"):
        with pytest.raises(ExpressionError):
            compile_expression(bad)


def test_with_kappa_keeps_other_fields():
    c = CoefficientSet.constant(0.2, 1.5, 0.3, 1.0)
    d = c.with_kappa(math.inf)
    assert math.isinf(d.kappa) and d.boundary == "absorbing"
    assert float(d.mu(0, 1.0)) == 0.2 and float(d.rho(0)) == 0.3
    assert c.with_kappa(0.0).boundary == "reflecting"
