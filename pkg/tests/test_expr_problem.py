import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from concentra.errors import ValidationError
from concentra.expr import Expression, spatial
from concentra.problem import ProblemSpec, ScalarField

coef = st.floats(-5, 5, allow_nan=False)


@given(coef, coef, coef)
def test_polynomial_matches_numpy(a, b, c):
    x = np.linspace(-2, 2, 7)
    ex = Expression(f"({a!r})*x^2 + ({b!r})*x - ({c!r})")
    np.testing.assert_allclose(ex(x1=x), a * x**2 + b * x - c, rtol=1e-12, atol=1e-12)


def test_functions_and_constants():
    t = np.array([0.0, 0.7])
    np.testing.assert_allclose(Expression("2*sech(t)^2")(t=t), 2 / np.cosh(t) ** 2)
    assert Expression("pi + e")() == pytest.approx(math.pi + math.e)
    assert Expression("-2**2")() == -4


@pytest.mark.parametrize("src", ["__import__('os')", "x.real", "max(x, 1)", "x < 1", "[x]", "foo(x)", "x +"])
def test_rejects_outside_grammar(src):
    with pytest.raises(ValidationError):
        Expression(src, field="problem.V")


def test_spatial_aliases_and_dimension_check():
    f = spatial("x*y + z", 3)
    pts = np.array([[1.0, 2.0, 3.0], [0.5, 0.5, 0.0]])
    np.testing.assert_allclose(f(pts), [5.0, 0.25])
    with pytest.raises(ValidationError) as exc:
        spatial("x + y", 1, field="problem.V")
    assert exc.value.field == "problem.V"


@pytest.mark.parametrize("kw, field", [
    (dict(n=1, p=1.0), "problem.p"),
    (dict(n=3, p=5.0), "problem.p"),
    (dict(n=4, p=2.0), "problem.n"),
    (dict(n=1, p=3.0, epsilon=0.0), "problem.epsilon"),
    (dict(n=1, p=3.0, V="x + y"), "problem.V"),
])
def test_spec_validation_names_field(kw, field):
    with pytest.raises(ValidationError) as exc:
        ProblemSpec(**kw)
    assert exc.value.field == field


def test_frozen_rejects_nonpositive_coefficients():
    spec = ProblemSpec(1, 3.0, V="x^2 - 2")
    with pytest.raises(ValidationError) as exc:
        spec.frozen([0.0])
    assert exc.value.field == "problem.V"
    assert spec.frozen([2.0])[0] == pytest.approx(2.0)


def test_scalar_field_derivatives():
    f = ScalarField.parse("x^2*y + sin(y)", 2)
    x = np.array([[0.3, -0.8]])
    np.testing.assert_allclose(f.grad(x)[0], [2 * 0.3 * -0.8, 0.09 + math.cos(-0.8)], rtol=1e-6)
    np.testing.assert_allclose(f.hess(x[0]), [[-1.6, 0.6], [0.6, -math.sin(-0.8)]], atol=1e-4)
