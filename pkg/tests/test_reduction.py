import math

import numpy as np
import pytest

from concentra.errors import ValidationError
from concentra.grid import h1_inner
from concentra.problem import ProblemSpec
from concentra.reduction import (AuxiliaryFunction, Chart, Reducer, abstract_reduce,
                                 frozen_critical_point, tangent_basis)


def test_auxiliary_function_closed_form():
    spec = ProblemSpec(1, 3.0, V="x^2", K="1+x^2", epsilon=0.1)
    aux = AuxiliaryFunction(spec)
    # theta = 2 - 1/2, K exponent -1
    x = 0.7
    assert aux.value([x]) == pytest.approx((1 + x * x) ** 1.5 / (1 + x * x))
    assert aux.grad([x])[0] == pytest.approx(x / math.sqrt(1 + x * x), rel=1e-8)


def test_constant_coefficients_give_zero_correction():
    R = Reducer(ProblemSpec(1, 3.0, V=0.5, K=2.0, epsilon=0.1))
    phis = []
    for xi in ([0.0], [2.2]):
        w, pt = R.solve_correction(xi)
        assert pt.w_norm == pytest.approx(0.0, abs=1e-12)
        phis.append(pt.phi)
    assert phis[0] == pytest.approx(phis[1], rel=1e-12)
    # Phi equals C1 Lambda up to the lattice error of the frozen state
    assert phis[0] == pytest.approx(R.c1 * R.aux.value([0.0]), rel=1e-3)


def test_correction_is_orthogonal_to_tangent_space():
    R = Reducer(ProblemSpec(1, 3.0, V="x^2", epsilon=0.1))
    w, pt = R.solve_correction([3.0])
    assert pt.orthogonality < 1e-8
    assert pt.coercivity > 0


def test_tangent_basis_is_h1_orthonormal():
    spec = ProblemSpec(2, 3.0, A=["-y/2", "x/2"], epsilon=0.2)
    R = Reducer(spec)
    g = R.grid_at([0.5, 0.0])
    z = frozen_critical_point(spec, [0.5, 0.0], 0.3, g)
    b = tangent_basis(z)
    G = np.array([[h1_inner(g, u.values, v.values) for v in b.vectors] for u in b.vectors])
    np.testing.assert_allclose(G, np.eye(3), atol=1e-10)


def test_epsilon_cap():
    with pytest.raises(ValidationError) as exc:
        Reducer(ProblemSpec(1, 3.0, epsilon=0.9))
    assert exc.value.field == "problem.epsilon"


def test_lambda_critical_points_double_well():
    R = Reducer(ProblemSpec(1, 3.0, V="(x^2-1)^2", epsilon=0.1))
    pts = sorted(float(x[0]) for x in R.lambda_critical_points(-1.5, 1.5, 8))
    np.testing.assert_allclose(pts, [-1.0, 0.0, 1.0], atol=1e-8)


def test_harmonic_trap_concentrates_at_origin():
    R = Reducer(ProblemSpec(1, 3.0, V="x^2", epsilon=0.1))
    pts = R.find_concentration_points((-1, 1), multistart=5)
    assert len(pts) == 1
    assert abs(pts[0].slow[0]) < 1e-6 and pts[0].morse_index == 0


def test_abstract_reduce_finds_cosine_extrema():
    found = abstract_reduce(lambda t: math.cos(t[0]), Chart((0.0,), (2 * math.pi,), (True,), 40))
    kinds = sorted((c.kind, round(float(c.theta[0]) % (2 * math.pi), 6)) for c in found)
    assert kinds == [("max", 0.0), ("min", round(math.pi, 6))]
    assert abstract_reduce(lambda t: 1.0, Chart((0.0,), (1.0,))) == []
