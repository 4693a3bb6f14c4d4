import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from concentra.ansatz import build_ansatz, ground_state_integrals, solve_ground_state
from concentra.energy import Functional, energy, gradient, nehari_scale, pohozaev_residual, pohozaev_terms
from concentra.errors import ValidationError
from concentra.grid import GridFunction, h1_inner, h1_norm, make_grid
from concentra.problem import ProblemSpec


def _ground(n=1, m=801, R=16.0):
    spec = ProblemSpec(n, 3.0, epsilon=0.1)
    g = make_grid(n, R, m)
    return spec, build_ansatz(solve_ground_state(n, 3.0), spec, np.zeros(n), g)


def test_ground_state_energy_and_gradient():
    spec, z = _ground()
    rep = energy(z, spec)
    c0, c1 = ground_state_integrals(solve_ground_state(1, 3.0))
    assert rep.value == pytest.approx(c1, rel=1e-3)
    assert rep.grad_norm < 1e-3
    assert nehari_scale(z, spec) == pytest.approx(1.0, abs=1e-3)


def test_nehari_scale_rescales_onto_manifold():
    spec, z = _ground(m=401)
    t = nehari_scale(z * 1.7, spec)
    assert t * 1.7 == pytest.approx(nehari_scale(z, spec), rel=1e-10)


@given(st.integers(0, 2**32 - 1), st.sampled_from([False, True]))
@settings(max_examples=15, deadline=None)
def test_gradient_matches_difference_quotient(seed, magnetic):
    rng = np.random.default_rng(seed)
    spec = ProblemSpec(1, 3.0, V="0.5*x^2", K="1+0.2*x", A=["0.3+x"] if magnetic else None, epsilon=0.2)
    g = make_grid(1, 6.0, 61)
    fun = Functional(spec, g)
    env = np.exp(-g.coords[0] ** 2 / 4)
    u = rng.standard_normal(g.shape) * env
    d = rng.standard_normal(g.shape) * env
    if magnetic:
        u = u + 1j * rng.standard_normal(g.shape) * env
        d = d + 1j * rng.standard_normal(g.shape) * env
    t = 1e-5
    fd = (fun.value(u + t * d) - fun.value(u - t * d)) / (2 * t)
    assert fd == pytest.approx(h1_inner(g, fun.gradient(u), d), rel=1e-6, abs=1e-9)


def test_magnetic_gauge_constant_potential():
    # a constant A is removed by the gauge e^{i a.x}; energies must agree
    g = make_grid(1, 10.0, 201)
    x = g.coords[0]
    u = np.exp(-x**2)
    plain = Functional(ProblemSpec(1, 3.0, V=0.2, epsilon=0.1), g)
    mag = Functional(ProblemSpec(1, 3.0, V=0.2, A=["0.4"], epsilon=0.1), g)
    # the lattice gauge is exact for the link phases
    v = np.exp(1j * 0.4 * x) * u
    assert mag.value(v.astype(complex)) == pytest.approx(plain.value(u), rel=1e-12)


def test_magnetic_requires_complex_field():
    g = make_grid(1, 5.0, 51)
    fun = Functional(ProblemSpec(1, 3.0, A=["1"], epsilon=0.1), g)
    with pytest.raises(ValidationError):
        fun.value(np.zeros(g.shape))


@pytest.mark.parametrize("n", [1, 2])
def test_pohozaev_on_laplace_eigenfunction(n):
    # tiny multiple of the first Dirichlet mode of the ball; the nonlinearity is negligible
    g = make_grid(n, 1.5, 301 if n == 1 else 151)
    r = g.radius_from(np.zeros(n))
    if n == 1:
        lam = (math.pi / 2) ** 2
        u = np.where(r <= 1, np.cos(math.pi * r / 2), 0.0)
    else:
        from scipy.special import j0, jn_zeros
        k = jn_zeros(0, 1)[0]
        lam = k**2
        u = np.where(r <= 1, j0(k * r), 0.0)
    f = GridFunction(g, 1e-4 * u)
    t = pohozaev_terms(f, 1.0, 3.0, lam)
    assert pohozaev_residual(f, 1.0, 3.0, lam) < 1e-2 * t["boundary"]


def test_pohozaev_ball_must_fit():
    g = make_grid(1, 1.0, 41)
    with pytest.raises(ValidationError):
        pohozaev_terms(GridFunction(g, np.zeros(41)), 1.0, 3.0)
