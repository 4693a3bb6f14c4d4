import math

import numpy as np
import pytest
from scipy.integrate import quad

from concentra.constants import (HardyParams, aubin_talenti_quotient, brezis_nirenberg_S_lambda,
                                 hardy_constant_probe, hardy_quotient, hardy_sobolev_S,
                                 lambda1_ball, radial_lambda1, random_test_field, sobolev_constant,
                                 sobolev_hardy_quotient)
from concentra.errors import DomainError, ValidationError
from concentra.grid import GridFunction, make_grid


def test_hardy_constant_formula():
    assert HardyParams(3, 2).hardy_constant == pytest.approx(1.0)
    assert HardyParams(4, 3, 3, 0).hardy_constant == pytest.approx(1.0)
    assert HardyParams(3, 3, 2, -1).hardy_constant == pytest.approx(1.0)
    assert HardyParams(5, 5).hardy_constant == pytest.approx(6.25)


@pytest.mark.parametrize("kw, field", [(dict(N=3, k=4), "problem.k"), (dict(N=3, k=2, alpha=-3), "problem.alpha"),
                                       (dict(N=3, k=3, q=3.5), "problem.q"), (dict(N=3, k=2, q=2, s=2.5), "problem.s")])
def test_params_validation(kw, field):
    with pytest.raises(ValidationError) as exc:
        HardyParams(**kw)
    assert exc.value.field == field


def test_hardy_quotient_gaussian_oracle():
    P = HardyParams(3, 3, 2, 0)
    g = make_grid(3, 6.0, 81)
    r2 = sum(c**2 for c in g.coords)
    num = quad(lambda r: 4 * r**6 * np.exp(-2 * r * r), 0, 20)[0]
    den = quad(lambda r: r**2 * np.exp(-2 * r * r), 0, 20)[0]
    assert hardy_quotient(GridFunction(g, np.exp(-r2)), P) == pytest.approx(num / den, rel=1e-3)


def test_hardy_bound_on_random_fields():
    rng = np.random.default_rng(4)
    P = HardyParams(3, 2, 2, 0)
    g = make_grid(3, 1.0, 25)
    assert min(hardy_quotient(random_test_field(g, rng), P) for _ in range(50)) >= P.hardy_constant


def test_probe_decreases_toward_constant():
    P = HardyParams(3, 2, 2, 0)
    vals = [hardy_constant_probe(P, m) for m in (1, 2, 8)]
    assert vals[0] >= vals[1] >= vals[2] >= P.hardy_constant
    assert vals[2] < 1.1 * P.hardy_constant


def test_aubin_talenti_family_near_sobolev_constant():
    S = sobolev_constant(3)
    assert S == pytest.approx(3 * (math.pi / 2) ** (4 / 3), rel=1e-12)
    vals = aubin_talenti_quotient(3, [1.0, 0.25])
    assert all(v >= S * (1 - 1e-6) and v < 1.01 * S for v in vals)


@pytest.mark.slow
def test_sobolev_hardy_upper_bound_near_sobolev():
    P = HardyParams(3, 3, q=2.0, s=0.0)
    est = hardy_sobolev_S(P, budget=150)
    S = sobolev_constant(3)
    assert S * (1 - 1e-3) <= est.value <= 1.02 * S
    assert np.all(np.diff(est.history) <= 1e-12 * est.history[0])


def test_sobolev_hardy_quotient_translation_in_z():
    P = HardyParams(3, 2, q=2.0, s=1.0)
    g = make_grid(3, 3.0, 41)
    x, y, z = g.coords
    # compact support; the shift is a whole number of cells so the lattice is unchanged
    base = lambda zc: (np.clip(1 - (x**2 + y**2) / 4, 0, None) * np.clip(1 - (z - zc) ** 2 / 2.25, 0, None)) ** 2
    shift = 6 * g.spacing
    q0 = sobolev_hardy_quotient(GridFunction(g, base(0.0)), P)
    q1 = sobolev_hardy_quotient(GridFunction(g, base(shift)), P)
    assert q1 == pytest.approx(q0, rel=1e-10)


def test_brezis_nirenberg_monotone_and_domain():
    n = 4
    l1 = radial_lambda1(n)
    s0 = brezis_nirenberg_S_lambda(0.0, n, grid=200)
    s1 = brezis_nirenberg_S_lambda(0.5 * l1, n, grid=200)
    assert s0.value == pytest.approx(sobolev_constant(4), rel=1e-3)
    assert s1.value < s0.value - 1.0
    with pytest.raises(DomainError):
        brezis_nirenberg_S_lambda(1.01 * l1, n)


def test_lambda1_interval_and_scaling():
    assert lambda1_ball(1) == pytest.approx(math.pi**2 / 4, rel=1e-4)
    a, b = lambda1_ball(2, 65), lambda1_ball(2, 65, radius=2.0)
    assert 4 * b == pytest.approx(a, rel=2e-3)
    assert a == pytest.approx(radial_lambda1(2), rel=5e-3)
