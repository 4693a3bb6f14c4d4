import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from concentra.diagnostics import (LIONS_EXPECTED, brezis_lieb_defect, concentration_function,
                                   lions_classify, mass_budget, template_sequence, weak_failure_mode)
from concentra.errors import ValidationError
from concentra.grid import GridFunction, make_grid

R_GRID = np.linspace(0.25, 6, 24)


def test_concentration_function_of_box_indicator():
    g = make_grid(1, 10.0, 2001)
    rho = GridFunction(g, (np.abs(g.coords[0] - 3.0) <= 1.0).astype(float))
    q, centers = concentration_function(rho, [0.5, 1.0, 4.0], return_centers=True)
    np.testing.assert_allclose(q, [1.0, 2.0, 2.0], atol=2e-2)
    assert centers[0][0] == pytest.approx(3.0, abs=0.5)


def test_concentration_function_2d_gaussian():
    g = make_grid(2, 6.0, 121)
    r2 = sum(c**2 for c in g.coords)
    rho = GridFunction(g, np.exp(-r2) / math.pi)
    q = concentration_function(rho, [1.0, 2.0])
    np.testing.assert_allclose(q, [1 - math.exp(-1), 1 - math.exp(-4)], atol=1e-2)
    assert np.all(np.diff(q) >= 0)


def test_rejects_negative_density():
    g = make_grid(1, 1.0, 11)
    with pytest.raises(ValidationError):
        concentration_function(GridFunction(g, -np.ones(11)), [0.5])


@given(st.integers(0, 2**32 - 1), st.sampled_from(sorted(LIONS_EXPECTED)))
@settings(max_examples=25, deadline=None)
def test_templates_classified(seed, kind):
    seq = template_sequence(kind, np.random.default_rng(seed))
    assert lions_classify(seq, R_GRID).label == LIONS_EXPECTED[kind]


@pytest.mark.parametrize("kind, expected", [("oscillation", "oscillation"),
                                            ("concentration", "concentration"),
                                            ("vanishing_translation", "vanishing")])
def test_weak_failure_mode(kind, expected):
    rng = np.random.default_rng(5)
    for _ in range(5):
        assert weak_failure_mode(template_sequence(kind, rng)) == expected


def test_brezis_lieb_defect_vanishes_for_strong_convergence():
    seq = template_sequence("strong_convergent", np.random.default_rng(2))
    d = brezis_lieb_defect(seq.terms(), seq.limit, seq.p)
    assert d[-1] < 1e-2 * d[0] + 1e-12


def test_brezis_lieb_defect_zero_for_disjoint_bumps():
    g = make_grid(1, 20.0, 4001)
    x = g.coords[0]
    u = np.exp(-x**2)
    terms = [GridFunction(g, u + np.exp(-(x - s) ** 2)) for s in (8.0, 12.0, 16.0)]
    d = brezis_lieb_defect(terms, GridFunction(g, u), 2.0)
    assert max(d) < 1e-10


@pytest.mark.parametrize("kind", sorted(LIONS_EXPECTED))
def test_mass_budget_closes(kind):
    seq = template_sequence(kind, np.random.default_rng(11))
    mb = mass_budget(seq.terms(), seq.limit, seq.p, R_GRID)
    assert mb.budget_residual <= 0.02 * mb.limsup_norm
    nu, nu_inf, res = mb
    assert nu >= 0 and nu_inf >= 0


def test_unknown_template():
    with pytest.raises(ValidationError):
        template_sequence("nonsense", np.random.default_rng(0))
