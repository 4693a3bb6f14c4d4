import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from concentra.ansatz import (RadialProfile, build_ansatz, build_magnetic_ansatz,
                              ground_state_integrals, scaling_coefficients, solve_ground_state)
from concentra.errors import PlacementError, ValidationError
from concentra.grid import make_grid
from concentra.problem import ProblemSpec


def _ivp_peak(n, p, lo=1.5, hi=8.0, r_end=25.0):
    """Independent shooting oracle: DOP853 trajectories classified by events."""
    def rhs(r, y):
        u, v = y
        return [v, -(n - 1) / r * v + u - abs(u) ** (p - 1) * u]

    def cross(r, y):
        return y[0]
    cross.terminal = True

    def turn(r, y):
        return y[1]
    turn.terminal = True
    turn.direction = 1

    def side(a):
        r0 = 1e-6
        y0 = [a + (a - a**p) * r0**2 / (2 * n), (a - a**p) * r0 / n]
        sol = solve_ivp(rhs, (r0, r_end), y0, method="DOP853", rtol=1e-12, atol=1e-14,
                        events=(cross, turn))
        if sol.t_events[0].size:
            return 1.0
        return -1.0

    return brentq(side, lo, hi, xtol=1e-12)


def test_closed_form_n1():
    prof = solve_ground_state(1, 3.0)
    r = np.linspace(0, 10, 1001)
    assert np.max(np.abs(prof(r) - math.sqrt(2) / np.cosh(r))) < 1e-6
    assert prof.decay_rate == pytest.approx(1.0, abs=1e-3)


def test_closed_form_n1_other_exponent():
    # U = ((p+1)/2)^{1/(p-1)} sech^{2/(p-1)}((p-1) r / 2)
    p = 5.0
    prof = solve_ground_state(1, p)
    r = np.linspace(0, 8, 401)
    exact = ((p + 1) / 2) ** (1 / (p - 1)) / np.cosh((p - 1) * r / 2) ** (2 / (p - 1))
    assert np.max(np.abs(prof(r) - exact)) < 1e-6


@pytest.mark.parametrize("n", [2, 3])
def test_peak_matches_ivp_oracle(n):
    prof = solve_ground_state(n, 3.0)
    assert prof.peak == pytest.approx(_ivp_peak(n, 3.0), rel=1e-6)


def test_integrals_n1():
    # C0 = int 4 sech^4 = 16/3
    c0, c1 = ground_state_integrals(solve_ground_state(1, 3.0))
    assert c0 == pytest.approx(16 / 3, rel=1e-6)
    assert c1 == pytest.approx(16 / 3 * 0.25, rel=1e-6)


def test_text_roundtrip(tmp_path):
    prof = solve_ground_state(2, 3.0)
    back = RadialProfile.load(prof.save(tmp_path / "u.txt"))
    np.testing.assert_array_equal(back.values, prof.values)
    assert back.peak == prof.peak and back.n == 2
    with pytest.raises(ValidationError):
        RadialProfile.from_text("1 2\n3 4\n")


def test_subcritical_guard():
    with pytest.raises(ValidationError) as exc:
        solve_ground_state(3, 5.0)
    assert exc.value.field == "problem.p"


def test_scaled_ansatz_and_placement():
    spec = ProblemSpec(1, 3.0, V="x^2", K=2.0, epsilon=0.1)
    prof = solve_ground_state(1, 3.0)
    alpha, beta = scaling_coefficients(spec, [2.0])
    assert alpha == pytest.approx(math.sqrt(1.04 / 2)) and beta == pytest.approx(math.sqrt(1.04))
    g = make_grid(1, 14.0, 281, center=(2.0,))
    z = build_ansatz(prof, spec, [2.0], g)
    assert z.values.max() == pytest.approx(alpha * prof.peak)
    with pytest.raises(PlacementError):
        build_ansatz(prof, spec, [14.0], g)


def test_magnetic_ansatz_modulus():
    spec = ProblemSpec(2, 3.0, A=["-y/2", "x/2"], epsilon=0.2)
    prof = solve_ground_state(2, 3.0)
    g = make_grid(2, 8.0, 41, center=(1.0, 1.0))
    z = build_magnetic_ansatz(prof, spec, [1.0, 1.0], 0.7, g)
    real = build_ansatz(prof, spec, [1.0, 1.0], g)
    np.testing.assert_allclose(np.abs(z.values), real.values, atol=1e-15)
