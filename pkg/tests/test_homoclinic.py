import numpy as np
import pytest

from concentra.errors import DegenerateError, SolverError, ValidationError
from concentra.homoclinic import (HamiltonianSpec, amplitude_law, asymptotic_spectrum,
                                  continue_branch, decay_rate, hyperbolicity_check, lambda0,
                                  parity_report, seed_from_ground_level, shooting_check,
                                  solve_homoclinic)

SPEC = HamiltonianSpec(2.0, "2*sech(t)^2")


@pytest.fixture(scope="module")
def ground():
    return lambda0(SPEC, 20, 2048)


@pytest.fixture(scope="module")
def branch(ground):
    start = solve_homoclinic(SPEC.at(ground.lam0 + 0.02), seed_from_ground_level(ground, 0.3))
    return continue_branch(SPEC, start, steps=10, ds=0.05)


def test_poschl_teller_levels(ground):
    # -u'' - l(l+1) sech^2 u has its ground level at -l^2
    assert ground.lam0 == pytest.approx(-1.0, abs=1e-4)
    assert ground.admissible
    assert lambda0("6*sech(t)^2", 20, 2048).lam0 == pytest.approx(-4.0, abs=1e-3)


def test_domain_doubling_converged(ground):
    assert lambda0(SPEC, 40, 4096).lam0 == pytest.approx(ground.lam0, abs=1e-10)


def test_zero_potential_not_admissible():
    assert not lambda0(lambda t: 0 * t, 20, 2048).admissible


def test_spec_validation():
    with pytest.raises(ValidationError):
        HamiltonianSpec(2.0, "-sech(t)")
    with pytest.raises(ValidationError):
        HamiltonianSpec(0.0, "sech(t)")


def test_hyperbolicity():
    assert hyperbolicity_check(-0.5)
    assert not hyperbolicity_check(0.5)
    np.testing.assert_allclose(sorted(asymptotic_spectrum(-0.25).real), [-0.5, 0.5])
    with pytest.raises(DegenerateError):
        hyperbolicity_check(0.0)


def test_parity(ground):
    rep = parity_report(SPEC, ground.lam0)
    assert rep.kernel_dim == 1 and rep.parity == -1 and rep.transversality > 0
    assert parity_report(SPEC, ground.lam0 - 0.3).kernel_dim == 0
    assert parity_report(SPEC, ground.lam0, channels=2).kernel_dim == 2


def test_trivial_attractor_on_wrong_side(ground):
    with pytest.raises(SolverError) as exc:
        solve_homoclinic(SPEC.at(ground.lam0 - 0.05), seed_from_ground_level(ground, 0.3))
    assert exc.value.record()["kind"] == "trivial attractor"


def test_branch_quality(branch, ground):
    assert len(branch) == 11 and branch.termination == "budget"
    assert max(p.residual for p in branch) < 1e-8
    amps = [p.amplitude for p in branch]
    assert np.all(np.diff(amps) > 0)
    _, lam_star = amplitude_law(branch[:6], ground.lam0)
    assert lam_star == pytest.approx(ground.lam0, abs=5e-3)


def test_decay_matches_linearization(branch):
    p = branch[-1]
    left, right = decay_rate(p)
    assert left == pytest.approx(np.sqrt(-p.lam), rel=1e-2)
    assert right == pytest.approx(np.sqrt(-p.lam), rel=1e-2)


def test_independent_shooting(branch):
    assert shooting_check(SPEC, branch[-1]) < 1e-5


def test_retrace(branch):
    back = continue_branch(SPEC, branch[-1], steps=len(branch) - 1, ds=-0.05)
    for a, b in zip(back, branch[::-1]):
        assert abs(a.lam - b.lam) < 1e-8
        assert np.max(np.abs(a.u - b.u)) < 1e-8


def test_branch_point_text(branch):
    text = branch[0].to_text()
    rows = np.loadtxt(text.splitlines(), comments="#")
    assert rows.shape[1] == 3
    np.testing.assert_array_equal(rows[:, 1], branch[0].u)
