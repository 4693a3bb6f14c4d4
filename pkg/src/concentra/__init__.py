"""Numerical toolkit for concentration phenomena in semilinear elliptic problems."""

from .errors import (ConcentraError, ConvergenceError, DegenerateError, DomainError,
                     PlacementError, ResourceError, SolverError, ValidationError)
from .grid import CartesianGrid, GridFunction, make_grid
from .problem import ProblemSpec, ScalarField, VectorField
from .ansatz import RadialProfile, build_ansatz, ground_state_integrals, solve_ground_state
from .energy import Functional, energy, pohozaev_residual
from .reduction import (Reducer, check_coercivity, find_concentration_points, morse_index,
                        reduced_energy, solve_correction)
from .geodesics import MetricPerturbation, find_geodesic_candidates, refine_closed_geodesic
from .diagnostics import (brezis_lieb_defect, concentration_function, lions_classify, mass_budget,
                          template_sequence, weak_failure_mode)
from .constants import (HardyParams, brezis_nirenberg_S_lambda, hardy_constant_probe,
                        hardy_quotient, hardy_sobolev_S, lambda1_ball)
from .homoclinic import (HamiltonianSpec, continue_branch, lambda0, parity_report,
                         solve_homoclinic)

__version__ = "0.1.0"
