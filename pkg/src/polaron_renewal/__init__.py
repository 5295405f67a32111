"""Renewal-theoretic Monte Carlo for the energy-momentum relation of the Froehlich polaron."""

from .config import RunConfig
from .ensemble import (DressedSample, Ensemble, EnsembleMeta, generate_ensemble, load_ensemble,
                       merge_ensembles, save_ensemble)
from .errors import (BracketError, DiagnosticError, DomainError, EnsembleFormatError,
                     EnsembleMismatchError, InconclusiveTailError, InvalidParameterError,
                     NoPlateauError, NumericalError, PhysicalRangeWarning, PolaronError,
                     ResourceLimitError)
from .excursion import Excursion, Interval, sample_excursion
from .fk_oracle import PathConfig, fk_estimate, perturbative_E0, perturbative_meff
from .geometry import DressedExcursion, overlap_matrix, phi, sigma_squared, sigma_squared_t
from .renewal import (EmpiricalNu, RenewalSolution, empirical_nu, laplace, plateau,
                      series_solution, solve_renewal)
from .spectral import (effective_mass, energy_curve, i0_probe, lambda_hat, overlap, resolvent,
                       solve_E0, solve_EP)

__version__ = "0.1.0"
