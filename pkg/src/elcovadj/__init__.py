"""Empirical likelihood covariate adjustment for randomized trials.

Auxiliary constraints ``(1{Z=k} - pi_k) h(X)`` have mean zero by
randomization, so stacking them under the marginal treatment-effect
scores sharpens estimates and tests without an outcome model.
"""

from .el_core import ELSolution, log_star, profile_gradient, profile_hessian, profile_loglik, solve_lambda
from .errors import (
    ContractError,
    DomainError,
    ElCovAdjError,
    FeasibilityError,
    InputError,
    NumericError,
    ParseError,
    SchemaError,
    SpecError,
)
from .estimating import (
    AuxTerm,
    ConstraintSpec,
    EstimatingFunctionSet,
    assemble,
    auxiliary_equations,
    fourier_terms,
    marginal_equations,
    parse_term,
)
from .inference import (
    MeleResult,
    TestResult,
    fit_mele,
    lr_test_full,
    lr_test_profile,
    power_analytic,
    wald_interval,
)
from .scenarios import Scenario, generate, preset, preset_names, true_beta
from .simulation import SimulationReport, run_experiment
from .trial_data import CsvSchema, EmpiricalCdf, TrialDataset, empirical_cdf, load_csv, write_csv

__version__ = "0.1.0"
