"""Simulation scenarios: logistic outcomes with normal auxiliary covariates.

Outcomes follow ``logit P(Y=1 | Z=g, X) = a0[g] + sum_c slope[c, g] T_c(X_c)``
with ``T_c`` the identity or the square. The target of inference is the
*marginal* arm log-odds, which we compute by Gauss-Hermite quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.random import Generator, Philox, SeedSequence
from scipy.optimize import brentq

from .errors import DomainError, NumericError
from .estimating import ConstraintSpec, expit, fourier_terms
from .trial_data import TrialDataset

__all__ = [
    "Scenario",
    "PRESETS",
    "preset",
    "preset_names",
    "generate",
    "make_rng",
    "true_beta",
    "calibrate_intercepts",
    "efficient_vcov",
    "marginal_vcov",
    "information_matrix",
]

QUAD_NODES = 64
MAX_QUAD_NODES = 256


@dataclass(frozen=True)
class Scenario:
    """Two-arm data-generating process.

    Attributes
    ----------
    id : str
        One of ``linear_x``, ``quadratic_x``, ``two_covariates``.
    sigma : tuple of float
        Standard deviation of each covariate.
    intercepts : tuple of float
        ``(a00, a01)``, conditional log-odds intercept per arm.
    slopes : tuple of tuple
        ``slopes[c] = (a_c0, a_c1)``, coefficient of covariate ``c`` per arm.
    quadratic : tuple of bool
        Whether covariate ``c`` enters the logit squared.
    """

    id: str
    sigma: tuple
    intercepts: tuple = (0.3, 1.0)
    slopes: tuple = ((1.0, 1.5),)
    quadratic: tuple = (False,)
    n: int = 200
    pi: tuple = (0.5, 0.5)
    name: str = ""
    specs: tuple = field(default=(), compare=False)
    target_beta: tuple | None = None

    def __post_init__(self):
        d = len(self.sigma)
        if not (len(self.slopes) == len(self.quadratic) == d):
            raise DomainError("sigma, slopes and quadratic must have one entry per covariate")
        if len(self.intercepts) != 2 or len(self.pi) != 2:
            raise DomainError("scenarios have exactly two arms")
        if any(s <= 0 for s in self.sigma):
            raise DomainError("covariate standard deviations must be positive")
        if abs(sum(self.pi) - 1.0) > 1e-12:
            raise DomainError("allocation probabilities must sum to 1")

    @property
    def d(self) -> int:
        return len(self.sigma)

    def conditional_logit(self, x: np.ndarray, arm: int) -> np.ndarray:
        """Linear predictor for rows of ``x`` (shape (..., d)) in ``arm``."""
        eta = np.full(x.shape[:-1], float(self.intercepts[arm]))
        for c in range(self.d):
            t = x[..., c] ** 2 if self.quadratic[c] else x[..., c]
            eta = eta + self.slopes[c][arm] * t
        return eta


def make_rng(seed, replication: int | None = None) -> Generator:
    """Counter-based generator; replication ``r`` gets its own independent stream."""
    if isinstance(seed, SeedSequence):
        ss = seed
    elif replication is None:
        ss = SeedSequence(int(seed))
    else:
        ss = SeedSequence(int(seed), spawn_key=(int(replication),))
    return Generator(Philox(ss))


def generate(scenario: Scenario, rng_seed, replication: int | None = None) -> TrialDataset:
    """Draw one trial. The stream depends only on ``(rng_seed, replication)``."""
    rng = rng_seed if isinstance(rng_seed, Generator) else make_rng(rng_seed, replication)
    n = scenario.n
    z = (rng.random(n) < scenario.pi[1]).astype(np.int64)
    x = rng.standard_normal((n, scenario.d)) * np.asarray(scenario.sigma)
    eta = np.where(z == 1, scenario.conditional_logit(x, 1), scenario.conditional_logit(x, 0))
    y = (rng.random(n) < expit(eta)).astype(float)
    return TrialDataset(y=y, z=z, x=x, pi=np.asarray(scenario.pi))


def _grid(scenario: Scenario, nodes: int):
    t, w = np.polynomial.hermite_e.hermegauss(nodes)
    w = w / w.sum()
    axes = [t * s for s in scenario.sigma]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, scenario.d)
    wts = w
    for _ in range(scenario.d - 1):
        wts = np.multiply.outer(wts, w)
    return mesh, wts.ravel()


def _conditional_means(scenario: Scenario, nodes: int = QUAD_NODES):
    x, w = _grid(scenario, nodes)
    m0 = expit(scenario.conditional_logit(x, 0))
    m1 = expit(scenario.conditional_logit(x, 1))
    return m0, m1, w


def _arm_probabilities(scenario: Scenario, nodes: int = QUAD_NODES):
    m0, m1, w = _conditional_means(scenario, nodes)
    return float(w @ m0), float(w @ m1)


def _logit(p):
    return math.log(p) - math.log1p(-p)


def _beta_from(p0, p1):
    return np.array([_logit(p0), _logit(p1) - _logit(p0)])


def true_beta(scenario: Scenario, nodes: int = QUAD_NODES,
              max_nodes: int = MAX_QUAD_NODES) -> np.ndarray:
    """Marginal log-odds parameters ``(logit p0, logit p1 - logit p0)``.

    Starts from ``nodes`` Gauss-Hermite points per dimension and doubles
    until two successive rules agree to 1e-6. Raises NumericError if that
    has not happened by ``max_nodes``.
    """
    beta = _beta_from(*_arm_probabilities(scenario, nodes))
    while nodes < max_nodes:
        nodes *= 2
        finer = _beta_from(*_arm_probabilities(scenario, nodes))
        if np.max(np.abs(finer - beta)) <= 1e-6:
            return finer
        beta = finer
    raise NumericError(f"quadrature not converged at {max_nodes} nodes per dimension")


def calibrate_intercepts(scenario: Scenario, beta) -> Scenario:
    """Return ``scenario`` with intercepts solved so that ``true_beta`` equals ``beta``.

    Slopes are kept. Arm 0's intercept fixes ``beta[0]``; arm 1's then fixes
    the contrast.
    """
    targets = (beta[0], beta[0] + beta[1])
    new = list(scenario.intercepts)
    for arm in (0, 1):
        def f(a, arm=arm):
            trial = list(new)
            trial[arm] = a
            p = _arm_probabilities(replace(scenario, intercepts=tuple(trial)),
                                   MAX_QUAD_NODES)[arm]
            return _logit(p) - targets[arm]

        new[arm] = brentq(f, -20.0, 20.0, xtol=1e-14, rtol=1e-14)
    return replace(scenario, intercepts=tuple(new))


def efficient_vcov(scenario: Scenario, nodes: int = MAX_QUAD_NODES) -> np.ndarray:
    """Per-subject asymptotic covariance of the efficiently adjusted estimator.

    Computed from the efficient influence function of the arm
    probabilities, ``1{Z=g}/pi_g (Y - m_g(X)) + m_g(X) - p_g``, pushed
    through the logit contrasts. Divide by ``n`` for standard errors.
    """
    m0, m1, w = _conditional_means(scenario, nodes)
    p0, p1 = w @ m0, w @ m1
    pi0, pi1 = scenario.pi
    d0, d1 = 1.0 / (p0 * (1 - p0)), 1.0 / (p1 * (1 - p1))
    e0 = w @ (m0 * (1 - m0)) / pi0 + w @ (m0 - p0) ** 2
    e1 = w @ (m1 * (1 - m1)) / pi1 + w @ (m1 - p1) ** 2
    c01 = w @ ((m0 - p0) * (m1 - p1))
    v11 = d0 * d0 * e0
    v22 = d1 * d1 * e1 + d0 * d0 * e0 - 2 * d0 * d1 * c01
    v12 = d0 * d1 * c01 - d0 * d0 * e0
    return np.array([[v11, v12], [v12, v22]])


def marginal_vcov(scenario: Scenario, nodes: int = MAX_QUAD_NODES) -> np.ndarray:
    """Per-subject asymptotic covariance of the unadjusted arm log-odds fit."""
    p0, p1 = _arm_probabilities(scenario, nodes)
    pi0, pi1 = scenario.pi
    a0 = 1.0 / (pi0 * p0 * (1 - p0))
    a1 = 1.0 / (pi1 * p1 * (1 - p1))
    return np.array([[a0, -a0], [-a0, a0 + a1]])


def information_matrix(scenario: Scenario, efficient: bool = True) -> np.ndarray:
    """Per-subject information for the local-power noncentrality ``h' A h``."""
    v = efficient_vcov(scenario) if efficient else marginal_vcov(scenario)
    return np.linalg.inv(v)


# ---------------------------------------------------------------------------
# presets

def _marginal():
    return ConstraintSpec("logit", (), label="marginal")


def _fourier(n_pairs=1, covariates=(0,)):
    terms = fourier_terms(n_pairs, covariates=covariates)
    label = f"{2 + len(terms)} Fourier"
    return ConstraintSpec("logit", terms, label=label)


def _one_cov(sd, quad, specs):
    kind = "quadratic_x" if quad else "linear_x"
    return Scenario(kind, (sd,), (0.3, 1.0), ((1.0, 1.5),), (quad,), specs=specs)


def _two_cov(sd1, sd2, quad1, quad2):
    return Scenario("two_covariates", (sd1, sd2), (0.3, 1.0), ((1.0, 1.5), (2.0, 1.5)),
                    (quad1, quad2), specs=(_marginal(), _fourier(1, (0, 1))))


def _build_presets():
    basic = (_marginal(), _fourier(1))
    out = {
        "table1-sd05": _one_cov(0.5, False, basic),
        "table1-sd1": _one_cov(1.0, False, basic),
        "table1-sd2": _one_cov(2.0, False, basic),
        "table1-sd2-extended": _one_cov(2.0, False, (_marginal(),) + tuple(
            _fourier(k) for k in (1, 2, 3, 4))),
        "table2-sd05": _one_cov(0.5, True, basic),
        "table2-sd1": _one_cov(1.0, True, basic),
        "table3-a": _two_cov(1.0, 2.0, False, False),
        "table3-b": _two_cov(1.0, 2.0, True, False),
        "table3-c": _two_cov(0.5, 1.0, True, True),
    }
    # power tables: same slopes, intercepts shifted to the tabulated true values
    power = {
        "table4-sd05": ("table1-sd05", (0.2125, 0.8304)),
        "table4-sd1": ("table1-sd1", (0.1379, 0.8207)),
        "table4-sd2": ("table1-sd2", (0.0386, 0.8182)),
        "table5-sd05": ("table2-sd05", (0.8511, 1.0599)),
        "table5-sd1": ("table2-sd1", (0.9662, 0.9359)),
        "table6-a": ("table3-a", (0.0694, 0.8461)),
        "table6-b": ("table3-b", (0.2468, 0.7012)),
        "table6-c": ("table3-c", (1.1701, 0.8342)),
    }
    for name, (base, target) in power.items():
        out[name] = replace(out[base], target_beta=target)
    return {k: replace(v, name=k) for k, v in out.items()}


PRESETS = _build_presets()


def preset_names():
    return sorted(PRESETS)


def preset(name: str, n: int | None = None) -> Scenario:
    """Named scenario; power presets are calibrated to their target betas on first use."""
    if name not in PRESETS:
        raise DomainError(f"unknown preset {name!r}; choose from {', '.join(preset_names())}")
    sc = PRESETS[name]
    if sc.target_beta is not None:
        sc = _calibrated(name)
    if n is not None:
        sc = replace(sc, n=int(n))
    return sc


_CALIBRATED: dict = {}


def _calibrated(name):
    if name not in _CALIBRATED:
        base = PRESETS[name]
        _CALIBRATED[name] = calibrate_intercepts(base, base.target_beta)
    return _CALIBRATED[name]
