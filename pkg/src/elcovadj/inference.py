"""Maximum EL estimation, sandwich variance and likelihood-ratio tests.

Parameter indices are 0-based: for two arms ``beta[0]`` is the control
log-odds (or mean) and ``beta[1]`` the treatment contrast.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .distributions import (
    chi2_quantile,
    chi2_sf,
    noncentral_chi2_sf,
    normal_quantile,
)
from .el_core import ELSolution, ProfileObjective, _gradient, _hessian
from .errors import ContractError, DomainError, FeasibilityError, NumericError
from .estimating import ConstraintSpec
from .trial_data import TrialDataset

logger = logging.getLogger(__name__)

__all__ = [
    "MeleResult",
    "TestResult",
    "initial_beta",
    "separated_arms",
    "sandwich_vcov",
    "fit_mele",
    "lr_test_full",
    "lr_test_profile",
    "wald_interval",
    "power_analytic",
]

GRAD_TOL = 1e-6
STEP_TOL = 1e-9
MAX_OUTER = 200
LOGIT_CLIP = 10.0
N_PERTURB = 5
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True, eq=False)
class MeleResult:
    """Fitted maximum EL estimate.

    ``vcov`` is on the per-sample scale, so ``sqrt(diag(vcov))`` are the
    standard errors of ``beta_hat``.
    """

    beta_hat: np.ndarray
    vcov: np.ndarray
    loglik_at_opt: float
    inner_diag: ELSolution
    outer_iterations: int
    converged: bool
    gradient: np.ndarray
    fixed: Mapping[int, float] = field(default_factory=dict)
    separation: bool = False

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.vcov))


@dataclass(frozen=True)
class TestResult:
    statistic: float
    df: int
    p_value: float
    kind: str
    noncentrality_used: float | None = None
    feasible: bool = True

    __test__ = False  # not a pytest class


def initial_beta(data: TrialDataset, link: str) -> np.ndarray:
    """Closed-form saturated fit: arm means or clipped arm log-odds."""
    k = data.k_arms
    counts = np.bincount(data.z, minlength=k)
    if np.any(counts == 0):
        empty = int(np.flatnonzero(counts == 0)[0])
        raise DomainError(f"arm {empty} has no subjects")
    means = np.bincount(data.z, weights=data.y, minlength=k) / counts
    if link == "logit":
        with np.errstate(divide="ignore"):
            eta = np.log(means) - np.log1p(-means)
        eta = np.clip(eta, -LOGIT_CLIP, LOGIT_CLIP)
    else:
        eta = means
    beta = eta.copy()
    beta[1:] = eta[1:] - eta[0]
    return beta


def separated_arms(data: TrialDataset) -> list:
    """Arms whose outcomes are all 0 or all 1 (log-odds at infinity)."""
    counts = np.bincount(data.z, minlength=data.k_arms)
    events = np.bincount(data.z, weights=data.y, minlength=data.k_arms)
    return [g for g in range(data.k_arms) if events[g] in (0, counts[g])]


def sandwich_vcov(efs) -> np.ndarray:
    """``(D' S^-1 D)^-1 / n`` with ``D`` the mean Jacobian, ``S`` the mean outer product."""
    n = efs.n
    D = efs.dgdbeta.mean(axis=0)
    S = efs.g.T @ efs.g / n
    try:
        sd = np.linalg.solve(S, D)
        info = D.T @ sd
        V = np.linalg.inv(info) / n
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"sandwich variance is singular: {exc}") from exc
    return 0.5 * (V + V.T)


class _Outer:
    """Safeguarded Newton iteration on the profile objective over free indices."""

    def __init__(self, obj: ProfileObjective, free: np.ndarray, base: np.ndarray):
        self.obj = obj
        self.free = free
        self.base = base

    def full(self, theta):
        b = self.base.copy()
        b[self.free] = theta
        return b

    def evaluate(self, theta):
        sol, efs = self.obj.solve(self.full(theta))
        val = sol.loglik if sol.ok else np.inf
        return val, sol, efs

    def golden(self, theta, val, radius):
        """Coordinate-wise golden-section search, used when the line search stalls."""
        theta = theta.copy()
        improved = False
        for j in range(theta.size):
            lo, hi = theta[j] - radius, theta[j] + radius

            def f(t):
                th = theta.copy()
                th[j] = t
                return self.evaluate(th)[0]

            a, b = lo, hi
            c = b - _GOLDEN * (b - a)
            d = a + _GOLDEN * (b - a)
            fc, fd = f(c), f(d)
            for _ in range(60):
                if b - a < 1e-10:
                    break
                if fc < fd:
                    b, d, fd = d, c, fc
                    c = b - _GOLDEN * (b - a)
                    fc = f(c)
                else:
                    a, c, fc = c, d, fd
                    d = a + _GOLDEN * (b - a)
                    fd = f(d)
            t = 0.5 * (a + b)
            ft = f(t)
            if ft < val:
                theta[j] = t
                val = ft
                improved = True
        return theta, improved


def _newton_step(G, H):
    w, V = np.linalg.eigh(H)
    wmax = max(np.abs(w).max(), 1e-300)
    w = np.maximum(np.abs(w), 1e-10 * wmax)
    return -V @ ((V.T @ G) / w)


def fit_mele(data: TrialDataset, spec: ConstraintSpec, init=None,
             fixed: Mapping[int, float] | None = None, seed: int = 0,
             max_iter: int = MAX_OUTER) -> MeleResult:
    """Minimize the profile log EL ratio over beta.

    Parameters
    ----------
    init : array_like, optional
        Starting value; defaults to :func:`initial_beta`.
    fixed : mapping, optional
        ``{index: value}`` pins components; the rest are optimized. Used by
        the profile test.
    seed : int
        Seed for the random perturbations tried when ``init`` is infeasible.

    Raises
    ------
    FeasibilityError
        If neither ``init`` nor any of five random perturbations of it is
        feasible.
    """
    obj = ProfileObjective(data, spec)
    q = obj.q
    beta0 = initial_beta(data, spec.link) if init is None else np.array(init, dtype=float)
    if beta0.shape != (q,):
        raise DomainError(f"init must have length {q}")
    fixed = dict(fixed or {})
    for j, v in fixed.items():
        if not 0 <= j < q:
            raise DomainError(f"fixed index {j} outside 0..{q - 1}")
        beta0[j] = v
    free = np.array([j for j in range(q) if j not in fixed], dtype=int)
    outer = _Outer(obj, free, beta0)

    theta = beta0[free].copy()
    val, sol, efs = outer.evaluate(theta)
    if not np.isfinite(val):
        rng = np.random.default_rng(seed)
        for _ in range(N_PERTURB):
            obj.reset()
            trial = theta + rng.normal(scale=0.1, size=theta.size) * (1.0 + np.abs(theta))
            val, sol, efs = outer.evaluate(trial)
            if np.isfinite(val):
                theta = trial
                break
        else:
            if spec.link == "logit" and separated_arms(data):
                warnings.warn("an arm has all-0 or all-1 outcomes; outcome is separated "
                              f"and the log-odds are clipped at +/-{LOGIT_CLIP}",
                              RuntimeWarning, stacklevel=2)
                raise FeasibilityError("no finite beta is feasible: an arm's outcomes are all "
                                       "0 or all 1 (complete separation)")
            raise FeasibilityError("zero is outside the convex hull of the constraints at the "
                                   "initial value and at every perturbation")

    radius = max(1.0, float(np.linalg.norm(theta)))
    converged = free.size == 0
    it = 0
    G = np.zeros(free.size)
    while not converged and it < max_iter:
        it += 1
        G = _gradient(efs, sol)[free]
        H = _hessian(efs, sol)[np.ix_(free, free)]
        step = _newton_step(G, H)
        gtol = GRAD_TOL * (1.0 + abs(val))
        snorm = float(np.linalg.norm(step))
        if np.linalg.norm(G) <= gtol and snorm < STEP_TOL:
            converged = True
            break
        if snorm > radius:
            step *= radius / snorm
        t = 1.0
        accepted = False
        for _ in range(40):
            v_t, s_t, e_t = outer.evaluate(theta + t * step)
            if v_t <= val:
                accepted = True
                break
            t *= 0.5
        if accepted:
            theta = theta + t * step
            val, sol, efs = v_t, s_t, e_t
            radius = max(radius, 2.0 * t * snorm) if t == 1.0 else max(t * snorm, 1e-8)
            continue
        if np.linalg.norm(G) <= gtol:
            # at the noise floor of the objective: nothing left to gain
            converged = True
            break
        theta_g, improved = outer.golden(theta, val, radius=max(radius, 1e-3))
        if not improved:
            break
        theta = theta_g
        val, sol, efs = outer.evaluate(theta)

    G = _gradient(efs, sol)[free] if free.size else np.zeros(0)
    beta_hat = outer.full(theta)
    vcov = sandwich_vcov(efs)

    separation = False
    if spec.link == "logit":
        eta = beta_hat.copy()
        eta[1:] += beta_hat[0]
        if np.any(np.abs(eta) >= LOGIT_CLIP - 1e-6):
            separation = True
            warnings.warn("an arm's fitted log-odds sits at the clip boundary "
                          f"(|eta| >= {LOGIT_CLIP}); outcome may be separated",
                          RuntimeWarning, stacklevel=2)
    return MeleResult(beta_hat=beta_hat, vcov=vcov, loglik_at_opt=val, inner_diag=sol,
                      outer_iterations=it, converged=converged, gradient=G,
                      fixed=fixed, separation=separation)


def _lr_statistic(l_restricted, l_full):
    stat = 2.0 * (l_restricted - l_full)
    if stat < 0.0:
        if stat < -1e-8:
            return None
        stat = 0.0
    return stat


def lr_test_full(data: TrialDataset, spec: ConstraintSpec, beta0,
                 fit: MeleResult | None = None) -> TestResult:
    """EL ratio test of ``beta = beta0`` (all components), chi-square with q df."""
    beta0 = np.asarray(beta0, dtype=float)
    obj = ProfileObjective(data, spec)
    q = obj.q
    sol0, _ = obj.solve(beta0, warm=False)
    if not sol0.ok:
        logger.warning("beta0=%s is infeasible for the data; reporting p=0", beta0)
        return TestResult(statistic=math.inf, df=q, p_value=0.0, kind="full_vector",
                          feasible=False)
    if fit is None:
        fit = fit_mele(data, spec)
    stat = _lr_statistic(sol0.loglik, fit.loglik_at_opt)
    if stat is None:
        fit = fit_mele(data, spec, init=beta0)
        stat = _lr_statistic(sol0.loglik, fit.loglik_at_opt)
        if stat is None:
            raise NumericError("restricted EL value below the unrestricted optimum; "
                               "outer optimization failed")
    return TestResult(statistic=stat, df=q, p_value=chi2_sf(stat, q), kind="full_vector")


def lr_test_profile(data: TrialDataset, spec: ConstraintSpec,
                    fixed: Mapping[int, float], fit: MeleResult | None = None) -> TestResult:
    """Profile EL ratio test of ``beta[j] = fixed[j]`` for the given indices.

    Nuisance components are re-optimized under the restriction; the
    statistic is chi-square with ``len(fixed)`` degrees of freedom.
    """
    q = data.k_arms
    fixed = {int(j): float(v) for j, v in fixed.items()}
    if not fixed or len(fixed) >= q + 1 or any(not 0 <= j < q for j in fixed):
        raise DomainError(f"fixed indices must be a nonempty subset of 0..{q - 1}")
    if len(fixed) == q:
        return lr_test_full(data, spec, [fixed[j] for j in range(q)], fit=fit)
    if fit is None:
        fit = fit_mele(data, spec)
    start = fit.beta_hat.copy()
    try:
        restricted = fit_mele(data, spec, init=start, fixed=fixed)
    except FeasibilityError:
        logger.warning("restriction %s is infeasible for the data; reporting p=0", fixed)
        return TestResult(statistic=math.inf, df=len(fixed), p_value=0.0,
                          kind="profile_subset", feasible=False)
    stat = _lr_statistic(restricted.loglik_at_opt, fit.loglik_at_opt)
    if stat is None:
        fit = fit_mele(data, spec, init=restricted.beta_hat)
        stat = _lr_statistic(restricted.loglik_at_opt, fit.loglik_at_opt)
        if stat is None:
            raise NumericError("restricted EL value below the unrestricted optimum; "
                               "outer optimization failed")
    return TestResult(statistic=stat, df=len(fixed), p_value=chi2_sf(stat, len(fixed)),
                      kind="profile_subset")


def wald_interval(fit: MeleResult, index: int, level: float = 0.95):
    """Two-sided Wald interval ``beta_hat[index] +/- z * se``."""
    if not fit.converged:
        raise ContractError("Wald interval requested from a non-converged fit")
    if not 0.0 < level < 1.0:
        raise DomainError(f"level must lie in (0, 1), got {level}")
    z = normal_quantile(0.5 * (1.0 + level))
    half = z * math.sqrt(fit.vcov[index, index])
    b = float(fit.beta_hat[index])
    return b - half, b + half


def power_analytic(A, h, level: float = 0.05, subset: Sequence[int] | None = None) -> float:
    """Asymptotic power of the EL ratio test under ``beta0 + h / sqrt(n)``.

    Parameters
    ----------
    A : ndarray, shape (q, q)
        Information matrix ``D' Sigma^-1 D``.
    h : ndarray, shape (q,)
        Local shift. With ``subset`` only ``h[subset]`` matters.
    level : float
        Significance level of the test.
    subset : sequence of int, optional
        Indices of the tested components; the others are nuisance and the
        noncentrality uses the Schur complement of their block.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    h = np.atleast_1d(np.asarray(h, dtype=float))
    q = A.shape[0]
    if subset is None:
        idx = np.arange(q)
        ncp = float(h @ A @ h)
    else:
        idx = np.asarray(sorted(subset), dtype=int)
        rest = np.array([j for j in range(q) if j not in set(idx.tolist())], dtype=int)
        A11 = A[np.ix_(idx, idx)]
        if rest.size:
            A12 = A[np.ix_(idx, rest)]
            A22 = A[np.ix_(rest, rest)]
            try:
                A11 = A11 - A12 @ np.linalg.solve(A22, A12.T)
            except np.linalg.LinAlgError as exc:
                raise NumericError(f"nuisance block of A is singular: {exc}") from exc
        h1 = h[idx]
        ncp = float(h1 @ A11 @ h1)
    df = idx.size
    crit = chi2_quantile(1.0 - level, df)
    return noncentral_chi2_sf(crit, df, max(ncp, 0.0))
