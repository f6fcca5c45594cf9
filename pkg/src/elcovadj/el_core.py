"""Empirical likelihood engine.

For fixed constraint values ``g_i`` the weights maximizing ``sum log(n p_i)``
subject to ``sum p_i g_i = 0`` are ``p_i = 1 / (n (1 + lam' g_i))`` where
``lam`` maximizes the concave dual ``R(lam) = sum log(1 + lam' g_i)``. The
dual is solved by damped Newton on Owen's log-star surrogate, which agrees
with ``log`` above ``1/n`` and continues it quadratically below, so the
objective is finite everywhere and a hull violation shows up as a
diverging multiplier instead of a domain error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, InputError
from .estimating import (
    ConstraintSpec,
    EstimatingFunctionSet,
    assemble,
    auxiliary_block,
    design_matrix,
)
from .trial_data import TrialDataset

__all__ = [
    "ELSolution",
    "ProfileObjective",
    "log_star",
    "solve_lambda",
    "profile_loglik",
    "profile_gradient",
    "profile_hessian",
]

TOL = 1e-10
MAX_ITER = 100
DIVERGENCE_FACTOR = 1e3


def log_star(z, eps):
    """Value, first and second derivative of the log-star function.

    Works elementwise on arrays. Below ``eps`` the logarithm is replaced by
    the quadratic matching it to second order at ``eps``.
    """
    z = np.asarray(z, dtype=float)
    lo = z < eps
    zs = np.where(lo, eps, z)
    val = np.log(zs)
    d1 = 1.0 / zs
    d2 = -d1 * d1
    if np.any(lo):
        t = z / eps
        val = np.where(lo, np.log(eps) - 1.5 + 2.0 * t - 0.5 * t * t, val)
        d1 = np.where(lo, (2.0 - t) / eps, d1)
        d2 = np.where(lo, -1.0 / (eps * eps), d2)
    if z.ndim == 0:
        return float(val), float(d1), float(d2)
    return val, d1, d2


@dataclass(frozen=True, eq=False)
class ELSolution:
    """Inner solution at one beta.

    Attributes
    ----------
    lam : ndarray, shape (r,)
        Lagrange multiplier.
    weights : ndarray, shape (n,)
        ``1 / (n (1 + lam' g_i))``.
    loglik : float
        Profile log EL ratio ``sum log(1 + lam' g_i)``; nonnegative.
    converged, feasible : bool
        ``feasible`` is False when zero is (numerically) outside the convex
        hull of the ``g_i``.
    history : tuple of float
        Dual objective after each accepted Newton step.
    """

    lam: np.ndarray
    weights: np.ndarray
    loglik: float
    converged: bool
    iterations: int
    grad_norm: float
    feasible: bool
    history: tuple = ()

    @property
    def ok(self) -> bool:
        return self.converged and self.feasible


def _dual(g, lam, eps):
    u = 1.0 + g @ lam
    val, d1, d2 = log_star(u, eps)
    return u, float(val.sum()), d1, d2


def solve_lambda(g, tol: float = TOL, max_iter: int = MAX_ITER, lam0=None) -> ELSolution:
    """Maximize the log-star dual over the multiplier.

    Parameters
    ----------
    g : ndarray, shape (n, r)
        Constraint values, one row per subject.
    tol : float
        Convergence threshold on the dual gradient norm.
    max_iter : int
        Newton iteration cap; on exhaustion the solution is returned with
        ``converged=False``.
    lam0 : ndarray, optional
        Warm start. Falls back to zero if it is not at least as good.

    Returns
    -------
    ELSolution
    """
    g = np.asarray(g, dtype=float)
    if g.ndim == 1:
        g = g[:, None]
    if not np.all(np.isfinite(g)):
        raise InputError("constraint matrix contains NaN or infinite values")
    n, r = g.shape
    if r >= n:
        raise InputError(f"need fewer constraints than subjects (r={r}, n={n})")
    eps = 1.0 / n
    cap = DIVERGENCE_FACTOR * np.sqrt(r) * n
    gscale = 1.0 + float(np.sqrt((g * g).sum(axis=1).max()))

    lam = np.zeros(r)
    u, R, d1, d2 = _dual(g, lam, eps)
    if lam0 is not None and np.all(np.isfinite(lam0)):
        lam_w = np.asarray(lam0, dtype=float)
        uw, Rw, d1w, d2w = _dual(g, lam_w, eps)
        if Rw >= R:
            lam, u, R, d1, d2 = lam_w, uw, Rw, d1w, d2w

    history = [R]
    converged = False
    diverged = False
    it = 0
    grad = g.T @ d1
    gn = float(np.linalg.norm(grad))
    while it < max_iter:
        if gn <= tol:
            converged = True
            break
        hess = (g * (-d2)[:, None]).T @ g
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        if not np.all(np.isfinite(step)):
            diverged = True
            break
        decrement = float(grad @ step)
        t = 1.0
        accepted = False
        for _ in range(60):
            lam_t = lam + t * step
            u_t, R_t, d1_t, d2_t = _dual(g, lam_t, eps)
            # below roundoff the comparison is meaningless; trust the quadratic model
            if R_t >= R or (t == 1.0 and decrement <= 1e-12 * (1.0 + abs(R))
                            and np.all(u_t >= eps)):
                accepted = True
                break
            t *= 0.5
        it += 1
        if not accepted:
            # no representable ascent left; accept if the gradient is at roundoff level
            converged = gn <= 1e-8 * n * gscale
            break
        lam, u, R, d1, d2 = lam_t, u_t, R_t, d1_t, d2_t
        history.append(R)
        grad = g.T @ d1
        gn = float(np.linalg.norm(grad))
        if np.linalg.norm(lam) > cap:
            diverged = True
            break
        if decrement < 1e-30 and gn <= 1e-8 * n * gscale:
            converged = True
            break
    else:
        converged = gn <= tol

    feasible = (not diverged) and converged and bool(np.all(u >= eps))
    if diverged:
        converged = False
    weights = 1.0 / (n * u)
    loglik = float(np.log(u).sum()) if feasible else R
    if -1e-10 < loglik < 0.0:
        # lam = 0 is admissible, so the exact optimum is >= 0
        loglik = 0.0
    return ELSolution(lam=lam, weights=weights, loglik=loglik, converged=converged,
                      iterations=it, grad_norm=gn, feasible=feasible,
                      history=tuple(history))


class ProfileObjective:
    """Profile log EL ratio ``l(beta)`` for one dataset and recipe.

    Caches the beta-independent auxiliary columns and the last multiplier
    (used as a warm start). One instance per fitting call; instances are
    not shared across threads.
    """

    def __init__(self, data: TrialDataset, spec: ConstraintSpec):
        self.data = data
        self.spec = spec
        spec.check(data)
        self.aux = auxiliary_block(data, spec)
        self.design = design_matrix(data)
        self.q = self.design.shape[1]
        self.r = self.q + self.aux[0].shape[1]
        self._lam = None
        self.evaluations = 0

    def assemble(self, beta) -> EstimatingFunctionSet:
        return assemble(self.data, self.spec, beta, aux=self.aux, design=self.design)

    def solve(self, beta, warm: bool = True):
        efs = self.assemble(beta)
        sol = solve_lambda(efs.g, lam0=self._lam if warm else None)
        self.evaluations += 1
        if sol.ok:
            self._lam = sol.lam
        return sol, efs

    def value(self, beta) -> float:
        """``l(beta)``, or ``inf`` where the inner problem is infeasible."""
        sol, _ = self.solve(beta)
        return sol.loglik if sol.ok else np.inf

    def reset(self):
        self._lam = None


def _gradient(efs: EstimatingFunctionSet, sol: ELSolution):
    lam = sol.lam
    u = 1.0 + efs.g @ lam
    jl = np.einsum("irq,r->iq", efs.dgdbeta, lam)
    return (jl / u[:, None]).sum(axis=0)


def _hessian(efs: EstimatingFunctionSet, sol: ELSolution):
    g, lam = efs.g, sol.lam
    q = efs.q
    u = 1.0 + g @ lam
    w1 = 1.0 / u
    w2 = w1 * w1
    jl = np.einsum("irq,r->iq", efs.dgdbeta, lam)
    M = (g * w2[:, None]).T @ g
    B = np.einsum("i,irq->rq", w1, efs.dgdbeta) - (g * w2[:, None]).T @ jl
    d = efs.design
    lam_d = d @ lam[:q]
    gbb = (d * (w1 * efs.curvature * lam_d)[:, None]).T @ d - (jl * w2[:, None]).T @ jl
    try:
        mb = np.linalg.solve(M, B)
    except np.linalg.LinAlgError:
        mb = np.linalg.lstsq(M, B, rcond=None)[0]
    H = gbb + B.T @ mb
    return 0.5 * (H + H.T)


def profile_loglik(data: TrialDataset, spec: ConstraintSpec, beta) -> ELSolution:
    """Inner EL solution at ``beta``."""
    sol, _ = ProfileObjective(data, spec).solve(beta)
    return sol


def profile_gradient(data: TrialDataset, spec: ConstraintSpec, beta,
                     solution: ELSolution) -> np.ndarray:
    """Gradient of ``l(beta)`` by the envelope theorem.

    The derivative of the optimal multiplier drops out because the dual
    gradient vanishes at ``solution.lam``.
    """
    if not solution.ok:
        raise ContractError("profile gradient needs a converged, feasible inner solution")
    efs = assemble(data, spec, beta)
    return _gradient(efs, solution)


def profile_hessian(data: TrialDataset, spec: ConstraintSpec, beta,
                    solution: ELSolution) -> np.ndarray:
    """Exact Hessian of ``l(beta)``, including the multiplier's response to beta."""
    if not solution.ok:
        raise ContractError("profile Hessian needs a converged, feasible inner solution")
    efs = assemble(data, spec, beta)
    return _hessian(efs, solution)
