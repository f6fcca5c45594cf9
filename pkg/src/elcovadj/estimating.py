"""Stacked constraint vectors: marginal score equations plus auxiliary terms.

The marginal part is the score of the saturated arm model on either the
mean (identity link) or log-odds (logit link) scale. Auxiliary terms have
the form ``(1{Z=k} - pi_k) * h(X)`` and have mean zero under randomization
whatever the outcome model, so they carry covariate information without
any modelling assumption.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DomainError, SpecError
from .trial_data import EmpiricalCdf, TrialDataset

logger = logging.getLogger(__name__)

__all__ = [
    "AuxTerm",
    "ConstraintSpec",
    "EstimatingFunctionSet",
    "BASES",
    "expit",
    "design_matrix",
    "marginal_equations",
    "auxiliary_equations",
    "auxiliary_block",
    "assemble",
    "legendre",
    "parse_term",
    "fourier_terms",
]

BASES = ("constant", "fourier_sin", "fourier_cos", "legendre", "power", "raw_power")
LINKS = ("identity", "logit")

# descriptor prefixes used by the config grammar
_PREFIX = {
    "const": "constant",
    "fsin": "fourier_sin",
    "fcos": "fourier_cos",
    "leg": "legendre",
    "pow": "power",
    "xpow": "raw_power",
}
_PREFIX_OF = {v: k for k, v in _PREFIX.items()}


def expit(u):
    u = np.asarray(u, dtype=float)
    out = np.empty_like(u)
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    e = np.exp(u[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass(frozen=True)
class AuxTerm:
    """One auxiliary constraint ``(1{Z=arm} - pi_arm) * h_index(covariate)``."""

    arm: int
    basis: str = "constant"
    index: int = 1
    covariate: int = 0

    def __post_init__(self):
        if self.basis not in BASES:
            raise SpecError(f"unknown basis {self.basis!r}; choose from {BASES}")
        if self.arm < 1:
            raise SpecError(f"auxiliary term arm must be >= 1, got {self.arm}")
        if self.basis == "constant":
            # index and covariate are ignored; normalize so duplicates compare equal
            object.__setattr__(self, "index", 0)
            object.__setattr__(self, "covariate", 0)
        elif self.index < 1:
            raise SpecError(f"basis index must be positive, got {self.index}")

    @property
    def key(self):
        return (self.arm, self.basis, self.index, self.covariate)

    def descriptor(self) -> str:
        if self.basis == "constant":
            return f"const@{self.arm}"
        return f"{_PREFIX_OF[self.basis]}{self.index}@{self.arm}:x{self.covariate}"

    def __str__(self):
        return self.descriptor()


_TERM_RE = re.compile(
    r"^(?P<basis>const|fsin|fcos|leg|xpow|pow)(?P<index>\d*)"
    r"@(?P<arm>\*|\d+(?:\.\.\d+)?)(?::x?(?P<cov>\d+))?$"
)


def parse_term(text: str, k_arms: int | None = None) -> list[AuxTerm]:
    """Parse a descriptor like ``fsin1@1:x0`` into terms.

    The arm may be a single label, a range ``1..3`` or ``*`` (all treatment
    arms, which needs ``k_arms``). Returns a list because ranges expand.
    """
    m = _TERM_RE.match(text.strip())
    if not m:
        raise SpecError(f"cannot parse auxiliary term {text!r}; "
                        "expected <basis><index>@<arm>[:x<covariate>]")
    basis = _PREFIX[m["basis"]]
    if basis != "constant" and not m["index"]:
        raise SpecError(f"{text!r}: basis {m['basis']!r} needs an index, e.g. {m['basis']}1")
    if basis != "constant" and m["cov"] is None:
        raise SpecError(f"{text!r}: basis {m['basis']!r} needs a covariate, e.g. :x0")
    arm = m["arm"]
    if arm == "*":
        if k_arms is None:
            raise SpecError(f"{text!r}: '*' arm needs the number of arms")
        arms = range(1, k_arms)
    elif ".." in arm:
        lo, hi = (int(a) for a in arm.split(".."))
        arms = range(lo, hi + 1)
    else:
        arms = [int(arm)]
    index = int(m["index"]) if m["index"] else 1
    cov = int(m["cov"]) if m["cov"] is not None else 0
    return [AuxTerm(arm=a, basis=basis, index=index, covariate=cov) for a in arms]


@dataclass(frozen=True)
class ConstraintSpec:
    """Declarative recipe for the constraint vector.

    Attributes
    ----------
    link : {"identity", "logit"}
        Scale of the marginal treatment contrasts.
    aux_terms : tuple of AuxTerm
        Auxiliary zero-mean constraints, in column order.
    standardize : bool
        Divide each auxiliary column by its sample root-mean-square. This
        leaves estimates unchanged and only improves conditioning.
    """

    link: str = "logit"
    aux_terms: tuple = ()
    standardize: bool = True
    label: str = ""

    def __post_init__(self):
        if self.link not in LINKS:
            raise SpecError(f"unknown link {self.link!r}; choose from {LINKS}")
        terms = []
        for t in self.aux_terms:
            if isinstance(t, str):
                terms.extend(parse_term(t))
            else:
                terms.append(t)
        seen = set()
        for t in terms:
            if t.key in seen:
                raise SpecError(f"duplicated auxiliary term {t.descriptor()}")
            seen.add(t.key)
        object.__setattr__(self, "aux_terms", tuple(terms))
        if not self.label:
            object.__setattr__(self, "label", "marginal" if not terms else
                               f"{len(terms)} aux")

    def r(self, k_arms: int) -> int:
        return k_arms + len(self.aux_terms)

    def check(self, data: TrialDataset) -> bool:
        """Validate against ``data``; returns the r^3 >= n growth warning flag."""
        if self.link == "logit" and not data.is_binary:
            raise DomainError("logit link requires a 0/1 outcome")
        for t in self.aux_terms:
            if t.arm >= data.k_arms:
                raise SpecError(f"{t.descriptor()}: arm {t.arm} outside 1..{data.k_arms - 1}")
            if t.basis != "constant":
                if data.d == 0:
                    raise SpecError(f"{t.descriptor()}: dataset has no covariates")
                if t.covariate >= data.d:
                    raise SpecError(f"{t.descriptor()}: covariate {t.covariate} "
                                    f"out of range (d={data.d})")
        r = self.r(data.k_arms)
        if r > data.n - 1:
            raise SpecError(f"{r} constraints need at least {r + 1} subjects, have {data.n}")
        too_many = r ** 3 >= data.n
        if too_many:
            logger.info("r=%d constraints with n=%d: r^3 >= n, asymptotics may be poor",
                        r, data.n)
        return too_many


def fourier_terms(n_pairs: int, covariates: Sequence[int] = (0,), arms: Sequence[int] = (1,)):
    """The standard recipe: per arm a constant plus sin/cos pairs per covariate."""
    terms = []
    for a in arms:
        terms.append(AuxTerm(a, "constant"))
        for c in covariates:
            for j in range(1, n_pairs + 1):
                terms.append(AuxTerm(a, "fourier_sin", j, c))
                terms.append(AuxTerm(a, "fourier_cos", j, c))
    return tuple(terms)


@dataclass(frozen=True, eq=False)
class EstimatingFunctionSet:
    """Constraint values and derivatives at one parameter value.

    ``dgdbeta[i, j, :]`` is the gradient of constraint ``j`` for subject
    ``i``; only the first ``q`` constraints depend on beta. Second
    derivatives of the marginal block have the rank-one form
    ``curvature[i] * d_i d_i^T`` in each score component's design weight,
    i.e. ``d2 g[i, a] / d beta d beta^T = curvature[i] * design[i, a] *
    outer(design[i], design[i])``.
    """

    g: np.ndarray
    dgdbeta: np.ndarray
    design: np.ndarray
    curvature: np.ndarray
    aux_scale: np.ndarray = field(default_factory=lambda: np.zeros(0))
    warn_growth: bool = False

    @property
    def n(self) -> int:
        return self.g.shape[0]

    @property
    def r(self) -> int:
        return self.g.shape[1]

    @property
    def q(self) -> int:
        return self.design.shape[1]


def design_matrix(data: TrialDataset) -> np.ndarray:
    """Rows ``(1, 1{z=1}, ..., 1{z=K})``."""
    return np.hstack([np.ones((data.n, 1)), data.arm_indicators()])


def _linear_predictor(design, beta):
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (design.shape[1],):
        raise DomainError(f"beta must have length {design.shape[1]}, got shape {beta.shape}")
    if not np.all(np.isfinite(beta)):
        raise DomainError(f"beta must be finite, got {beta}")
    return design @ beta


def _marginal_parts(data, link, beta, design=None):
    if design is None:
        design = design_matrix(data)
    eta = _linear_predictor(design, beta)
    if link == "identity":
        resid = data.y - eta
        slope = np.ones_like(eta)
        curv = np.zeros_like(eta)
    elif link == "logit":
        if not data.is_binary:
            raise DomainError("logit link requires a 0/1 outcome")
        mu = expit(eta)
        resid = data.y - mu
        slope = mu * (1.0 - mu)
        curv = -slope * (1.0 - 2.0 * mu)
    else:
        raise SpecError(f"unknown link {link!r}")
    return design, resid, slope, curv


def marginal_equations(data: TrialDataset, link: str, beta) -> np.ndarray:
    """Per-subject score rows ``d_i * (y_i - mu(d_i . beta))``, shape (n, K+1)."""
    design, resid, _, _ = _marginal_parts(data, link, beta)
    return design * resid[:, None]


def legendre(j: int, u):
    """Degree-``j`` Legendre polynomial by the three-term recurrence."""
    u = np.asarray(u, dtype=float)
    p_prev, p = np.ones_like(u), u.copy()
    if j == 0:
        return p_prev
    for k in range(1, j):
        p_prev, p = p, ((2 * k + 1) * u * p - k * p_prev) / (k + 1)
    return p


def _basis_values(term: AuxTerm, data: TrialDataset, cdfs: dict) -> np.ndarray:
    if term.basis == "constant":
        return np.ones(data.n)
    col = data.x[:, term.covariate]
    if term.basis == "raw_power":
        return col ** term.index
    if term.covariate not in cdfs:
        cdfs[term.covariate] = EmpiricalCdf(col).evaluate(col)
    f = cdfs[term.covariate]
    j = term.index
    if term.basis == "fourier_sin":
        return np.sqrt(2.0) * np.sin(2.0 * np.pi * j * f)
    if term.basis == "fourier_cos":
        return np.sqrt(2.0) * np.cos(2.0 * np.pi * j * f)
    if term.basis == "legendre":
        return legendre(j, 2.0 * f - 1.0)
    return (2.0 * f - 1.0) ** j


def auxiliary_equations(data: TrialDataset, spec: ConstraintSpec) -> np.ndarray:
    """Unscaled auxiliary columns ``(1{z=k} - pi_k) h(x)``, shape (n, r - q)."""
    for t in spec.aux_terms:
        if t.basis != "constant" and data.d == 0:
            raise SpecError(f"{t.descriptor()}: dataset has no covariates")
        if t.basis != "constant" and t.covariate >= data.d:
            raise SpecError(f"{t.descriptor()}: covariate {t.covariate} out of range")
        if t.arm >= data.k_arms:
            raise SpecError(f"{t.descriptor()}: arm {t.arm} outside 1..{data.k_arms - 1}")
    cdfs: dict = {}
    cols = np.empty((data.n, len(spec.aux_terms)))
    for j, t in enumerate(spec.aux_terms):
        centred = (data.z == t.arm) - data.pi[t.arm]
        cols[:, j] = centred * _basis_values(t, data, cdfs)
    return cols


def auxiliary_block(data: TrialDataset, spec: ConstraintSpec):
    """Auxiliary columns ready for stacking, plus the per-column divisors.

    Raises SpecError when a column is identically zero (for instance a
    non-constant basis on a constant covariate).
    """
    aux = auxiliary_equations(data, spec)
    rms = np.sqrt(np.mean(aux ** 2, axis=0)) if aux.size else np.zeros(0)
    for j, t in enumerate(spec.aux_terms):
        # sin(2 pi) is 2e-16, not 0, so compare against roundoff
        if rms[j] <= 1e-12:
            raise SpecError(f"auxiliary term {t.descriptor()} is identically zero")
    if spec.standardize and aux.size:
        aux = aux / rms
        scale = rms
    else:
        scale = np.ones(aux.shape[1])
    aux.setflags(write=False)
    return aux, scale


def assemble(data: TrialDataset, spec: ConstraintSpec, beta, aux=None,
             design=None) -> EstimatingFunctionSet:
    """Evaluate the full constraint set at ``beta``.

    ``aux`` (as returned by :func:`auxiliary_block`) may be passed in to
    skip recomputing the beta-independent columns.
    """
    warn = spec.check(data)
    if aux is None:
        aux_cols, scale = auxiliary_block(data, spec)
    else:
        aux_cols, scale = aux
    design, resid, slope, curv = _marginal_parts(data, spec.link, beta, design)
    n, q = design.shape
    r = q + aux_cols.shape[1]
    g = np.empty((n, r))
    g[:, :q] = design * resid[:, None]
    g[:, q:] = aux_cols
    dg = np.zeros((n, r, q))
    dg[:, :q, :] = -slope[:, None, None] * design[:, :, None] * design[:, None, :]
    return EstimatingFunctionSet(g=g, dgdbeta=dg, design=design, curvature=curv,
                                 aux_scale=scale, warn_growth=warn)
