"""Monte Carlo experiments over simulation scenarios.

Each replication draws one trial from its own counter-based stream, fits
every recipe on that same trial, and records estimates, Wald intervals
and profile EL ratio tests. A replication in which any recipe fails is
dropped for all recipes so the comparison stays paired.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .distributions import normal_quantile
from .errors import ElCovAdjError, SpecError
from .estimating import ConstraintSpec
from .inference import fit_mele, lr_test_full, lr_test_profile, wald_interval
from .scenarios import Scenario, efficient_vcov, generate, true_beta

logger = logging.getLogger(__name__)

__all__ = ["ReportRow", "SimulationReport", "run_replication", "run_experiment",
           "DEFAULT_REPS", "FULL_REPS"]

DEFAULT_REPS = 1000
FULL_REPS = 5000
PARAM_NAMES = ("beta1", "beta2")


@dataclass
class ReportRow:
    """Summary of one (recipe, parameter) pair.

    ``mean_se`` is the average sandwich standard error over replications;
    ``bound_se`` is the semiparametric efficiency bound at this sample size.
    ``cov_prob_test`` and ``power`` come from the profile EL ratio test of
    ``beta2`` and are only filled on the ``beta2`` row.
    """

    method: str
    parameter: str
    true_beta: float
    mc_bias: float
    mean_se: float
    bound_se: float
    mc_std: float
    cov_prob: float
    avlen: float
    cov_prob_test: float | None = None
    power: float | None = None
    size_full: float | None = None
    null_value: float | None = None


@dataclass
class SimulationReport:
    scenario: str
    seed: int
    reps: int
    level: float
    failures: int
    rows: list = field(default_factory=list)
    failure_messages: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "simulation": {
                "scenario": self.scenario,
                "seed": self.seed,
                "reps": self.reps,
                "level": self.level,
                "failures": self.failures,
                "rows": [{k: _finite_or_none(v) for k, v in asdict(r).items()}
                         for r in self.rows],
            }
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_json(cls, text: str) -> "SimulationReport":
        sim = json.loads(text)["simulation"]
        rows = [ReportRow(**r) for r in sim.pop("rows")]
        return cls(rows=rows, **sim)

    def to_csv(self) -> str:
        buf = io.StringIO()
        names = list(ReportRow.__dataclass_fields__)
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(names)
        for r in self.rows:
            w.writerow(["" if getattr(r, k) is None else getattr(r, k) for k in names])
        return buf.getvalue()

    def to_text(self) -> str:
        head = (f"scenario {self.scenario}  reps={self.reps}  seed={self.seed}  "
                f"failures={self.failures}")
        cols = ["Method", "Param", "True", "MC Bias", "BoundSE", "MeanSE", "MC Std",
                "CovProb", "avlen", "TestCov", "Power"]
        lines = [head, "  ".join(f"{c:>10}" for c in cols)]
        for r in self.rows:
            vals = [r.method, r.parameter, r.true_beta, r.mc_bias, r.bound_se, r.mean_se,
                    r.mc_std, r.cov_prob, r.avlen, r.cov_prob_test, r.power]
            lines.append("  ".join(
                f"{v:>10}" if isinstance(v, str) else
                (f"{'':>10}" if v is None else f"{v:10.4f}") for v in vals))
        return "\n".join(lines)

    def row(self, method: str, parameter: str) -> ReportRow:
        for r in self.rows:
            if r.method == method and r.parameter == parameter:
                return r
        raise KeyError((method, parameter))


def run_replication(scenario: Scenario, specs, seed: int, rep: int, beta_true,
                    level: float = 0.95, null_value: float = 0.0) -> dict:
    """Fit every recipe on replication ``rep``; returns per-recipe records or a failure."""
    data = generate(scenario, seed, rep)
    alpha = 1.0 - level
    out = {}
    try:
        for spec in specs:
            fit = fit_mele(data, spec, seed=seed + rep)
            if not fit.converged:
                raise ElCovAdjError(f"{spec.label}: outer optimization did not converge")
            cis = [wald_interval(fit, j, level) for j in range(2)]
            t_null = lr_test_profile(data, spec, {1: null_value}, fit=fit)
            t_true = lr_test_profile(data, spec, {1: float(beta_true[1])}, fit=fit)
            t_full = lr_test_full(data, spec, beta_true, fit=fit)
            out[spec.label] = {
                "beta": fit.beta_hat.tolist(),
                "se": fit.se.tolist(),
                "cover": [lo <= b <= hi for (lo, hi), b in zip(cis, beta_true)],
                "length": [hi - lo for lo, hi in cis],
                "reject_null": t_null.p_value < alpha,
                "reject_true": t_true.p_value < alpha,
                "reject_full": t_full.p_value < alpha,
            }
    except (ElCovAdjError, np.linalg.LinAlgError, FloatingPointError) as exc:
        return {"rep": rep, "failed": True, "message": f"{type(exc).__name__}: {exc}"}
    return {"rep": rep, "failed": False, "records": out}


def _worker(args):
    return run_replication(*args)


def run_experiment(scenario: Scenario, specs=None, reps: int = DEFAULT_REPS, seed: int = 0,
                   level: float = 0.95, workers: int = 1, null_value: float = 0.0,
                   progress=None) -> SimulationReport:
    """Run ``reps`` paired replications and aggregate them.

    Results do not depend on ``workers``: replication ``r`` always uses the
    stream ``(seed, r)`` and aggregation is in replication order.
    """
    if reps < 1:
        raise SpecError("reps must be >= 1")
    specs = tuple(specs or scenario.specs)
    if not specs:
        raise SpecError("no constraint recipes given")
    labels = [s.label for s in specs]
    if len(set(labels)) != len(labels):
        raise SpecError(f"recipe labels must be unique: {labels}")
    beta_true = true_beta(scenario)
    jobs = [(scenario, specs, seed, r, beta_true, level, null_value) for r in range(reps)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_worker, jobs, chunksize=max(1, reps // (4 * workers))))
    else:
        results = []
        for j in jobs:
            results.append(_worker(j))
            if progress is not None:
                progress(len(results), reps)
    results.sort(key=lambda d: d["rep"])
    ok = [d["records"] for d in results if not d["failed"]]
    failed = [d for d in results if d["failed"]]
    for d in failed:
        logger.info("replication %d failed: %s", d["rep"], d["message"])

    bound = np.sqrt(np.diag(efficient_vcov(scenario)) / scenario.n)
    report = SimulationReport(scenario=scenario.name or scenario.id, seed=seed, reps=reps,
                              level=level, failures=len(failed),
                              failure_messages=[d["message"] for d in failed])
    for label in labels:
        recs = [rec[label] for rec in ok]
        m = len(recs)
        for j, pname in enumerate(PARAM_NAMES):
            b = np.array([r["beta"][j] for r in recs])
            se = np.array([r["se"][j] for r in recs])
            cover = np.array([r["cover"][j] for r in recs], dtype=float)
            length = np.array([r["length"][j] for r in recs])
            row = ReportRow(
                method=label, parameter=pname, true_beta=float(beta_true[j]),
                mc_bias=_mean(b) - float(beta_true[j]) if m else math.nan,
                mean_se=_mean(se), bound_se=float(bound[j]),
                mc_std=float(np.std(b, ddof=1)) if m > 1 else 0.0,
                cov_prob=_mean(cover), avlen=_mean(length))
            if j == 1:
                row.cov_prob_test = 1.0 - _mean([r["reject_true"] for r in recs])
                row.power = _mean([r["reject_null"] for r in recs])
                row.size_full = _mean([r["reject_full"] for r in recs])
                row.null_value = null_value
            report.rows.append(row)
    return report


def _finite_or_none(v):
    # JSON has no NaN; an empty aggregate becomes null
    return None if isinstance(v, float) and math.isnan(v) else v


def _mean(v) -> float:
    v = np.asarray(v, dtype=float)
    return float(v.mean()) if v.size else math.nan


def z_critical(level: float) -> float:
    return normal_quantile(0.5 * (1.0 + level))
