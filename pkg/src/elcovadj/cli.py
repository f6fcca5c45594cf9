"""Command-line front end: ``elcovadj analyze`` and ``elcovadj simulate``.

Exit codes: 0 success, 2 input error, 3 spec error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ElCovAdjError, SpecError
from .estimating import ConstraintSpec, parse_term
from .inference import fit_mele, lr_test_profile, wald_interval
from .scenarios import PRESETS, Scenario, preset, preset_names
from .simulation import DEFAULT_REPS, FULL_REPS, run_experiment
from .trial_data import CsvSchema, load_csv

logger = logging.getLogger("elcovadj")

EXIT_OK, EXIT_INPUT, EXIT_SPEC, EXIT_NUMERIC = 0, 2, 3, 4
_EXIT = {"input": EXIT_INPUT, "spec": EXIT_SPEC, "numeric": EXIT_NUMERIC}

TERM_HELP = """\
auxiliary term descriptors: <basis><index>@<arm>[:x<covariate>]
  const@k        (1{Z=k} - pi_k)
  fsinJ@k:xC     (1{Z=k} - pi_k) * sqrt(2) sin(2 pi J F_n(x_C))
  fcosJ@k:xC     (1{Z=k} - pi_k) * sqrt(2) cos(2 pi J F_n(x_C))
  legJ@k:xC      (1{Z=k} - pi_k) * P_J(2 F_n(x_C) - 1)   (Legendre)
  powJ@k:xC      (1{Z=k} - pi_k) * (2 F_n(x_C) - 1)^J
  xpowJ@k:xC     (1{Z=k} - pi_k) * x_C^J                 (raw covariate)
  the arm may be a range (1..3) or * for every treatment arm;
  arms are 0-based after remapping, covariates index the --covariates list.
"""


def _preset_help():
    lines = ["simulation presets:"]
    for name in preset_names():
        sc = PRESETS[name]
        quad = ", ".join("sq" if q else "lin" for q in sc.quadratic)
        extra = f"  target beta={sc.target_beta}" if sc.target_beta else ""
        specs = " vs ".join(s.label for s in sc.specs)
        lines.append(f"  {name:<22} sd={sc.sigma} logit {quad}; {specs}{extra}")
    return "\n".join(lines) + "\n"


@dataclass
class AnalysisConfig:
    input: str = ""
    outcome: str = "y"
    arm: str = "z"
    covariates: list = field(default_factory=list)
    arm_map: dict | None = None
    pi: object = None
    link: str = "logit"
    aux: list = field(default_factory=list)
    standardize: bool = True
    level: float = 0.95
    test: list | None = None
    format: str = "text"
    json_path: str | None = None
    seed: int = 0

    def schema(self) -> CsvSchema:
        return CsvSchema(outcome=self.outcome, arm=self.arm, covariates=list(self.covariates),
                         pi=self.pi, arm_map=self.arm_map)

    def spec(self, k_arms: int) -> ConstraintSpec:
        terms = []
        for d in self.aux:
            terms.extend(parse_term(d, k_arms))
        return ConstraintSpec(self.link, tuple(terms), standardize=self.standardize,
                              label="adjusted")


def _split(value: str) -> list:
    return [v.strip() for v in value.replace("\n", ",").split(",") if v.strip()]


def _parse_pi(value):
    if value is None:
        return None
    if isinstance(value, str):
        if value.strip() == "from-data":
            return "from-data"
        try:
            return [float(v) for v in _split(value)]
        except ValueError:
            raise SpecError(f"pi: expected numbers or 'from-data', got {value!r}") from None
    return value


def _parse_arm_map(value):
    if not value:
        return None
    out = {}
    for item in _split(value):
        if ":" not in item:
            raise SpecError(f"arm_map: expected raw:index pairs, got {item!r}")
        raw, idx = item.split(":", 1)
        try:
            out[raw.strip()] = int(idx)
        except ValueError:
            raise SpecError(f"arm_map: index in {item!r} is not an integer") from None
    return out


def read_config(path) -> AnalysisConfig:
    """Read an INI-style config with [data], [model] and [output] sections."""
    cp = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except configparser.Error as exc:
        raise SpecError(f"{path}: {exc}") from None
    except OSError as exc:
        raise SpecError(f"{path}: {exc}") from None
    cfg = AnalysisConfig()
    known = {
        "data": {"input", "outcome", "arm", "covariates", "arm_map", "pi"},
        "model": {"link", "aux", "standardize"},
        "output": {"level", "test", "format", "json", "seed"},
    }
    for section in cp.sections():
        if section not in known:
            raise SpecError(f"{path}: unknown section [{section}]")
        for key in cp[section]:
            if key not in known[section]:
                raise SpecError(f"{path}: unknown key {key!r} in [{section}]")
    d = cp["data"] if cp.has_section("data") else {}
    m = cp["model"] if cp.has_section("model") else {}
    o = cp["output"] if cp.has_section("output") else {}
    base = Path(path).parent
    if "input" in d:
        p = Path(d["input"])
        cfg.input = str(p if p.is_absolute() else base / p)
    cfg.outcome = d.get("outcome", cfg.outcome)
    cfg.arm = d.get("arm", cfg.arm)
    cfg.covariates = _split(d.get("covariates", ""))
    cfg.arm_map = _parse_arm_map(d.get("arm_map", ""))
    cfg.pi = _parse_pi(d.get("pi"))
    cfg.link = m.get("link", cfg.link)
    cfg.aux = _split(m.get("aux", ""))
    if "standardize" in m:
        try:
            cfg.standardize = cp.getboolean("model", "standardize")
        except ValueError:
            raise SpecError(f"{path}: [model] standardize must be a boolean") from None
    try:
        cfg.level = float(o.get("level", cfg.level))
        cfg.seed = int(o.get("seed", cfg.seed))
        cfg.test = [int(v) for v in _split(o["test"])] if "test" in o else None
    except ValueError as exc:
        raise SpecError(f"{path}: [output] {exc}") from None
    cfg.format = o.get("format", cfg.format)
    cfg.json_path = o.get("json")
    return cfg


def _fit_summary(data, spec, cfg: AnalysisConfig, test_idx):
    fit = fit_mele(data, spec, seed=cfg.seed)
    cis = [list(wald_interval(fit, j, cfg.level)) if fit.converged else [math.nan, math.nan]
           for j in range(data.k_arms)]
    test = lr_test_profile(data, spec, {j: 0.0 for j in test_idx}, fit=fit)
    sol = fit.inner_diag
    return {
        "method": spec.label,
        "aux_terms": [t.descriptor() for t in spec.aux_terms],
        "estimates": fit.beta_hat.tolist(),
        "se": fit.se.tolist(),
        "ci": cis,
        "lr": {"stat": test.statistic, "df": test.df, "p": test.p_value,
               "tested": list(test_idx), "feasible": test.feasible},
        "diagnostics": {
            "converged": fit.converged,
            "feasible": sol.feasible,
            "outer_iterations": fit.outer_iterations,
            "inner_iterations": sol.iterations,
            "inner_grad_norm": sol.grad_norm,
            "profile_grad_norm": float(np.linalg.norm(fit.gradient)),
            "loglik": fit.loglik_at_opt,
            "n_constraints": data.k_arms + len(spec.aux_terms),
            "growth_warning": (data.k_arms + len(spec.aux_terms)) ** 3 >= data.n,
            "separation": fit.separation,
        },
    }


def cmd_analyze(cfg: AnalysisConfig, out=None) -> dict:
    """Fit the marginal and the configured adjusted recipe; print both."""
    out = out or sys.stdout
    if cfg.link not in ("identity", "logit"):
        raise SpecError(f"unknown link {cfg.link!r}")
    if not 0 < cfg.level < 1:
        raise SpecError(f"level must lie in (0, 1), got {cfg.level}")
    if cfg.format not in ("text", "json", "csv"):
        raise SpecError(f"unknown output format {cfg.format!r}")
    if not cfg.input:
        raise SpecError("no input file given")
    data = load_csv(cfg.input, cfg.schema())
    if cfg.link == "logit" and not data.is_binary:
        raise SpecError(f"logit link needs a 0/1 outcome; column {cfg.outcome!r} is not binary "
                        "(use link = identity)")
    adjusted = cfg.spec(data.k_arms)
    adjusted.check(data)
    marginal = ConstraintSpec(cfg.link, (), standardize=cfg.standardize, label="marginal")
    test_idx = cfg.test if cfg.test is not None else list(range(1, data.k_arms))
    if not test_idx or any(not 0 <= j < data.k_arms for j in test_idx):
        raise SpecError(f"test indices must lie in 0..{data.k_arms - 1}")
    fits = [_fit_summary(data, marginal, cfg, test_idx)]
    if adjusted.aux_terms:
        fits.append(_fit_summary(data, adjusted, cfg, test_idx))
    result = {
        "analysis": {f["method"]: f for f in fits},
        "data": {"input": cfg.input, "n": data.n, "k_arms": data.k_arms,
                 "pi": data.pi.tolist(), "covariates": list(data.covariate_names),
                 "link": cfg.link, "level": cfg.level},
    }
    result = _json_safe(result)
    if cfg.format == "json":
        out.write(json.dumps(result, indent=2) + "\n")
    elif cfg.format == "csv":
        out.write(_analysis_csv(result["analysis"].values()))
    else:
        out.write(_analysis_text(result) + "\n")
    if cfg.json_path:
        Path(cfg.json_path).write_text(json.dumps(result, indent=2) + "\n", encoding="utf-8")
    return result


def _json_safe(obj):
    # strict JSON has no inf/nan; an infeasible test reports stat null, p 0
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _fmt(v, spec):
    return "nan" if v is None else format(v, spec)


def _analysis_text(result) -> str:
    meta = result["data"]
    lines = [f"n={meta['n']}  arms={meta['k_arms']}  link={meta['link']}  "
             f"pi={['%.4g' % p for p in meta['pi']]}"]
    pct = int(round(100 * meta["level"]))
    for f in result["analysis"].values():
        lines.append("")
        terms = ", ".join(f["aux_terms"]) or "none"
        lines.append(f"[{f['method']}]  auxiliary terms: {terms}")
        lines.append(f"  {'param':>6} {'estimate':>11} {'se':>10} {f'{pct}% CI':>24}")
        for j, (b, s, ci) in enumerate(zip(f["estimates"], f["se"], f["ci"])):
            lines.append(f"  {'b' + str(j + 1):>6} {_fmt(b, '11.5f')} {_fmt(s, '10.5f')}   "
                         f"({_fmt(ci[0], '9.5f')}, {_fmt(ci[1], '9.5f')})")
        lr = f["lr"]
        tested = ", ".join(f"b{j + 1}" for j in lr["tested"])
        lines.append(f"  EL ratio test {tested} = 0: stat={_fmt(lr['stat'], '.4f')} df={lr['df']} "
                     f"p={lr['p']:.4g}" + ("" if lr["feasible"] else "  (infeasible)"))
        dg = f["diagnostics"]
        lines.append(f"  converged={dg['converged']} feasible={dg['feasible']} "
                     f"outer_iter={dg['outer_iterations']} loglik={dg['loglik']:.3e}"
                     + ("  [r^3 >= n]" if dg["growth_warning"] else "")
                     + ("  [separation]" if dg["separation"] else ""))
    return "\n".join(lines)


def _analysis_csv(fits) -> str:
    rows = ["method,parameter,estimate,se,ci_lo,ci_hi,lr_stat,lr_df,lr_p"]
    for f in fits:
        lr = f["lr"]
        for j, (b, s, ci) in enumerate(zip(f["estimates"], f["se"], f["ci"])):
            vals = [b, s, ci[0], ci[1], lr["stat"], lr["df"], lr["p"]]
            rows.append(f"{f['method']},b{j + 1}," + ",".join(
                "" if v is None else repr(v) for v in vals))
    return "\n".join(rows) + "\n"


def read_scenario_file(path) -> Scenario:
    """Custom scenario from an INI file with [scenario] and [specs] sections."""
    cp = configparser.ConfigParser()
    cp.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
        s = cp["scenario"]
        floats = lambda key, default: tuple(float(v) for v in _split(s.get(key, default)))
        sigma = floats("sigma", "1")
        d = len(sigma)
        slopes_flat = floats("slopes", ",".join(["1, 1.5"] * d))
        slopes = tuple(tuple(slopes_flat[2 * c:2 * c + 2]) for c in range(d))
        quad = tuple(v.lower() in ("1", "true", "yes", "sq")
                     for v in _split(s.get("quadratic", ",".join(["false"] * d))))
        specs = []
        if cp.has_section("specs"):
            for label, recipe in cp["specs"].items():
                terms = [t for item in _split(recipe) for t in parse_term(item, 2)]
                specs.append(ConstraintSpec("logit", tuple(terms), label=label))
        sc = Scenario(id=s.get("id", "custom"), sigma=sigma,
                      intercepts=floats("intercepts", "0.3, 1"), slopes=slopes,
                      quadratic=quad, n=int(s.get("n", "200")),
                      pi=floats("pi", "0.5, 0.5"), name=Path(path).stem,
                      specs=tuple(specs) or PRESETS["table1-sd1"].specs)
    except (configparser.Error, KeyError, ValueError) as exc:
        raise SpecError(f"{path}: {exc}") from None
    return sc


def cmd_simulate(name: str, reps: int = DEFAULT_REPS, seed: int = 0, level: float = 0.95,
                 fmt: str = "text", workers: int = 1, json_path=None, n=None,
                 out=None):
    out = out or sys.stdout
    if fmt not in ("text", "json", "csv"):
        raise SpecError(f"unknown output format {fmt!r}")
    if reps < 1:
        raise SpecError(f"reps must be at least 1, got {reps}")
    if workers < 1:
        raise SpecError(f"workers must be at least 1, got {workers}")
    if Path(name).suffix in (".ini", ".cfg") or Path(name).is_file():
        scenario = read_scenario_file(name)
    else:
        scenario = preset(name, n=n)
    report = run_experiment(scenario, reps=reps, seed=seed, level=level, workers=workers)
    if fmt == "json":
        out.write(report.to_json(indent=2) + "\n")
    elif fmt == "csv":
        out.write(report.to_csv())
    else:
        out.write(report.to_text() + "\n")
    if json_path:
        Path(json_path).write_text(report.to_json(indent=2) + "\n", encoding="utf-8")
    return report


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="elcovadj",
        description="Empirical likelihood covariate adjustment for randomized trials.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=TERM_HELP + "\n" + _preset_help())
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="fit marginal and adjusted models to a CSV file",
                       formatter_class=argparse.RawDescriptionHelpFormatter,
                       epilog=TERM_HELP)
    a.add_argument("input", nargs="?", help="CSV file (header row first)")
    a.add_argument("-c", "--config", help="INI config with [data], [model], [output]")
    a.add_argument("--outcome")
    a.add_argument("--arm")
    a.add_argument("--covariates", help="comma-separated covariate columns")
    a.add_argument("--arm-map", help="raw:index pairs, e.g. 1:0,2:1,3:2,4:3")
    a.add_argument("--pi", help="allocation probabilities, or 'from-data'")
    a.add_argument("--link", choices=["identity", "logit"])
    a.add_argument("--aux", help="comma-separated auxiliary term descriptors")
    a.add_argument("--no-standardize", action="store_true")
    a.add_argument("--level", type=float)
    a.add_argument("--test", help="comma-separated 0-based indices tested = 0 "
                                  "(default: every treatment contrast)")
    a.add_argument("--format", choices=["text", "json", "csv"])
    a.add_argument("--json", dest="json_path", help="also write the JSON report here")
    a.add_argument("--seed", type=int)

    s = sub.add_parser("simulate", help="run a simulation preset",
                       formatter_class=argparse.RawDescriptionHelpFormatter,
                       epilog=_preset_help())
    s.add_argument("preset", help="preset name or scenario .ini file")
    s.add_argument("--reps", type=int, default=None,
                   help=f"replications (default {DEFAULT_REPS})")
    s.add_argument("--full", action="store_true", help=f"use {FULL_REPS} replications")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--level", type=float, default=0.95)
    s.add_argument("--n", type=int, help="override the sample size")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--format", choices=["text", "json", "csv"], default="text")
    s.add_argument("--json", dest="json_path", help="also write the JSON report here")
    return p


def _config_from_args(ns) -> AnalysisConfig:
    cfg = read_config(ns.config) if ns.config else AnalysisConfig()
    if ns.input:
        cfg.input = ns.input
    for key in ("outcome", "arm", "link", "level", "format", "json_path", "seed"):
        v = getattr(ns, key)
        if v is not None:
            setattr(cfg, key, v)
    if ns.covariates is not None:
        cfg.covariates = _split(ns.covariates)
    if ns.arm_map is not None:
        cfg.arm_map = _parse_arm_map(ns.arm_map)
    if ns.pi is not None:
        cfg.pi = _parse_pi(ns.pi)
    if ns.aux is not None:
        cfg.aux = _split(ns.aux)
    if ns.no_standardize:
        cfg.standardize = False
    if ns.test is not None:
        try:
            cfg.test = [int(v) for v in _split(ns.test)]
        except ValueError:
            raise SpecError(f"--test: expected integers, got {ns.test!r}") from None
    return cfg


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(ns.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if ns.command == "analyze":
            cmd_analyze(_config_from_args(ns))
        else:
            reps = FULL_REPS if ns.full else (DEFAULT_REPS if ns.reps is None else ns.reps)
            cmd_simulate(ns.preset, reps=reps, seed=ns.seed, level=ns.level, fmt=ns.format,
                         workers=ns.workers, json_path=ns.json_path, n=ns.n)
    except ElCovAdjError as exc:
        print(f"error ({exc.category}): {exc}", file=sys.stderr)
        return _EXIT[exc.category]
    except (ValueError, np.linalg.LinAlgError) as exc:
        print(f"error (numeric): {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
