import numpy as np
import pytest

from elcovadj.estimating import ConstraintSpec, expit, fourier_terms
from elcovadj.trial_data import TrialDataset


def random_trial(rng, n=120, k_arms=2, d=1, binary=True, sd=1.5):
    """Small logistic (or Gaussian) trial with every arm populated."""
    pi = np.full(k_arms, 1.0 / k_arms)
    z = np.concatenate([np.arange(k_arms), rng.integers(0, k_arms, n - k_arms)])
    x = rng.normal(0.0, sd, size=(n, d))
    eta = 0.2 + 0.4 * z + (x[:, 0] if d else 0.0)
    if binary:
        y = (rng.random(n) < expit(eta)).astype(float)
    else:
        y = eta + rng.normal(size=n)
    return TrialDataset(y=y, z=z, x=x, pi=pi)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def trial(rng):
    return random_trial(rng, n=200)


@pytest.fixture
def marginal_logit():
    return ConstraintSpec("logit", ())


@pytest.fixture
def five_fourier():
    return ConstraintSpec("logit", fourier_terms(1), label="5 Fourier")


# one PASS/FAIL line per acceptance criterion at the end of the run
_CRITERIA: dict = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        props = dict(report.user_properties)
        if "criterion" in props:
            _CRITERIA[props["criterion"]] = (report.outcome, props.get("detail", ""))
        elif report.when == "setup":
            name = report.nodeid.split("::")[-1]
            _CRITERIA.setdefault(name, (report.outcome, "setup failed"))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for key in sorted(_CRITERIA, key=lambda k: (not isinstance(k, int), k)):
        outcome, detail = _CRITERIA[key]
        tag = "PASS" if outcome == "passed" else "FAIL"
        tr.write_line(f"{tag} criterion {key}: {detail}")
