import numpy as np
import pytest

from elcovadj.errors import DomainError, SpecError
from elcovadj.estimating import (
    AuxTerm,
    ConstraintSpec,
    assemble,
    auxiliary_equations,
    expit,
    fourier_terms,
    legendre,
    marginal_equations,
    parse_term,
)
from elcovadj.inference import fit_mele
from elcovadj.scenarios import generate, preset
from elcovadj.trial_data import TrialDataset

from conftest import random_trial


def tiny(y, z, x=None, pi=(0.5, 0.5)):
    n = len(y)
    pad = max(0, 3 - n)
    return TrialDataset(y=list(y) + [0] * pad, z=list(z) + [0] * pad,
                        x=None if x is None else np.r_[x, np.zeros(pad)][:, None], pi=pi)


class TestMarginal:
    def test_identity_residual_is_y(self):
        d = tiny([1, 0, 0], [0, 1, 1])
        m = marginal_equations(d, "identity", [0.0, 0.0])
        np.testing.assert_array_equal(m[0], [1.0, 0.0])

    def test_identity_normal_equations(self, rng):
        d = random_trial(rng, binary=False)
        mu0 = d.y[d.z == 0].mean()
        mu1 = d.y[d.z == 1].mean()
        m = marginal_equations(d, "identity", [mu0, mu1 - mu0])
        np.testing.assert_allclose(m.sum(axis=0), 0.0, atol=1e-10)

    def test_logit_at_zero(self):
        d = tiny([1, 0, 0], [1, 0, 1])
        m = marginal_equations(d, "logit", [0.0, 0.0])
        # phi(0) = 1/2 by direct evaluation
        np.testing.assert_allclose(m[0], [1 - 1 / (1 + np.exp(0.0))] * 2)
        np.testing.assert_array_equal(m[0], [0.5, 0.5])

    def test_logit_needs_binary(self, rng):
        d = random_trial(rng, binary=False)
        with pytest.raises(DomainError):
            marginal_equations(d, "logit", [0.0, 0.0])


class TestAuxiliary:
    def test_constant_term(self):
        d = tiny([0, 1, 0], [0, 1, 0])
        col = auxiliary_equations(d, ConstraintSpec("logit", (AuxTerm(1),)))
        np.testing.assert_array_equal(col[:2, 0], [-0.5, 0.5])
        d2 = TrialDataset(y=[0, 1, 0, 1], z=[0, 1, 0, 1], x=None, pi=[0.5, 0.5])
        assert auxiliary_equations(d2, ConstraintSpec("logit", (AuxTerm(1),))).sum() == 0.0

    def test_linear_quadratic_recipe(self, trial):
        spec = ConstraintSpec("logit", (AuxTerm(1), AuxTerm(1, "raw_power", 1, 0),
                                        AuxTerm(1, "raw_power", 2, 0)))
        cols = auxiliary_equations(trial, spec)
        c = (trial.z == 1) - 0.5
        x = trial.x[:, 0]
        np.testing.assert_allclose(cols, np.column_stack([c, c * x, c * x ** 2]))

    def test_five_fourier_matches_table_note_form(self, trial):
        cols = auxiliary_equations(trial, ConstraintSpec("logit", fourier_terms(1)))
        z = trial.z
        F = np.array([(trial.x[:, 0] <= v).mean() for v in trial.x[:, 0]])
        note = np.column_stack([2 * z - 1,
                                np.sqrt(2) * (2 * z - 1) * np.sin(2 * np.pi * F),
                                np.sqrt(2) * (2 * z - 1) * np.cos(2 * np.pi * F)])
        np.testing.assert_allclose(2 * cols, note, atol=1e-12)

    def test_legendre_and_power_bases(self, trial):
        spec = ConstraintSpec("logit", (AuxTerm(1, "legendre", 2, 0), AuxTerm(1, "power", 2, 0)))
        cols = auxiliary_equations(trial, spec)
        c = (trial.z == 1) - 0.5
        F = np.array([(trial.x[:, 0] <= v).mean() for v in trial.x[:, 0]])
        u = 2 * F - 1
        np.testing.assert_allclose(cols[:, 0], c * (3 * u ** 2 - 1) / 2, atol=1e-12)
        np.testing.assert_allclose(cols[:, 1], c * u ** 2, atol=1e-12)

    def test_nonconstant_basis_without_covariates(self):
        d = TrialDataset(y=[0, 1, 0, 1], z=[0, 1, 0, 1], x=None, pi=[0.5, 0.5])
        with pytest.raises(SpecError):
            auxiliary_equations(d, ConstraintSpec("logit", (AuxTerm(1, "fourier_sin", 1, 0),)))


@pytest.mark.parametrize("u", [-1.0, 0.0, 1.0])
def test_legendre_closed_forms(u):
    assert legendre(0, u) == 1.0
    assert legendre(1, u) == u
    assert legendre(2, u) == (3 * u * u - 1) / 2
    assert legendre(3, u) == (5 * u ** 3 - 3 * u) / 2


class TestSpec:
    def test_duplicate_terms(self):
        with pytest.raises(SpecError, match="duplicated"):
            ConstraintSpec("logit", (AuxTerm(1), AuxTerm(1)))
        with pytest.raises(SpecError):
            ConstraintSpec("logit", ("fsin1@1:x0", "fsin1@1:x0"))

    def test_constant_ignores_index(self):
        assert AuxTerm(1, "constant", 3, 2) == AuxTerm(1)

    def test_too_many_constraints(self):
        d = TrialDataset(y=[0, 1, 0, 1, 1], z=[0, 1, 0, 1, 1], x=np.arange(5.0), pi=[0.5, 0.5])
        spec = ConstraintSpec("logit", fourier_terms(1))
        with pytest.raises(SpecError):
            spec.check(d)

    def test_growth_flag(self, trial):
        assert not ConstraintSpec("logit", fourier_terms(1)).check(trial)
        assert ConstraintSpec("logit", fourier_terms(2)).check(trial)

    def test_arm_out_of_range(self, trial):
        with pytest.raises(SpecError):
            ConstraintSpec("logit", (AuxTerm(2),)).check(trial)

    def test_unknown_link_and_basis(self):
        with pytest.raises(SpecError):
            ConstraintSpec("probit")
        with pytest.raises(SpecError):
            AuxTerm(1, "spline", 1, 0)


class TestParseTerm:
    def test_forms(self):
        assert parse_term("const@1") == [AuxTerm(1)]
        assert parse_term("fsin1@1:x0") == [AuxTerm(1, "fourier_sin", 1, 0)]
        assert parse_term("xpow2@2:x1") == [AuxTerm(2, "raw_power", 2, 1)]
        assert parse_term("leg3@1:0") == [AuxTerm(1, "legendre", 3, 0)]

    def test_ranges(self):
        assert [t.arm for t in parse_term("pow2@1..3:x0")] == [1, 2, 3]
        assert [t.arm for t in parse_term("const@*", k_arms=4)] == [1, 2, 3]

    @pytest.mark.parametrize("bad", ["sin1@1:x0", "fsin@1:x0", "fsin1@1", "const", "fcos1@a:x0"])
    def test_errors(self, bad):
        with pytest.raises(SpecError):
            parse_term(bad)

    def test_descriptor_roundtrip(self):
        for t in fourier_terms(2, covariates=(0, 1)):
            assert parse_term(t.descriptor()) == [t]


class TestAssemble:
    def test_reduces_to_marginal(self, trial):
        beta = np.array([0.1, 0.3])
        efs = assemble(trial, ConstraintSpec("identity", ()), beta)
        assert efs.r == efs.q == 2
        np.testing.assert_array_equal(efs.g, marginal_equations(trial, "identity", beta))

    def test_scenario_five_fourier_beta_independence(self):
        d = generate(preset("table1-sd1"), 11)
        spec = ConstraintSpec("logit", fourier_terms(1))
        a = assemble(d, spec, [0.0, 0.0])
        b = assemble(d, spec, [0.7, -1.3])
        assert a.r == 5
        assert np.array_equal(a.g[:, 2:], b.g[:, 2:])
        assert not np.array_equal(a.g[:, :2], b.g[:, :2])

    def test_standardized_columns_have_unit_second_moment(self, trial):
        efs = assemble(trial, ConstraintSpec("logit", fourier_terms(2)), [0.0, 0.0])
        m2 = np.mean(efs.g[:, 2:] ** 2, axis=0)
        np.testing.assert_allclose(m2, 1.0)
        assert np.all((m2 >= 0.5) & (m2 <= 2))

    def test_identically_zero_column(self):
        d = TrialDataset(y=[0, 1, 0, 1, 1, 0], z=[0, 1, 0, 1, 1, 0], x=np.ones(6),
                         pi=[0.5, 0.5])
        # F_n is 1 everywhere, so sin(2 pi F_n) vanishes
        with pytest.raises(SpecError, match="fsin1@1:x0"):
            assemble(d, ConstraintSpec("logit", (AuxTerm(1, "fourier_sin", 1, 0),)), [0, 0])

    @pytest.mark.parametrize("link", ["identity", "logit"])
    def test_jacobian_and_curvature_match_finite_differences(self, rng, link):
        d = random_trial(rng, k_arms=3, binary=True)
        spec = ConstraintSpec(link, ("const@1", "fsin1@2:x0"))
        beta = np.array([0.2, -0.4, 0.5])
        efs = assemble(d, spec, beta)
        h = 1e-6
        for k in range(3):
            e = np.zeros(3)
            e[k] = h
            up = assemble(d, spec, beta + e)
            dn = assemble(d, spec, beta - e)
            fd = (up.g - dn.g) / (2 * h)
            np.testing.assert_allclose(efs.dgdbeta[:, :, k], fd, atol=1e-8)
            fd2 = (up.dgdbeta - dn.dgdbeta)[:, :3, :] / (2 * h)
            analytic = (efs.curvature[:, None, None] * efs.design[:, :, None]
                        * efs.design[:, None, :] * efs.design[:, None, k:k + 1])
            np.testing.assert_allclose(fd2, analytic, atol=1e-7)

    def test_standardize_does_not_change_mele(self, trial):
        on = fit_mele(trial, ConstraintSpec("logit", fourier_terms(1), standardize=True))
        off = fit_mele(trial, ConstraintSpec("logit", fourier_terms(1), standardize=False))
        np.testing.assert_allclose(on.beta_hat, off.beta_hat, atol=1e-8)


def test_zero_mean_property():
    """sqrt(n) * column means stay centred at zero across replications."""
    sc = preset("table1-sd1")
    spec = ConstraintSpec("logit", fourier_terms(2) + (AuxTerm(1, "legendre", 2, 0),
                                                        AuxTerm(1, "raw_power", 1, 0)),
                          standardize=False)
    reps = 200
    stats = np.empty((reps, len(spec.aux_terms)))
    for r in range(reps):
        d = generate(sc, 99, r)
        stats[r] = np.sqrt(d.n) * auxiliary_equations(d, spec).mean(axis=0)
    se = stats.std(axis=0, ddof=1) / np.sqrt(reps)
    assert np.all(np.abs(stats.mean(axis=0)) < 4 * se)


def test_fourier_gram_near_identity():
    rng = np.random.default_rng(5)
    n = 2000
    d = TrialDataset(y=np.zeros(n), z=rng.integers(0, 2, n), x=rng.normal(size=(n, 1)),
                     pi=[0.5, 0.5])
    F = np.searchsorted(np.sort(d.x[:, 0]), d.x[:, 0], side="right") / n
    basis = np.column_stack([np.sqrt(2) * np.sin(2 * np.pi * j * F) for j in (1, 2)]
                            + [np.sqrt(2) * np.cos(2 * np.pi * j * F) for j in (1, 2)])
    gram = basis.T @ basis / n
    off = gram - np.diag(np.diag(gram))
    assert np.abs(off).max() < 0.1
    np.testing.assert_allclose(np.diag(gram), 1.0, atol=0.01)
