import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from elcovadj.el_core import (
    ProfileObjective,
    log_star,
    profile_gradient,
    profile_hessian,
    profile_loglik,
    solve_lambda,
)
from elcovadj.errors import ContractError, InputError
from elcovadj.estimating import ConstraintSpec, assemble, fourier_terms
from elcovadj.inference import fit_mele, initial_beta

from conftest import random_trial


def bisect_lambda(g):
    """1-D oracle: root of sum g/(1+lam g) on the interval where all 1+lam g > 0."""
    lo = -1.0 / g.max() + 1e-12
    hi = -1.0 / g.min() - 1e-12
    return brentq(lambda lam: np.sum(g / (1 + lam * g)), lo, hi, xtol=1e-14)


def check_invariants(sol, g):
    assert np.all(sol.weights > 0)
    assert abs(sol.weights.sum() - 1) <= 1e-10
    tol = 1e-8 * (1 + np.linalg.norm(g, axis=1).max())
    assert np.linalg.norm(sol.weights @ g) <= tol
    np.testing.assert_array_equal(sol.weights, 1.0 / (len(g) * (1 + g @ sol.lam)))
    assert sol.loglik >= -1e-10


class TestLogStar:
    def test_log_branch(self):
        assert log_star(1.0, 0.01) == (0.0, 1.0, -1.0)

    def test_joint(self):
        eps = 0.05
        v, d1, d2 = log_star(eps, eps)
        assert v == pytest.approx(np.log(eps))
        assert d1 == pytest.approx(1 / eps)
        below = log_star(eps * (1 - 1e-9), eps)
        assert below[0] == pytest.approx(v, abs=1e-7)
        assert below[1] == pytest.approx(d1, rel=1e-7)
        assert below[2] == pytest.approx(d2, rel=1e-7)

    def test_quadratic_at_zero(self):
        v, d1, d2 = log_star(0.0, 0.01)
        assert v == pytest.approx(np.log(0.01) - 1.5)
        assert d1 == pytest.approx(200.0)
        assert d2 == pytest.approx(-10000.0)

    def test_vectorized_and_finite_everywhere(self):
        z = np.array([-5.0, 0.0, 0.02, 1.0, 3.0])
        v, d1, d2 = log_star(z, 0.1)
        assert np.all(np.isfinite(v))
        np.testing.assert_allclose(v[3:], np.log(z[3:]))
        # derivative of the value by finite differences
        h = 1e-6
        fd = (log_star(z + h, 0.1)[0] - log_star(z - h, 0.1)[0]) / (2 * h)
        np.testing.assert_allclose(d1, fd, rtol=1e-6)


class TestSolveLambda:
    def test_mean_zero_column(self):
        sol = solve_lambda(np.array([-1.0, 1.0]).reshape(-1, 1)[[0, 1, 0, 1]])
        assert sol.lam[0] == 0.0
        np.testing.assert_allclose(sol.weights, 0.25)
        assert sol.loglik == 0.0

    def test_balanced_three_points(self):
        g = np.array([[-1.0], [0.5], [0.5]])
        sol = solve_lambda(g)
        assert sol.lam[0] == pytest.approx(bisect_lambda(g[:, 0]), abs=1e-8)
        assert sol.loglik == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("vals", [[-1.0, 0.3, 0.9, 2.0], [-3.0, -0.2, 0.1, 0.4, 1.7],
                                      [-0.5, 1.0, 1.0, 1.0, 1.0]])
    def test_matches_bisection(self, vals):
        g = np.array(vals)[:, None]
        sol = solve_lambda(g)
        assert sol.ok
        lam = bisect_lambda(g[:, 0])
        assert sol.lam[0] == pytest.approx(lam, abs=1e-8)
        assert sol.loglik == pytest.approx(np.sum(np.log1p(lam * g[:, 0])), abs=1e-10)
        check_invariants(sol, g)

    def test_outside_hull(self):
        sol = solve_lambda(np.array([[0.5], [1.0], [2.0], [0.1]]))
        assert not sol.feasible
        assert not sol.ok

    def test_outside_hull_two_dim(self, rng):
        g = rng.normal(size=(50, 2)) + np.array([5.0, 0.0])
        assert not solve_lambda(g).feasible

    def test_nan_rejected(self):
        with pytest.raises(InputError):
            solve_lambda(np.array([[1.0], [np.nan], [-1.0]]))

    def test_r_at_least_n_rejected(self):
        with pytest.raises(InputError):
            solve_lambda(np.ones((2, 2)))

    def test_nonconverged_returned(self, rng):
        g = rng.normal(size=(40, 3)) + 0.3
        sol = solve_lambda(g, max_iter=1)
        assert not sol.converged
        assert sol.iterations == 1

    def test_history_monotone(self, rng):
        for _ in range(20):
            g = rng.normal(size=(30, 3)) + rng.normal(scale=0.5, size=3)
            h = np.array(solve_lambda(g).history)
            assert np.all(np.diff(h) >= -1e-12 * (1 + np.abs(h[1:])))

    def test_transformation_invariance(self, rng):
        for _ in range(10):
            g = rng.normal(size=(60, 3)) + 0.2
            T = rng.normal(size=(3, 3)) + 3 * np.eye(3)
            a, b = solve_lambda(g), solve_lambda(g @ T)
            assert a.ok and b.ok
            assert b.loglik == pytest.approx(a.loglik, abs=1e-8)
            np.testing.assert_allclose(b.weights, a.weights, atol=1e-10)

    def test_warm_start_agrees(self, rng):
        g = rng.normal(size=(80, 2)) + 0.1
        cold = solve_lambda(g)
        warm = solve_lambda(g, lam0=cold.lam + 0.01)
        np.testing.assert_allclose(warm.lam, cold.lam, atol=1e-9)
        bad = solve_lambda(g, lam0=np.array([1e6, -1e6]))
        np.testing.assert_allclose(bad.lam, cold.lam, atol=1e-9)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**31), n=st.integers(8, 60), r=st.integers(1, 4),
           shift=st.floats(-0.6, 0.6))
    def test_weight_invariants(self, seed, n, r, shift):
        rng = np.random.default_rng(seed)
        if r >= n:
            return
        g = rng.normal(size=(n, r)) + shift
        sol = solve_lambda(g)
        assert sol.loglik >= -1e-10
        np.testing.assert_array_equal(sol.weights, 1.0 / (n * (1 + g @ sol.lam)))
        if sol.ok:
            check_invariants(sol, g)


class TestProfile:
    def test_just_identified_at_arm_means(self, rng):
        d = random_trial(rng, binary=False)
        spec = ConstraintSpec("identity", ())
        beta = initial_beta(d, "identity")
        sol = profile_loglik(d, spec, beta)
        assert sol.loglik == pytest.approx(0.0, abs=1e-12)
        np.testing.assert_allclose(sol.lam, 0.0, atol=1e-12)
        np.testing.assert_allclose(profile_gradient(d, spec, beta, sol), 0.0, atol=1e-12)

    def test_local_minimum_at_mele(self, trial, five_fourier):
        fit = fit_mele(trial, five_fourier)
        assert fit.converged
        l0 = fit.loglik_at_opt
        assert l0 >= 0
        g = profile_gradient(trial, five_fourier, fit.beta_hat, fit.inner_diag)
        assert np.linalg.norm(g) <= 1e-6 * (1 + abs(l0))
        rng = np.random.default_rng(3)
        for _ in range(8):
            delta = rng.normal(size=2)
            delta *= 0.05 / np.linalg.norm(delta)
            sol = profile_loglik(trial, five_fourier, fit.beta_hat + delta)
            assert (not sol.ok) or sol.loglik > l0

    def test_far_beta_blows_up(self, trial, five_fourier):
        fit = fit_mele(trial, five_fourier)
        sol = profile_loglik(trial, five_fourier, fit.beta_hat + 10)
        assert (not sol.feasible) or sol.loglik > 100 * max(fit.loglik_at_opt, 1e-3)

    @pytest.mark.parametrize("spec", [ConstraintSpec("logit", ()),
                                      ConstraintSpec("logit", fourier_terms(1)),
                                      ConstraintSpec("identity", fourier_terms(1))])
    def test_gradient_and_hessian_match_finite_differences(self, rng, spec):
        d = random_trial(rng, binary=True)
        obj = ProfileObjective(d, spec)
        for _ in range(3):
            beta = initial_beta(d, "logit" if spec.link == "logit" else "identity")
            beta = beta + rng.normal(scale=0.1, size=2)
            sol = profile_loglik(d, spec, beta)
            assert sol.ok
            G = profile_gradient(d, spec, beta, sol)
            H = profile_hessian(d, spec, beta, sol)
            h = 1e-5
            fd = np.empty(2)
            fdh = np.empty((2, 2))
            for k in range(2):
                e = np.zeros(2)
                e[k] = h
                fd[k] = (obj.value(beta + e) - obj.value(beta - e)) / (2 * h)
                su, _ = obj.solve(beta + e)
                sd, _ = obj.solve(beta - e)
                fdh[k] = (profile_gradient(d, spec, beta + e, su)
                          - profile_gradient(d, spec, beta - e, sd)) / (2 * h)
            np.testing.assert_allclose(G, fd, rtol=1e-4, atol=1e-7)
            np.testing.assert_allclose(H, fdh, rtol=1e-4, atol=1e-6)

    def test_contract_errors(self, rng):
        g = np.array([[0.5], [1.0], [2.0], [0.1]])
        bad = solve_lambda(g)
        d = random_trial(rng)
        spec = ConstraintSpec("logit", ())
        with pytest.raises(ContractError):
            profile_gradient(d, spec, [0, 0], bad)
        with pytest.raises(ContractError):
            profile_hessian(d, spec, [0, 0], bad)

    def test_aux_columns_cached(self, trial, five_fourier):
        obj = ProfileObjective(trial, five_fourier)
        a = obj.assemble([0.0, 0.0])
        b = assemble(trial, five_fourier, [0.0, 0.0])
        np.testing.assert_array_equal(a.g, b.g)
        aux = obj.aux[0]
        obj.value([1.0, 1.0])
        assert obj.aux[0] is aux
