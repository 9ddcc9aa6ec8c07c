import math

import numpy as np
import pytest
from scipy.special import expit

from blocklink.exceptions import ContractViolation
from blocklink.mi import combine_logistic_fits, fit_logistic, rubin_combine


def _loglik(x, y, beta):
    eta = x @ beta
    return float(np.sum(y * eta - np.log1p(np.exp(eta))))


def _fd_gradient(x, y, beta, h=1e-6):
    g = np.zeros(len(beta))
    for j in range(len(beta)):
        up, dn = beta.copy(), beta.copy()
        up[j] += h
        dn[j] -= h
        g[j] = (_loglik(x, y, up) - _loglik(x, y, dn)) / (2 * h)
    return g


class TestFitLogistic:
    def test_intercept_only_balanced(self):
        x = np.ones((40, 1))
        y = np.array([0, 1] * 20, dtype=float)
        fit = fit_logistic(x, y)
        assert fit.converged
        assert fit.coef[0] == pytest.approx(0.0, abs=1e-10)

    def test_two_by_two_closed_form(self):
        # x=0: 20 successes / 10 failures; x=1: 10 successes / 20 failures
        x0 = np.column_stack([np.ones(30), np.zeros(30)])
        y0 = np.array([1.0] * 20 + [0.0] * 10)
        x1 = np.column_stack([np.ones(30), np.ones(30)])
        y1 = np.array([1.0] * 10 + [0.0] * 20)
        fit = fit_logistic(np.vstack([x0, x1]), np.concatenate([y0, y1]))
        assert fit.coef[1] == pytest.approx(math.log((10 * 10) / (20 * 20)), abs=1e-8)
        assert fit.coef[1] == pytest.approx(-1.386, abs=1e-3)

    def test_gradient_matches_finite_differences(self, rng):
        for _ in range(20):
            n, p = 80, 3
            x = np.column_stack([np.ones(n), rng.normal(size=(n, p - 1))])
            beta_true = rng.normal(size=p)
            y = (rng.random(n) < expit(x @ beta_true)).astype(float)
            if y.min() == y.max():
                continue
            fit = fit_logistic(x, y)
            if fit.separation:
                continue
            grad = _fd_gradient(x, y, fit.coef)
            assert np.max(np.abs(grad)) < 1e-6

    def test_covariance_is_inverse_information(self, rng):
        n = 200
        x = np.column_stack([np.ones(n), rng.normal(size=n)])
        y = (rng.random(n) < expit(0.3 + 0.8 * x[:, 1])).astype(float)
        fit = fit_logistic(x, y)
        mu = expit(x @ fit.coef)
        info = x.T @ (x * (mu * (1 - mu))[:, None])
        assert np.allclose(fit.cov @ info, np.eye(2), atol=1e-6)

    def test_separation_flagged_and_capped(self):
        x = np.column_stack([np.ones(20), np.concatenate([np.zeros(10), np.ones(10)])])
        y = np.concatenate([np.zeros(10), np.ones(10)])
        fit = fit_logistic(x, y)
        assert fit.separation
        assert np.max(np.abs(fit.coef)) <= 30.0

    def test_constant_column_rejected(self):
        x = np.column_stack([np.ones(10), np.full(10, 3.0)])
        y = np.array([0, 1] * 5, dtype=float)
        with pytest.raises(ContractViolation):
            fit_logistic(x, y)

    def test_more_params_than_rows_rejected(self):
        with pytest.raises(ContractViolation):
            fit_logistic(np.ones((2, 3)), np.array([0.0, 1.0]))

    def test_nonbinary_outcome_rejected(self):
        with pytest.raises(ContractViolation):
            fit_logistic(np.ones((4, 1)), np.array([0.0, 0.5, 1.0, 1.0]))


class TestRubinCombine:
    def test_m2_fixture_exact(self):
        est = rubin_combine(np.array([1.0, 3.0]), np.array([1.0, 1.0]))
        assert est.qbar == 2.0
        assert est.ubar == 1.0
        assert est.between == 2.0
        assert est.total == 4.0
        assert est.nu == pytest.approx(16 / 9, abs=1e-12)

    def test_identical_imputations_flagged(self):
        est = rubin_combine(np.array([2.0, 2.0, 2.0]), np.array([0.5, 0.5, 0.5]))
        assert est.between == 0.0
        assert est.total == est.ubar
        assert est.nu == 1e6
        assert "zero_between_variance" in est.flags

    def test_interval_widens_with_between_variance(self):
        widths = []
        for spread in (0.1, 0.5, 1.0, 2.0):
            est = rubin_combine(np.array([-spread, spread]), np.array([1.0, 1.0]))
            widths.append(est.ci_high - est.ci_low)
        assert all(b > a for a, b in zip(widths, widths[1:]))

    def test_permutation_invariance(self, rng):
        q = rng.normal(size=7)
        u = rng.uniform(0.1, 2.0, size=7)
        a = rubin_combine(q, u)
        perm = rng.permutation(7)
        b = rubin_combine(q[perm], u[perm])
        assert a.qbar == pytest.approx(b.qbar)
        assert a.total == pytest.approx(b.total)
        assert a.nu == pytest.approx(b.nu)

    def test_total_dominates_components(self, rng):
        for _ in range(50):
            m = int(rng.integers(2, 12))
            q = rng.normal(size=m)
            u = rng.uniform(0.0, 3.0, size=m)
            est = rubin_combine(q, u)
            assert est.total >= est.ubar - 1e-12
            assert est.total >= (1 + 1 / m) * est.between - 1e-12

    def test_zero_within_variance_counts(self):
        # pooling pure counts: no within-imputation sampling variance
        est = rubin_combine(np.array([100.0, 120.0, 90.0]), np.zeros(3))
        assert est.ubar == 0.0
        assert est.total == pytest.approx((1 + 1 / 3) * est.between)
        assert math.sqrt(est.total) > 0

    def test_requires_two_imputations(self):
        with pytest.raises(ContractViolation):
            rubin_combine(np.array([1.0]), np.array([1.0]))

    def test_level_validation(self):
        with pytest.raises(ContractViolation):
            rubin_combine(np.array([1.0, 2.0]), np.array([1.0, 1.0]), level=1.5)


class TestCombineFits:
    def test_pooled_coefficient(self, rng):
        fits = []
        for seed in range(5):
            local = np.random.default_rng(seed)
            n = 150
            x = np.column_stack([np.ones(n), local.normal(size=n)])
            y = (local.random(n) < expit(0.2 + 0.9 * x[:, 1])).astype(float)
            fits.append(fit_logistic(x, y))
        est = combine_logistic_fits(fits, coef_index=1)
        assert est.m == 5
        assert est.ci_low < est.qbar < est.ci_high
        assert 0.2 < est.qbar < 1.8


class TestRubinProperties:
    from hypothesis import given, settings, strategies as st

    @given(
        q=st.lists(st.floats(-50, 50), min_size=2, max_size=10),
        u=st.lists(st.floats(0, 10), min_size=2, max_size=10),
    )
    @settings(max_examples=60, deadline=None)
    def test_variance_decomposition_invariants(self, q, u):
        m = min(len(q), len(u))
        est = rubin_combine(np.array(q[:m]), np.array(u[:m]))
        assert est.total >= est.ubar - 1e-9
        assert est.total == pytest.approx(est.ubar + (1 + 1 / m) * est.between, rel=1e-12)
        assert est.nu > 0
        assert est.ci_low <= est.qbar <= est.ci_high
