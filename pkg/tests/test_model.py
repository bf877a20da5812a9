"""Core types, cell probabilities and the complete-data log-density."""

import numpy as np
import pytest
from scipy.special import expit

from lbmnar.model import (
    CELL_MISSING,
    CompleteSample,
    ContractError,
    DomainError,
    MissingnessKind,
    ModelParams,
    ObservedMatrix,
    cell_probs,
    complete_loglik,
    logistic,
)


def make_params(kind=MissingnessKind.MNAR, **overrides):
    base = dict(
        kind=kind,
        alpha_rows=np.array([0.3, 0.7]),
        alpha_cols=np.array([0.5, 0.2, 0.3]),
        pi=np.array([[0.2, 0.5, 0.8], [0.6, 0.3, 0.9]]),
        mu=0.5,
        var_a=1.0 if kind.has_ap else 0.0,
        var_p=0.8 if kind.has_ap else 0.0,
        var_b=1.2 if kind.has_bq else 0.0,
        var_q=0.6 if kind.has_bq else 0.0,
    )
    base.update(overrides)
    return ModelParams(**base)


class TestLogistic:
    def test_known_values(self):
        assert logistic(0.0) == pytest.approx(0.5)
        assert logistic(2.0) == pytest.approx(1.0 / (1.0 + np.exp(-2.0)))

    def test_extreme_arguments_saturate(self):
        assert logistic(800.0) == pytest.approx(1.0)
        assert logistic(-800.0) == pytest.approx(0.0)

    def test_rejects_non_finite(self):
        with pytest.raises(DomainError):
            logistic(np.inf)
        with pytest.raises(DomainError):
            logistic(np.array([0.0, np.nan]))


class TestObservedMatrix:
    def test_basic_properties(self):
        x = ObservedMatrix(np.array([[1, 0, -1], [0, -1, -1]]))
        assert x.n_rows == 2 and x.n_cols == 3
        assert x.missing_fraction == pytest.approx(0.5)
        ones, zeros, missing = x.masks()
        assert ones.sum() == 1 and zeros.sum() == 2 and missing.sum() == 3

    def test_rejects_bad_values(self):
        with pytest.raises(ContractError):
            ObservedMatrix(np.array([[2, 0]]))

    def test_rejects_wrong_shape(self):
        with pytest.raises(ContractError):
            ObservedMatrix(np.array([1, 0, -1]))


class TestModelParams:
    def test_kind_constraints(self):
        with pytest.raises(ContractError):
            make_params(MissingnessKind.MCAR, var_a=1.0)
        with pytest.raises(ContractError):
            make_params(MissingnessKind.MAR, var_b=1.0)

    def test_rejects_bad_proportions(self):
        with pytest.raises(DomainError):
            make_params(alpha_rows=np.array([0.5, 0.6]))
        with pytest.raises(DomainError):
            make_params(alpha_rows=np.array([1.0, 0.0]))

    def test_rejects_negative_variance(self):
        with pytest.raises(DomainError):
            make_params(var_a=-0.1)

    def test_class_counts(self):
        p = make_params()
        assert p.nq == 2 and p.nl == 3


class TestCellProbs:
    def test_sums_to_one(self):
        p0, p1, p_na = cell_probs(0.3, 0.5, 0.2, -0.1, 0.4, 0.7)
        assert p0 + p1 + p_na == pytest.approx(1.0)
        assert p0 > 0 and p1 > 0 and p_na > 0

    def test_matches_direct_formula(self):
        pi, mu, a, b, p, q = 0.4, 1.0, 0.3, -0.2, 0.1, 0.5
        p0, p1, p_na = cell_probs(pi, mu, a, b, p, q)
        assert p1 == pytest.approx(pi * expit(mu + a + b + p + q))
        assert p0 == pytest.approx((1 - pi) * expit(mu + a - b + p - q))

    def test_mcar_reduces_to_global_propensity(self):
        # with all deviations zero, P(observed) = logistic(mu) exactly
        p0, p1, p_na = cell_probs(0.3, 0.7, 0.0, 0.0, 0.0, 0.0)
        assert p0 + p1 == pytest.approx(expit(0.7))

    def test_rejects_degenerate_pi(self):
        with pytest.raises(DomainError):
            cell_probs(0.0, 0.5, 0, 0, 0, 0)
        with pytest.raises(DomainError):
            cell_probs(1.0, 0.5, 0, 0, 0, 0)


class TestCompleteSample:
    def test_observed_matrix_derivation(self):
        xc = np.array([[1, 0], [0, 1]], dtype=np.int8)
        mask = np.array([[1, 0], [1, 1]], dtype=np.int8)
        s = CompleteSample(np.array([0, 1]), np.array([0, 1]),
                           np.zeros(2), np.zeros(2), np.zeros(2), np.zeros(2),
                           xc, mask)
        expected = np.array([[1, CELL_MISSING], [0, 1]], dtype=np.int8)
        np.testing.assert_array_equal(s.x_observed.cells, expected)


class TestCompleteLoglik:
    def test_single_cell_oracle(self):
        # one cell, known labels and deviations: the density factorizes into
        # label + four Gaussian + one categorical term, all computable by hand
        params = ModelParams(MissingnessKind.MNAR,
                             np.array([0.4, 0.6]), np.array([0.7, 0.3]),
                             np.array([[0.2, 0.8], [0.5, 0.6]]), mu=0.3,
                             var_a=1.0, var_b=2.0, var_p=0.5, var_q=1.5)
        a, b, p, q = 0.4, -0.3, 0.2, 0.1
        s = CompleteSample(np.array([1]), np.array([0]),
                           np.array([a]), np.array([b]),
                           np.array([p]), np.array([q]),
                           np.array([[1]], dtype=np.int8),
                           np.array([[1]], dtype=np.int8))

        def gauss(v, var):
            return -0.5 * np.log(2 * np.pi * var) - v**2 / (2 * var)

        expected = (np.log(0.6) + np.log(0.7)
                    + gauss(a, 1.0) + gauss(b, 2.0) + gauss(p, 0.5) + gauss(q, 1.5)
                    + np.log(0.5 * expit(0.3 + a + b + p + q)))
        assert complete_loglik(s, params) == pytest.approx(expected, rel=1e-12)

    def test_missing_cell_uses_categorical_complement(self):
        params = make_params()
        rng = np.random.default_rng(0)
        n1, n2 = 4, 5
        s = CompleteSample(rng.integers(0, 2, n1), rng.integers(0, 3, n2),
                           rng.normal(size=n1), rng.normal(size=n1),
                           rng.normal(size=n2), rng.normal(size=n2),
                           rng.integers(0, 2, (n1, n2)).astype(np.int8),
                           np.zeros((n1, n2), dtype=np.int8))
        # brute-force per-cell sum
        total = (np.log(params.alpha_rows[s.row_labels]).sum()
                 + np.log(params.alpha_cols[s.col_labels]).sum())
        for v, var in ((s.a, params.var_a), (s.b, params.var_b),
                       (s.p, params.var_p), (s.q, params.var_q)):
            total += np.sum(-0.5 * np.log(2 * np.pi * var) - v**2 / (2 * var))
        for i in range(n1):
            for j in range(n2):
                p0, p1, p_na = cell_probs(
                    params.pi[s.row_labels[i], s.col_labels[j]], params.mu,
                    s.a[i], s.b[i], s.p[j], s.q[j])
                total += np.log(p_na)
        assert complete_loglik(s, params) == pytest.approx(total, rel=1e-10)

    def test_mcar_ignores_deviation_terms(self):
        params = make_params(MissingnessKind.MCAR, mu=0.2)
        xc = np.array([[1, 0], [0, 1]], dtype=np.int8)
        mask = np.ones((2, 2), dtype=np.int8)
        s = CompleteSample(np.array([0, 1]), np.array([0, 1]),
                           np.zeros(2), np.zeros(2), np.zeros(2), np.zeros(2),
                           xc, mask)
        pi = params.pi
        expected = (np.log(params.alpha_rows[[0, 1]]).sum()
                    + np.log(params.alpha_cols[[0, 1]]).sum()
                    + np.log(pi[0, 0] * expit(0.2)) + np.log(pi[1, 1] * expit(0.2))
                    + np.log((1 - pi[0, 1]) * expit(0.2))
                    + np.log((1 - pi[1, 0]) * expit(0.2)))
        assert complete_loglik(s, params) == pytest.approx(expected, rel=1e-12)

    def test_label_bounds_checked(self):
        params = make_params()
        s = CompleteSample(np.array([5]), np.array([0]),
                           np.zeros(1), np.zeros(1), np.zeros(1), np.zeros(1),
                           np.array([[1]], dtype=np.int8),
                           np.array([[1]], dtype=np.int8))
        with pytest.raises(ContractError):
            complete_loglik(s, params)
