"""Generative sampling, risk estimation and difficulty calibration."""

import numpy as np
import pytest
from scipy.special import expit

from lbmnar.model import (CELL_MISSING, DomainError, MissingnessKind,
                          ModelParams, ObservedMatrix)
from lbmnar.simulate import (EXACT_ENUM_LIMIT, BenchmarkConfig,
                             CalibrationError, RiskConfig,
                             conditional_bayes_risk, exact_label_marginals,
                             kind_for_variances, make_benchmark_params,
                             risk_from_marginals, sample_lbm)


class TestBenchmarkParams:
    def test_epsilon_pattern(self):
        p = make_benchmark_params(0.2)
        e, o = 0.2, 0.8
        np.testing.assert_allclose(p.pi, [[e, e, o], [e, o, o], [o, o, e]])
        np.testing.assert_allclose(p.alpha_rows, np.full(3, 1 / 3))
        assert p.kind is MissingnessKind.MNAR

    def test_kind_follows_variances(self):
        assert kind_for_variances(0, 0, 0, 0) is MissingnessKind.MCAR
        assert kind_for_variances(1, 0, 1, 0) is MissingnessKind.MAR
        assert kind_for_variances(1, 1, 1, 1) is MissingnessKind.MNAR
        assert make_benchmark_params(0.3, (1, 0, 0, 0, 0)).kind is \
            MissingnessKind.MCAR

    def test_epsilon_domain(self):
        with pytest.raises(DomainError):
            make_benchmark_params(0.0)
        with pytest.raises(DomainError):
            make_benchmark_params(0.5)
        with pytest.raises(DomainError):
            BenchmarkConfig(epsilon=0.6, n_rows=10, n_cols=10)


class TestSampling:
    def test_reproducible_for_fixed_seed(self):
        p = make_benchmark_params(0.25)
        s1 = sample_lbm(p, 15, 12, seed=5)
        s2 = sample_lbm(p, 15, 12, seed=5)
        np.testing.assert_array_equal(s1.x_observed.cells, s2.x_observed.cells)
        np.testing.assert_array_equal(s1.row_labels, s2.row_labels)
        np.testing.assert_array_equal(s1.a, s2.a)

    def test_different_seeds_differ(self):
        p = make_benchmark_params(0.25)
        s1 = sample_lbm(p, 15, 12, seed=5)
        s2 = sample_lbm(p, 15, 12, seed=6)
        assert not np.array_equal(s1.x_observed.cells, s2.x_observed.cells)

    def test_mcar_mask_rate_matches_mu(self):
        p = ModelParams(MissingnessKind.MCAR, np.full(3, 1 / 3),
                        np.full(3, 1 / 3), np.full((3, 3), 0.5), mu=1.2)
        s = sample_lbm(p, 300, 300, seed=0)
        assert s.mask.mean() == pytest.approx(expit(1.2), abs=0.01)
        assert np.all(s.b == 0) and np.all(s.q == 0)

    def test_block_frequencies_match_pi(self):
        p = make_benchmark_params(0.2)
        s = sample_lbm(p, 400, 400, seed=1)
        # complete matrix: block (0, 2) has probability 0.8
        rows = s.row_labels == 0
        cols = s.col_labels == 2
        freq = s.x_complete[np.ix_(rows, cols)].mean()
        assert freq == pytest.approx(0.8, abs=0.02)

    def test_mar_mask_independent_of_values(self):
        p = make_benchmark_params(0.3, (0.5, 1.0, 0.0, 1.0, 0.0))
        s = sample_lbm(p, 200, 200, seed=2)
        # under MAR the propensity ignores the cell value: the observed
        # rate among ones and zeros should agree
        ones = s.x_complete == 1
        rate_ones = s.mask[ones].mean()
        rate_zeros = s.mask[~ones].mean()
        assert rate_ones == pytest.approx(rate_zeros, abs=0.02)


class TestRisk:
    def test_risk_combination_formula(self):
        tau_r = np.array([[0.9, 0.1], [0.6, 0.4]])
        tau_c = np.array([[1.0, 0.0]])
        rr = 1 - (0.9 + 0.6) / 2
        assert risk_from_marginals(tau_r, tau_c) == pytest.approx(rr)

    def test_fully_missing_matrix_gives_prior_risk(self):
        p = ModelParams(MissingnessKind.MCAR, np.full(3, 1 / 3),
                        np.full(3, 1 / 3), np.full((3, 3), 0.5), mu=-30.0)
        x = ObservedMatrix(np.full((6, 6), CELL_MISSING, dtype=np.int8))
        # no observed cells: the posterior equals the uniform prior
        tau1, tau2 = exact_label_marginals(x, p)
        np.testing.assert_allclose(tau1, np.full((6, 3), 1 / 3), atol=1e-12)
        assert risk_from_marginals(tau1, tau2) == pytest.approx(8 / 9)

    def test_exact_marginals_require_mcar(self):
        p = make_benchmark_params(0.2)
        x = ObservedMatrix(np.zeros((3, 3), dtype=np.int8))
        with pytest.raises(DomainError):
            exact_label_marginals(x, p)

    def test_exact_marginals_respect_size_limit(self):
        p = ModelParams(MissingnessKind.MCAR, np.full(2, 0.5),
                        np.full(2, 0.5), np.full((2, 2), 0.5), mu=1.0)
        x = ObservedMatrix(np.zeros((30, 30), dtype=np.int8))
        assert 2.0**60 > EXACT_ENUM_LIMIT
        with pytest.raises(DomainError):
            exact_label_marginals(x, p)

    def test_near_deterministic_blocks_give_near_zero_risk(self):
        p = make_benchmark_params(0.02)
        s = sample_lbm(p, 40, 40, seed=3)
        risk = conditional_bayes_risk(s.x_observed, p,
                                      RiskConfig(method="estep"))
        assert risk <= 0.02

    def test_label_switching_invariance(self):
        rng = np.random.default_rng(4)
        pi = rng.uniform(0.2, 0.8, (2, 2))
        p = ModelParams(MissingnessKind.MCAR, np.array([0.4, 0.6]),
                        np.array([0.7, 0.3]), pi, mu=1.0)
        x = ObservedMatrix(rng.integers(0, 2, (4, 4)).astype(np.int8))
        risk = conditional_bayes_risk(x, p)
        perm = ModelParams(MissingnessKind.MCAR, p.alpha_rows[::-1].copy(),
                           p.alpha_cols[::-1].copy(), pi[::-1, ::-1].copy(),
                           mu=1.0)
        assert conditional_bayes_risk(x, perm) == pytest.approx(risk, abs=1e-12)

    def test_unknown_method_rejected(self):
        p = make_benchmark_params(0.2)
        s = sample_lbm(p, 5, 5, seed=0)
        with pytest.raises(DomainError):
            conditional_bayes_risk(s.x_observed, p, RiskConfig(method="guess"))


class TestCalibration:
    def test_target_domain_checked(self):
        from lbmnar.simulate import calibrate_epsilon
        with pytest.raises(CalibrationError):
            calibrate_epsilon(0.95, 20, 20)
        with pytest.raises(CalibrationError):
            calibrate_epsilon(0.0, 20, 20)
