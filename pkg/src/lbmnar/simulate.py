"""Sampling from the generative model and difficulty calibration.

The benchmark configuration follows the synthetic protocol: three
balanced row/column classes with an epsilon-patterned block matrix, and
unit-variance propensity deviations giving roughly 35% missing entries.
Task difficulty is measured by the conditional Bayes risk of the MAP
co-clustering given the observed matrix.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .inference import _gamma_from_labels, estep
from .model import (
    CELL_ONE,
    CELL_ZERO,
    CompleteSample,
    DomainError,
    MissingnessKind,
    ModelParams,
    ObservedMatrix,
)

logger = logging.getLogger(__name__)

# Maximum label-configuration count for the exact posterior enumeration.
EXACT_ENUM_LIMIT = 2**20


class CalibrationError(RuntimeError):
    """Target risk unreachable within the epsilon bracket."""


@dataclass(frozen=True)
class BenchmarkConfig:
    epsilon: float
    n_rows: int
    n_cols: int
    mnar_params: tuple = (1.0, 1.0, 1.0, 1.0, 1.0)  # mu, var_a, var_b, var_p, var_q

    def __post_init__(self):
        if not 0.0 < self.epsilon < 0.5:
            raise DomainError("epsilon must lie in (0, 0.5)")


@dataclass(frozen=True)
class RiskConfig:
    max_estep_iters: int = 200
    rel_tol: float = 1e-6
    method: str = "auto"  # auto | estep | exact
    seed: int = 0


def kind_for_variances(var_a, var_b, var_p, var_q) -> MissingnessKind:
    if var_b > 0 or var_q > 0:
        return MissingnessKind.MNAR
    if var_a > 0 or var_p > 0:
        return MissingnessKind.MAR
    return MissingnessKind.MCAR


def make_benchmark_params(epsilon: float, mnar=(1.0, 1.0, 1.0, 1.0, 1.0)) -> ModelParams:
    """Three-class benchmark parameters with the epsilon block pattern."""
    if not 0.0 < epsilon < 0.5:
        raise DomainError("epsilon must lie in (0, 0.5)")
    e, o = epsilon, 1.0 - epsilon
    pi = np.array([[e, e, o],
                   [e, o, o],
                   [o, o, e]])
    mu, var_a, var_b, var_p, var_q = mnar
    kind = kind_for_variances(var_a, var_b, var_p, var_q)
    return ModelParams(kind, np.full(3, 1 / 3), np.full(3, 1 / 3), pi, mu,
                       var_a=var_a, var_b=var_b, var_p=var_p, var_q=var_q)


def sample_lbm(params: ModelParams, n_rows: int, n_cols: int,
               seed) -> CompleteSample:
    """Draw one complete sample; bit-reproducible for a given seed."""
    rng = np.random.default_rng(seed)
    y1 = rng.choice(params.nq, size=n_rows, p=params.alpha_rows)
    y2 = rng.choice(params.nl, size=n_cols, p=params.alpha_cols)

    def draw(var, n):
        return rng.normal(0.0, np.sqrt(var), size=n) if var > 0 else np.zeros(n)

    a = draw(params.var_a, n_rows)
    b = draw(params.var_b, n_rows)
    p = draw(params.var_p, n_cols)
    q = draw(params.var_q, n_cols)

    block_probs = params.pi[y1][:, y2]
    xc = (rng.random((n_rows, n_cols)) < block_probs).astype(np.int8)

    sign = 2.0 * xc - 1.0  # value-dependent deviations flip with the cell value
    propensity = (params.mu + a[:, None] + p[None, :]
                  + sign * (b[:, None] + q[None, :]))
    mask = (rng.random((n_rows, n_cols)) < expit(propensity)).astype(np.int8)
    return CompleteSample(y1, y2, a, b, p, q, xc, mask)


# ---------------------------------------------------------------------------
# conditional Bayes risk

def risk_from_marginals(tau_rows: np.ndarray, tau_cols: np.ndarray) -> float:
    """Expected matrix-entry misclassification of the MAP labels."""
    rr = 1.0 - float(np.mean(tau_rows.max(axis=1)))
    rc = 1.0 - float(np.mean(tau_cols.max(axis=1)))
    return rr + rc - rr * rc


def exact_label_marginals(x: ObservedMatrix, params: ModelParams):
    """Posterior label marginals by full enumeration (MCAR only).

    Under MCAR the mask factor is label-independent, so the posterior over
    labels involves only the block probabilities at observed cells.
    """
    if params.kind is not MissingnessKind.MCAR:
        raise DomainError("exact enumeration requires the MCAR kind")
    n1, n2, nq, nl = x.n_rows, x.n_cols, params.nq, params.nl
    if float(nq) ** n1 * float(nl) ** n2 > EXACT_ENUM_LIMIT:
        raise DomainError("matrix too large for exact enumeration")
    ones = (x.cells == CELL_ONE).astype(float)
    zeros = (x.cells == CELL_ZERO).astype(float)
    log_pi = np.log(params.pi)
    log_1mpi = np.log1p(-params.pi)
    la1 = np.log(params.alpha_rows)
    la2 = np.log(params.alpha_cols)

    configs1 = np.array(list(itertools.product(range(nq), repeat=n1)))
    configs2 = np.array(list(itertools.product(range(nl), repeat=n2)))
    logw = np.empty((configs1.shape[0], configs2.shape[0]))
    for i, c1 in enumerate(configs1):
        lp = log_pi[c1]        # (n1, nl)
        lm = log_1mpi[c1]
        base = la1[c1].sum()
        for j, c2 in enumerate(configs2):
            cell = ones * lp[:, c2] + zeros * lm[:, c2]
            logw[i, j] = base + la2[c2].sum() + cell.sum()
    logw -= logw.max()
    w = np.exp(logw)
    w /= w.sum()
    w1 = w.sum(axis=1)
    w2 = w.sum(axis=0)
    tau1 = np.zeros((n1, nq))
    for i in range(n1):
        for q in range(nq):
            tau1[i, q] = w1[configs1[:, i] == q].sum()
    tau2 = np.zeros((n2, nl))
    for j in range(n2):
        for l in range(nl):
            tau2[j, l] = w2[configs2[:, j] == l].sum()
    return tau1, tau2


def conditional_bayes_risk(x: ObservedMatrix, true_params: ModelParams,
                           config: RiskConfig = RiskConfig()) -> float:
    """Estimate the conditional Bayes risk of x under known parameters.

    Uses exact enumeration when feasible (MCAR, small matrices) and a
    variational posterior approximation (gamma optimized, theta frozen at
    the truth) otherwise.
    """
    method = config.method
    exact_ok = (true_params.kind is MissingnessKind.MCAR
                and float(true_params.nq) ** x.n_rows
                * float(true_params.nl) ** x.n_cols <= EXACT_ENUM_LIMIT)
    if method == "auto":
        method = "exact" if exact_ok else "estep"
    if method == "exact":
        tau1, tau2 = exact_label_marginals(x, true_params)
        return risk_from_marginals(tau1, tau2)
    if method != "estep":
        raise DomainError(f"unknown risk method: {config.method}")
    gamma, trace, converged = estep(x, true_params,
                                    max_iters=config.max_estep_iters,
                                    rel_tol=config.rel_tol, seed=config.seed)
    if not converged:
        logger.warning("conditional_bayes_risk: E-step not converged "
                       "(last J change %.3g); returning best-effort value",
                       trace[-1] - trace[-2])
    return risk_from_marginals(gamma.tau_rows, gamma.tau_cols)


def realized_risk(sample: CompleteSample, true_params: ModelParams,
                  config: RiskConfig = RiskConfig()) -> float:
    """Loss of the MAP co-clustering against the generating labels.

    The posterior mode is located by an E-step (theta frozen at the truth)
    started from the generating labels themselves; the resulting MAP
    assignment is scored with the matrix-entry loss against those labels.
    This is a one-draw Monte Carlo estimate of the conditional Bayes risk
    that, unlike the mean-field membership concentration, does not suffer
    from the overconfidence of factorized posteriors.
    """
    from .metrics import LabelAssignment, l_item, map_assignments
    gamma0 = _gamma_from_labels(sample.row_labels, sample.col_labels,
                                true_params.nq, true_params.nl, true_params)
    gamma, trace, converged = estep(sample.x_observed, true_params,
                                    gamma0=gamma0,
                                    max_iters=config.max_estep_iters,
                                    rel_tol=config.rel_tol, seed=config.seed)
    if not converged:
        logger.warning("realized_risk: E-step not converged "
                       "(last J change %.3g)", trace[-1] - trace[-2])
    truth = LabelAssignment(sample.row_labels, sample.col_labels)
    return l_item(truth, map_assignments(gamma),
                  true_params.nq, true_params.nl, align=True)


def calibrate_epsilon(target_risk: float, n_rows: int, n_cols: int,
                      mnar=(1.0, 1.0, 1.0, 1.0, 1.0), seed: int = 0,
                      tol: float = 0.005, n_seeds: int = 5,
                      bracket=(0.01, 0.49), max_iters: int = 30) -> float:
    """Bisection on epsilon until the median estimated risk hits the target.

    The same matrix seeds are reused at every probe (common random
    numbers), which makes the probed risk a deterministic, effectively
    monotone function of epsilon.
    """
    if not 0.0 < target_risk < 0.89:
        raise CalibrationError(f"target risk {target_risk} outside (0, 0.89)")
    seeds = [int(s.generate_state(1)[0]) for s in
             np.random.SeedSequence(seed).spawn(n_seeds)]
    cfg = RiskConfig(method="estep")

    def median_risk(eps: float) -> float:
        params = make_benchmark_params(eps, mnar)
        risks = [realized_risk(sample_lbm(params, n_rows, n_cols, s),
                               params, cfg)
                 for s in seeds]
        return float(np.median(risks))

    lo, hi = bracket
    r_lo, r_hi = median_risk(lo), median_risk(hi)
    if not (r_lo - tol <= target_risk <= r_hi + tol):
        raise CalibrationError(
            f"target {target_risk} outside bracket risks "
            f"[{r_lo:.4f} @ eps={lo}, {r_hi:.4f} @ eps={hi}]")
    best_eps, best_gap = (lo, abs(r_lo - target_risk))
    if abs(r_hi - target_risk) < best_gap:
        best_eps, best_gap = hi, abs(r_hi - target_risk)
    for _ in range(max_iters):
        if best_gap <= tol:
            return best_eps
        mid = 0.5 * (lo + hi)
        r_mid = median_risk(mid)
        if abs(r_mid - target_risk) < best_gap:
            best_eps, best_gap = mid, abs(r_mid - target_risk)
        if r_mid < target_risk:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-4:
            break
    if best_gap <= tol:
        return best_eps
    raise CalibrationError(
        f"bisection exhausted: best |risk - target| = {best_gap:.4f} "
        f"at eps = {best_eps:.4f}")
