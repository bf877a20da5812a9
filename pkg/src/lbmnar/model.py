"""Core domain types and cell-level probability functions.

The generative model co-clusters a binary matrix whose entries may be
missing.  Rows and columns carry latent classes; each (row class, column
class) block shares a Bernoulli parameter ``pi[q, l]``.  Whether a cell is
observed is governed by a logistic propensity built from a global offset
``mu`` plus Gaussian row/column deviations (``a``, ``p``) and, for
informative missingness, value-dependent deviations (``b``, ``q``).

Observed cells take values in {0, 1, NA}; internally NA is encoded as -1
in an int8 array.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, log_expit

# Cell states in ObservedMatrix.cells
CELL_ZERO = 0
CELL_ONE = 1
CELL_MISSING = -1

# pi is kept strictly inside (0, 1); optimizers work on the logit scale.
PI_EPS = 1e-6


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ContractError(ValueError):
    """Inconsistent shapes or an operation called outside its contract."""


class MissingnessKind(enum.Enum):
    """Which deviations from the global observation propensity are active.

    MCAR: no deviations (missingness independent of everything).
    MAR: row/column deviations ``a``, ``p`` only (independent of values).
    MNAR: adds value-dependent deviations ``b``, ``q``.
    """

    MCAR = "mcar"
    MAR = "mar"
    MNAR = "mnar"

    @property
    def has_ap(self) -> bool:
        return self is not MissingnessKind.MCAR

    @property
    def has_bq(self) -> bool:
        return self is MissingnessKind.MNAR


def logistic(x):
    """Numerically stable 1 / (1 + exp(-x)); accepts scalars or arrays."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DomainError("logistic: input must be finite")
    out = expit(x)
    return float(out) if out.ndim == 0 else out


def log_logistic(x):
    """log(logistic(x)) without overflow for large |x|."""
    x = np.asarray(x, dtype=float)
    out = log_expit(x)
    return float(out) if out.ndim == 0 else out


def clamp_pi(pi):
    """Push block probabilities strictly inside (0, 1)."""
    return np.clip(pi, PI_EPS, 1.0 - PI_EPS)


@dataclass(frozen=True)
class ObservedMatrix:
    """A ternary data matrix; the sole input to inference.

    ``cells`` is an int8 array with entries CELL_ZERO, CELL_ONE or
    CELL_MISSING.
    """

    cells: np.ndarray

    def __post_init__(self):
        cells = np.asarray(self.cells, dtype=np.int8)
        if cells.ndim != 2 or cells.shape[0] < 1 or cells.shape[1] < 1:
            raise ContractError("ObservedMatrix: cells must be a non-empty 2-d array")
        if not np.isin(cells, (CELL_ZERO, CELL_ONE, CELL_MISSING)).all():
            raise ContractError("ObservedMatrix: cells must be 0, 1 or -1 (missing)")
        object.__setattr__(self, "cells", cells)

    @property
    def n_rows(self) -> int:
        return self.cells.shape[0]

    @property
    def n_cols(self) -> int:
        return self.cells.shape[1]

    @property
    def missing_fraction(self) -> float:
        return float(np.mean(self.cells == CELL_MISSING))

    def masks(self):
        """Boolean (ones, zeros, missing) indicator matrices."""
        c = self.cells
        return c == CELL_ONE, c == CELL_ZERO, c == CELL_MISSING


@dataclass(frozen=True)
class ModelParams:
    """Full parameter set theta of the generative model.

    ``var_*`` fields are variances (not standard deviations) of the
    centred Gaussian propensity deviations.
    """

    kind: MissingnessKind
    alpha_rows: np.ndarray
    alpha_cols: np.ndarray
    pi: np.ndarray
    mu: float
    var_a: float = 0.0
    var_b: float = 0.0
    var_p: float = 0.0
    var_q: float = 0.0

    def __post_init__(self):
        a1 = np.asarray(self.alpha_rows, dtype=float)
        a2 = np.asarray(self.alpha_cols, dtype=float)
        pi = clamp_pi(np.asarray(self.pi, dtype=float))
        if a1.ndim != 1 or a2.ndim != 1:
            raise ContractError("alpha_rows/alpha_cols must be vectors")
        if pi.shape != (a1.size, a2.size):
            raise ContractError("pi must have shape (nq, nl)")
        if np.any(a1 <= 0) or np.any(a2 <= 0):
            raise DomainError("class proportions must be strictly positive")
        if abs(a1.sum() - 1.0) > 1e-8 or abs(a2.sum() - 1.0) > 1e-8:
            raise DomainError("class proportions must sum to 1")
        for name in ("var_a", "var_b", "var_p", "var_q"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be nonnegative")
        if not self.kind.has_ap and (self.var_a != 0 or self.var_p != 0):
            raise ContractError("MCAR forces var_a = var_p = 0")
        if not self.kind.has_bq and (self.var_b != 0 or self.var_q != 0):
            raise ContractError(f"{self.kind.value} forces var_b = var_q = 0")
        object.__setattr__(self, "alpha_rows", a1 / a1.sum())
        object.__setattr__(self, "alpha_cols", a2 / a2.sum())
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "mu", float(self.mu))

    @property
    def nq(self) -> int:
        return self.alpha_rows.size

    @property
    def nl(self) -> int:
        return self.alpha_cols.size


@dataclass(frozen=True)
class CompleteSample:
    """Ground truth drawn from the generative model."""

    row_labels: np.ndarray
    col_labels: np.ndarray
    a: np.ndarray
    b: np.ndarray
    p: np.ndarray
    q: np.ndarray
    x_complete: np.ndarray
    mask: np.ndarray
    x_observed: ObservedMatrix = field(init=False)

    def __post_init__(self):
        xc = np.asarray(self.x_complete, dtype=np.int8)
        mask = np.asarray(self.mask, dtype=np.int8)
        if xc.shape != mask.shape:
            raise ContractError("x_complete and mask shapes differ")
        cells = np.where(mask == 1, xc, np.int8(CELL_MISSING))
        object.__setattr__(self, "x_complete", xc)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "x_observed", ObservedMatrix(cells))

    @property
    def n_rows(self) -> int:
        return self.x_complete.shape[0]

    @property
    def n_cols(self) -> int:
        return self.x_complete.shape[1]


def cell_probs(pi_ql, mu, a, b, p, q):
    """Probabilities of observing 0, 1 or NA in one cell.

    p1 couples the block probability with the propensity at the
    value-dependent deviation (+b, +q); p0 uses the opposite sign.
    Returns (p0, p1, p_na) with p0 + p1 + p_na = 1.
    """
    pi_ql = np.asarray(pi_ql, dtype=float)
    if np.any(pi_ql <= 0) or np.any(pi_ql >= 1):
        raise DomainError("cell_probs: pi_ql must lie strictly in (0, 1)")
    args = [np.asarray(v, dtype=float) for v in (mu, a, b, p, q)]
    if not all(np.all(np.isfinite(v)) for v in args):
        raise DomainError("cell_probs: latent inputs must be finite")
    mu, a, b, p, q = args
    p1 = pi_ql * expit(mu + a + b + p + q)
    p0 = (1.0 - pi_ql) * expit(mu + a - b + p - q)
    p_na = 1.0 - p0 - p1
    return p0, p1, p_na


def _gauss_logpdf_sum(values: np.ndarray, var: float) -> float:
    if var <= 0:
        raise DomainError("variance must be positive for an active latent block")
    n = values.size
    return float(-0.5 * n * np.log(2.0 * np.pi * var) - np.sum(values**2) / (2.0 * var))


def complete_loglik(sample: CompleteSample, params: ModelParams) -> float:
    """Log-density of the complete data (labels, deviations, matrix, mask).

    Sums the multinomial label terms, the Gaussian terms of the active
    deviation blocks and the per-cell categorical terms evaluated at the
    sampled values (not their expectations).
    """
    y1 = np.asarray(sample.row_labels)
    y2 = np.asarray(sample.col_labels)
    if y1.size != sample.n_rows or y2.size != sample.n_cols:
        raise ContractError("label vectors do not match matrix dimensions")
    if y1.max(initial=0) >= params.nq or y2.max(initial=0) >= params.nl:
        raise ContractError("labels exceed the class counts of params")

    total = float(np.sum(np.log(params.alpha_rows[y1])))
    total += float(np.sum(np.log(params.alpha_cols[y2])))

    if params.kind.has_ap:
        total += _gauss_logpdf_sum(np.asarray(sample.a, float), params.var_a)
        total += _gauss_logpdf_sum(np.asarray(sample.p, float), params.var_p)
    if params.kind.has_bq:
        total += _gauss_logpdf_sum(np.asarray(sample.b, float), params.var_b)
        total += _gauss_logpdf_sum(np.asarray(sample.q, float), params.var_q)

    a = np.asarray(sample.a, float)[:, None] if params.kind.has_ap else 0.0
    p = np.asarray(sample.p, float)[None, :] if params.kind.has_ap else 0.0
    b = np.asarray(sample.b, float)[:, None] if params.kind.has_bq else 0.0
    q = np.asarray(sample.q, float)[None, :] if params.kind.has_bq else 0.0

    pi_cells = params.pi[y1][:, y2]
    plus = params.mu + a + b + p + q
    minus = params.mu + a - b + p - q

    cells = sample.x_observed.cells
    ones = cells == CELL_ONE
    zeros = cells == CELL_ZERO
    nas = cells == CELL_MISSING

    log_p1 = np.log(pi_cells) + log_expit(plus)
    log_p0 = np.log1p(-pi_cells) + log_expit(minus)
    p_na = 1.0 - pi_cells * expit(plus) - (1.0 - pi_cells) * expit(minus)

    total += float(np.sum(log_p1[ones]))
    total += float(np.sum(log_p0[zeros]))
    total += float(np.sum(np.log(np.maximum(p_na[nas], 1e-300))))
    return total
