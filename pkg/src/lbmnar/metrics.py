"""Co-clustering losses, label alignment and recovery diagnostics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .criterion import VariationalState
from .model import CompleteSample, ContractError, ModelParams


@dataclass(frozen=True)
class LabelAssignment:
    row_labels: np.ndarray
    col_labels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "row_labels",
                           np.asarray(self.row_labels, dtype=int))
        object.__setattr__(self, "col_labels",
                           np.asarray(self.col_labels, dtype=int))


def map_assignments(gamma: VariationalState) -> LabelAssignment:
    """MAP labels from the membership probabilities; ties go to the
    lowest class index (numpy argmax convention)."""
    return LabelAssignment(np.argmax(gamma.tau_rows, axis=1),
                           np.argmax(gamma.tau_cols, axis=1))


def _best_permutation(truth: np.ndarray, pred: np.ndarray, k: int) -> np.ndarray:
    """Permutation perm with perm[pred] maximizing agreement with truth."""
    confusion = np.zeros((k, k))
    np.add.at(confusion, (pred, truth), 1.0)
    rows, cols = linear_sum_assignment(-confusion)
    perm = np.empty(k, dtype=int)
    perm[rows] = cols
    return perm


def align_labels(truth: LabelAssignment, pred: LabelAssignment,
                 nq: int, nl: int):
    """Optimal-assignment permutations (rows, columns solved independently:
    the matrix-entry loss decouples)."""
    if truth.row_labels.size != pred.row_labels.size:
        raise ContractError("row label vectors differ in length")
    if truth.col_labels.size != pred.col_labels.size:
        raise ContractError("column label vectors differ in length")
    row_perm = _best_permutation(truth.row_labels, pred.row_labels, nq)
    col_perm = _best_permutation(truth.col_labels, pred.col_labels, nl)
    return row_perm, col_perm


def l_item(truth: LabelAssignment, pred: LabelAssignment, nq: int, nl: int,
           align: bool = True) -> float:
    """Fraction of matrix entries with a misclassified row or column:
    l_r + l_c - l_r * l_c."""
    pred_rows, pred_cols = pred.row_labels, pred.col_labels
    if align:
        row_perm, col_perm = align_labels(truth, pred, nq, nl)
        pred_rows = row_perm[pred_rows]
        pred_cols = col_perm[pred_cols]
    lr = 1.0 - float(np.mean(truth.row_labels == pred_rows))
    lc = 1.0 - float(np.mean(truth.col_labels == pred_cols))
    return lr + lc - lr * lc


def param_max_error(truth: ModelParams, fitted: ModelParams,
                    row_perm, col_perm) -> float:
    """Largest absolute error over blocks of the fitted pi, after mapping
    fitted classes onto the true ones."""
    if truth.pi.shape != fitted.pi.shape:
        raise ContractError("pi shapes differ")
    # row_perm/col_perm map fitted classes onto true classes
    aligned = np.empty_like(fitted.pi)
    for qf in range(truth.nq):
        for lf in range(truth.nl):
            aligned[row_perm[qf], col_perm[lf]] = fitted.pi[qf, lf]
    return float(np.max(np.abs(truth.pi - aligned)))


def latent_mse(truth: CompleteSample, gamma: VariationalState):
    """Mean squared error of the posterior-mean propensity deviations."""
    def mse(nu, target):
        if nu is None:
            return float(np.mean(np.asarray(target, float) ** 2))
        if nu.size != np.asarray(target).size:
            raise ContractError("latent vector lengths differ")
        return float(np.mean((nu - np.asarray(target, float)) ** 2))

    return (mse(gamma.nu_a, truth.a), mse(gamma.nu_b, truth.b),
            mse(gamma.nu_p, truth.p), mse(gamma.nu_q, truth.q))
