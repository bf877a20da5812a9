"""Asymptotic ICL criterion and grid search over class counts and
missingness kinds.

The maximized complete log-likelihood in the criterion is replaced by the
variational lower bound J (entropy included; a config switch removes it).
The o(log n) remainder terms are dropped.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .criterion import entropy
from .inference import FitConfig, FitResult, multi_start_fit
from .model import ContractError, MissingnessKind, ObservedMatrix

logger = logging.getLogger(__name__)

# parsimony order used to break exact ICL ties
_KIND_PARSIMONY = {MissingnessKind.MCAR: 0, MissingnessKind.MAR: 1,
                   MissingnessKind.MNAR: 2}


@dataclass(frozen=True)
class SelectionEntry:
    nq: int
    nl: int
    kind: MissingnessKind
    icl: float
    elbo: float
    fit_ref: Optional[FitResult] = None
    error: Optional[str] = None


def _class_penalties(n1, n2, nq, nl) -> float:
    return (-0.5 * nq * nl * np.log(n1 * n2)
            - 0.5 * (nq - 1) * np.log(n1)
            - 0.5 * (nl - 1) * np.log(n2))


def _gaussian_correction(n1, n2) -> float:
    return (n1 * np.log(2.0 * np.pi) - np.log(n1)
            + n2 * np.log(2.0 * np.pi) - np.log(n2))


def _bound_value(fit: FitResult, include_entropy: bool) -> float:
    if include_entropy:
        return fit.elbo
    return fit.elbo - entropy(fit.varstate)


def icl_nmar(fit: FitResult, n1: int, n2: int, nq: int, nl: int,
             include_entropy: bool = True) -> float:
    """ICL with the full Gaussian correction (all four deviation blocks)."""
    if fit.params.kind is not MissingnessKind.MNAR:
        raise ContractError("icl_nmar requires an MNAR fit")
    return (_bound_value(fit, include_entropy)
            + _class_penalties(n1, n2, nq, nl) + _gaussian_correction(n1, n2))


def icl_mar(fit: FitResult, n1: int, n2: int, nq: int, nl: int,
            include_entropy: bool = True) -> float:
    """ICL with half the Gaussian correction (row/column blocks only)."""
    if fit.params.kind is not MissingnessKind.MAR:
        raise ContractError("icl_mar requires a MAR fit")
    return (_bound_value(fit, include_entropy)
            + _class_penalties(n1, n2, nq, nl)
            + 0.5 * _gaussian_correction(n1, n2))


def icl_mcar(fit: FitResult, n1: int, n2: int, nq: int, nl: int,
             include_entropy: bool = True) -> float:
    """ICL without Gaussian correction (no deviation blocks).

    The reference derivation covers MAR and MNAR only; this extension
    simply removes the vanished latent blocks.
    """
    if fit.params.kind is not MissingnessKind.MCAR:
        raise ContractError("icl_mcar requires an MCAR fit")
    return _bound_value(fit, include_entropy) + _class_penalties(n1, n2, nq, nl)


_ICL_BY_KIND = {MissingnessKind.MNAR: icl_nmar, MissingnessKind.MAR: icl_mar,
                MissingnessKind.MCAR: icl_mcar}


def icl(fit: FitResult, n1: int, n2: int, include_entropy: bool = True) -> float:
    """Dispatch on the fit's missingness kind."""
    return _ICL_BY_KIND[fit.params.kind](
        fit, n1, n2, fit.params.nq, fit.params.nl, include_entropy)


def select_model(x: ObservedMatrix, nq_range, nl_range, kinds,
                 cfg: FitConfig, include_entropy: bool = True,
                 keep_fits: bool = True):
    """One multi-start fit per grid cell; returns (best entry, full table).

    Ties break toward fewer classes, then the more parsimonious
    missingness kind.
    """
    nq_range = list(nq_range)
    nl_range = list(nl_range)
    kinds = list(kinds)
    if not nq_range or not nl_range or not kinds:
        raise ContractError("selection ranges must be non-empty")
    table = []
    for kind in kinds:
        for nq in nq_range:
            for nl in nl_range:
                try:
                    fit = multi_start_fit(x, nq, nl, kind, cfg)
                    value = _ICL_BY_KIND[kind](fit, x.n_rows, x.n_cols,
                                               nq, nl, include_entropy)
                    table.append(SelectionEntry(
                        nq, nl, kind, value, fit.elbo,
                        fit_ref=fit if keep_fits else None))
                except Exception as exc:  # record and continue the grid
                    logger.warning("fit failed at (nq=%d, nl=%d, %s): %s",
                                   nq, nl, kind.value, exc)
                    table.append(SelectionEntry(nq, nl, kind, float("nan"),
                                                float("nan"), error=str(exc)))
    ok = [e for e in table if e.error is None]
    if not ok:
        raise RuntimeError("model selection failed: no grid cell fitted")
    best = max(ok, key=lambda e: (e.icl, -(e.nq + e.nl),
                                  -_KIND_PARSIMONY[e.kind]))
    return best, table
