"""Unconstrained reparametrization for the quasi-Newton solvers.

Simplex-valued quantities (tau rows, class proportions) become softmax
logits with the first logit pinned at 0; block probabilities use the
logit scale; variances use the log scale.  Gradients are chained from the
natural-parameter gradients produced by criterion.evaluate.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .model import MissingnessKind, ModelParams, clamp_pi
from .criterion import VariationalState, TAU_FLOOR

LOGIT_BOUND = 30.0
LOG_RHO_BOUNDS = (-18.0, 6.0)
LOG_VAR_BOUNDS = (-18.0, 6.0)
NU_BOUND = 30.0
MU_BOUND = 30.0
PI_LOGIT_BOUND = 13.815510557964274  # logit(1 - 1e-6)


def softmax_pinned(logits: np.ndarray) -> np.ndarray:
    """Rows of probabilities from free logits; implicit leading logit 0."""
    full = np.concatenate([np.zeros((logits.shape[0], 1)), logits], axis=1)
    full -= full.max(axis=1, keepdims=True)
    e = np.exp(full)
    return e / e.sum(axis=1, keepdims=True)


def logits_pinned(prob: np.ndarray) -> np.ndarray:
    p = np.maximum(prob, TAU_FLOOR)
    return np.log(p[:, 1:]) - np.log(p[:, :1])


def softmax_grad(prob: np.ndarray, grad_prob: np.ndarray) -> np.ndarray:
    """Chain rule through the pinned softmax; returns free-logit gradient."""
    inner = np.sum(grad_prob * prob, axis=1, keepdims=True)
    return (prob * (grad_prob - inner))[:, 1:]


# --- variational parameters -------------------------------------------------

def gamma_block_names(kind: MissingnessKind):
    names = []
    if kind.has_ap:
        names += ["a", "p"]
    if kind.has_bq:
        names += ["b", "q"]
    return names


def pack_gamma(gamma: VariationalState, kind: MissingnessKind) -> np.ndarray:
    parts = [logits_pinned(gamma.tau_rows).ravel(),
             logits_pinned(gamma.tau_cols).ravel()]
    for name in gamma_block_names(kind):
        parts.append(getattr(gamma, "nu_" + name))
        parts.append(np.log(getattr(gamma, "rho_" + name)))
    return np.concatenate(parts)


def unpack_gamma(vec, n1, n2, nq, nl, kind: MissingnessKind) -> VariationalState:
    off = n1 * (nq - 1)
    tau1 = softmax_pinned(vec[:off].reshape(n1, nq - 1))
    tau2 = softmax_pinned(vec[off:off + n2 * (nl - 1)].reshape(n2, nl - 1))
    off += n2 * (nl - 1)
    fields = {}
    for name in gamma_block_names(kind):
        n = n1 if name in ("a", "b") else n2
        fields["nu_" + name] = vec[off:off + n]
        off += n
        fields["rho_" + name] = np.exp(vec[off:off + n])
        off += n
    return VariationalState(tau1, tau2, **fields)


def pack_gamma_grad(gamma: VariationalState, grads: dict,
                    kind: MissingnessKind) -> np.ndarray:
    parts = [softmax_grad(gamma.tau_rows, grads["tau_rows"]).ravel(),
             softmax_grad(gamma.tau_cols, grads["tau_cols"]).ravel()]
    for name in gamma_block_names(kind):
        rho = getattr(gamma, "rho_" + name)
        parts.append(grads["nu_" + name])
        parts.append(grads["rho_" + name] * rho)
    return np.concatenate(parts)


def gamma_bounds(n1, n2, nq, nl, kind: MissingnessKind):
    bounds = [(-LOGIT_BOUND, LOGIT_BOUND)] * (n1 * (nq - 1) + n2 * (nl - 1))
    for name in gamma_block_names(kind):
        n = n1 if name in ("a", "b") else n2
        bounds += [(-NU_BOUND, NU_BOUND)] * n
        bounds += [LOG_RHO_BOUNDS] * n
    return bounds


# --- model parameters -------------------------------------------------------

def theta_var_names(kind: MissingnessKind):
    names = []
    if kind.has_ap:
        names += ["var_a", "var_p"]
    if kind.has_bq:
        names += ["var_b", "var_q"]
    return names


def pack_theta(params: ModelParams) -> np.ndarray:
    parts = [logits_pinned(params.alpha_rows[None, :]).ravel(),
             logits_pinned(params.alpha_cols[None, :]).ravel(),
             np.log(params.pi / (1.0 - params.pi)).ravel(),
             np.array([params.mu])]
    for name in theta_var_names(params.kind):
        parts.append(np.array([np.log(getattr(params, name))]))
    return np.concatenate(parts)


def unpack_theta(vec, nq, nl, kind: MissingnessKind) -> ModelParams:
    a1 = softmax_pinned(vec[:nq - 1][None, :])[0]
    off = nq - 1
    a2 = softmax_pinned(vec[off:off + nl - 1][None, :])[0]
    off += nl - 1
    pi = clamp_pi(expit(vec[off:off + nq * nl].reshape(nq, nl)))
    off += nq * nl
    mu = float(vec[off])
    off += 1
    fields = {}
    for name in theta_var_names(kind):
        fields[name] = float(np.exp(vec[off]))
        off += 1
    return ModelParams(kind, a1, a2, pi, mu, **fields)


def pack_theta_grad(params: ModelParams, grads: dict) -> np.ndarray:
    parts = [softmax_grad(params.alpha_rows[None, :], grads["alpha_rows"][None, :]).ravel(),
             softmax_grad(params.alpha_cols[None, :], grads["alpha_cols"][None, :]).ravel(),
             (grads["pi"] * params.pi * (1.0 - params.pi)).ravel(),
             np.array([grads["mu"]])]
    for name in theta_var_names(params.kind):
        parts.append(np.array([grads[name] * getattr(params, name)]))
    return np.concatenate(parts)


def theta_bounds(nq, nl, kind: MissingnessKind):
    bounds = [(-LOGIT_BOUND, LOGIT_BOUND)] * (nq - 1 + nl - 1)
    bounds += [(-PI_LOGIT_BOUND, PI_LOGIT_BOUND)] * (nq * nl)
    bounds += [(-MU_BOUND, MU_BOUND)]
    bounds += [LOG_VAR_BOUNDS] * len(theta_var_names(kind))
    return bounds
