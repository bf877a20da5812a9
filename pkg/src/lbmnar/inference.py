"""Variational EM: alternating quasi-Newton maximization of the criterion.

Both half-steps are solved with L-BFGS-B in unconstrained coordinates
(see packing).  Initialization follows a double spectral clustering of
the zero-filled matrix, and multi-start runs a short warmup from several
initializations before pursuing the best candidate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize
from sklearn.cluster import KMeans

from . import packing
from .criterion import CellData, VariationalState, evaluate
from .model import (
    CELL_MISSING,
    CELL_ONE,
    ContractError,
    MissingnessKind,
    ModelParams,
    ObservedMatrix,
    clamp_pi,
)

TAU_SMOOTHING = 0.9  # weight kept on the hard label after smoothing


@dataclass(frozen=True)
class OptimizerConfig:
    max_inner_iters: int = 50
    gradient_tol: float = 1e-5
    history_size: int = 10


@dataclass(frozen=True)
class FitConfig:
    max_vem_iters: int = 500
    elbo_rel_tol: float = 1e-6
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    n_inits: int = 5
    warmup_iters: int = 15
    seed: int = 0
    deterministic: bool = True


@dataclass
class FitResult:
    params: ModelParams
    varstate: VariationalState
    elbo_trace: list
    converged: bool
    n_iters: int
    seed: int
    degenerate: bool = False
    n_clamped: int = 0

    @property
    def elbo(self) -> float:
        return self.elbo_trace[-1]


def _as_celldata(x) -> CellData:
    return x if isinstance(x, CellData) else CellData(x)


def smoothed_onehot(labels: np.ndarray, k: int) -> np.ndarray:
    """Hard labels to near-one-hot memberships (avoids log 0 in entropy)."""
    tau = np.full((labels.size, k), (1.0 - TAU_SMOOTHING) / k)
    tau[np.arange(labels.size), labels] += TAU_SMOOTHING
    return tau


# ---------------------------------------------------------------------------
# half-steps

def ve_step(x, params: ModelParams, gamma: VariationalState,
            cfg: FitConfig) -> VariationalState:
    """Maximize the criterion over the variational parameters."""
    data = _as_celldata(x)
    kind = params.kind
    n1, n2, nq, nl = data.n_rows, data.n_cols, params.nq, params.nl

    def objective(vec):
        g = packing.unpack_gamma(vec, n1, n2, nq, nl, kind)
        res = evaluate(data, g, params, want_gamma=True)
        return -res.value, -packing.pack_gamma_grad(g, res.grad_gamma, kind)

    x0 = packing.pack_gamma(gamma, kind)
    opt = cfg.optimizer
    res = minimize(objective, x0, jac=True, method="L-BFGS-B",
                   bounds=packing.gamma_bounds(n1, n2, nq, nl, kind),
                   options={"maxiter": opt.max_inner_iters,
                            "maxcor": opt.history_size,
                            "gtol": opt.gradient_tol})
    return packing.unpack_gamma(res.x, n1, n2, nq, nl, kind)


def m_step(x, gamma: VariationalState, params: ModelParams,
           cfg: FitConfig) -> ModelParams:
    """Maximize the criterion over the model parameters."""
    data = _as_celldata(x)
    kind = params.kind
    nq, nl = params.nq, params.nl

    def objective(vec):
        p = packing.unpack_theta(vec, nq, nl, kind)
        res = evaluate(data, gamma, p, want_theta=True)
        return -res.value, -packing.pack_theta_grad(p, res.grad_theta)

    x0 = packing.pack_theta(params)
    opt = cfg.optimizer
    res = minimize(objective, x0, jac=True, method="L-BFGS-B",
                   bounds=packing.theta_bounds(nq, nl, kind),
                   options={"maxiter": opt.max_inner_iters,
                            "maxcor": opt.history_size,
                            "gtol": opt.gradient_tol})
    return packing.unpack_theta(res.x, nq, nl, kind)


# ---------------------------------------------------------------------------
# initialization

def _spectral_labels(similarity: np.ndarray, k: int, seed: int) -> np.ndarray:
    """Normalized-Laplacian spectral clustering on a similarity matrix.

    Eigenvectors are chosen by largest absolute eigenvalue; zero-degree
    nodes are assigned to the largest resulting cluster.
    """
    n = similarity.shape[0]
    if k >= n:
        return np.arange(n) % k
    deg = similarity.sum(axis=1)
    isolated = deg <= 0
    dinv = np.zeros(n)
    dinv[~isolated] = 1.0 / np.sqrt(deg[~isolated])
    lap = dinv[:, None] * similarity * dinv[None, :]
    evals, evecs = np.linalg.eigh(lap)
    top = np.argsort(np.abs(evals))[::-1][:k]
    embedding = evecs[:, top]
    km = KMeans(n_clusters=k, n_init=10, random_state=seed)
    labels = km.fit_predict(embedding)
    if isolated.any():
        counts = np.bincount(labels[~isolated], minlength=k)
        labels[isolated] = int(np.argmax(counts))
    return labels


def params_from_labels(x: ObservedMatrix, row_labels, col_labels, nq, nl,
                       kind: MissingnessKind, rng) -> ModelParams:
    """Moment estimates of theta from hard labels, with additive smoothing."""
    cells = x.cells
    observed = cells != CELL_MISSING
    ones = cells == CELL_ONE
    r1 = np.eye(nq)[row_labels]
    c1 = np.eye(nl)[col_labels]
    obs_ql = r1.T @ observed @ c1
    ones_ql = r1.T @ ones @ c1
    pi = clamp_pi((ones_ql + 0.5) / (obs_ql + 1.0))
    alpha_rows = (np.bincount(row_labels, minlength=nq) + 1.0) / (row_labels.size + nq)
    alpha_cols = (np.bincount(col_labels, minlength=nl) + 1.0) / (col_labels.size + nl)
    rate = float(np.clip(observed.mean(), 1e-3, 1.0 - 1e-3))
    mu = float(np.log(rate / (1.0 - rate)))
    variances = {}
    for name in packing.theta_var_names(kind):
        variances[name] = float(1.0 - rng.random())  # U(0, 1]
    return ModelParams(kind, alpha_rows, alpha_cols, pi, mu, **variances)


def _gamma_from_labels(row_labels, col_labels, nq, nl,
                       params: ModelParams) -> VariationalState:
    n1, n2 = row_labels.size, col_labels.size
    fields = {}
    for name in packing.gamma_block_names(params.kind):
        n = n1 if name in ("a", "b") else n2
        fields["nu_" + name] = np.zeros(n)
        fields["rho_" + name] = np.full(n, getattr(params, "var_" + name))
    return VariationalState(smoothed_onehot(row_labels, nq),
                            smoothed_onehot(col_labels, nl), **fields)


def init_spectral(x: ObservedMatrix, nq: int, nl: int, seed: int,
                  kind: MissingnessKind = MissingnessKind.MNAR):
    """Double spectral clustering initialization of (theta, gamma)."""
    cells = x.cells
    if np.all(cells == CELL_MISSING):
        raise ContractError("init_spectral: matrix is entirely missing")
    rng = np.random.default_rng(seed)
    filled = (cells == CELL_ONE).astype(float)  # missing mapped to 0
    row_labels = _spectral_labels(filled @ filled.T, nq, seed)
    col_labels = _spectral_labels(filled.T @ filled, nl, seed)
    params = params_from_labels(x, row_labels, col_labels, nq, nl, kind, rng)
    gamma = _gamma_from_labels(row_labels, col_labels, nq, nl, params)
    return params, gamma


def _init_random(x: ObservedMatrix, nq: int, nl: int,
                 kind: MissingnessKind, rng):
    row_labels = rng.integers(0, nq, size=x.n_rows)
    col_labels = rng.integers(0, nl, size=x.n_cols)
    params = params_from_labels(x, row_labels, col_labels, nq, nl, kind, rng)
    gamma = _gamma_from_labels(row_labels, col_labels, nq, nl, params)
    return params, gamma


# ---------------------------------------------------------------------------
# full fits

def _vem_loop(data: CellData, params, gamma, cfg: FitConfig, max_iters):
    """Alternate VE/M half-steps, recording J after each."""
    trace = [evaluate(data, gamma, params).value]
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        gamma = ve_step(data, params, gamma, cfg)
        trace.append(evaluate(data, gamma, params).value)
        params = m_step(data, gamma, params, cfg)
        trace.append(evaluate(data, gamma, params).value)
        prev, cur = trace[-3], trace[-1]
        if abs(cur - prev) < cfg.elbo_rel_tol * max(abs(cur), 1.0):
            converged = True
            break
    return params, gamma, trace, converged, it


def fit(x: ObservedMatrix, nq: int, nl: int, kind: MissingnessKind,
        cfg: FitConfig, init=None) -> FitResult:
    """Run VEM to convergence from a spectral (or provided) initialization."""
    if nq > x.n_rows or nl > x.n_cols:
        raise ContractError("class counts exceed the matrix dimensions")
    degenerate = bool(np.all(x.cells == CELL_MISSING))
    if init is None:
        if degenerate:
            rng = np.random.default_rng(cfg.seed)
            params, gamma = _init_random(x, nq, nl, kind, rng)
        else:
            params, gamma = init_spectral(x, nq, nl, cfg.seed, kind)
    else:
        params, gamma = init
    data = CellData(x)
    params, gamma, trace, converged, n_iters = _vem_loop(
        data, params, gamma, cfg, cfg.max_vem_iters)
    n_clamped = evaluate(data, gamma, params).n_clamped
    return FitResult(params, gamma, trace, converged, n_iters, cfg.seed,
                     degenerate=degenerate, n_clamped=n_clamped)


def multi_start_fit(x: ObservedMatrix, nq: int, nl: int, kind: MissingnessKind,
                    cfg: FitConfig) -> FitResult:
    """Short warmup from several inits, then pursue the best candidate."""
    if cfg.n_inits < 1:
        raise ContractError("n_inits must be >= 1")
    data = CellData(x)
    seeds = np.random.SeedSequence(cfg.seed).spawn(max(cfg.n_inits - 1, 0))
    inits = [init_spectral(x, nq, nl, cfg.seed, kind)]
    for ss in seeds:
        inits.append(_init_random(x, nq, nl, kind, np.random.default_rng(ss)))

    if cfg.n_inits == 1:
        return fit(x, nq, nl, kind, cfg, init=inits[0])

    candidates = []
    for params, gamma in inits:
        candidates.append(_vem_loop(data, params, gamma, cfg, cfg.warmup_iters))
    best = max(candidates, key=lambda c: c[2][-1])
    params, gamma, warm_trace, warm_conv, warm_iters = best

    if warm_conv:
        trace, converged, n_iters = warm_trace, True, warm_iters
    else:
        remaining = max(cfg.max_vem_iters - cfg.warmup_iters, 1)
        params, gamma, cont_trace, converged, cont_iters = _vem_loop(
            data, params, gamma, cfg, remaining)
        trace = warm_trace + cont_trace[1:]
        n_iters = warm_iters + cont_iters
    n_clamped = evaluate(data, gamma, params).n_clamped
    return FitResult(params, gamma, trace, converged, n_iters, cfg.seed,
                     n_clamped=n_clamped)


def _best_permuted_init(data: CellData, params: ModelParams,
                        row_labels, col_labels) -> VariationalState:
    """Anchor hard init labels to a fixed theta.

    With theta frozen, the init labels carry an arbitrary permutation
    relative to the classes theta describes; starting the variational
    optimization from a mis-permuted configuration strands it in a bad
    mode.  Evaluate the criterion for every class permutation of the init
    and keep the best, when the permutation count is manageable.
    """
    import itertools
    nq, nl = params.nq, params.nl
    best_gamma = _gamma_from_labels(row_labels, col_labels, nq, nl, params)
    if nq > 4 or nl > 4:
        return best_gamma
    best_val = -np.inf
    for rp in itertools.permutations(range(nq)):
        rl = np.asarray(rp)[row_labels]
        for cp in itertools.permutations(range(nl)):
            gamma = _gamma_from_labels(rl, np.asarray(cp)[col_labels],
                                       nq, nl, params)
            val = evaluate(data, gamma, params).value
            if val > best_val:
                best_val, best_gamma = val, gamma
    return best_gamma


def estep(x, params: ModelParams, gamma0: Optional[VariationalState] = None,
          max_iters: int = 200, rel_tol: float = 1e-6, seed: int = 0):
    """Optimize gamma only, with theta frozen (posterior approximation).

    Returns (gamma, trace, converged).
    """
    data = _as_celldata(x)
    if gamma0 is None:
        x_mat = x if isinstance(x, ObservedMatrix) else None
        if x_mat is None:
            raise ContractError("estep needs an ObservedMatrix when gamma0 is None")
        if np.all(x_mat.cells == CELL_MISSING):
            n1, n2 = x_mat.n_rows, x_mat.n_cols
            rng = np.random.default_rng(seed)
            row_labels = rng.integers(0, params.nq, size=n1)
            col_labels = rng.integers(0, params.nl, size=n2)
        else:
            filled = (x_mat.cells == CELL_ONE).astype(float)
            row_labels = _spectral_labels(filled @ filled.T, params.nq, seed)
            col_labels = _spectral_labels(filled.T @ filled, params.nl, seed)
        gamma0 = _best_permuted_init(data, params, row_labels, col_labels)
    gamma = gamma0
    cfg = FitConfig(optimizer=OptimizerConfig(max_inner_iters=max_iters))
    trace = [evaluate(data, gamma, params).value]
    converged = False
    # restart the quasi-Newton solve (fresh Hessian approximation) until the
    # criterion stops moving between restarts
    for _ in range(50):
        gamma = ve_step(data, params, gamma, cfg)
        trace.append(evaluate(data, gamma, params).value)
        if abs(trace[-1] - trace[-2]) < rel_tol * max(abs(trace[-1]), 1.0):
            converged = True
            break
    return gamma, trace, converged
