"""Independent numerical oracles used by the acceptance tests.

Everything here is deliberately written from the model definition, not by
calling into the package's criterion code, so that agreement between the
two is meaningful evidence of correctness.
"""

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.special import expit, log_expit

from lbmnar.model import CELL_MISSING, CELL_ONE, CELL_ZERO, ModelParams


def _gh_nodes_2d(var_1, var_2, m):
    """Gauss-Hermite grid for a pair of independent centered Gaussians.

    Returns flattened node coordinates and product weights normalized so
    that the weighted sum of h(nodes) approximates E[h]. Inactive blocks
    (zero variance) collapse to a single node at the origin.
    """
    def axis(var):
        if var <= 0:
            return np.zeros(1), np.ones(1)
        t, w = hermgauss(m)
        return np.sqrt(2.0 * var) * t, w / np.sqrt(np.pi)

    x1, w1 = axis(var_1)
    x2, w2 = axis(var_2)
    g1, g2 = np.meshgrid(x1, x2, indexing="ij")
    return g1.ravel(), g2.ravel(), (w1[:, None] * w2[None, :]).ravel()


def _cell_likelihood(cell, pi_ql, mu, a, b, p, q):
    """Likelihood of one observed-matrix cell on an (a,b) x (p,q) grid."""
    sp = mu + a[:, None] + p[None, :] + b[:, None] + q[None, :]
    sm = mu + a[:, None] + p[None, :] - b[:, None] - q[None, :]
    if cell == CELL_ONE:
        return pi_ql * expit(sp)
    if cell == CELL_ZERO:
        return (1.0 - pi_ql) * expit(sm)
    return pi_ql * expit(-sp) + (1.0 - pi_ql) * expit(-sm)


def gauss_hermite_loglik(x, params: ModelParams, m: int = 10) -> float:
    """Exact marginal log-likelihood log p(x) by quadrature + enumeration.

    Works for matrices with few columns: conditioned on the column latents
    and column labels, the rows decouple, so the integral reduces to an
    outer quadrature over each column's (p_j, q_j) pair and, per row, an
    inner quadrature over (a_i, b_i) with the row label summed out. The
    column label configurations are enumerated exhaustively.

    Cost grows as (m^2)^(n_cols + 1); intended for n_cols <= 3.
    """
    cells = x.cells
    n1, n2 = cells.shape
    if n2 > 3:
        raise ValueError("quadrature oracle supports at most 3 columns")
    nq, nl = params.nq, params.nl

    ar, br, wab = _gh_nodes_2d(params.var_a, params.var_b, m)
    pc, qc, wpq = _gh_nodes_2d(params.var_p, params.var_q, m)
    n_pq = pc.size

    # C[i][j][qr][cl]: likelihood of cell (i, j) on the node grid
    C = [[[[_cell_likelihood(cells[i, j], params.pi[qr, cl], params.mu,
                             ar, br, pc, qc)
            for cl in range(nl)] for qr in range(nq)]
          for j in range(n2)] for i in range(n1)]

    total = 0.0
    for c2 in np.ndindex(*([nl] * n2)):
        # row i marginal over (a_i, b_i) and its label, as a tensor over
        # the column-node indices
        shape = (n_pq,) * n2
        prod_rows = np.ones(shape)
        col_axes = "klm"[:n2]
        spec = ("a," + ",".join("a" + ax for ax in col_axes)
                + "->" + col_axes)
        for i in range(n1):
            g = np.zeros(shape)
            for qr in range(nq):
                g += params.alpha_rows[qr] * np.einsum(
                    spec, wab, *(C[i][j][qr][c2[j]] for j in range(n2)),
                    optimize=True)
            prod_rows *= g
        w = wpq
        for j in range(1, n2):
            w = w[..., None] * wpq
        prior2 = np.prod([params.alpha_cols[c] for c in c2])
        total += prior2 * float(np.sum(w * prod_rows))
    return float(np.log(total))


def mc_exact_elbo(x, gamma, params: ModelParams, n_samples: int, seed):
    """Monte Carlo evaluation of the exact mean-field lower bound.

    Samples the latent variables from the variational distribution gamma,
    averages the complete-data log-density (missing cell values summed
    out), and adds the closed-form entropy. Returns (estimate, standard
    error).
    """
    from lbmnar.criterion import entropy

    rng = np.random.default_rng(seed)
    n1, n2 = x.n_rows, x.n_cols

    def draw(nu, rho, n):
        if nu is None:
            return np.zeros(n)
        return rng.normal(nu, np.sqrt(rho))

    vals = np.empty(n_samples)
    for s in range(n_samples):
        y1 = np.array([rng.choice(params.nq, p=gamma.tau_rows[i])
                       for i in range(n1)])
        y2 = np.array([rng.choice(params.nl, p=gamma.tau_cols[j])
                       for j in range(n2)])
        vals[s] = observed_complete_loglik(
            x, params, y1, y2,
            draw(gamma.nu_a, gamma.rho_a, n1),
            draw(gamma.nu_b, gamma.rho_b, n1),
            draw(gamma.nu_p, gamma.rho_p, n2),
            draw(gamma.nu_q, gamma.rho_q, n2))
    h = entropy(gamma)
    return h + float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(n_samples))


def observed_complete_loglik(x, params, y1, y2, a, b, p, q):
    """log p(x_observed, labels, deviations): missing values summed out."""
    total = float(np.sum(np.log(params.alpha_rows[y1])))
    total += float(np.sum(np.log(params.alpha_cols[y2])))

    def gauss(v, var):
        return float(-0.5 * np.sum(v * v) / var
                     - 0.5 * v.size * np.log(2 * np.pi * var))

    if params.kind.has_ap:
        total += gauss(a, params.var_a)
        total += gauss(p, params.var_p)
    if params.kind.has_bq:
        total += gauss(b, params.var_b)
        total += gauss(q, params.var_q)

    pi_cells = params.pi[y1][:, y2]
    sp = params.mu + a[:, None] + p[None, :] + b[:, None] + q[None, :]
    sm = params.mu + a[:, None] + p[None, :] - b[:, None] - q[None, :]
    cells = x.cells
    ones = cells == CELL_ONE
    zeros = cells == CELL_ZERO
    nas = cells == CELL_MISSING
    total += float(np.sum(np.log(pi_cells[ones])) + np.sum(log_expit(sp)[ones]))
    total += float(np.sum(np.log1p(-pi_cells[zeros]))
                   + np.sum(log_expit(sm)[zeros]))
    lna = np.logaddexp(np.log(pi_cells) + log_expit(-sp),
                       np.log1p(-pi_cells) + log_expit(-sm))
    total += float(np.sum(lna[nas]))
    return total
