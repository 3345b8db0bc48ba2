"""M-step solvers: weighted graphical lasso for the precision matrix and
penalized coordinate descent for the autoregressive matrix.

Both stages maximize the expected penalized log-likelihood

    log det(Theta) - tr(S_E Theta) - sum_{j != j'} w_jj' |theta_jj'|
                                   - sum_{j,l}     nu_jl |gamma_jl|

with S_E the normalized expected residual scatter.  L1 uses constant weights
(lambda, rho); SCAD plugs its derivative at a warm-start estimate into the
weights (one-step local linear approximation).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._kernels import HAVE_NUMBA, gamma_cd_kernel, lasso_cd_kernel
from .estep import SufficientStats, expected_s_gamma

__all__ = [
    "PenaltyConfig",
    "WeightMatrices",
    "scad_derivative",
    "compute_weights",
    "glasso_theta",
    "update_gamma_cd",
    "q_pen_value",
]

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class PenaltyConfig:
    """Penalty family and strengths.

    lam penalizes off-diagonal precision entries, rho the autoregressive
    entries; a is the SCAD shape (3.7 is the usual choice).
    """

    kind: str = "scad"
    lam: float = 0.1
    rho: float = 0.1
    a: float = 3.7

    def __post_init__(self):
        if self.kind not in ("l1", "scad"):
            raise ValueError(f"penalty kind must be 'l1' or 'scad', got {self.kind!r}")
        if self.lam < 0 or self.rho < 0:
            raise ValueError("lambda and rho must be non-negative")
        if self.a <= 2:
            raise ValueError("SCAD shape a must exceed 2")


@dataclass
class WeightMatrices:
    """Element-wise penalty weights: w for the precision (zero diagonal,
    symmetric), nu for the autoregressive matrix."""

    w: np.ndarray
    nu: np.ndarray


def scad_derivative(x: float, lam: float, a: float = 3.7):
    """SCAD penalty derivative at |coefficient| = x >= 0.

    lam * 1{x <= lam} + (a*lam - x)_+ / (a - 1) * 1{x > lam}; identically 0
    when lam == 0.  Accepts arrays.
    """
    x = np.abs(np.asarray(x, dtype=float))
    if lam == 0:
        out = np.zeros_like(x)
        return out if out.ndim else float(out)
    if a <= 2:
        raise ValueError("SCAD shape a must exceed 2")
    small = x <= lam
    out = np.where(small, lam, np.maximum(a * lam - x, 0.0) / (a - 1.0))
    return out if out.ndim else float(out)


def compute_weights(theta_k: np.ndarray, gamma_k: np.ndarray, cfg: PenaltyConfig) -> WeightMatrices:
    """Penalty weights for the next weighted M-step.

    L1 ignores the estimates; SCAD evaluates its derivative at the current
    (warm-start) magnitudes, so large entries end up unpenalized.  The
    precision diagonal is never penalized.
    """
    p = np.asarray(theta_k).shape[0]
    if cfg.kind == "l1":
        w = np.full((p, p), cfg.lam)
        nu = np.full((p, p), cfg.rho)
    else:
        w = scad_derivative(np.abs(theta_k), cfg.lam, cfg.a)
        nu = scad_derivative(np.abs(gamma_k), cfg.rho, cfg.a)
    np.fill_diagonal(w, 0.0)
    return WeightMatrices(w, nu)


def _lasso_cd(gram: np.ndarray, linear: np.ndarray, weights: np.ndarray, beta: np.ndarray, tol: float, max_iter: int):
    """Coordinate descent for 0.5 b'Qb - c'b + sum w|b| (Q = gram, c = linear).

    Maintains the residual c - Qb so each coordinate visit is O(1) and each
    coordinate change O(k).
    """
    if HAVE_NUMBA:
        return lasso_cd_kernel(gram, linear, weights, beta, tol, max_iter)
    k = beta.size
    resid = linear - gram @ beta
    for _ in range(max_iter):
        delta = 0.0
        for m in range(k):
            old = beta[m]
            qmm = gram[m, m]
            g = resid[m] + qmm * old
            new = math.copysign(max(abs(g) - weights[m], 0.0), g) / qmm
            if new != old:
                beta[m] = new
                resid -= (new - old) * gram[:, m]
                delta = max(delta, abs(new - old))
        if delta <= tol:
            break
    return beta


def _kkt_residual_theta(theta: np.ndarray, s: np.ndarray, w: np.ndarray) -> float:
    """Max violation of the stationarity conditions of the weighted problem."""
    grad = np.linalg.inv(theta) - s
    p = theta.shape[0]
    off = ~np.eye(p, dtype=bool)
    zero = (theta == 0) & off
    nonz = (theta != 0) & off
    res = np.abs(np.diag(grad)).max() if p else 0.0
    if np.any(zero):
        res = max(res, float(np.max(np.abs(grad[zero]) - w[zero])))
    if np.any(nonz):
        res = max(res, float(np.max(np.abs(grad[nonz] - w[nonz] * np.sign(theta[nonz])))))
    return res


def glasso_theta(
    s_gamma: np.ndarray,
    w: np.ndarray,
    tol: float = 1e-5,
    max_iter: int = 500,
    theta_init: np.ndarray | None = None,
):
    """Weighted graphical lasso via block coordinate descent over columns.

    Maximizes log det(Theta) - tr(S Theta) - sum_{j!=j'} w_jj' |theta_jj'|
    (diagonal unpenalized).  Convergence is declared on the element-wise KKT
    residual of the reconstructed precision matrix.

    Returns
    -------
    (theta, converged) : the estimate and a convergence flag.
    """
    s = np.asarray(s_gamma, dtype=float)
    w = np.asarray(w, dtype=float)
    p = s.shape[0]
    if np.any(np.diag(s) <= 0):
        raise ValueError("s_gamma must have a strictly positive diagonal")
    if p == 1:
        return np.array([[1.0 / s[0, 0]]]), True

    W = s.copy()
    B = np.zeros((p, p))  # column-j lasso coefficients, own row unused
    if theta_init is not None:
        theta_init = np.asarray(theta_init, dtype=float)
        d = np.diag(theta_init)
        if np.all(d > 0):
            B[:, :] = -theta_init / d[None, :]
            np.fill_diagonal(B, 0.0)

    idx = np.arange(p)
    inner_tol = tol * 0.1
    theta = None
    converged = False
    for _ in range(max_iter):
        for j in range(p):
            rest = idx != j
            W11 = W[np.ix_(rest, rest)]
            beta = B[rest, j]
            beta = _lasso_cd(W11, s[rest, j], w[rest, j], beta, inner_tol, 200)
            B[rest, j] = beta
            col = W11 @ beta
            W[rest, j] = col
            W[j, rest] = col
        theta = _theta_from_w(W, B)
        if _kkt_residual_theta(theta, s, w) <= tol:
            converged = True
            break
    return theta, converged


def _theta_from_w(W: np.ndarray, B: np.ndarray) -> np.ndarray:
    p = W.shape[0]
    theta = np.zeros((p, p))
    idx = np.arange(p)
    for j in range(p):
        rest = idx != j
        beta = B[rest, j]
        denom = W[j, j] - W[rest, j] @ beta
        tjj = 1.0 / denom
        theta[j, j] = tjj
        theta[rest, j] = np.where(beta == 0.0, 0.0, -beta * tjj)
    # Symmetrize while keeping exact zeros exact.
    sym = 0.5 * (theta + theta.T)
    sym[(theta == 0) & (theta.T == 0)] = 0.0
    return sym


def update_gamma_cd(
    stats: SufficientStats,
    theta: np.ndarray,
    nu: np.ndarray,
    gamma_init: np.ndarray | None = None,
    tol: float = 1e-6,
    max_iter: int = 500,
):
    """Cyclic coordinate descent for the penalized autoregressive matrix.

    Minimizes tr(G Spp G' Theta) - 2 <G, Theta Spc'> + sum nu |g| over G with
    the normalized statistics (division by n_eff), via the soft-threshold
    closed form per coordinate.

    Returns
    -------
    (gamma, converged)
    """
    theta = np.asarray(theta, dtype=float)
    nu = np.asarray(nu, dtype=float)
    p = theta.shape[0]
    spp = stats.s_pp / stats.n_eff
    scp = stats.s_pc.T / stats.n_eff
    if np.any(np.diag(spp) <= 0) or np.any(np.diag(theta) <= 0):
        raise ValueError("S_pp and Theta need strictly positive diagonals")

    gamma = np.zeros((p, p)) if gamma_init is None else np.asarray(gamma_init, dtype=float).copy()
    target = theta @ scp  # (Theta S_cp), constant over the iteration
    lagged = gamma @ spp  # row j changes only with row j of gamma
    if HAVE_NUMBA:
        _, converged = gamma_cd_kernel(
            gamma, theta, spp, target, lagged, nu, tol, max_iter
        )
        return gamma, bool(converged)
    spp_diag = np.diag(spp)
    converged = False
    for _ in range(max_iter):
        delta = 0.0
        for j in range(p):
            cur_row = theta[j] @ lagged  # (Theta Gamma Spp) row j
            tgt_row = target[j]
            gamma_row = gamma[j]
            tjj = theta[j, j]
            for l in range(p):
                denom = 2.0 * tjj * spp_diag[l]
                g = 2.0 * (tgt_row[l] - cur_row[l]) + denom * gamma_row[l]
                new = math.copysign(max(abs(g) - nu[j, l], 0.0), g) / denom
                step = new - gamma_row[l]
                if step != 0.0:
                    gamma_row[l] = new
                    lagged[j] += step * spp[l]
                    cur_row += (tjj * step) * spp[l]
                    delta = max(delta, abs(step))
        if delta <= tol:
            converged = True
            break
    return gamma, converged


def gamma_kkt_residual(stats: SufficientStats, theta: np.ndarray, nu: np.ndarray, gamma: np.ndarray) -> float:
    """Max violation of the subgradient conditions of the Gamma problem."""
    spp = stats.s_pp / stats.n_eff
    scp = stats.s_pc.T / stats.n_eff
    grad = 2.0 * (theta @ gamma @ spp - theta @ scp)
    zero = gamma == 0
    res = 0.0
    if np.any(zero):
        res = max(res, float(np.max(np.abs(grad[zero]) - nu[zero])))
    if np.any(~zero):
        res = max(res, float(np.max(np.abs(grad[~zero] + nu[~zero] * np.sign(gamma[~zero])))))
    return res


def q_pen_value(stats: SufficientStats, theta: np.ndarray, gamma: np.ndarray, weights: WeightMatrices) -> float:
    """Penalized expected complete-data log-likelihood (diagnostic value)."""
    theta = np.asarray(theta, dtype=float)
    sign, logdet = np.linalg.slogdet(theta)
    if sign <= 0:
        raise ValueError("theta must be positive definite")
    s_e = expected_s_gamma(stats, gamma)
    p = theta.shape[0]
    core = 0.5 * stats.n_eff * (-p * LOG_2PI + logdet - float(np.sum(s_e * theta)))
    off = ~np.eye(p, dtype=bool)
    pen_theta = float(np.sum(weights.w[off] * np.abs(theta[off])))
    pen_gamma = float(np.sum(weights.nu * np.abs(gamma)))
    return core - pen_theta - pen_gamma
