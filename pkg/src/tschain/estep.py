"""E-step: latent moment sweeps and conditional-expectation matrices.

Given truncation bounds and current parameters (Theta*, Gamma*), refresh the
per-cell latent means by Gauss-Seidel sweeps of the plug-in conditional
moments, then assemble

    S_cc = sum_i sum_{t=2..T}   E[Z_i^(t)   Z_i^(t)'   | y]
    S_pp = sum_i sum_{t=1..T-1} E[Z_i^(t)   Z_i^(t)'   | y]
    S_pc = sum_i sum_{t=2..T}   E[Z_i^(t-1) Z_i^(t)'   | y]

with diagonals from per-cell second moments and all cross-cell entries from
mean-field products of first moments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import HAVE_NUMBA, sweep_kernel
from .moments import _std_ratios, conditional_structure, truncated_moments_arrays

__all__ = ["SweepConfig", "SufficientStats", "latent_moment_field", "accumulate_stats", "expected_s_gamma"]


@dataclass(frozen=True)
class SweepConfig:
    """Controls the plug-in moment refinement.

    inner_sweeps: Gauss-Seidel passes over the cells (t ascending, j
    ascending) before the statistics are read off.
    moment_mode: 'inter' conditions each cell on the previous slice and its
    same-slice neighbours; 'intra' on the same-slice neighbours only.  Cells
    at t = 1 always use the intra form (no predecessor).
    """

    inner_sweeps: int = 2
    moment_mode: str = "inter"

    def __post_init__(self):
        if self.inner_sweeps < 1:
            raise ValueError("inner_sweeps must be >= 1")
        if self.moment_mode not in ("inter", "intra"):
            raise ValueError(f"unknown moment_mode {self.moment_mode!r}")


@dataclass
class SufficientStats:
    """Accumulated conditional-expectation matrices and the effective count."""

    s_cc: np.ndarray
    s_pp: np.ndarray
    s_pc: np.ndarray
    n_eff: float
    clamp_count: int = 0

    def __post_init__(self):
        self.s_cc = np.asarray(self.s_cc, dtype=float)
        self.s_pp = np.asarray(self.s_pp, dtype=float)
        self.s_pc = np.asarray(self.s_pc, dtype=float)


class _ColumnMoments:
    """Moment updater for one (time, variable) column, bounds preprocessed.

    Cell classification and the scaled bounds depend only on the data, so
    they are computed once and reused across sweeps and EM iterations.
    """

    def __init__(self, lower_col, upper_col):
        self.point = (lower_col == upper_col) & np.isfinite(lower_col)
        self.free = np.isneginf(lower_col) & np.isposinf(upper_col)
        self.trunc = ~(self.point | self.free)
        self.all_trunc = bool(np.all(self.trunc))
        self.all_point = bool(np.all(self.point))
        self.values = np.where(self.point, lower_col, 0.0)
        self.lower = lower_col
        self.upper = upper_col

    def moments(self, mu, sd):
        """(m1, m2) of each cell truncated around conditional mean mu."""
        if self.all_point:
            return self.values, self.values * self.values
        inv = 1.0 / sd
        if self.all_trunc:
            a = (self.lower - mu) * inv
            b = (self.upper - mu) * inv
            r1, r2 = _std_ratios(a, b)
            m1 = mu + sd * r1
            m2 = mu * mu + sd * sd * (1.0 + r2) + 2.0 * mu * sd * r1
            return m1, m2
        m1 = np.where(self.free, mu, self.values)
        m2 = np.where(self.free, mu * mu + sd * sd, self.values * self.values)
        if np.any(self.trunc):
            tr = self.trunc
            mu_t = mu[tr]
            a = (self.lower[tr] - mu_t) * inv
            b = (self.upper[tr] - mu_t) * inv
            r1, r2 = _std_ratios(a, b)
            m1[tr] = mu_t + sd * r1
            m2[tr] = mu_t * mu_t + sd * sd * (1.0 + r2) + 2.0 * mu_t * sd * r1
        return m1, m2


def latent_moment_field(bounds, theta_star, gamma_star, cfg: SweepConfig = SweepConfig()):
    """Per-cell conditional first and second latent moments.

    Returns (M1, M2, clamp_count): arrays of shape (n, T, p) plus the number
    of cells whose second moment violated m2 >= m1^2 by more than 1e-8 before
    clamping.  Degenerate (continuous) cells keep their point value; missing
    cells carry untruncated conditional moments.
    """
    lower, upper = bounds.lower, bounds.upper
    n, T, p = lower.shape
    theta_star = np.asarray(theta_star, dtype=float)
    gamma_star = np.asarray(gamma_star, dtype=float)

    rows, s2 = conditional_structure(theta_star)
    sd = np.sqrt(s2)
    sigma = np.linalg.inv(theta_star)
    marg_sd = np.sqrt(np.diag(sigma))

    # Start from the per-cell marginal truncated moments (zero-mean slices).
    M1 = np.empty((n, T, p))
    M2 = np.empty((n, T, p))
    for j in range(p):
        m1j, m2j = truncated_moments_arrays(0.0, marg_sd[j], lower[:, :, j], upper[:, :, j])
        M1[:, :, j] = m1j
        M2[:, :, j] = np.maximum(m2j, m1j * m1j)

    use_inter = cfg.moment_mode == "inter"
    if HAVE_NUMBA:
        kind = getattr(bounds, "_kind_cache", None)
        if kind is None:
            kind = np.zeros((n, T, p), dtype=np.int8)
            kind[bounds.is_point] = 1
            kind[np.isneginf(lower) & np.isposinf(upper)] = 2
            bounds._kind_cache = kind
        clamp_count = int(
            sweep_kernel(
                M1, M2, lower, upper, kind, rows, sd, gamma_star,
                cfg.inner_sweeps, use_inter,
            )
        )
        return M1, M2, clamp_count

    cols = getattr(bounds, "_column_cache", None)
    if cols is None:
        cols = [[_ColumnMoments(lower[:, t, j], upper[:, t, j]) for j in range(p)] for t in range(T)]
        bounds._column_cache = cols

    clamp_count = 0
    for sweep in range(cfg.inner_sweeps):
        last = sweep == cfg.inner_sweeps - 1
        for t in range(T):
            if use_inter and t > 0:
                pred = M1[:, t - 1, :] @ gamma_star.T
            else:
                pred = np.zeros((n, p))
            slice_t = M1[:, t, :]
            for j in range(p):
                col = cols[t][j]
                if col.all_point:
                    continue
                mu = pred[:, j] + (slice_t - pred) @ rows[j]
                m1, m2 = col.moments(mu, sd[j])
                M1[:, t, j] = m1
                if last:
                    floor = m1 * m1
                    bad = m2 < floor - 1e-8
                    clamp_count += int(np.count_nonzero(bad & ~col.point))
                    M2[:, t, j] = np.maximum(m2, floor)
    return M1, M2, clamp_count


def accumulate_stats(bounds, theta_star, gamma_star, cfg: SweepConfig = SweepConfig()) -> SufficientStats:
    """Assemble S_cc, S_pp, S_pc from the refreshed latent moments.

    Raises
    ------
    FloatingPointError
        If a non-finite moment shows up (reported with its cell coordinates).
    """
    M1, M2, clamp_count = latent_moment_field(bounds, theta_star, gamma_star, cfg)
    for name, arr in (("first", M1), ("second", M2)):
        if not np.all(np.isfinite(arr)):
            i, t, j = np.argwhere(~np.isfinite(arr))[0]
            raise FloatingPointError(
                f"non-finite {name} moment at cell (sample={i}, time={t}, variable={j})"
            )
    n, T, p = M1.shape

    s_cc = np.zeros((p, p))
    s_pp = np.zeros((p, p))
    s_pc = np.zeros((p, p))
    for t in range(T):
        cross = M1[:, t, :].T @ M1[:, t, :]
        np.fill_diagonal(cross, M2[:, t, :].sum(axis=0))
        if t >= 1:
            s_cc += cross
            s_pc += M1[:, t - 1, :].T @ M1[:, t, :]
        if t <= T - 2:
            s_pp += cross
    n_eff = float(n * (T - 1))
    return SufficientStats(s_cc, s_pp, s_pc, n_eff, clamp_count)


def expected_s_gamma(stats: SufficientStats, gamma: np.ndarray) -> np.ndarray:
    """Normalized expected residual scatter for the VAR(1) fit.

    (1/n_eff) [S_cc - S_pc' G' - G S_pc + G S_pp G'], symmetrized to absorb
    round-off.
    """
    gamma = np.asarray(gamma, dtype=float)
    s_cp = stats.s_pc.T
    out = (
        stats.s_cc
        - s_cp @ gamma.T
        - gamma @ s_cp.T
        + gamma @ stats.s_pp @ gamma.T
    ) / stats.n_eff
    return 0.5 * (out + out.T)
