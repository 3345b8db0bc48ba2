"""Moments of truncated latent Gaussians.

Everything the E-step needs per cell: exact first/second moments of a
one-dimensional truncated normal, the conditional-normal parameters of one
latent coordinate given its neighbours (and optionally the previous time
slice), and the mean-field product used for cross moments.

The moment formulas follow the classical closed forms

    E[Z | c1 <= Z <= c2]   = mu0 + sigma0 * (phi(d1) - phi(d2)) / (Phi(d2) - Phi(d1))
    E[Z^2 | c1 <= Z <= c2] = mu0^2 + sigma0^2
                             + 2 mu0 sigma0 * (phi(d1) - phi(d2)) / (Phi(d2) - Phi(d1))
                             + sigma0^2 * (d1 phi(d1) - d2 phi(d2)) / (Phi(d2) - Phi(d1))

with d_k = (c_k - mu0) / sigma0.  Far-tail intervals are rewritten in terms
of the scaled complementary error function (a Mills-ratio form) so the
ratios never degenerate into 0/0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfcx, ndtr

__all__ = [
    "TruncatedNormalSpec",
    "ConditionalParams",
    "CellMoments",
    "truncnorm_moments",
    "truncated_moments_arrays",
    "conditional_structure",
    "conditional_params",
    "approx_first_moment",
    "approx_second_moment",
    "mean_field_product",
]

_SQRT_2PI = math.sqrt(2.0 * math.pi)
_SQRT_PI_2 = math.sqrt(math.pi / 2.0)
_SQRT_2 = math.sqrt(2.0)

# Beyond this the direct Phi-difference underflows relative precision and the
# Mills-ratio form takes over.
TAIL_SWITCH = 8.0


@dataclass(frozen=True)
class TruncatedNormalSpec:
    """Untruncated N(mu0, sigma0^2) restricted to the interval [c1, c2]."""

    mu0: float
    sigma0: float
    c1: float
    c2: float

    def __post_init__(self):
        if not self.sigma0 > 0.0:
            raise ValueError(f"sigma0 must be positive, got {self.sigma0}")
        if self.c1 > self.c2:
            raise ValueError(f"empty interval: c1={self.c1} > c2={self.c2}")


@dataclass(frozen=True)
class CellMoments:
    """First and second moment of one truncated latent cell."""

    m1: float
    m2: float


@dataclass(frozen=True)
class ConditionalParams:
    """Normal parameters of one coordinate given the rest of its slice.

    ``mu_prime`` is the conditional mean, ``sigma_prime_sq`` the conditional
    variance, and ``regression_row`` the coefficients of the other same-slice
    coordinates (a length-p vector with a structural zero at the own index).
    """

    mu_prime: float
    sigma_prime_sq: float
    regression_row: np.ndarray


def _phi(x):
    """Standard normal density, vector-safe, phi(+-inf) = 0."""
    with np.errstate(over="ignore"):
        return np.exp(-0.5 * np.square(x)) / _SQRT_2PI


def _mills(x):
    """Mills ratio (1 - Phi(x)) / phi(x), stable for large positive x."""
    return _SQRT_PI_2 * erfcx(x / _SQRT_2)


def _ratios_left(a, b):
    """Moment ratios for standardized intervals with midpoint <= 0.

    Returns (r1, r2) with r1 = (phi(a)-phi(b))/(Phi(b)-Phi(a)) and
    r2 = (a phi(a) - b phi(b))/(Phi(b)-Phi(a)).  Arrays must satisfy a <= b
    and a + b <= 0 elementwise (callers reflect right-sided intervals).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    r1 = np.zeros_like(a)
    r2 = np.zeros_like(a)

    deep = b <= -TAIL_SWITCH
    if np.any(deep):
        # Work on the mirrored interval (alpha, beta) = (-b, -a), both >= 8.
        alpha = -b[deep]
        beta = -a[deep]
        with np.errstate(over="ignore"):
            expo = 0.5 * (alpha * alpha - beta * beta)
        ratio = np.exp(expo)  # phi(beta)/phi(alpha) in (0, 1]; 0 when beta=inf
        m_alpha = _mills(alpha)
        m_beta = _mills(beta)  # erfcx(inf) = 0
        denom = m_alpha - ratio * m_beta
        with np.errstate(invalid="ignore"):
            beta_term = np.where(np.isinf(beta), 0.0, beta * ratio)
        r1[deep] = -(1.0 - ratio) / denom
        r2[deep] = (alpha - beta_term) / denom

    rest = ~deep
    if np.any(rest):
        ar = a[rest]
        br = b[rest]
        mass = ndtr(br) - ndtr(ar)
        pa = _phi(ar)
        pb = _phi(br)
        with np.errstate(invalid="ignore"):
            apa = np.where(np.isinf(ar), 0.0, ar * pa)
            bpb = np.where(np.isinf(br), 0.0, br * pb)
        # Degenerate widths: fall back to the point-mass limit at the midpoint.
        tiny = mass <= (pa + pb) * 1e-14
        safe_mass = np.where(tiny, 1.0, mass)
        r1_rest = (pa - pb) / safe_mass
        r2_rest = (apa - bpb) / safe_mass
        if np.any(tiny):
            mid = 0.5 * (ar + br)
            r1_rest = np.where(tiny, mid, r1_rest)
            r2_rest = np.where(tiny, mid * mid - 1.0, r2_rest)
        r1[rest] = r1_rest
        r2[rest] = r2_rest
    return r1, r2


def _std_ratios(a, b):
    """Moment ratios of the standard normal truncated to [a, b] (arrays).

    Entries with a == b or with both ends infinite must be masked out by the
    caller; this routine assumes a < b with at most one infinite end on the
    same side.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    # Reflect intervals whose midpoint sits right of the origin so that the
    # Phi differences are always evaluated where the values are small.  At
    # most one end per entry is infinite here, so a + b never yields NaN.
    reflect = (a + b) > 0
    aa = np.where(reflect, -b, a)
    bb = np.where(reflect, -a, b)
    r1, r2 = _ratios_left(aa, bb)
    r1 = np.where(reflect, -r1, r1)
    return r1, r2


def truncated_moments_arrays(mu0, sigma0, lower, upper):
    """Vectorized first/second truncated-normal moments.

    Parameters
    ----------
    mu0, sigma0 : array-like
        Untruncated means and standard deviations (sigma0 > 0).
    lower, upper : array-like
        Truncation interval per entry; -inf/+inf mark unbounded sides and
        lower == upper marks a degenerate point mass.

    Returns
    -------
    (m1, m2) : ndarrays with the conditional first and second moments.

    The second moment is returned as computed; callers that must enforce
    m2 >= m1^2 clamp (and count) on their side.
    """
    mu0 = np.asarray(mu0, dtype=float)
    sigma0 = np.asarray(sigma0, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    mu0, sigma0, lower, upper = np.broadcast_arrays(mu0, sigma0, lower, upper)

    m1 = np.empty(mu0.shape, dtype=float)
    m2 = np.empty(mu0.shape, dtype=float)

    point = lower == upper
    free = np.isneginf(lower) & np.isposinf(upper)
    trunc = ~(point | free)

    if np.any(point):
        v = lower[point]
        m1[point] = v
        m2[point] = v * v
    if np.any(free):
        m1[free] = mu0[free]
        m2[free] = mu0[free] ** 2 + sigma0[free] ** 2
    if np.any(trunc):
        mu_t = mu0[trunc]
        sd_t = sigma0[trunc]
        with np.errstate(invalid="ignore"):
            a = (lower[trunc] - mu_t) / sd_t
            b = (upper[trunc] - mu_t) / sd_t
        r1, r2 = _std_ratios(a, b)
        first = mu_t + sd_t * r1
        second = mu_t * mu_t + sd_t * sd_t * (1.0 + r2) + 2.0 * mu_t * sd_t * r1
        m1[trunc] = first
        m2[trunc] = second
    return m1, m2


def truncnorm_moments(spec: TruncatedNormalSpec) -> CellMoments:
    """First and second moment of a single truncated normal cell."""
    if spec.c1 == spec.c2:
        return CellMoments(spec.c1, spec.c1 * spec.c1)
    m1, m2 = truncated_moments_arrays(
        np.array([spec.mu0]),
        np.array([spec.sigma0]),
        np.array([spec.c1]),
        np.array([spec.c2]),
    )
    first = float(m1[0])
    return CellMoments(first, max(float(m2[0]), first * first))


def conditional_structure(theta: np.ndarray):
    """Per-coordinate conditional variance and regression rows under Theta.

    For Z ~ N(m, Sigma) with Sigma = Theta^{-1}, coordinate j given the rest
    is normal with variance 1/Theta[j, j] and mean
    m_j + row_j . (z - m) where row_j = -Theta[j, -j] / Theta[j, j].  The
    rows are returned as a (p, p) matrix with zero diagonal so the own
    coordinate drops out of the dot product.

    Returns
    -------
    (rows, sigma_prime_sq) : regression-row matrix and length-p variances.
    """
    theta = np.asarray(theta, dtype=float)
    # Cholesky doubles as the positive-definiteness check.
    try:
        np.linalg.cholesky(theta)
    except np.linalg.LinAlgError as exc:
        raise ValueError("precision matrix is not positive definite") from exc
    diag = np.diag(theta)
    rows = -theta / diag[:, None]
    np.fill_diagonal(rows, 0.0)
    sigma_prime_sq = 1.0 / diag
    return rows, sigma_prime_sq


def conditional_params(
    theta: np.ndarray,
    gamma: np.ndarray,
    z_prev: np.ndarray,
    z_curr: np.ndarray,
    j: int,
    mode: str = "inter",
) -> ConditionalParams:
    """Conditional-normal parameters of latent coordinate j in one slice.

    ``mode='inter'`` conditions on the previous slice (through gamma @ z_prev)
    and the same-slice neighbours; ``mode='intra'`` drops the previous slice
    and regresses around a zero mean.  ``z_curr[j]`` is ignored (structural
    zero in the regression row).
    """
    rows, s2 = conditional_structure(theta)
    z_curr = np.asarray(z_curr, dtype=float)
    if mode == "inter":
        pred = np.asarray(gamma, dtype=float) @ np.asarray(z_prev, dtype=float)
    elif mode == "intra":
        pred = np.zeros(theta.shape[0])
    else:
        raise ValueError(f"unknown mode {mode!r}")
    mu_prime = pred[j] + rows[j] @ (z_curr - pred)
    return ConditionalParams(float(mu_prime), float(s2[j]), rows[j].copy())


def approx_first_moment(lower: float, upper: float, params: ConditionalParams) -> float:
    """Plug-in first moment of a truncated cell at its conditional params."""
    if lower == upper:
        return lower
    return truncnorm_moments(
        TruncatedNormalSpec(params.mu_prime, math.sqrt(params.sigma_prime_sq), lower, upper)
    ).m1


def approx_second_moment(lower: float, upper: float, params: ConditionalParams) -> float:
    """Plug-in second moment of a truncated cell at its conditional params."""
    if lower == upper:
        return lower * lower
    return truncnorm_moments(
        TruncatedNormalSpec(params.mu_prime, math.sqrt(params.sigma_prime_sq), lower, upper)
    ).m2


def mean_field_product(m1_a: float, m1_b: float) -> float:
    """Mean-field cross moment: factorize E[Z_a Z_b] into E[Z_a] E[Z_b]."""
    return m1_a * m1_b
