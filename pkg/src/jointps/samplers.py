"""Seedable random-variate primitives.

All samplers take an explicit ``numpy.random.Generator`` and consume a
fixed number of base variates per call (given the arguments), so a seed
fully determines every downstream draw.
"""

from __future__ import annotations

import math
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy import linalg, special

# Beyond this many standard deviations the inverse CDF loses precision.
TAIL_SWITCH = 6.0


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """PCG64 stream for ``seed``; ``keys`` select an independent substream."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


def sample_normal(mean, var, rng: np.random.Generator, size=None):
    var = np.asarray(var, dtype=float)
    if np.any(~(var > 0)):
        raise ValueError("normal variance must be positive")
    return mean + np.sqrt(var) * rng.standard_normal(size if size is not None else np.shape(var * mean))


def sample_mvn(mu, Sigma, rng: np.random.Generator) -> np.ndarray:
    mu = np.asarray(mu, dtype=float)
    try:
        L = np.linalg.cholesky(np.asarray(Sigma, dtype=float))
    except np.linalg.LinAlgError:
        raise ValueError("covariance matrix is not positive definite") from None
    return mu + L @ rng.standard_normal(mu.shape[0])


def _tail_draw(a: float, b: float, rng: np.random.Generator) -> float:
    """Standard normal restricted to ``(a, b)`` with ``a`` far in the right tail."""
    alpha = 0.5 * (a + math.sqrt(a * a + 4.0))
    if b - a < 1.0 / alpha:
        # narrow window: uniform proposal, density ratio bounded by 1
        while True:
            x = a + (b - a) * rng.random()
            if rng.random() <= math.exp(-0.5 * (x * x - a * a)):
                return x
    while True:
        x = a + rng.exponential() / alpha
        if x < b and rng.random() <= math.exp(-0.5 * (x - alpha) ** 2):
            return x


def _std_truncated(a: np.ndarray, b: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(a.shape)
    x = np.empty(a.shape)
    right = a >= 0
    # right of zero: work with survival probabilities to keep precision
    sa, sb = special.ndtr(-a[right]), special.ndtr(-b[right])
    x[right] = -special.ndtri(sa - u[right] * (sa - sb))
    left = ~right
    pa, pb = special.ndtr(a[left]), special.ndtr(b[left])
    x[left] = special.ndtri(pa + u[left] * (pb - pa))
    for i in np.flatnonzero(a > TAIL_SWITCH):
        x[i] = _tail_draw(a[i], b[i], rng)
    for i in np.flatnonzero(b < -TAIL_SWITCH):
        x[i] = -_tail_draw(-b[i], -a[i], rng)
    return np.clip(x, a, b)


def sample_truncated_normal(mean, var, lo, hi, rng: np.random.Generator):
    """Draw from ``N(mean, var)`` restricted to ``(lo, hi)``.

    Broadcasts over array arguments.  Inverse-CDF sampling is used inside
    six standard deviations and exponential-proposal rejection beyond.
    """
    mean, var, lo, hi = np.broadcast_arrays(
        np.asarray(mean, float), np.asarray(var, float), np.asarray(lo, float), np.asarray(hi, float)
    )
    scalar = mean.ndim == 0
    if np.any(~(var > 0)):
        raise ValueError("normal variance must be positive")
    if np.any(~(lo < hi)):
        raise ValueError("truncation requires lo < hi")
    sd = np.sqrt(var)
    a = np.atleast_1d((lo - mean) / sd)
    b = np.atleast_1d((hi - mean) / sd)
    x = np.atleast_1d(mean) + np.atleast_1d(sd) * _std_truncated(a, b, rng)
    # keep the open lower bound open: a draw of exactly lo is nudged inside
    lo1 = np.atleast_1d(lo)
    at_lo = x <= lo1
    if np.any(at_lo):
        x[at_lo] = np.nextafter(lo1[at_lo], np.inf)
    x = np.minimum(x, np.atleast_1d(hi))
    return float(x[0]) if scalar else x.reshape(mean.shape)


def sample_inverse_gamma(shape: float, rate: float, rng: np.random.Generator, size=None):
    if not (shape > 0 and rate > 0):
        raise ValueError("inverse-gamma shape and rate must be positive")
    return 1.0 / rng.gamma(shape, 1.0 / rate, size)


def sample_inverse_wishart(df: float, scale, rng: np.random.Generator) -> np.ndarray:
    """Inverse-Wishart draw via the Bartlett decomposition.

    With ``scale = L L^T`` and ``A`` the Bartlett factor of a standard
    Wishart, ``(A^{-1} L^T)^T (A^{-1} L^T)`` is inverse-Wishart(df, scale).
    """
    scale = np.asarray(scale, dtype=float)
    p = scale.shape[0]
    if not df > p - 1:
        raise ValueError(f"inverse-Wishart needs df > p - 1, got df={df}, p={p}")
    if p == 2:
        return _inverse_wishart_2x2(df, scale, rng)
    return _inverse_wishart_general(df, scale, rng)


def _inverse_wishart_general(df, scale, rng):
    p = scale.shape[0]
    try:
        L = np.linalg.cholesky(scale)
    except np.linalg.LinAlgError:
        raise ValueError("inverse-Wishart scale is not positive definite") from None
    A = np.zeros((p, p))
    A[np.diag_indices(p)] = np.sqrt(rng.chisquare(df - np.arange(p)))
    low = np.tril_indices(p, -1)
    A[low] = rng.standard_normal(len(low[0]))
    M = linalg.solve_triangular(A, L.T, lower=True)
    X = M.T @ M
    return 0.5 * (X + X.T)


def _inverse_wishart_2x2(df, scale, rng):
    # same variates, same order as the general path
    a, b, c = float(scale[0, 0]), float(scale[0, 1]), float(scale[1, 1])
    if not (a > 0 and a * c - b * b > 0):
        raise ValueError("inverse-Wishart scale is not positive definite")
    l11 = math.sqrt(a)
    l21 = b / l11
    l22 = math.sqrt(c - l21 * l21)
    chi = rng.chisquare([df, df - 1.0])
    x1, x2 = math.sqrt(chi[0]), math.sqrt(chi[1])
    nrm = float(rng.standard_normal(1)[0])
    m11 = l11 / x1
    m12 = l21 / x1
    m21 = -nrm * l11 / (x1 * x2)
    m22 = -nrm * l21 / (x1 * x2) + l22 / x2
    off = m11 * m12 + m21 * m22
    return np.array([[m11 * m11 + m21 * m21, off], [off, m12 * m12 + m22 * m22]])


def sample_beta(a: float, b: float, rng: np.random.Generator, size=None):
    if not (a > 0 and b > 0):
        raise ValueError("beta parameters must be positive")
    return rng.beta(a, b, size)


class MHResult(NamedTuple):
    state: tuple
    accepted: bool
    log_target: float


def in_region(s11: float, s12: float) -> bool:
    """Positive-definiteness region for ``[[s11, s12], [s12, 1]]``."""
    return s11 > 0.0 and s11 > s12 * s12


def mh_step_constrained_cov(
    current: Sequence[float],
    log_target: Callable[[float, float], float],
    step_scales: Sequence[float],
    rng: np.random.Generator,
    current_log_target: float | None = None,
) -> MHResult:
    """One random-walk Metropolis step on ``(sigma11, sigma12)``.

    Proposals leaving the region ``sigma11 > sigma12**2`` have zero target
    density and are rejected without evaluating ``log_target``.  Every call
    consumes two normals and one uniform.
    """
    s11, s12 = float(current[0]), float(current[1])
    lt_cur = log_target(s11, s12) if current_log_target is None else current_log_target
    eps = rng.standard_normal(2)
    u = rng.random()
    p11 = s11 + step_scales[0] * eps[0]
    p12 = s12 + step_scales[1] * eps[1]
    if not in_region(p11, p12):
        return MHResult((s11, s12), False, lt_cur)
    lt_prop = log_target(p11, p12)
    if np.log(u) < lt_prop - lt_cur:
        return MHResult((p11, p12), True, lt_prop)
    return MHResult((s11, s12), False, lt_cur)
