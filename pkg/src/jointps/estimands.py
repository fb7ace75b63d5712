"""Causal estimands and posterior summaries computed from parameter draws."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import special

from .model import COMPLIER, NEVER_TAKER, STRATUM_NAMES, Family, Restriction, Theta


@dataclass(frozen=True)
class PosteriorSummary:
    median: float
    q025: float
    q975: float
    width: float
    prob_negative: float
    mean: float

    def to_dict(self) -> dict:
        return asdict(self)


def _stratum(s) -> int:
    if isinstance(s, str):
        return STRATUM_NAMES.index(s)
    return int(s)


def tau(theta: Theta, s) -> float:
    """Principal causal effect on the primary outcome within stratum ``s``."""
    s = _stratum(s)
    return float(theta.mu[s, 1, 0] - theta.mu[s, 0, 0])


def secondary_effect(theta: Theta, s) -> float:
    """Effect of assignment on the secondary outcome within stratum ``s``.

    Difference of success probabilities for the probit family, of means
    for the continuous family.
    """
    s = _stratum(s)
    if theta.family is Family.UNIVARIATE:
        raise ValueError("the univariate family has no secondary outcome")
    if theta.family is Family.CONTINUOUS_BINARY:
        return float(special.ndtr(theta.mu[s, 1, 1]) - special.ndtr(theta.mu[s, 0, 1]))
    return float(theta.mu[s, 1, 1] - theta.mu[s, 0, 1])


def tau_draws(store, s) -> np.ndarray:
    """``(n_chains, n_draws)`` array of PCE draws from a DrawStore."""
    s = _stratum(s)
    return store.mu[:, :, s, 1, 0] - store.mu[:, :, s, 0, 0]


def secondary_effect_draws(store, s) -> np.ndarray:
    s = _stratum(s)
    if store.family is Family.UNIVARIATE:
        raise ValueError("the univariate family has no secondary outcome")
    m1, m0 = store.mu[:, :, s, 1, 1], store.mu[:, :, s, 0, 1]
    if store.family is Family.CONTINUOUS_BINARY:
        return special.ndtr(m1) - special.ndtr(m0)
    return m1 - m0


def summarize(draws) -> PosteriorSummary:
    """Median, equal-tailed 95% interval (linear-interpolation quantiles), mean, P(< 0)."""
    x = np.asarray(draws, dtype=float).ravel()
    if x.size < 2:
        raise ValueError("summarize needs at least two draws")
    q025, med, q975 = np.quantile(x, [0.025, 0.5, 0.975])
    return PosteriorSummary(
        median=float(med),
        q025=float(q025),
        q975=float(q975),
        width=float(q975 - q025),
        prob_negative=float(np.mean(x < 0)),
        mean=float(x.mean()),
    )


def gelman_rubin(chains) -> float:
    """Potential scale-reduction factor (unsplit chains).

    Parameters
    ----------
    chains : array_like of shape (n_chains, n_draws)

    Returns
    -------
    float
        ``sqrt(((n - 1)/n * W + B/n) / W)`` floored at 1 (the raw ratio
        dips below 1 when chain means agree more closely than sampling
        noise would suggest); ``inf`` when the within-chain variance
        vanishes but chain means differ, ``1`` when both vanish.
    """
    x = np.asarray(chains, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 2:
        raise ValueError("need at least two chains of length >= 2")
    n = x.shape[1]
    W = x.var(axis=1, ddof=1).mean()
    B_over_n = x.mean(axis=1).var(ddof=1)
    if W == 0:
        return 1.0 if B_over_n == 0 else float("inf")
    return float(max(1.0, np.sqrt(((n - 1) / n * W + B_over_n) / W)))


def silverman_bandwidth(x: np.ndarray) -> float:
    sd = x.std(ddof=1)
    q75, q25 = np.quantile(x, [0.75, 0.25])
    spread = min(sd, (q75 - q25) / 1.34)
    if spread <= 0:
        spread = sd
    return 0.9 * spread * x.size ** (-0.2)


def kde(draws, bandwidth=None, n_grid: int = 512, pad: float = 4.0):
    """Gaussian kernel density estimate on a regular grid.

    Returns ``(grid, density)``; the grid spans the data range padded by
    ``pad`` bandwidths on each side.
    """
    x = np.asarray(draws, dtype=float).ravel()
    if x.size < 2:
        raise ValueError("kde needs at least two draws")
    if np.ptp(x) == 0:
        raise ValueError("kde undefined for zero-variance input")
    h = silverman_bandwidth(x) if bandwidth is None else float(bandwidth)
    if not h > 0:
        raise ValueError("bandwidth must be positive")
    grid = np.linspace(x.min() - pad * h, x.max() + pad * h, n_grid)
    dens = np.zeros(n_grid)
    for chunk in np.array_split(x, max(1, x.size // 2000)):
        u = (grid[:, None] - chunk[None, :]) / h
        dens += np.exp(-0.5 * u * u).sum(axis=1)
    dens /= x.size * h * np.sqrt(2.0 * np.pi)
    return grid, dens


def correlation_ratio(pi_c: float, mu, sigma, z: int) -> float:
    """Share of the secondary outcome's variance in arm ``z`` explained by stratum.

    ``mu`` and ``sigma`` are indexed ``[stratum, arm]`` as in :class:`Theta`.
    """
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    pi_n = 1.0 - pi_c
    between = pi_c * pi_n * (mu[COMPLIER, z, 1] - mu[NEVER_TAKER, z, 1]) ** 2
    within = pi_c * sigma[COMPLIER, z, 1, 1] + pi_n * sigma[NEVER_TAKER, z, 1, 1]
    total = between + within
    return float(between / total) if total > 0 else 0.0


def estimand_draws(store) -> dict:
    """Per-chain draws of every reportable scalar estimand.

    ``tau_n`` is omitted under ER, where it is identically zero.
    """
    out = {"tau_c": tau_draws(store, "c")}
    if store.spec.restriction is not Restriction.ER:
        out["tau_n"] = tau_draws(store, "n")
    out["pi_c"] = store.pi_c
    if store.family is not Family.UNIVARIATE:
        out["sec_c"] = secondary_effect_draws(store, "c")
        if store.spec.restriction is Restriction.NONE:
            out["sec_n"] = secondary_effect_draws(store, "n")
    return out


def summarize_store(store) -> dict:
    """``{estimand: (PosteriorSummary, psrf)}``; ``psrf`` is ``nan`` for a single chain."""
    out = {}
    for name, draws in estimand_draws(store).items():
        psrf = gelman_rubin(draws) if draws.shape[0] >= 2 and draws.shape[1] >= 2 else float("nan")
        out[name] = (summarize(draws), psrf)
    return out
