"""Data-augmentation Gibbs sampler for the two-stratum mixture model.

One sweep, in this fixed order:

1. impute stratum labels of assigned-to-control units
2. impute latent probit utilities (probit family only)
3. update ``pi_c``
4. update all cell means jointly, then each free covariance block
5. check restriction ties and parameter validity
"""

from __future__ import annotations

import enum
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterator, Optional

import numpy as np
from scipy import linalg, special

from .model import (
    COMPLIER,
    NEVER_TAKER,
    Family,
    ModelSpec,
    ObservedDataset,
    Restriction,
    Theta,
    apply_restriction,
    free_blocks,
    restriction_holds,
    _unit_log_density,
    validate_dataset,
)
from .samplers import (
    in_region,
    make_rng,
    mh_step_constrained_cov,
    sample_beta,
    sample_inverse_gamma,
    sample_inverse_wishart,
    sample_truncated_normal,
)


class InitStrategy(str, enum.Enum):
    PRIOR_DRAW = "prior-draw"
    MOMENT_PERTURB = "moment-perturb"


class SamplerError(RuntimeError):
    def __init__(self, message, chain=None, iteration=None, block=None):
        self.chain = chain
        self.iteration = iteration
        self.block = block
        where = []
        if chain is not None:
            where.append(f"chain {chain}")
        if iteration is not None:
            where.append(f"iteration {iteration}")
        if block is not None:
            where.append(f"block {block}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


@dataclass
class ChainConfig:
    n_iter: int = 15000
    n_burnin: int = 5000
    thin: int = 1
    seed: int = 0
    n_chains: int = 3
    init_strategy: InitStrategy = InitStrategy.MOMENT_PERTURB
    threads: int = 1
    adapt_every: int = 50
    target_accept: float = 0.3

    def __post_init__(self):
        self.init_strategy = InitStrategy(self.init_strategy)
        if not 0 <= self.n_burnin < self.n_iter:
            raise ValueError("need 0 <= n_burnin < n_iter")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.n_chains < 1:
            raise ValueError("n_chains must be >= 1")

    @property
    def n_kept(self) -> int:
        return (self.n_iter - self.n_burnin) // self.thin

    def to_dict(self) -> dict:
        d = asdict(self)
        d["init_strategy"] = self.init_strategy.value
        return d


def chain_seed(seed: int, chain: int) -> int:
    """Deterministic per-chain seed derived from the run seed."""
    return int(np.random.SeedSequence(int(seed), spawn_key=(int(chain),)).generate_state(1, np.uint64)[0])


@dataclass
class DrawStore:
    """Post-burn-in, thinned draws for every chain.

    Arrays are indexed ``[chain, draw, ...]``.
    """

    pi_c: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    spec: ModelSpec
    config: ChainConfig
    seeds: list
    accept_rates: np.ndarray = field(default_factory=lambda: np.zeros((0,)))

    @property
    def family(self) -> Family:
        return self.spec.family

    @property
    def n_chains(self) -> int:
        return self.pi_c.shape[0]

    @property
    def n_draws(self) -> int:
        return self.pi_c.shape[1]

    def __len__(self) -> int:
        return self.pi_c.size

    def theta(self, chain: int, i: int) -> Theta:
        return Theta(
            float(self.pi_c[chain, i]), self.mu[chain, i].copy(), self.sigma[chain, i].copy(), self.family
        )

    def pooled_theta(self, k: int) -> Theta:
        c, i = divmod(k, self.n_draws)
        return self.theta(c, i)

    def thetas(self) -> Iterator[Theta]:
        for c in range(self.n_chains):
            for i in range(self.n_draws):
                yield self.theta(c, i)

    def chain(self, c: int) -> "DrawStore":
        return DrawStore(
            self.pi_c[c : c + 1], self.mu[c : c + 1], self.sigma[c : c + 1],
            self.spec, self.config, [self.seeds[c]], self.accept_rates[c : c + 1],
        )

    @classmethod
    def concat(cls, parts: list, spec: ModelSpec, config: ChainConfig) -> "DrawStore":
        return cls(
            np.concatenate([p.pi_c for p in parts]),
            np.concatenate([p.mu for p in parts]),
            np.concatenate([p.sigma for p in parts]),
            spec,
            config,
            [s for p in parts for s in p.seeds],
            np.concatenate([p.accept_rates for p in parts]),
        )


# ---------------------------------------------------------------------------
# parameter layout

@dataclass(frozen=True)
class _Layout:
    mean_index: np.ndarray       # (2, 2, p) -> index into the free mean vector
    n_free_means: int
    cov_groups: tuple            # tuple of tuples of (s, z) cells sharing a covariance


def _layout(spec: ModelSpec) -> _Layout:
    p = spec.dim
    entries, cov_cells = free_blocks(spec)
    pos = {e: i for i, e in enumerate(entries)}
    idx = np.zeros((2, 2, p), dtype=int)
    for s in (0, 1):
        for z in (0, 1):
            for k in range(p):
                key = (s, z, k)
                if key not in pos:
                    key = (1, 0, k)  # tied to the control-arm never-taker cell
                idx[s, z, k] = pos[key]
    if spec.restriction is Restriction.ER:
        groups = (((0, 0),), ((0, 1),), ((1, 0), (1, 1)))
    else:
        groups = tuple(((s, z),) for s, z in cov_cells)
    return _Layout(idx, len(entries), groups)


# ---------------------------------------------------------------------------
# Gibbs blocks

def stratum_probabilities(theta: Theta, data: ObservedDataset) -> tuple[np.ndarray, int]:
    """Posterior complier probability of each assigned-to-control unit.

    Returns ``(prob, n_ties)``; units where both components have zero
    density (in floating point) fall back to ``pi_c`` and are counted.
    """
    m0 = data.z == 0
    y2 = None if data.y2 is None else data.y2[m0]
    fc = _unit_log_density(data.y1[m0], y2, theta.mu[0, 0], theta.sigma[0, 0], theta.family)
    fn = _unit_log_density(data.y1[m0], y2, theta.mu[1, 0], theta.sigma[1, 0], theta.family)
    pi = theta.pi_c
    if pi >= 1.0:
        return np.ones(fc.shape), 0
    if pi <= 0.0:
        return np.zeros(fc.shape), 0
    with np.errstate(invalid="ignore"):
        logit = (np.log(pi) + fc) - (np.log1p(-pi) + fn)
    prob = special.expit(logit)
    ties = np.isnan(prob)
    if ties.any():
        prob[ties] = pi
    return prob, int(ties.sum())


def impute_strata(theta: Theta, data: ObservedDataset, rng: np.random.Generator) -> np.ndarray:
    """Draw stratum labels; ``True`` marks compliers.

    Treated units are labelled from ``d_obs``; one uniform is consumed per
    control-arm unit, in unit order.
    """
    complier = data.d == 1
    m0 = data.z == 0
    prob, _ = stratum_probabilities(theta, data)
    complier = complier.copy()
    complier[m0] = rng.random(int(m0.sum())) < prob
    return complier


def _unit_cells(complier: np.ndarray) -> np.ndarray:
    return np.where(complier, COMPLIER, NEVER_TAKER)


def impute_latent_utilities(
    theta: Theta, data: ObservedDataset, complier: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Draw probit utilities given ``y1`` and the sign fixed by ``y2``."""
    if theta.family is not Family.CONTINUOUS_BINARY:
        raise ValueError("latent utilities exist only in the probit family")
    s = _unit_cells(complier)
    mu = theta.mu[s, data.z]
    sig = theta.sigma[s, data.z]
    s11, s12 = sig[:, 0, 0], sig[:, 0, 1]
    cond_mean = mu[:, 1] + (s12 / s11) * (data.y1 - mu[:, 0])
    cond_var = 1.0 - s12 * s12 / s11
    if np.any(cond_var <= 0):
        raise SamplerError("non-positive conditional variance of latent utility")
    pos = data.y2 == 1
    lo = np.where(pos, 0.0, -np.inf)
    hi = np.where(pos, np.inf, 0.0)
    return sample_truncated_normal(cond_mean, cond_var, lo, hi, rng)


def update_pi(complier: np.ndarray, a: float, b: float, rng: np.random.Generator) -> float:
    n_c = int(np.count_nonzero(complier))
    n_n = int(np.size(complier) - n_c)
    return float(sample_beta(a + n_c, b + n_n, rng))


def cell_statistics(y: np.ndarray, complier: np.ndarray, z: np.ndarray):
    """Counts, sums and raw cross-products per ``(s, z)`` cell.

    Returns arrays of shape ``(2, 2)``, ``(2, 2, p)`` and ``(2, 2, p, p)``.
    """
    cell = _unit_cells(complier) * 2 + z
    p = y.shape[1]
    counts = np.bincount(cell, minlength=4).astype(float)
    sums = np.empty((4, p))
    m2 = np.empty((4, p, p))
    for j in range(p):
        sums[:, j] = np.bincount(cell, weights=y[:, j], minlength=4)
        for k in range(j, p):
            m2[:, j, k] = m2[:, k, j] = np.bincount(cell, weights=y[:, j] * y[:, k], minlength=4)
    return counts.reshape(2, 2), sums.reshape(2, 2, p), m2.reshape(2, 2, p, p)


def _scatter(counts, sums, m2, mu):
    """Residual scatter matrix sum_i (y_i - mu)(y_i - mu)^T from raw moments."""
    return m2 - np.outer(mu, sums) - np.outer(sums, mu) + counts * np.outer(mu, mu)


class _CellUpdater:
    """Complete-data conditional updates of cell means and covariances."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self.layout = _layout(spec)
        p = spec.dim
        q = self.layout.n_free_means
        sel = np.zeros((2, 2, p, q))
        for s in (0, 1):
            for z in (0, 1):
                for k in range(p):
                    sel[s, z, k, self.layout.mean_index[s, z, k]] = 1.0
        self.sel = sel
        self.prior_prec = np.eye(q) / spec.priors.mean_var
        self.step_scales = {}
        self.accepts = {}
        self.proposals = {}

    def update_means(self, theta: Theta, counts, sums, rng) -> None:
        inv = np.linalg.inv(theta.sigma)  # (2, 2, p, p)
        A = self.sel
        P = self.prior_prec + np.einsum("sz,szkq,szkl,szlr->qr", counts, A, inv, A)
        b = np.einsum("szkq,szkl,szl->q", A, inv, sums)
        L = np.linalg.cholesky(P)
        mean = linalg.cho_solve((L, True), b)
        eps = rng.standard_normal(mean.shape[0])
        free = mean + linalg.solve_triangular(L.T, eps, lower=False)
        theta.mu = free[self.layout.mean_index]

    def update_covariances(self, theta: Theta, counts, sums, m2, rng, adapting: bool) -> None:
        pr = self.spec.priors
        if pr.fixed_sigma is not None:
            theta.sigma = np.array(pr.fixed_sigma, dtype=float)
            return
        fam = self.spec.family
        for group in self.layout.cov_groups:
            n = 0.0
            S = 0.0
            for s, z in group:
                n += counts[s, z]
                S = S + _scatter(counts[s, z], sums[s, z], m2[s, z], theta.mu[s, z])
            if fam is Family.UNIVARIATE:
                var = sample_inverse_gamma(pr.ig_shape + 0.5 * n, pr.ig_rate + 0.5 * S[0, 0], rng)
                new = np.array([[var]])
            elif fam is Family.CONTINUOUS_CONTINUOUS:
                new = sample_inverse_wishart(pr.iw_df + n, np.asarray(pr.iw_scale) + S, rng)
            else:
                new = self._mh_cov(group, theta.sigma[group[0]], n, S, rng, adapting)
            for s, z in group:
                theta.sigma[s, z] = new

    def _mh_cov(self, group, current, n, S, rng, adapting):
        pr = self.spec.priors
        m0 = np.asarray(pr.sigma0, dtype=float)
        P0 = np.linalg.inv(np.asarray(pr.Sigma0, dtype=float))
        S11, S12, S22 = S[0, 0], S[0, 1], S[1, 1]

        def log_target(s11, s12):
            det = s11 - s12 * s12
            r = np.array([s11 - m0[0], s12 - m0[1]])
            return (
                -0.5 * n * np.log(det)
                - 0.5 * (S11 - 2.0 * s12 * S12 + s11 * S22) / det
                - 0.5 * r @ P0 @ r
            )

        key = group
        if key not in self.step_scales:
            s11 = current[0, 0]
            self.step_scales[key] = np.array([0.2 * s11, 0.2 * np.sqrt(s11)])
            self.accepts[key] = 0
            self.proposals[key] = 0
        res = mh_step_constrained_cov(
            (current[0, 0], current[0, 1]), log_target, self.step_scales[key], rng
        )
        self.accepts[key] += int(res.accepted)
        self.proposals[key] += 1
        s11, s12 = res.state
        return np.array([[s11, s12], [s12, 1.0]])

    def adapt(self, target: float) -> None:
        for key, scales in self.step_scales.items():
            if self.proposals[key]:
                rate = self.accepts[key] / self.proposals[key]
                scales *= np.exp(2.0 * (rate - target))
            self.accepts[key] = 0
            self.proposals[key] = 0

    def acceptance_rate(self) -> float:
        tot = sum(self.proposals.values())
        return sum(self.accepts.values()) / tot if tot else float("nan")


def update_cells(theta: Theta, data: ObservedDataset, complier, y2_star, spec: ModelSpec, rng,
                 updater: Optional[_CellUpdater] = None, adapting: bool = False) -> Theta:
    """Draw all cell parameters from their complete-data conditionals.

    Means are drawn jointly (tied coordinates pooled), then each free
    covariance block given the new means.  Empty cells update from the
    prior alone.
    """
    updater = updater or _CellUpdater(spec)
    y = _complete_outcomes(data, y2_star, spec)
    counts, sums, m2 = cell_statistics(y, complier, data.z)
    out = theta.copy()
    if spec.priors.fixed_sigma is not None:
        out.sigma = np.array(spec.priors.fixed_sigma, dtype=float)
    updater.update_means(out, counts, sums, rng)
    updater.update_covariances(out, counts, sums, m2, rng, adapting)
    return out


def _complete_outcomes(data: ObservedDataset, y2_star, spec: ModelSpec) -> np.ndarray:
    if spec.family is Family.UNIVARIATE:
        return data.y1[:, None]
    if spec.family is Family.CONTINUOUS_BINARY:
        if y2_star is None:
            raise ValueError("probit family needs latent utilities")
        return np.column_stack([data.y1, y2_star])
    return np.column_stack([data.y1, data.y2])


# ---------------------------------------------------------------------------
# initial values

def _group_moments(y: np.ndarray, mask: np.ndarray, fallback_mask: np.ndarray):
    if mask.sum() < 2:
        mask = fallback_mask
    g = y[mask]
    mean = g.mean(axis=0)
    cov = np.atleast_2d(np.cov(g, rowvar=False)) if g.shape[0] > 1 else np.eye(y.shape[1])
    return mean, cov


def initial_theta(data: ObservedDataset, spec: ModelSpec, strategy: InitStrategy, rng) -> Theta:
    strategy = InitStrategy(strategy)
    if strategy is InitStrategy.PRIOR_DRAW:
        theta = _prior_draw(spec, rng)
    else:
        theta = _moment_start(data, spec, rng)
    return apply_restriction(theta, spec)


def _em_control_arm(y: np.ndarray, pi: float, n_iter: int = 100):
    """Two-component Gaussian EM with weights fixed at ``(pi, 1 - pi)``.

    Started from every partition that puts the lowest (or highest) ``pi``
    share of units on one coordinate into the complier component; the run
    with the highest log likelihood wins.  Returns ``(means, covs, resp)``
    with means and covariances indexed by stratum and ``resp`` the
    complier responsibilities.
    """
    n, q = y.shape
    ridge = 1e-6 * np.eye(q) * max(1.0, float(np.mean(np.var(y, axis=0))))
    k = max(1, min(n - 1, int(round(pi * n))))
    starts = []
    for j in range(q):
        order = np.argsort(y[:, j], kind="stable")
        for comp_idx in (order[:k], order[n - k:]):
            r = np.zeros(n)
            r[comp_idx] = 1.0
            starts.append(r)
    best = None
    w = np.array([pi, 1.0 - pi])
    for r in starts:
        for _ in range(n_iter):
            means, covs = [], []
            for resp in (r, 1.0 - r):
                tot = resp.sum() + 1e-12
                m = resp @ y / tot
                c = ((y - m).T * resp) @ (y - m) / tot + ridge
                means.append(m)
                covs.append(c)
            logf = np.column_stack([_mvn_logpdf(y, means[i], covs[i]) + np.log(w[i]) for i in (0, 1)])
            ll = np.logaddexp(logf[:, 0], logf[:, 1])
            r = np.exp(logf[:, 0] - ll)
        total = ll.sum()
        if best is None or total > best[0]:
            best = (total, means, covs, r)
    return best[1], best[2], best[3]


def _mvn_logpdf(y, m, c):
    L = np.linalg.cholesky(c)
    r = linalg.solve_triangular(L, (y - m).T, lower=True)
    return -0.5 * (r * r).sum(axis=0) - np.log(np.diag(L)).sum() - 0.5 * y.shape[1] * np.log(2 * np.pi)


def _moment_start(data: ObservedDataset, spec: ModelSpec, rng) -> Theta:
    """Moment-based start with a chain-specific perturbation.

    Treated-arm cells take their observed group moments; control-arm cells
    come from a fixed-weight EM split of the control arm.  Every mean
    coordinate is then shifted by ``U(-1, 1)`` within-cell SDs and the
    complier logit by ``U(-0.5, 0.5)``.
    """
    fam = spec.family
    p = spec.dim
    z, d = data.z, data.d
    allm = np.ones(data.n, dtype=bool)
    g11, g10, g0 = (z == 1) & (d == 1), (z == 1) & (d == 0), z == 0
    pi = float(np.clip(d[z == 1].mean(), 0.05, 0.95))

    y = data.outcomes()
    q = y.shape[1]
    means = {}
    covs = {}
    means[0, 1], covs[0, 1] = _group_moments(y, g11, allm)
    means[1, 1], covs[1, 1] = _group_moments(y, g10, allm)
    if g0.sum() >= 2 * q + 2:
        if fam is Family.CONTINUOUS_BINARY:
            # a binary coordinate lets EM collapse onto pure-y2 components; split on y1
            (m_c, m_n), (c_c, c_n), r = _em_control_arm(y[g0][:, :1], pi)
            y2 = y[g0][:, 1]
            for s_, m, c, w in ((0, m_c, c_c, r), (1, m_n, c_n, 1.0 - r)):
                rate = (w @ y2) / max(w.sum(), 1e-12)
                means[s_, 0] = np.array([m[0], rate])
                covs[s_, 0] = np.array([[c[0, 0], 0.0], [0.0, rate * (1.0 - rate)]])
        else:
            (means[0, 0], means[1, 0]), (covs[0, 0], covs[1, 0]), _ = _em_control_arm(y[g0], pi)
    else:
        means[0, 0], covs[0, 0] = _group_moments(y, g0, allm)
        means[1, 0], covs[1, 0] = means[0, 0], covs[0, 0]

    mu = np.zeros((2, 2, p))
    sigma = np.zeros((2, 2, p, p))
    for (s, zz), m in means.items():
        C = covs[s, zz] + 1e-6 * np.eye(q)
        sd = np.sqrt(np.diag(C))
        if fam is Family.CONTINUOUS_BINARY:
            rate = np.clip(m[1], 0.02, 0.98)
            mu[s, zz] = [m[0] + rng.uniform(-1.0, 1.0) * sd[0], special.ndtri(rate) + rng.uniform(-1.0, 1.0)]
            sigma[s, zz] = np.array([[C[0, 0], 0.0], [0.0, 1.0]])
        else:
            mu[s, zz] = m + rng.uniform(-1.0, 1.0, q) * sd
            sigma[s, zz] = C
    if spec.priors.fixed_sigma is not None:
        sigma = np.array(spec.priors.fixed_sigma, dtype=float)
    logit = special.logit(pi) + rng.uniform(-0.5, 0.5)
    return Theta(float(special.expit(logit)), mu, sigma, fam)


def _prior_draw(spec: ModelSpec, rng, max_tries: int = 10000) -> Theta:
    pr = spec.priors
    fam = spec.family
    p = spec.dim
    pi = float(sample_beta(pr.pi_a, pr.pi_b, rng))
    mu = rng.normal(0.0, np.sqrt(pr.mean_var), (2, 2, p))
    sigma = np.zeros((2, 2, p, p))
    for s in (0, 1):
        for z in (0, 1):
            for _ in range(max_tries):
                if fam is Family.UNIVARIATE:
                    S = np.array([[sample_inverse_gamma(pr.ig_shape, pr.ig_rate, rng)]])
                elif fam is Family.CONTINUOUS_CONTINUOUS:
                    S = sample_inverse_wishart(pr.iw_df, np.asarray(pr.iw_scale), rng)
                else:
                    v = rng.multivariate_normal(np.asarray(pr.sigma0), np.asarray(pr.Sigma0))
                    if not in_region(v[0], v[1]):
                        continue
                    S = np.array([[v[0], v[1]], [v[1], 1.0]])
                if np.all(np.isfinite(S)) and np.all(np.linalg.eigvalsh(S) > 0):
                    break
            else:
                raise SamplerError("could not draw a valid covariance from the prior")
            sigma[s, z] = S
    if pr.fixed_sigma is not None:
        sigma = np.array(pr.fixed_sigma, dtype=float)
    pi = min(max(pi, 1e-12), 1 - 1e-12)
    return Theta(pi, mu, sigma, fam)


# ---------------------------------------------------------------------------
# chains

def _check_block(theta: Theta, block: str, it: int) -> None:
    ok = np.all(np.isfinite(theta.mu)) and np.all(np.isfinite(theta.sigma)) and 0.0 < theta.pi_c < 1.0
    if ok:
        d = theta.sigma[..., 0, 0]
        ok = np.all(d > 0)
        if ok and theta.family is not Family.UNIVARIATE:
            det = theta.sigma[..., 0, 0] * theta.sigma[..., 1, 1] - theta.sigma[..., 0, 1] ** 2
            ok = np.all(det > 0)
    if not ok:
        raise SamplerError("non-finite or invalid parameter draw", iteration=it, block=block)


def run_chain(
    data: ObservedDataset,
    spec: ModelSpec,
    config: ChainConfig,
    seed: int,
    init: Optional[Theta] = None,
    chain_index: Optional[int] = None,
) -> DrawStore:
    """Run one chain; the result is a pure function of its arguments."""
    data = validate_dataset(data, spec)
    rng = make_rng(seed)
    theta = init.copy() if init is not None else initial_theta(data, spec, config.init_strategy, rng)
    theta = apply_restriction(theta, spec)
    pr = spec.priors
    updater = _CellUpdater(spec)
    probit = spec.family is Family.CONTINUOUS_BINARY
    keep = config.n_kept
    p = spec.dim
    pis = np.empty(keep)
    mus = np.empty((keep, 2, 2, p))
    sigmas = np.empty((keep, 2, 2, p, p))
    k = 0
    y2_star = None
    for it in range(config.n_iter):
        complier = impute_strata(theta, data, rng)
        if probit:
            y2_star = impute_latent_utilities(theta, data, complier, rng)
        theta.pi_c = update_pi(complier, pr.pi_a, pr.pi_b, rng)
        _check_block(theta, "pi", it)
        adapting = it < config.n_burnin
        theta = update_cells(theta, data, complier, y2_star, spec, rng, updater, adapting)
        _check_block(theta, "cells", it)
        if not restriction_holds(theta, spec):
            raise SamplerError("restriction tie broken", iteration=it, block="cells")
        if adapting and probit and (it + 1) % config.adapt_every == 0:
            updater.adapt(config.target_accept)
        if it >= config.n_burnin and (it - config.n_burnin + 1) % config.thin == 0:
            pis[k] = theta.pi_c
            mus[k] = theta.mu
            sigmas[k] = theta.sigma
            k += 1
    rate = updater.acceptance_rate() if probit else np.nan
    return DrawStore(pis[None], mus[None], sigmas[None], spec, config, [int(seed)], np.array([rate]))


def _run_chain_task(args):
    data, spec, config, seed, idx = args
    try:
        return run_chain(data, spec, config, seed)
    except SamplerError as exc:
        raise SamplerError(str(exc), chain=idx) from exc


def run_chains(
    data: ObservedDataset,
    spec: ModelSpec,
    config: ChainConfig,
    seeds: Optional[list] = None,
) -> DrawStore:
    """Run ``config.n_chains`` independent chains and merge them in chain order.

    Each chain's seed (and hence its dispersed starting point) derives
    from ``config.seed`` and the chain index unless ``seeds`` is given.
    """
    data = validate_dataset(data, spec)
    if seeds is None:
        seeds = [chain_seed(config.seed, c) for c in range(config.n_chains)]
    tasks = [(data, spec, config, s, i) for i, s in enumerate(seeds)]
    if config.threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(config.threads, len(tasks))) as pool:
            parts = list(pool.map(_run_chain_task, tasks))
    else:
        parts = [_run_chain_task(t) for t in tasks]
    return DrawStore.concat(parts, spec, config)
