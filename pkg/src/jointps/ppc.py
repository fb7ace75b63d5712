"""Posterior predictive model checks.

Discrepancies are computed on arrays with an optional leading replicate
axis: outcomes and labels of shape ``(..., n)`` against a fixed assignment
vector ``z`` of shape ``(n,)``.  A value of ``nan`` marks an undefined
discrepancy (a group with fewer than two units); such comparisons are
skipped and counted.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import special

from .gibbs import DrawStore, impute_strata
from .model import COMPLIER, NEVER_TAKER, STRATUM_NAMES, Family, ModelSpec, ObservedDataset, Restriction, Theta
from .samplers import make_rng

# substream tags under the master seed
_STREAM_PPPV = 0
_STREAM_SPPV = 1
_STREAM_MODIFIED = 2
_STREAM_SINGLE = 3


# ---------------------------------------------------------------------------
# discrepancies

def _group_stats(y, in_group):
    n = in_group.sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(in_group, y, 0.0).sum(axis=-1) / n
        dev = np.where(in_group, y - mean[..., None], 0.0)
        var = (dev * dev).sum(axis=-1) / (n - 1)
    return n, mean, var


def discrepancy_si_no_sn(y, complier, z, s):
    """Signal, noise and signal-to-noise of outcome ``y`` within stratum ``s``.

    Returns ``(SI, NO, SN)``, each ``nan`` when either arm of the stratum
    has fewer than two units.
    """
    y = np.asarray(y, dtype=float)
    z = np.asarray(z)
    in_s = np.asarray(complier, dtype=bool)
    si = STRATUM_NAMES.index(s) if isinstance(s, str) else int(s)
    if si == NEVER_TAKER:
        in_s = ~in_s
    n0, m0, v0 = _group_stats(y, in_s & (z == 0))
    n1, m1, v1 = _group_stats(y, in_s & (z == 1))
    ok = (n0 >= 2) & (n1 >= 2)
    with np.errstate(invalid="ignore", divide="ignore"):
        si = np.abs(m1 - m0)
        no = np.sqrt(v0 / n0 + v1 / n1)
        sn = si / no
    nan = np.nan
    si, no, sn = np.where(ok, si, nan), np.where(ok, no, nan), np.where(ok & (no > 0), sn, nan)
    if si.ndim == 0:
        return float(si), float(no), float(sn)
    return si, no, sn


def _unit_cell_params(theta: Theta, complier, z):
    s = np.where(complier, COMPLIER, NEVER_TAKER)
    zz = np.broadcast_to(z, s.shape)
    return theta.mu[s, zz], theta.sigma[s, zz]


def chi2_parts(y1, y2, complier, z, theta: Theta):
    """Per-outcome chi-square discrepancies and excluded-unit counts.

    Returns ``(chi_y1, chi_y2, excluded)``; ``chi_y2`` is ``None`` for the
    univariate family.  Continuous outcomes are standardised by their
    marginal cell moments; a binary outcome by ``p = Phi(mu2)``.
    """
    complier = np.asarray(complier, dtype=bool)
    mu, sig = _unit_cell_params(theta, complier, z)
    r1 = (np.asarray(y1) - mu[..., 0]) ** 2 / sig[..., 0, 0]
    chi1 = r1.sum(axis=-1)
    if theta.family is Family.UNIVARIATE or y2 is None:
        return chi1, None, np.zeros(np.shape(chi1), dtype=int)
    y2 = np.asarray(y2, dtype=float)
    if theta.family is Family.CONTINUOUS_CONTINUOUS:
        chi2 = ((y2 - mu[..., 1]) ** 2 / sig[..., 1, 1]).sum(axis=-1)
        return chi1, chi2, np.zeros(np.shape(chi1), dtype=int)
    p = special.ndtr(mu[..., 1])
    bad = (p <= 0.0) | (p >= 1.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        term = np.where(bad, 0.0, (y2 - p) ** 2 / (p * (1.0 - p)))
    return chi1, term.sum(axis=-1), bad.sum(axis=-1)


def chi2_discrepancy(data: ObservedDataset, complier, theta: Theta, outcome: int = 1) -> float:
    """Sum of squared standardised residuals of one outcome given the labels."""
    chi1, chi2, _ = chi2_parts(data.y1, data.y2, complier, data.z, theta)
    if outcome == 1:
        return float(chi1)
    if chi2 is None:
        raise ValueError("no secondary outcome")
    return float(chi2)


def mixture_cdf(y, theta: Theta, z: int):
    """Model-implied CDF of the primary outcome in arm ``z``."""
    sc = np.sqrt(theta.sigma[COMPLIER, z, 0, 0])
    sn = np.sqrt(theta.sigma[NEVER_TAKER, z, 0, 0])
    return theta.pi_c * special.ndtr((y - theta.mu[COMPLIER, z, 0]) / sc) + theta.pi_n * special.ndtr(
        (y - theta.mu[NEVER_TAKER, z, 0]) / sn
    )


def ks_discrepancy(y1, theta: Theta, z) -> float | np.ndarray:
    """Largest gap between each arm's empirical CDF of ``y1`` and the
    model mixture CDF, maximised over arms."""
    y1 = np.asarray(y1, dtype=float)
    z = np.asarray(z)
    out = None
    for arm in (0, 1):
        ya = np.sort(y1[..., z == arm], axis=-1)
        k = ya.shape[-1]
        if k == 0:
            continue
        F = mixture_cdf(ya, theta, arm)
        hi = np.arange(1, k + 1) / k
        lo = np.arange(0, k) / k
        d = np.maximum(np.abs(hi - F), np.abs(F - lo)).max(axis=-1)
        out = d if out is None else np.maximum(out, d)
    if out is None:
        raise ValueError("no units to compare")
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# measure registry

@dataclass(frozen=True)
class Measure:
    """A named discrepancy: ``kind`` in {SI, NO, SN, Chi2, KS}."""

    kind: str
    outcome: int = 1
    stratum: Optional[str] = None

    @property
    def name(self) -> str:
        if self.stratum is not None:
            return f"{self.kind}_{self.outcome}_{self.stratum}"
        return f"{self.kind}_{self.outcome}"


@dataclass(frozen=True)
class CustomMeasure:
    """A user discrepancy ``fn(data, complier, theta) -> float``."""

    name: str
    fn: Callable


def default_measures(spec: ModelSpec) -> list:
    outcomes = (1,) if spec.family is Family.UNIVARIATE else (1, 2)
    strata = ("c",) if spec.restriction is Restriction.ER else ("c", "n")
    out = []
    for m in outcomes:
        for kind in ("SI", "NO", "SN"):
            for s in strata:
                out.append(Measure(kind, m, s))
        out.append(Measure("Chi2", m))
    out.append(Measure("KS", 1))
    return out


@dataclass
class Replicates:
    """``K`` replicated datasets sharing the observed assignment vector."""

    z: np.ndarray
    y1: np.ndarray
    y2: Optional[np.ndarray]
    complier: np.ndarray

    @property
    def n_rep(self) -> int:
        return self.y1.shape[0]

    def dataset(self, k: int) -> ObservedDataset:
        d = (self.z == 1) & self.complier[k]
        return ObservedDataset(self.z, d.astype(np.int8), self.y1[k], None if self.y2 is None else self.y2[k])


def evaluate_measures(measures, y1, y2, complier, z, theta: Theta) -> np.ndarray:
    """Discrepancy values with shape ``(..., n_measures)``."""
    cols = []
    cache = {}
    for meas in measures:
        if isinstance(meas, CustomMeasure):
            cols.append(_custom(meas, y1, y2, complier, z, theta))
            continue
        y = y1 if meas.outcome == 1 else y2
        if meas.kind in ("SI", "NO", "SN"):
            key = (meas.outcome, meas.stratum)
            if key not in cache:
                cache[key] = discrepancy_si_no_sn(y, complier, z, meas.stratum)
            cols.append(cache[key][("SI", "NO", "SN").index(meas.kind)])
        elif meas.kind == "Chi2":
            if "chi" not in cache:
                cache["chi"] = chi2_parts(y1, y2, complier, z, theta)
            cols.append(cache["chi"][meas.outcome - 1])
        elif meas.kind == "KS":
            cols.append(ks_discrepancy(y1, theta, z))
        else:
            raise ValueError(f"unknown discrepancy {meas.kind!r}")
    return np.stack([np.asarray(c, dtype=float) for c in cols], axis=-1)


def _custom(meas: CustomMeasure, y1, y2, complier, z, theta):
    y1 = np.asarray(y1)
    complier = np.asarray(complier)
    if y1.ndim == 1:
        d = ObservedDataset(z, ((z == 1) & complier).astype(np.int8), y1, y2)
        return meas.fn(d, complier, theta)
    return np.array([
        meas.fn(ObservedDataset(z, ((z == 1) & complier[k]).astype(np.int8), y1[k],
                                None if y2 is None else y2[k]), complier[k], theta)
        for k in range(y1.shape[0])
    ])


# ---------------------------------------------------------------------------
# replication

def replicate_batch(theta: Theta, template: ObservedDataset, n_rep: int, rng) -> Replicates:
    """Draw ``n_rep`` replicated datasets at ``theta`` with ``z`` held fixed.

    Strata are Bernoulli(pi_c); outcomes come from the unit's ``(s, z)``
    cell, with a binary secondary outcome obtained by thresholding the
    latent utility at zero.
    """
    z = template.z
    n = template.n
    p = theta.mu.shape[-1]
    complier = rng.random((n_rep, n)) < theta.pi_c
    eps = rng.standard_normal((n_rep, n, p))
    mu, sig = _unit_cell_params(theta, complier, z)
    L = np.linalg.cholesky(theta.sigma)  # (2, 2, p, p)
    s = np.where(complier, COMPLIER, NEVER_TAKER)
    Lu = L[s, np.broadcast_to(z, s.shape)]
    y = mu + np.einsum("knij,knj->kni", Lu, eps)
    y1 = y[..., 0]
    y2 = None
    if theta.family is Family.CONTINUOUS_CONTINUOUS:
        y2 = y[..., 1]
    elif theta.family is Family.CONTINUOUS_BINARY:
        y2 = (y[..., 1] > 0).astype(float)
    return Replicates(z, y1, y2, complier)


def replicate_dataset(theta: Theta, template: ObservedDataset, rng):
    """One replicated dataset and its strata."""
    rep = replicate_batch(theta, template, 1, rng)
    return rep.dataset(0), rep.complier[0]


Replicator = Callable[[Theta, ObservedDataset, int, np.random.Generator], Replicates]


# ---------------------------------------------------------------------------
# p-values

@dataclass
class PValueReport:
    method: str
    measures: list
    p: np.ndarray
    n_compared: np.ndarray
    n_undefined: np.ndarray
    K: Optional[int] = None
    J: Optional[int] = None
    seed: Optional[int] = None
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {m: float(v) for m, v in zip(self.measures, self.p)}

    def warnings(self, threshold: float = 0.01) -> list:
        out = []
        total = self.n_compared + self.n_undefined
        for name, bad, tot in zip(self.measures, self.n_undefined, total):
            if tot and bad / tot > threshold:
                out.append(f"{name}: {int(bad)} of {int(tot)} comparisons undefined")
        return out


def _names(measures):
    return [m.name for m in measures]


def _realized(theta, data, measures, rng):
    complier = impute_strata(theta, data, rng)
    return evaluate_measures(measures, data.y1, data.y2, complier, data.z, theta)


def pppv(
    store: DrawStore,
    data: ObservedDataset,
    spec: ModelSpec,
    seed: int,
    measures: Optional[Sequence] = None,
    replicator: Optional[Replicator] = None,
    max_draws: Optional[int] = None,
) -> PValueReport:
    """Posterior predictive p-values, ties counted as one half.

    For every posterior draw the observed-data labels are re-imputed and
    one replicate is generated from the same draw.
    """
    measures = list(measures or default_measures(spec))
    replicator = replicator or replicate_batch
    total = len(store)
    if total == 0:
        raise ValueError("empty draw store")
    idx = np.arange(total)
    if max_draws is not None and max_draws < total:
        idx = np.unique(np.linspace(0, total - 1, max_draws).round().astype(int))
    score = np.zeros(len(measures))
    compared = np.zeros(len(measures), dtype=int)
    undefined = np.zeros(len(measures), dtype=int)
    for t in idx:
        theta = store.pooled_theta(int(t))
        rng = make_rng(seed, _STREAM_PPPV, int(t))
        obs = _realized(theta, data, measures, rng)
        rep = replicator(theta, data, 1, rng)
        drep = evaluate_measures(measures, rep.y1[0], None if rep.y2 is None else rep.y2[0],
                                 rep.complier[0], rep.z, theta)
        ok = np.isfinite(obs) & np.isfinite(drep)
        score += np.where(ok, (drep > obs) + 0.5 * (drep == obs), 0.0)
        compared += ok
        undefined += ~ok
    if np.any(compared == 0):
        bad = [m.name for m, c in zip(measures, compared) if c == 0]
        raise ValueError(f"no defined comparisons for {', '.join(bad)}")
    return PValueReport("PPPV", _names(measures), score / compared, compared, undefined, seed=seed)


def _sppv_core(theta, data, measures, K, rng, replicator):
    obs = _realized(theta, data, measures, rng)
    rep = replicator(theta, data, K, rng)
    drep = evaluate_measures(measures, rep.y1, rep.y2, rep.complier, rep.z, theta)
    ok = np.isfinite(drep) & np.isfinite(obs)
    greater = (ok & (drep > obs)).sum(axis=0)
    less = (ok & (drep < obs)).sum(axis=0)
    ties = (ok & (drep == obs)).sum(axis=0)
    eps = rng.random(len(measures))
    a = greater + eps * ties
    b = less + (1.0 - eps) * ties
    p = rng.beta(a + 1.0, b + 1.0)
    p = np.where(np.isfinite(obs), p, np.nan)
    return p, ok.sum(axis=0), (~ok).sum(axis=0)


def sppv(
    theta_star: Theta,
    data: ObservedDataset,
    spec: ModelSpec,
    K: int,
    rng,
    measures: Optional[Sequence] = None,
    replicator: Optional[Replicator] = None,
) -> PValueReport:
    """Sampled posterior p-value at a single posterior draw.

    ``K`` replicates are compared with the realized discrepancy; ties are
    split by one ``U(0, 1)`` draw per measure and the p-value is a draw
    from ``Beta(a + 1, b + 1)``.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    measures = list(measures or default_measures(spec))
    p, comp, undef = _sppv_core(theta_star, data, measures, K, rng, replicator or replicate_batch)
    return PValueReport("SPPV", _names(measures), p, comp, undef, K=K)


def modified_sppv(
    store: DrawStore,
    data: ObservedDataset,
    spec: ModelSpec,
    J: int,
    K: int,
    seed: int,
    measures: Optional[Sequence] = None,
    replicator: Optional[Replicator] = None,
) -> PValueReport:
    """Empirical ``u``-quantile of ``J`` SPPVs at distinct posterior draws.

    ``u ~ U(0, 1)`` and the ``J`` draws (without replacement) come from the
    master stream; SPPV ``j`` uses its own substream.
    """
    total = len(store)
    if J < 1 or K < 1:
        raise ValueError("J and K must be at least 1")
    if J > total:
        raise ValueError(f"J={J} exceeds the {total} available posterior draws")
    measures = list(measures or default_measures(spec))
    replicator = replicator or replicate_batch
    master = make_rng(seed, _STREAM_MODIFIED)
    u = master.random()
    picks = np.sort(master.choice(total, size=J, replace=False))
    ps = np.empty((J, len(measures)))
    comp = np.zeros(len(measures), dtype=int)
    undef = np.zeros(len(measures), dtype=int)
    for j, t in enumerate(picks):
        rng = make_rng(seed, _STREAM_SPPV, j)
        ps[j], c, ud = _sppv_core(store.pooled_theta(int(t)), data, measures, K, rng, replicator)
        comp += c
        undef += ud
    p = combine_sppvs(ps, u)
    return PValueReport("ModifiedSPPV", _names(measures), p, comp, undef, K=K, J=J, seed=seed,
                        extra={"u": float(u)})


def combine_sppvs(ps, u: float) -> np.ndarray:
    """Empirical ``u``-quantile (linear interpolation) of each column, ignoring ``nan``."""
    ps = np.asarray(ps, dtype=float)
    if ps.ndim == 1:
        ps = ps[:, None]
    out = np.full(ps.shape[1], np.nan)
    for i in range(ps.shape[1]):
        col = ps[:, i][np.isfinite(ps[:, i])]
        if col.size:
            out[i] = np.quantile(col, u)
    return out


def run_checks(
    store: DrawStore,
    data: ObservedDataset,
    spec: ModelSpec,
    seed: int,
    K: int = 500,
    J: int = 1000,
    measures: Optional[Sequence] = None,
    replicator: Optional[Replicator] = None,
    max_draws: Optional[int] = None,
) -> dict:
    """All three p-value families for one fitted model."""
    measures = list(measures or default_measures(spec))
    out = {"PPPV": pppv(store, data, spec, seed, measures, replicator, max_draws)}
    rng = make_rng(seed, _STREAM_SINGLE)
    t = int(rng.integers(len(store)))
    rep = sppv(store.pooled_theta(t), data, spec, K, rng, measures, replicator)
    rep.seed = seed
    rep.extra["draw"] = t
    out["SPPV"] = rep
    out["ModifiedSPPV"] = modified_sppv(store, data, spec, J, K, seed, measures, replicator)
    return out
