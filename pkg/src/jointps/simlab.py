"""Simulation laboratory: the seven bivariate-normal scenarios and
repeated-sampling evaluation of the model variants."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .estimands import PosteriorSummary, summarize_store, tau
from .gibbs import ChainConfig, run_chains
from .model import Family, ObservedDataset, Priors, Theta, Variant, theta_from_cells, variant_spec
from .samplers import make_rng

SCENARIO_IDS = ("I", "II", "III", "IV", "V", "VI", "VII")

_COMPLIER_CELLS = {
    ("c", 0): ((2.5, 8.0), ((0.09, 0.24), (0.24, 1.0))),
    ("c", 1): ((0.5, 6.5), ((0.01, 0.08), (0.08, 1.0))),
}

# never-taker cells: (mu_n0, mu_n1, Sigma_n0, Sigma_n1)
_NEVER_TAKER_CELLS = {
    "I": ((2.75, 12.0), (4.25, 12.0), ((0.16, 0.16), (0.16, 4.0)), ((0.04, 0.08), (0.08, 4.0))),
    "II": ((2.75, 12.0), (4.25, 13.0), ((0.16, 0.64), (0.64, 4.0)), ((0.04, 0.32), (0.32, 4.0))),
    "III": ((2.75, 12.0), (4.25, 13.0), ((0.16, 0.16), (0.16, 4.0)), ((0.04, 0.08), (0.08, 4.0))),
    "IV": ((2.75, 12.0), (4.25, 24.0), ((0.16, 0.64), (0.64, 4.0)), ((0.04, 0.48), (0.48, 9.0))),
    "V": ((2.75, 12.0), (4.25, 24.0), ((0.16, 0.16), (0.16, 4.0)), ((0.04, 0.12), (0.12, 9.0))),
    "VI": ((2.75, 24.0), (4.25, 36.0), ((0.16, 0.96), (0.96, 9.0)), ((0.04, 0.80), (0.80, 25.0))),
    "VII": ((2.75, 24.0), (4.25, 36.0), ((0.16, 0.24), (0.24, 9.0)), ((0.04, 0.20), (0.20, 25.0))),
}

N_UNITS = 600
PI_C = 0.7


@dataclass(frozen=True)
class Scenario:
    id: str
    theta: Theta
    n: int = N_UNITS

    @property
    def pi_c(self) -> float:
        return self.theta.pi_c

    @property
    def truth(self) -> dict:
        return {"tau_c": tau(self.theta, "c"), "tau_n": tau(self.theta, "n"), "pi_c": self.theta.pi_c}


def scenario_params(scenario_id: str) -> Scenario:
    sid = str(scenario_id).upper()
    if sid not in _NEVER_TAKER_CELLS:
        raise ValueError(f"unknown scenario {scenario_id!r}; expected one of {', '.join(SCENARIO_IDS)}")
    mu0, mu1, S0, S1 = _NEVER_TAKER_CELLS[sid]
    cells = dict(_COMPLIER_CELLS)
    cells[("n", 0)] = (mu0, S0)
    cells[("n", 1)] = (mu1, S1)
    return Scenario(sid, theta_from_cells(PI_C, cells, Family.CONTINUOUS_CONTINUOUS))


@dataclass(frozen=True)
class SimulatedDataset:
    """A generated dataset together with the true strata.

    Only ``data`` is ever passed to fitting code; ``truth_complier`` is kept
    for evaluation.
    """

    data: ObservedDataset
    truth_complier: np.ndarray
    scenario_id: str
    seed: int


def draw_outcomes(theta: Theta, complier: np.ndarray, z: np.ndarray, rng) -> np.ndarray:
    """Outcome matrix drawn cell by cell in fixed ``(s, z)`` order."""
    n = z.shape[0]
    p = theta.mu.shape[-1]
    y = np.empty((n, p))
    for s, mask_s in ((0, complier), (1, ~complier)):
        for zz in (0, 1):
            m = mask_s & (z == zz)
            k = int(m.sum())
            L = np.linalg.cholesky(theta.sigma[s, zz])
            y[m] = theta.mu[s, zz] + rng.standard_normal((k, p)) @ L.T
    return y


def generate_dataset(scenario: Scenario, seed: int) -> SimulatedDataset:
    rng = make_rng(seed)
    n = scenario.n
    complier = rng.random(n) < scenario.pi_c
    z = np.zeros(n, dtype=np.int8)
    z[rng.permutation(n)[: n // 2]] = 1
    d = (z == 1) & complier
    y = draw_outcomes(scenario.theta, complier, z, rng)
    data = ObservedDataset(z, d.astype(np.int8), y[:, 0], y[:, 1])
    return SimulatedDataset(data, complier, scenario.id, int(seed))


FitFn = Callable[[ObservedDataset, Variant, ChainConfig], dict]


def fit_variant(data: ObservedDataset, variant: Variant, config: ChainConfig,
                priors: Optional[Priors] = None) -> dict:
    """Fit one variant; returns ``{estimand: (PosteriorSummary, psrf)}``."""
    variant = Variant(variant)
    binary = data.y2 is not None and bool(np.all((data.y2 == 0) | (data.y2 == 1)))
    spec = variant_spec(variant, binary, priors)
    fit_data = data if variant.bivariate else data.drop_secondary()
    store = run_chains(fit_data, spec, config)
    return summarize_store(store)


def run_comparison(
    scenario: Scenario,
    variants: Sequence,
    config: ChainConfig,
    seed: int,
    fit_fn: Optional[FitFn] = None,
) -> dict:
    """Fit every variant to one generated dataset.

    Returns ``{variant: {estimand: (PosteriorSummary, psrf)}}``.
    """
    variants = [Variant(v) for v in variants]
    if not variants:
        raise ValueError("at least one model variant is required")
    fit_fn = fit_fn or fit_variant
    sim = generate_dataset(scenario, seed)
    out = {}
    for k, v in enumerate(variants):
        cfg = replace(config, seed=_fit_seed(config.seed, seed, k))
        out[v] = fit_fn(sim.data, v, cfg)
    return out


def _fit_seed(base: int, rep: int, variant_index: int) -> int:
    ss = np.random.SeedSequence(int(base), spawn_key=(int(rep), int(variant_index)))
    return int(ss.generate_state(1, np.uint64)[0] >> 1)


@dataclass
class EstimandMetrics:
    truth: float
    estimates: list = field(default_factory=list)
    covered: list = field(default_factory=list)
    widths: list = field(default_factory=list)

    def add(self, summary: PosteriorSummary) -> None:
        self.estimates.append(summary.median)
        self.covered.append(summary.q025 <= self.truth <= summary.q975)
        self.widths.append(summary.width)

    @property
    def bias(self) -> float:
        return float(np.mean(np.asarray(self.estimates) - self.truth))

    @property
    def percent_bias(self) -> float:
        return 100.0 * self.bias / abs(self.truth) if self.truth != 0 else float("nan")

    @property
    def mse(self) -> float:
        return float(np.mean((np.asarray(self.estimates) - self.truth) ** 2))

    @property
    def coverage(self) -> float:
        return float(np.mean(self.covered))

    @property
    def mean_width(self) -> float:
        return float(np.mean(self.widths))

    def to_dict(self) -> dict:
        return {
            "truth": self.truth,
            "bias": self.bias,
            "percent_bias": self.percent_bias,
            "mse": self.mse,
            "coverage": self.coverage,
            "mean_width": self.mean_width,
            "replications": len(self.estimates),
        }


@dataclass
class RecoveryReport:
    scenario_id: str
    replications: int
    metrics: dict  # {variant: {estimand: EstimandMetrics}}

    def rows(self) -> list:
        out = []
        for v, per in self.metrics.items():
            for name, m in per.items():
                out.append({"variant": Variant(v).value, "estimand": name, **m.to_dict()})
        return out


def repeated_sampling_study(
    scenario: Scenario,
    replications: int,
    variants: Sequence,
    config: ChainConfig,
    master_seed: int = 0,
    fit_fn: Optional[FitFn] = None,
    estimands: Sequence[str] = ("tau_c", "tau_n"),
) -> RecoveryReport:
    """Frequentist properties of the posterior median and 95% interval.

    Dataset ``r`` uses seed ``master_seed + r``.
    """
    if replications < 2:
        raise ValueError("need at least two replications")
    variants = [Variant(v) for v in variants]
    if not variants:
        raise ValueError("at least one model variant is required")
    fit_fn = fit_fn or fit_variant
    truth = scenario.truth
    metrics = {v: {} for v in variants}
    for r in range(replications):
        sim = generate_dataset(scenario, master_seed + r)
        for k, v in enumerate(variants):
            cfg = replace(config, seed=_fit_seed(config.seed, master_seed + r, k))
            result = fit_fn(sim.data, v, cfg)
            for name in estimands:
                if name not in result:
                    continue
                summary = result[name]
                if isinstance(summary, tuple):
                    summary = summary[0]
                metrics[v].setdefault(name, EstimandMetrics(truth[name])).add(summary)
    return RecoveryReport(scenario.id, replications, metrics)
