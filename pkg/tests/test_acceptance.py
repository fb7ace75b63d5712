"""End-to-end acceptance criteria.

Each test records one PASS/FAIL line, shown in the terminal summary.
Criteria 3 and 6 are marked slow; criterion 8 runs only when a JOBS II
extract is supplied through ``JOINTPS_JOBS_CSV``.
"""

import json
import os
import warnings

import numpy as np
import pytest
from scipy import stats

from jointps.cli import main
from jointps.estimands import correlation_ratio, summarize, tau_draws
from jointps.gibbs import ChainConfig, run_chain, run_chains
from jointps.model import Family, ModelSpec, Priors, Variant, log_prior, observed_data_log_likelihood
from jointps.oracle import default_grid, grid_posterior
from jointps.ppc import CustomMeasure, Measure, Replicates, discrepancy_si_no_sn, pppv, sppv
from jointps.samplers import make_rng
from jointps.simlab import SCENARIO_IDS, generate_dataset, run_comparison, scenario_params

from conftest import ORACLE_VAR, oracle_dataset, record_criterion, small_dataset, toy_theta
from test_model import _enumerated


# ---------------------------------------------------------------------------
# 1

def test_criterion_1_correlation_ratios():
    printed = [(("I", 0), 0.639), (("I", 1), 0.770), (("II", 1), 0.824),
               (("IV", 1), 0.950), (("VI", 0), 0.941), (("VI", 1), 0.957)]
    got = []
    for (sid, z), want in printed:
        th = scenario_params(sid).theta
        got.append((round(correlation_ratio(th.pi_c, th.mu, th.sigma, z), 3), want))
    ok = all(a == b for a, b in got)
    record_criterion(1, "correlation ratios reproduce the six printed values", ok, str([a for a, _ in got]))
    assert ok


# ---------------------------------------------------------------------------
# 2 and 9

def _recovery_run(out, fit_input=None):
    data_dir = out / "data"
    assert main(["simulate", "--scenario", "I", "--seed", "2024", "--emit-data", "--out", str(data_dir)]) == 0
    # config.json echoes the input path, so a byte-level rerun must fit the same file
    fit_input = fit_input or data_dir / "scenario_I_seed2024.csv"
    rc = main(["fit", "--input", str(fit_input), "--seed", "7", "--out", str(out / "fit"),
               "--variant", "bivariate", "--chains", "3", "--iters", "15000", "--burnin", "5000"])
    return rc, json.loads((out / "fit" / "summary.json").read_text())["variants"]["bivariate"]


@pytest.fixture(scope="module")
def recovery(tmp_path_factory):
    out = tmp_path_factory.mktemp("recovery")
    return out, *_recovery_run(out)


def test_criterion_2_scenario_one_recovery(recovery):
    _, rc, s = recovery
    psrf = {k: s[k]["psrf"] for k in ("tau_c", "tau_n", "pi_c")}
    cover_c = s["tau_c"]["q025"] <= -2.0 <= s["tau_c"]["q975"]
    cover_n = s["tau_n"]["q025"] <= 1.5 <= s["tau_n"]["q975"]
    pi_ok = abs(s["pi_c"]["median"] - 0.7) <= 0.08
    ok = rc == 0 and all(v < 1.1 for v in psrf.values()) and cover_c and cover_n and pi_ok
    detail = (f"psrf={ {k: round(v, 3) for k, v in psrf.items()} }, "
              f"tau_c=[{s['tau_c']['q025']:.3f}, {s['tau_c']['q975']:.3f}], "
              f"tau_n=[{s['tau_n']['q025']:.3f}, {s['tau_n']['q975']:.3f}], pi_c={s['pi_c']['median']:.3f}")
    record_criterion(2, "scenario I recovery with the bivariate model", ok, detail)
    assert ok


# ---------------------------------------------------------------------------
# 3

@pytest.mark.slow
def test_criterion_3_bivariate_narrows_tau_n():
    cfg = ChainConfig(n_iter=15000, n_burnin=5000, n_chains=3, seed=31)
    ratios = {}
    for k, sid in enumerate(SCENARIO_IDS):
        res = run_comparison(scenario_params(sid), [Variant.UNIVARIATE, Variant.BIVARIATE], cfg, seed=500 + k)
        ratios[sid] = res[Variant.BIVARIATE]["tau_n"][0].width / res[Variant.UNIVARIATE]["tau_n"][0].width
    narrower = sum(r < 1.0 for r in ratios.values())
    ok = narrower >= 6 and ratios["V"] < 0.8 and ratios["VI"] < 0.8
    record_criterion(3, "bivariate tau_n interval narrower than univariate", ok,
                     f"{narrower}/7 narrower, ratios={ {k: round(v, 3) for k, v in ratios.items()} }")
    assert ok


# ---------------------------------------------------------------------------
# 4 and 9

ORACLE_SPEC = ModelSpec(Family.UNIVARIATE, priors=Priors(fixed_sigma=ORACLE_VAR.reshape(2, 2, 1, 1)))


def _oracle_run():
    data = oracle_dataset()
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        post = grid_posterior(data, ORACLE_SPEC, default_grid(data, ORACLE_VAR))
    store = run_chains(data, ORACLE_SPEC, ChainConfig(n_iter=6000, n_burnin=1000, seed=11))
    gibbs = {"pi_c": float(store.pi_c.mean()), "tau_c": float(tau_draws(store, "c").mean())}
    grid = {"pi_c": post.pi_c, "tau_c": post.tau_c}
    return gibbs, grid, store


def test_criterion_4_oracle_equivalence():
    gibbs, grid, _ = _oracle_run()
    diffs = {k: abs(gibbs[k] - grid[k]) for k in grid}
    ok = all(d <= 0.05 for d in diffs.values())
    record_criterion(4, "Gibbs posterior means match the grid oracle", ok,
                     ", ".join(f"{k}: gibbs {gibbs[k]:.4f} grid {grid[k]:.4f}" for k in grid))
    assert ok


# ---------------------------------------------------------------------------
# 5

def test_criterion_5_marginalisation_identity():
    worst = 0.0
    for fam in Family:
        for seed in range(3):
            data = small_dataset(n=16, seed=seed, family=fam)
            if (data.z == 0).sum() > 12:
                continue
            spec = ModelSpec(fam)
            theta = toy_theta(fam, pi_c=0.3 + 0.2 * seed)
            expect = log_prior(theta, spec) + observed_data_log_likelihood(theta, data, spec)
            worst = max(worst, abs(_enumerated(theta, data, spec) - expect) / abs(expect))
    ok = worst < 1e-10
    record_criterion(5, "label marginalisation recovers the observed likelihood", ok, f"max rel err {worst:.2e}")
    assert ok


# ---------------------------------------------------------------------------
# 6

@pytest.mark.slow
def test_criterion_6_sppv_calibration():
    scen = scenario_params("I")
    spec = ModelSpec(Family.CONTINUOUS_CONTINUOUS)
    meas = [Measure("SI", 1, "c")]
    cfg = ChainConfig(n_iter=3000, n_burnin=1000, n_chains=1)
    sp, pp = [], []
    for r in range(100):
        data = generate_dataset(scen, 10_000 + r).data
        store = run_chain(data, spec, cfg, seed=20_000 + r)
        rng = make_rng(30_000 + r)
        t = int(rng.integers(len(store)))
        sp.append(sppv(store.pooled_theta(t), data, spec, 100, rng, meas).p[0])
        pp.append(pppv(store, data, spec, 40_000 + r, meas, max_draws=200).p[0])
    ks = stats.kstest(sp, "uniform")
    ok = ks.pvalue > 0.01
    record_criterion(6, "SPPV for the complier signal is uniform over replications", ok,
                     f"KS p={ks.pvalue:.3f}; var SPPV {np.var(sp):.4f}, var PPPV {np.var(pp):.4f}")
    assert ok


# ---------------------------------------------------------------------------
# 7

def test_criterion_7_ppc_contracts():
    data = small_dataset(n=40, family=Family.UNIVARIATE)
    spec = ModelSpec(Family.UNIVARIATE)
    store = run_chains(data, spec, ChainConfig(n_iter=80, n_burnin=20, n_chains=2, seed=3))
    meas = [CustomMeasure("mean_y1", lambda d, c, th: float(d.y1.mean()))]

    def shifted(shift):
        def rep(theta, d, n_rep, rng):
            return Replicates(d.z, np.tile(d.y1 + shift, (n_rep, 1)), None, np.tile(d.d == 1, (n_rep, 1)))
        return rep

    larger = pppv(store, data, spec, 0, meas, shifted(1.0)).p[0]
    tied = pppv(store, data, spec, 0, meas, shifted(0.0)).p[0]
    bounded = True
    for k, th in enumerate(store.thetas()):
        if k >= 20:
            break
        p = sppv(th, data, spec, 20, make_rng(k)).p
        bounded &= bool(np.all((p[np.isfinite(p)] >= 0) & (p[np.isfinite(p)] <= 1)))
    y = make_rng(1).normal(size=40)
    comp = make_rng(2).random(40) < 0.6
    a = discrepancy_si_no_sn(y, comp, data.z, "c")
    b = discrepancy_si_no_sn(4.0 * y, comp, data.z, "c")
    scale_ok = np.isclose(b[2], a[2], rtol=1e-12) and np.isclose(b[0], 4 * a[0], rtol=1e-12)
    ok = larger == 1.0 and tied == 0.5 and bounded and scale_ok
    record_criterion(7, "PPC bounds and rigged-replicator contracts", ok,
                     f"PPPV larger={larger}, tied={tied}, bounded={bounded}, SN invariant={scale_ok}")
    assert ok


# ---------------------------------------------------------------------------
# 8

JOBS = os.environ.get("JOINTPS_JOBS_CSV")


@pytest.mark.skipif(not JOBS, reason="JOBS II extract not supplied (set JOINTPS_JOBS_CSV)")
def test_criterion_8_jobs_table_layout(tmp_path):
    rc = main(["fit", "--input", JOBS, "--seed", "1", "--out", str(tmp_path), "--no-dump", "--no-kde"])
    s = json.loads((tmp_path / "summary.json").read_text())["variants"]
    ok = rc in (0, 3) and set(s) == {v.value for v in Variant} and "tau_n" not in s["univariate-er"]
    med = s["bivariate"]["tau_c"]["median"]
    record_criterion(8, "JOBS II fit emits the four-variant summary table", ok,
                     f"bivariate tau_c median {med:.3f} (published -0.338), "
                     f"width {s['bivariate']['tau_c']['width']:.3f} (published 0.489)")
    assert ok


# ---------------------------------------------------------------------------
# 9

def test_criterion_9_determinism(recovery, tmp_path):
    first, _, _ = recovery
    _recovery_run(tmp_path, fit_input=first / "data" / "scenario_I_seed2024.csv")
    names = ["data/scenario_I_seed2024.csv", "fit/summary.csv", "fit/summary.json", "fit/psrf.csv",
             "fit/draws_bivariate.csv", "fit/kde_bivariate_tau_c.csv", "fit/config.json"]
    same_recovery = all((first / n).read_bytes() == (tmp_path / n).read_bytes() for n in names)
    g1, o1, s1 = _oracle_run()
    g2, o2, s2 = _oracle_run()
    same_oracle = g1 == g2 and o1 == o2 and np.array_equal(s1.mu, s2.mu) and np.array_equal(s1.pi_c, s2.pi_c)
    ok = same_recovery and same_oracle
    record_criterion(9, "criteria 2 and 4 reproduce byte-identically", ok,
                     f"recovery artifacts identical={same_recovery}, oracle run identical={same_oracle}")
    assert ok
