import numpy as np
import pytest
from scipy import stats

from jointps.gibbs import ChainConfig, run_chains
from jointps.model import Family, ModelSpec, ObservedDataset, Restriction
from jointps.ppc import (
    CustomMeasure,
    Measure,
    Replicates,
    chi2_discrepancy,
    combine_sppvs,
    default_measures,
    discrepancy_si_no_sn,
    ks_discrepancy,
    modified_sppv,
    pppv,
    replicate_batch,
    replicate_dataset,
    run_checks,
    sppv,
)
from jointps.samplers import make_rng

from conftest import small_dataset, toy_theta


def test_si_no_sn_hand_example():
    y = np.array([0.0, 2.0, 1.0, 3.0])
    comp = np.ones(4, bool)
    z = np.array([0, 0, 1, 1])
    si, no, sn = discrepancy_si_no_sn(y, comp, z, "c")
    assert si == pytest.approx(1.0)
    assert no == pytest.approx(np.sqrt(2.0))
    assert sn == pytest.approx(1 / np.sqrt(2.0))


def test_identical_group_means_give_zero_signal():
    y = np.array([0.0, 2.0, 0.0, 2.0])
    si, _, sn = discrepancy_si_no_sn(y, np.ones(4, bool), np.array([0, 0, 1, 1]), "c")
    assert si == 0.0 and sn == 0.0


def test_small_group_is_undefined():
    y = np.array([0.0, 2.0, 1.0])
    si, no, sn = discrepancy_si_no_sn(y, np.ones(3, bool), np.array([0, 0, 1]), "c")
    assert np.isnan(si) and np.isnan(no) and np.isnan(sn)


@pytest.mark.parametrize("lam", [0.001, 2.0, 37.5])
def test_scale_invariance(lam):
    rng = make_rng(0)
    y = rng.normal(size=50)
    comp = rng.random(50) < 0.6
    z = np.arange(50) % 2
    for s in ("c", "n"):
        a = discrepancy_si_no_sn(y, comp, z, s)
        b = discrepancy_si_no_sn(lam * y, comp, z, s)
        assert b[0] == pytest.approx(lam * a[0], rel=1e-12)
        assert b[1] == pytest.approx(lam * a[1], rel=1e-12)
        assert b[2] == pytest.approx(a[2], rel=1e-12)


def test_batched_discrepancies_match_single():
    rng = make_rng(1)
    y = rng.normal(size=(3, 20))
    comp = rng.random((3, 20)) < 0.5
    z = np.arange(20) % 2
    batch = discrepancy_si_no_sn(y, comp, z, "n")
    for k in range(3):
        single = discrepancy_si_no_sn(y[k], comp[k], z, "n")
        assert np.allclose([b[k] for b in batch], single, equal_nan=True)


def test_chi2_at_cell_means_and_one_sd():
    th = toy_theta(Family.UNIVARIATE)
    data = ObservedDataset(np.array([1]), np.array([1]), np.array([th.mu[0, 1, 0]]))
    assert chi2_discrepancy(data, np.array([True]), th) == 0.0
    data = ObservedDataset(np.array([1]), np.array([1]), np.array([th.mu[0, 1, 0] + np.sqrt(th.sigma[0, 1, 0, 0])]))
    assert chi2_discrepancy(data, np.array([True]), th) == pytest.approx(1.0)


def test_chi2_five_unit_fixture():
    th = toy_theta(Family.CONTINUOUS_BINARY)
    z = np.array([0, 0, 1, 1, 1])
    comp = np.array([True, False, True, False, True])
    y1 = np.array([0.1, 1.4, -0.3, 2.0, 0.0])
    y2 = np.array([1.0, 0.0, 0.0, 1.0, 1.0])
    data = ObservedDataset(z, (comp & (z == 1)).astype(int), y1, y2)
    c1 = c2 = 0.0
    for i in range(5):
        s = 0 if comp[i] else 1
        m, S = th.mu[s, z[i]], th.sigma[s, z[i]]
        c1 += (y1[i] - m[0]) ** 2 / S[0, 0]
        p = stats.norm.cdf(m[1])
        c2 += (y2[i] - p) ** 2 / (p * (1 - p))
    assert chi2_discrepancy(data, comp, th, 1) == pytest.approx(c1, rel=1e-12)
    assert chi2_discrepancy(data, comp, th, 2) == pytest.approx(c2, rel=1e-12)


def test_ks_single_point_at_median():
    th = toy_theta(Family.UNIVARIATE, pi_c=1.0)
    y = np.array([th.mu[0, 0, 0]])
    assert ks_discrepancy(y, th, np.array([0])) == pytest.approx(0.5)


def test_ks_on_model_sample_is_small():
    th = toy_theta(Family.UNIVARIATE)
    rep = replicate_batch(th, ObservedDataset(np.zeros(10000, int), np.zeros(10000, int), np.zeros(10000)), 1, make_rng(2))
    assert ks_discrepancy(rep.y1[0], th, rep.z) < 0.025


def test_ks_pi_one_is_one_component():
    th = toy_theta(Family.UNIVARIATE, pi_c=1.0)
    y = make_rng(3).normal(size=30)
    z = np.zeros(30, int)
    ref = stats.kstest(y, "norm", args=(th.mu[0, 0, 0], np.sqrt(th.sigma[0, 0, 0, 0]))).statistic
    assert ks_discrepancy(y, th, z) == pytest.approx(ref, abs=1e-12)


def test_replicate_pi_one_all_compliers():
    th = toy_theta(pi_c=1.0)
    data = small_dataset(n=30)
    rep, comp = replicate_dataset(th, data, make_rng(4))
    assert comp.all()
    assert np.array_equal(rep.d, rep.z) and np.array_equal(rep.z, data.z)


def test_replicate_probit_success_fraction():
    th = toy_theta(Family.CONTINUOUS_BINARY, pi_c=1.0)
    n = 10000
    data = ObservedDataset(np.ones(n, int), np.ones(n, int), np.zeros(n), np.zeros(n))
    rep = replicate_batch(th, data, 1, make_rng(5))
    p = stats.norm.cdf(th.mu[0, 1, 1])
    assert abs(rep.y2.mean() - p) < 4 * np.sqrt(p * (1 - p) / n)
    assert set(np.unique(rep.y2)) <= {0.0, 1.0}


def test_replicate_group_sizes_partition_arms():
    data = small_dataset(n=40)
    rep = replicate_batch(toy_theta(), data, 5, make_rng(6))
    for k in range(5):
        for zz in (0, 1):
            assert (rep.complier[k][data.z == zz]).sum() + (~rep.complier[k][data.z == zz]).sum() == (data.z == zz).sum()


# ---------------------------------------------------------------------------
# p-values with rigged replicators

MEAN_Y1 = CustomMeasure("mean_y1", lambda d, comp, th: float(d.y1.mean()))


def _shifted(shift):
    def rep(theta, data, n_rep, rng):
        y1 = np.tile(data.y1 + shift, (n_rep, 1))
        comp = np.tile(data.d == 1, (n_rep, 1))
        return Replicates(data.z, y1, None, comp)
    return rep


@pytest.fixture(scope="module")
def tiny_fit():
    data = small_dataset(n=40, family=Family.UNIVARIATE)
    spec = ModelSpec(Family.UNIVARIATE)
    store = run_chains(data, spec, ChainConfig(n_iter=60, n_burnin=20, n_chains=2, seed=1))
    return data, spec, store


def test_pppv_always_larger_is_one(tiny_fit):
    data, spec, store = tiny_fit
    r = pppv(store, data, spec, 0, [MEAN_Y1], _shifted(1.0))
    assert r.p[0] == 1.0


def test_pppv_always_tied_is_half(tiny_fit):
    data, spec, store = tiny_fit
    r = pppv(store, data, spec, 0, [MEAN_Y1], _shifted(0.0))
    assert r.p[0] == 0.5


def test_sppv_all_exceed_is_beta(tiny_fit):
    data, spec, _ = tiny_fit
    K = 9
    rng = make_rng(7)
    ps = np.array([sppv(toy_theta(Family.UNIVARIATE), data, spec, K, rng, [MEAN_Y1], _shifted(1.0)).p[0]
                   for _ in range(4000)])
    assert stats.kstest(ps, stats.beta(K + 1, 1).cdf).pvalue > 0.001
    assert ps.mean() == pytest.approx((K + 1) / (K + 2), abs=0.01)


def test_sppv_needs_replicates(tiny_fit):
    data, spec, _ = tiny_fit
    with pytest.raises(ValueError):
        sppv(toy_theta(Family.UNIVARIATE), data, spec, 0, make_rng(0))


def test_combine_sppvs():
    assert combine_sppvs([0.37], 0.9)[0] == 0.37
    assert combine_sppvs(np.full(10, 0.2), 0.13)[0] == pytest.approx(0.2)
    ps = make_rng(8).random(2001)
    assert combine_sppvs(ps, 0.5)[0] == pytest.approx(np.median(ps))


def test_modified_sppv_single_draw_is_an_sppv(tiny_fit):
    data, spec, store = tiny_fit
    r = modified_sppv(store, data, spec, 1, 5, 3, [MEAN_Y1], _shifted(1.0))
    assert 0.0 <= r.p[0] <= 1.0 and r.J == 1


def test_modified_sppv_rejects_large_j(tiny_fit):
    data, spec, store = tiny_fit
    with pytest.raises(ValueError, match="exceeds"):
        modified_sppv(store, data, spec, len(store) + 1, 5, 0)


def test_run_checks_bounds_and_determinism(tiny_fit):
    data, spec, store = tiny_fit
    a = run_checks(store, data, spec, 11, K=10, J=5)
    b = run_checks(store, data, spec, 11, K=10, J=5)
    for k in a:
        p = a[k].p
        assert np.all((p[np.isfinite(p)] >= 0) & (p[np.isfinite(p)] <= 1))
        assert np.array_equal(a[k].p, b[k].p, equal_nan=True)


def test_default_measures():
    names = [m.name for m in default_measures(ModelSpec(Family.CONTINUOUS_CONTINUOUS))]
    assert "SI_1_c" in names and "SN_2_n" in names and "Chi2_2" in names and "KS_1" in names
    names = [m.name for m in default_measures(ModelSpec(Family.UNIVARIATE, Restriction.ER))]
    assert names == ["SI_1_c", "NO_1_c", "SN_1_c", "Chi2_1", "KS_1"]
    assert Measure("SI", 2, "n").name == "SI_2_n"
