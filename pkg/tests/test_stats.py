import itertools
import math

import numpy as np
import pytest

from colpack import stats
from colpack.errors import ColpackError


def ar1(rng, n, rho, burn=1000):
    e = rng.standard_normal(n + burn)
    x = np.empty_like(e)
    x[0] = e[0]
    for t in range(1, len(e)):
        x[t] = rho * x[t - 1] + e[t]
    return x[burn:]


# -- block bootstrap ---------------------------------------------------------------------

def test_constant_tail_sigma_zero():
    assert stats.block_bootstrap_sigma(np.full(500, 0.7)) == 0.0


def test_iid_sigma_matches_standard_error():
    x = np.random.default_rng(0).standard_normal(10_000)
    sigma = stats.block_bootstrap_sigma(x, stats.BootstrapConfig(block_length=1, n_boot=2000))
    assert sigma == pytest.approx(0.01, rel=0.10)


def test_ar1_inflation():
    rho = 0.9
    x = ar1(np.random.default_rng(1), 100_000, rho)
    sigma = stats.block_bootstrap_sigma(x, stats.BootstrapConfig(block_length=50, n_boot=2000))
    naive = x.std(ddof=1) / math.sqrt(len(x))
    assert sigma / naive == pytest.approx(math.sqrt((1 + rho) / (1 - rho)), rel=0.25)


def test_single_block_resamples_to_itself():
    x = np.random.default_rng(2).standard_normal(120)
    assert stats.block_bootstrap_sigma(x, stats.BootstrapConfig(block_length=120, n_boot=200)) == 0.0


def test_partial_last_block_keeps_replicate_length():
    # 7 values with L=3: blocks [0..2], [3..5], [6]; every replicate mean uses exactly 7 values
    x = np.array([1.0, 2.0, 3.0, 10.0, 20.0, 30.0, 100.0])
    means = stats.block_bootstrap_means(x, 3, 5000, np.random.default_rng(3))
    sums = set(np.round(means * 7, 9))
    blocks = [[1.0, 2.0, 3.0], [10.0, 20.0, 30.0], [100.0]]
    reachable = set()
    for seq in itertools.product(range(3), repeat=7):
        vals = [v for b in seq for v in blocks[b]][:7]
        reachable.add(round(sum(vals), 9))
    assert sums <= reachable
    assert len(sums) > 10


def test_bootstrap_deterministic_given_seed():
    x = np.random.default_rng(4).standard_normal(300)
    cfg = stats.BootstrapConfig(block_length=10, n_boot=500, seed=9)
    assert stats.block_bootstrap_sigma(x, cfg) == stats.block_bootstrap_sigma(x, cfg)


def test_tail_too_short():
    with pytest.raises(ColpackError) as e:
        stats.block_bootstrap_sigma(np.zeros(10))
    assert e.value.code == "tail_too_short"


def test_bootstrap_config_validation():
    with pytest.raises(ColpackError):
        stats.BootstrapConfig(block_length=0)


# -- sigmoid -----------------------------------------------------------------------------------

TRUE = dict(A=0.1, B=0.7, k=5.0, x0=9.0)


def test_sigmoid_recovers_noiseless_parameters():
    P = np.linspace(8.0, 10.0, 10)
    fit = stats.fit_sigmoid(P, stats.sigmoid(P, **TRUE))
    assert fit.converged
    for name, v in TRUE.items():
        assert getattr(fit, name) == pytest.approx(v, abs=1e-6)


def test_sigmoid_order_invariance():
    P = np.linspace(8.0, 10.0, 10)
    y = stats.sigmoid(P, **TRUE) + np.random.default_rng(5).normal(scale=0.01, size=10)
    perm = np.random.default_rng(6).permutation(10)
    a, b = stats.fit_sigmoid(P, y), stats.fit_sigmoid(P[perm], y[perm])
    assert a.x0 == b.x0 and a.k == b.k


def test_sigmoid_degenerate():
    with pytest.raises(ColpackError) as e:
        stats.fit_sigmoid(np.arange(6.0), np.full(6, 0.3))
    assert e.value.code == "degenerate_data"


def test_sigmoid_symmetric_loo_shift_tiny():
    P = np.linspace(8.0, 10.0, 11)
    loo = stats.loo_sensitivity(P, stats.sigmoid(P, **TRUE), "sigmoid_x0")
    assert loo["max_shift"] < 1e-6


def test_sigmoid_on_table(hard_disk_table):
    fit = stats.fit_sigmoid(hard_disk_table["P"], hard_disk_table["psi6"])
    assert fit.x0 == pytest.approx(8.928, abs=0.02)
    assert fit.A == pytest.approx(0.090, abs=0.01)
    assert fit.B == pytest.approx(0.651, abs=0.02)
    assert fit.k == pytest.approx(4.64, abs=0.3)


# -- crossing ------------------------------------------------------------------------------------

def test_crossing_on_table(hard_disk_table):
    res = stats.crossing_interpolate(hard_disk_table["P"], hard_disk_table["phi"], 0.708)
    assert res.P_star == pytest.approx(9.1 + 0.1 * (0.708 - 0.6999) / (0.7157 - 0.6999), abs=1e-12)
    assert (res.P_lo, res.P_hi) == (9.1, 9.2)
    assert res.P_lo < res.P_star <= res.P_hi


def test_crossing_exact_point():
    res = stats.crossing_interpolate([1.0, 2.0, 3.0], [0.1, 0.5, 0.9], 0.5)
    assert res.P_star == 2.0


def test_crossing_none():
    with pytest.raises(ColpackError) as e:
        stats.crossing_interpolate([1.0, 2.0, 3.0], [0.1, 0.2, 0.3], 0.5)
    assert e.value.code == "no_crossing"


def test_crossing_first_sign_change():
    res = stats.crossing_interpolate([1, 2, 3, 4], [0.0, 1.0, 0.0, 1.0], 0.5)
    assert res.P_star == 1.5
    assert res.all_crossings == [1.5, 2.5, 3.5]


def test_crossing_exact_on_affine():
    rng = np.random.default_rng(7)
    for _ in range(50):
        m, c = rng.uniform(0.1, 3.0), rng.uniform(-1, 1)
        P = np.sort(rng.uniform(0, 10, 8))
        level = m * rng.uniform(P[0], P[-1]) + c
        got = stats.crossing_interpolate(P, m * P + c, level).P_star
        assert got == pytest.approx((level - c) / m, abs=1e-12)


def test_loo_three_points_middle_defines_crossing():
    P, y = [1.0, 2.0, 3.0], [0.0, 0.6, 1.0]
    loo = stats.loo_sensitivity(P, y, "crossing", 0.5)
    full = 1.0 + 0.5 / 0.6
    dropped_mid = 1.0 + 2.0 * 0.5 / 1.0
    assert loo["full"] == pytest.approx(full)
    mid = next(d for d in loo["drops"] if d["dropped_P"] == 2.0)
    assert mid["estimate"] == pytest.approx(dropped_mid)
    assert mid["shift"] == pytest.approx(dropped_mid - full)
    # dropping the first point leaves no bracket; recorded, not thrown
    assert loo["drops"][0] == {"dropped_P": 1.0, "error": "no_crossing"}
    assert loo["drops"][2]["shift"] == 0.0


# -- estimator CIs -----------------------------------------------------------------------------------

def test_zero_variance_tails_collapse():
    P = np.linspace(8.5, 9.5, 6)
    tails = [np.full(200, 0.69 + 0.01 * i) for i in range(6)]
    ci = stats.bootstrap_estimator_ci(P, tails, "crossing", 0.708, stats.BootstrapConfig(n_boot=200))
    assert ci["ci68"] == [ci["point"], ci["point"]] == ci["ci95"]


def test_percentiles_ordered():
    rng = np.random.default_rng(8)
    P = np.linspace(8.5, 9.5, 11)
    tails = [0.69 + 0.03 * (p - 8.5) + 0.01 * rng.standard_normal(300) for p in P]
    ci = stats.bootstrap_estimator_ci(P, tails, "crossing", 0.708, stats.BootstrapConfig(n_boot=500))
    lo95, lo68, hi68, hi95 = ci["ci95"][0], ci["ci68"][0], ci["ci68"][1], ci["ci95"][1]
    assert lo95 <= lo68 <= hi68 <= hi95
    assert lo95 <= ci["point"] <= hi95


def test_unstable_estimator():
    # last tail resamples to mean 0 (no crossing) in a quarter of the replicates
    P = np.linspace(0, 1, 5)
    tails = [np.zeros(100)] * 4 + [np.r_[np.zeros(50), np.ones(50)]]
    with pytest.raises(ColpackError) as e:
        stats.bootstrap_estimator_ci(P, tails, "crossing", 0.5, stats.BootstrapConfig(block_length=50, n_boot=400))
    assert e.value.code == "unstable_estimator"


def coverage_trial(seed, sigma=0.004, n_tail=400):
    """Linear truth crossing 0.708 at P = 9.15; iid noise per frame."""
    rng = np.random.default_rng(seed)
    P = np.round(np.arange(8.6, 9.71, 0.1), 10)
    truth = 0.708 + 0.05 * (P - 9.15)
    tails = [m + sigma * rng.standard_normal(n_tail) for m in truth]
    cfg = stats.BootstrapConfig(block_length=50, n_boot=1000, seed=seed)
    ci = stats.bootstrap_estimator_ci(P, tails, "crossing", 0.708, cfg)
    return ci["ci68"][0] <= 9.15 <= ci["ci68"][1]


def test_ci68_coverage():
    hits = sum(coverage_trial(s) for s in range(200))
    assert 0.55 <= hits / 200 <= 0.80


def test_crossing_ci_width_on_table(hard_disk_table):
    ci = stats.bootstrap_estimator_ci_from_summary(hard_disk_table["P"], hard_disk_table["phi"], hard_disk_table["phi_sigma"],
                                                   "crossing", 0.708)
    width = ci["ci68"][1] - ci["ci68"][0]
    assert 0.003 / 3 <= width <= 0.003 * 3


def test_report_structure(hard_disk_table, tmp_path):
    rep = stats.pstar_report(hard_disk_table["P"], hard_disk_table["phi"], hard_disk_table["psi6"],
                             hard_disk_table["phi_sigma"], hard_disk_table["psi6_sigma"],
                             config=stats.BootstrapConfig(n_boot=200))
    assert set(rep["estimates"]) == {"P_star_phi", "P_star_psi6"}
    assert rep["estimates"]["P_star_phi"]["point"] == pytest.approx(9.151, abs=0.001)
    path = stats.write_report(tmp_path / "r.json", rep)
    assert path.exists()
