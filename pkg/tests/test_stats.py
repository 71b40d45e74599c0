import json
import math

import numpy as np
import pytest
from scipy import special

from occuflux.stats import (InsufficientDataError, estimate_cov, increments_test, kolmogorov_sf, ks_normality,
                            min_st_test)

TIMES = np.array([0.25, 0.5, 0.75, 1.0])


def brownian_paths(n, seed, kappa=1.0):
    rng = np.random.default_rng(seed)
    steps = rng.standard_normal((n, TIMES.size)) * np.sqrt(np.diff(np.r_[0.0, TIMES]) * kappa)
    return np.cumsum(steps, axis=1)


def test_constant_samples():
    rep = estimate_cov(np.ones((50, 3)))
    assert np.all(rep.estimate == 0.0) and np.all(rep.se == 0.0)


def test_recovers_known_covariance():
    rng = np.random.default_rng(3)
    S = np.array([[2.0, 0.6, -0.3], [0.6, 1.0, 0.2], [-0.3, 0.2, 0.5]])
    X = rng.multivariate_normal(np.zeros(3), S, size=4000)
    rep = estimate_cov(X, theory=S)
    assert np.all(np.abs(rep.z) <= 3.0)
    assert np.array_equal(rep.estimate, rep.estimate.T)
    assert np.all(rep.se > 0)


def test_duplicated_replicas():
    X = brownian_paths(200, 4)
    n = X.shape[0]
    one = estimate_cov(X)
    two = estimate_cov(np.vstack([X, X]))
    # exact arithmetic of the unbiased estimator and its delete-one jackknife on a doubled set
    assert two.estimate == pytest.approx(one.estimate * 2 * (n - 1) / (2 * n - 1), rel=1e-12)
    assert two.se == pytest.approx(one.se * (n - 2) / math.sqrt((2 * n - 1) * (n - 1)), rel=1e-9)
    # for large n both reduce to: same estimate, SE times sqrt(n / (2n - 1))
    assert two.estimate == pytest.approx(one.estimate, rel=2 / n)
    assert two.se == pytest.approx(one.se * math.sqrt(n / (2 * n - 1)), rel=3 / n)


def test_insufficient_replicas():
    with pytest.raises(InsufficientDataError):
        estimate_cov(np.zeros((10, 2)))


def test_reordering_invariance():
    X = brownian_paths(300, 5)
    perm = np.random.default_rng(0).permutation(300)
    a, b = estimate_cov(X), estimate_cov(X[perm])
    assert np.allclose(a.estimate, b.estimate, rtol=1e-13, atol=1e-15)
    assert np.allclose(a.se, b.se, rtol=1e-10)
    assert increments_test(X).statistic == pytest.approx(increments_test(X[perm]).statistic, rel=1e-12)
    assert ks_normality(X[:, -1]).p_or_z == pytest.approx(ks_normality(X[perm, -1]).p_or_z, rel=1e-12)


def test_standard_errors_shrink_like_root_n():
    rng = np.random.default_rng(6)
    ses = [estimate_cov(rng.standard_normal((n, 2))).se[0, 0] for n in (100, 400, 1600)]
    for a, b in zip(ses, ses[1:]):
        assert b / a == pytest.approx(0.5, rel=0.2)


def test_reports_are_reproducible():
    X = brownian_paths(500, 7)
    assert increments_test(X).to_json() == increments_test(X).to_json()
    assert np.array_equal(estimate_cov(X).se, estimate_cov(X).se)


def test_kolmogorov_sf_matches_reference():
    for lam in (0.05, 0.2, 0.5, 0.8, 1.0, 1.36, 2.0, 3.0):
        assert kolmogorov_sf(lam) == pytest.approx(special.kolmogorov(lam), rel=1e-10, abs=1e-300)


def test_ks_normal_and_exponential():
    rng = np.random.default_rng(8)
    assert ks_normality(rng.standard_normal(10_000)).p_or_z > 0.01
    rep = ks_normality(rng.exponential(1.0, 10_000))
    assert rep.p_or_z < 1e-6 and not rep.passed


def test_ks_input_guards():
    with pytest.raises(ValueError, match="zero variance"):
        ks_normality(np.full(500, 2.0))
    with pytest.raises(InsufficientDataError):
        ks_normality(np.zeros(50))


def test_increments_on_brownian_paths():
    rep = increments_test(brownian_paths(2000, 9))
    assert rep.passed
    d = json.loads(rep.to_json())
    assert set(d) == {"test", "statistic", "p_or_z", "pass", "details"}


def test_increments_detect_common_shift():
    X = brownian_paths(2000, 10)
    shift = np.random.default_rng(11).standard_normal(2000)
    X = X + np.outer(shift, [0.0, 1.0, 0.0, 1.0])
    assert not increments_test(X).passed


def test_increments_guards():
    with pytest.raises(ValueError):
        increments_test(np.zeros((50, 3)))
    with pytest.raises(ValueError):
        increments_test(brownian_paths(50, 1), indices=(0, 2, 1, 3))


def test_min_st_exact_structure():
    kappa = 7.5
    C = kappa * np.minimum.outer(TIMES, TIMES)
    rep = min_st_test(C, TIMES, target=kappa)
    assert rep.statistic == pytest.approx(kappa, rel=1e-15)
    assert rep.details["max_abs_residual"] <= 1e-14
    assert rep.passed


def test_min_st_flags_product_structure():
    C = 7.5 * np.outer(TIMES, TIMES)
    rep = min_st_test(C, TIMES, se=np.full(C.shape, 0.01))
    assert not rep.details["cells_pass"] and not rep.passed


def test_min_st_on_simulated_paths():
    X = brownian_paths(4000, 12, kappa=2.0)
    cov = estimate_cov(X)
    rep = min_st_test(cov, TIMES, target=2.0)
    assert rep.passed
    assert rep.details["kappa_se"] > 0


def test_min_st_guards():
    with pytest.raises(ValueError):
        min_st_test(np.eye(2), [0.5, 1.0])
