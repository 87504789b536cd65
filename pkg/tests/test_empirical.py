import math

import numpy as np
import pytest

from ifslab import reference, simulator
from ifslab import empirical as emp
from ifslab.errors import ClipTooLarge, MissingMeanRef
from ifslab.handles import Affine, Const, identity, orthant
from ifslab.system import Box

UNIFORM = emp.MeanReference.analytic(reference.uniform_cdf)


def test_grid_validation():
    with pytest.raises(ValueError):
        emp.ThresholdGrid((np.array([0.2, 0.1]),))
    g = emp.ThresholdGrid((np.linspace(0, 1, 5),))
    assert g.covers(Box([0.0], [1.0]))
    assert not emp.ThresholdGrid((np.linspace(0.1, 1, 5),)).covers(Box([0.0], [1.0]))


def test_counts_match_direct_count_2d():
    rng = np.random.default_rng(0)
    x = rng.random((2000, 2))
    g = emp.ThresholdGrid((np.array([0.2, 0.5, 0.9]), np.array([0.1, 0.6])))
    direct = [np.sum(np.all(x <= t, axis=1)) for t in g.nodes]
    np.testing.assert_array_equal(g.counts_leq(x), direct)


def test_process_trivial_nodes():
    states = np.array([[0.2], [0.4], [0.6]])
    g = emp.ThresholdGrid((np.array([-1.0, 5.0]),))
    ref = emp.MeanReference.analytic(lambda t: (np.atleast_2d(t)[:, 0] > 0).astype(float))
    np.testing.assert_array_equal(emp.empirical_process(states, g, ref).values, [0.0, 0.0])


def test_process_hand_example():
    states = np.array([0.1, 0.6, 0.3, 0.8])
    g = emp.ThresholdGrid((np.array([0.5]),))
    assert emp.empirical_process(states, g, UNIFORM).values[0] == pytest.approx(0.0, abs=1e-15)


def test_process_needs_mean_reference():
    g = emp.ThresholdGrid((np.array([0.5]),))
    with pytest.raises(MissingMeanRef):
        emp.empirical_process(np.array([0.1]), g, None)


def test_process_increments_are_consistent(half_path):
    g = emp.ThresholdGrid((np.linspace(0, 1, 11),))
    res = emp.empirical_process(half_path, g, UNIFORM)
    x = half_path.states[:, 0]
    n = x.size
    s, t = 0.3, 0.7
    i, j = 3, 7
    direct = (np.sum((x > s) & (x <= t)) - n * (t - s)) / math.sqrt(n)
    assert res.values[j] - res.values[i] == pytest.approx(direct, abs=1e-10)


def test_ks_statistic_examples():
    g = emp.ThresholdGrid((np.array([1.0, 2.0, 3.0]),))
    r = emp.EmpiricalProcessResult(g, np.array([0.3, -0.7, 0.2]), 10, np.zeros(3), np.zeros(3), "x")
    assert emp.ks_statistic(r) == 0.7
    r.values = np.zeros(3)
    assert emp.ks_statistic(r) == 0.0


def test_long_run_sigma2_examples(half_path):
    assert emp.long_run_sigma2(half_path, Const(2.0)) == 0.0
    assert emp.long_run_sigma2(half_path, identity()) == pytest.approx(0.25, abs=0.02)


def test_iid_injection_variance():
    s = reference.iid_injection(1000)
    t = simulator.simulate(s, None, 10**6, 10, seed=4)
    c = (np.arange(1000) + 0.5) / 1000
    assert emp.long_run_sigma2(t, identity()) == pytest.approx(c.var(), rel=0.05)


def test_sigma2_scale_equivariance(half_path):
    lrv = emp.long_run_variance_of(half_path, identity())
    y = 3.0 * half_path.states[:, 0]
    from ifslab.timeseries import long_run_variance

    assert long_run_variance(y, cutoff=lrv.cutoff).sigma2 == pytest.approx(9 * lrv.sigma2, rel=1e-12)


def test_kernel_zero_rows_for_constant_indicators(half_path):
    g = emp.ThresholdGrid((np.array([-0.5, 0.25, 0.5, 2.0]),))
    k = emp.covariance_kernel(half_path, g)
    np.testing.assert_array_equal(k.matrix[0], 0.0)
    np.testing.assert_array_equal(k.matrix[:, 3], 0.0)
    np.testing.assert_array_equal(k.matrix, k.matrix.T)


def test_kernel_diagonal_matches_indicator_variance(half_path):
    g = emp.ThresholdGrid((np.array([0.25, 0.5, 0.75]),))
    k = emp.covariance_kernel(half_path, g)
    for j, t in enumerate(g.thresholds[0]):
        lrv = emp.long_run_variance_of(half_path, orthant([t]))
        # standard error of a truncated long-run variance estimate, Bartlett-type approximation
        se = lrv.sigma2 * math.sqrt(2 * (2 * max(k.lag_cutoff, lrv.cutoff) + 1) / half_path.n)
        assert abs(k.matrix[j, j] - lrv.sigma2) <= 2 * se


def test_kernel_matches_direct_lag_covariances():
    rng = np.random.default_rng(1)
    x = rng.random(3000)[:, None]
    g = emp.ThresholdGrid((np.array([0.3, 0.6]),))
    ind = (x <= g.thresholds[0]).astype(float)
    a = ind - ind.mean(axis=0)
    n = x.shape[0]
    lag1 = a[:-1].T @ a[1:] / n
    got = emp._lagged_cov(g, g.bins(x), 1, ind.mean(axis=0))
    np.testing.assert_allclose(got, lag1, atol=1e-12)


def test_limit_gaussian_examples():
    assert np.all(emp.simulate_limit_gaussian(np.zeros((3, 3)), 100, seed=0).sups == 0)
    half_normal = emp.simulate_limit_gaussian(np.array([[1.0]]), 10**4, seed=0).sups
    assert half_normal.mean() == pytest.approx(math.sqrt(2 / math.pi), abs=0.02)
    two = emp.simulate_limit_gaussian(np.eye(2), 10**4, seed=1).sups
    brute = np.max(np.abs(np.random.default_rng(99).standard_normal((10**5, 2))), axis=1)
    assert two.mean() == pytest.approx(brute.mean(), rel=0.02)


def test_limit_gaussian_reproduces_kernel():
    t = np.linspace(0.1, 0.9, 6)
    K = np.minimum.outer(t, t) - np.outer(t, t)
    reps = 20000
    z = emp.sample_limit_gaussian(K, reps, seed=3)
    C = np.cov(z, rowvar=False, bias=True)
    assert np.linalg.norm(C - K) / np.linalg.norm(K) <= 3 / math.sqrt(reps) * K.shape[0]


def test_clip_too_large():
    with pytest.raises(ClipTooLarge):
        emp.limit_factor(np.array([[1.0, 0.0], [0.0, -0.5]]))


def test_clt_degenerate_flag(half):
    rep = emp.clt_diagnostic(half, Const(1.0), 100, 10, seed=0, mean=1.0, sigma2=0.0)
    assert rep.degenerate and not rep.passed


def test_clt_iid_anchor():
    s = reference.iid_injection(1000)
    c = (np.arange(1000) + 0.5) / 1000
    rep = emp.clt_diagnostic(s, identity(), 1000, 2000, seed=5, mean=0.5, sigma2=c.var(), burn_in=1)
    assert rep.passed


def test_eclt_degenerate_single_node(half):
    g = emp.ThresholdGrid((np.array([-1.0]),))
    ref = emp.MeanReference.analytic(reference.uniform_cdf)
    rep = emp.eclt_diagnostic(half, g, 200, 20, seed=0, mean_ref=ref, kernel_n=2000, gaussian_reps=100)
    assert np.all(rep.ks_stats == 0) and np.all(rep.gaussian_sups == 0)
    assert rep.passed


def test_ks_median_is_stable_in_n(half):
    g = emp.ThresholdGrid((np.linspace(0, 1, 51),))
    med = [np.median(emp.replicate_ks(half, g, n, 300, seed=21, mean_ref=UNIFORM)) for n in (10**4, 4 * 10**4)]
    assert abs(med[1] - med[0]) / med[0] < 0.15


def test_long_run_mean_reference_only_on_grid(half):
    g = emp.ThresholdGrid((np.array([0.25, 0.75]),))
    ref = emp.MeanReference.long_run(half, g, 2 * 10**5, seed=1, chunk=50_000)
    np.testing.assert_allclose(ref.cdf(g.nodes), [0.25, 0.75], atol=0.01)
    with pytest.raises(MissingMeanRef):
        ref.cdf(np.array([[0.5]]))


def test_moment_growth_zero_function(half):
    rep = emp.moment_growth_check(half, Const(0.0), [100, 1000], 20, seed=0)
    assert rep.moments == [0.0, 0.0]


def test_moment_growth_variance_ratio(half):
    f = Affine([1.0], -0.5, Box([0.0], [1.0]))
    rep = emp.moment_growth_check(half, f, [10**3, 10**4], 1000, seed=3, p=1)
    assert all(abs(v - 0.25) < 0.025 for v in rep.variance_ratios)
    assert rep.passed
