import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ifslab.errors import SeriesNotDecayingWarning
from ifslab.timeseries import adaptive_cutoff, autocovariance, long_run_variance


def test_autocovariance_matches_direct_sum():
    y = np.random.default_rng(0).normal(size=500)
    g = autocovariance(y, 5)
    yc = y - y.mean()
    direct = [np.dot(yc[: 500 - k], yc[k:]) / 500 for k in range(6)]
    np.testing.assert_allclose(g, direct, atol=1e-12)


def test_constant_series_has_zero_variance():
    assert long_run_variance(np.full(1000, 3.0)).sigma2 == 0.0


def test_cutoff_rule():
    g = np.array([1.0, 0.5, 0.2, 0.001, 0.001, 0.001, 0.001, 0.001, 0.3])
    k, settled = adaptive_cutoff(g, n=10**6)
    assert settled and k == 2


def test_unsettled_series_warns():
    y = np.cumsum(np.random.default_rng(1).normal(size=20000))
    with pytest.warns(SeriesNotDecayingWarning):
        lrv = long_run_variance(y, k_max=20)
    assert not lrv.settled and lrv.cutoff == 20


def test_ar1_closed_form():
    rng = np.random.default_rng(3)
    n, phi = 400_000, 0.5
    e = rng.normal(size=n)
    y = np.empty(n)
    y[0] = e[0]
    for i in range(1, n):
        y[i] = phi * y[i - 1] + e[i]
    assert long_run_variance(y).sigma2 == pytest.approx(1 / (1 - phi) ** 2, rel=0.05)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.01, 100))
def test_scale_equivariance(c):
    y = np.random.default_rng(2).normal(size=5000)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SeriesNotDecayingWarning)
        a = long_run_variance(y, cutoff=3).sigma2
        b = long_run_variance(c * y, cutoff=3).sigma2
    assert b == pytest.approx(c * c * a, rel=1e-12)
