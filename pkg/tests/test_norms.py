import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ifslab.errors import ConfigError
from ifslab.handles import Affine, BoxIndicator, Const, Logistic, Ramp, identity, product_ramp
from ifslab.norms import (
    NormParams,
    fit_embedding_constant,
    lipschitz_norm,
    m_alpha_beta,
    n_beta,
    refined_pairs,
    sample_pairs,
    weighted_norm,
)
from ifslab.system import Box, probe_points

UNIT = Box([0.0], [1.0])
POINTS = probe_points(UNIT, 500, seed=0)
PAIRS = sample_pairs(UNIT, 500, seed=0)


def family():
    return [Const(1.0), Const(0.3), identity(UNIT), Ramp(0.4, 0.2), Logistic(0.5, 0.1), Affine([-0.5], 0.7, UNIT)]


@pytest.mark.parametrize("a,b", [(0.0, 0.4), (0.3, 0.3), (0.4, 0.2), (0.2, 0.5)])
def test_inadmissible_parameters(a, b):
    with pytest.raises(ConfigError):
        NormParams(a, b)


def test_n_beta_examples():
    p = NormParams()
    assert n_beta(Const(1.0), p, POINTS) == 1.0
    assert n_beta(Const(0.0), p, POINTS) == 0.0
    assert n_beta(identity(UNIT), p, POINTS) == pytest.approx(0.5, abs=1e-12)


def test_m_alpha_beta_constant_is_zero():
    assert m_alpha_beta(Const(2.0), NormParams(), PAIRS) == 0.0


def test_m_alpha_beta_identity_lattice_brute_force():
    p = NormParams(0.45, 0.49)
    pairs = refined_pairs(UNIT, 101)
    x, y = pairs[:, 0, 0], pairs[:, 1, 0]
    brute = np.max(np.abs(x - y) ** 0.55 / (1 + np.minimum(x, y) ** 0.49))
    assert m_alpha_beta(identity(UNIT), p, pairs) == pytest.approx(brute, rel=1e-12)
    assert m_alpha_beta(identity(UNIT), p, pairs) == pytest.approx(1.0, abs=1e-12)


def test_weighted_norm_identity_is_sum_of_parts():
    p = NormParams(0.45, 0.49)
    pairs = refined_pairs(UNIT, 101)
    pts = UNIT.lattice(101)
    f = identity(UNIT)
    assert weighted_norm(f, p, pts, pairs) == pytest.approx(n_beta(f, p, pts) + m_alpha_beta(f, p, pairs), rel=1e-14)


def test_weighted_norm_constants():
    assert weighted_norm(Const(1.0), NormParams(), POINTS, PAIRS) == 1.0
    assert weighted_norm(Const(0.0), NormParams(), POINTS, PAIRS) == 0.0


def test_indicator_quotient_grows_under_refinement():
    f = BoxIndicator([0.5], [1.0])
    p = NormParams()
    vals = [m_alpha_beta(f, p, refined_pairs(UNIT, k)) for k in (11, 101, 1001)]
    assert vals[0] < vals[1] < vals[2]


def test_lipschitz_norm_examples():
    pts = UNIT.lattice(1001)
    pairs = refined_pairs(UNIT, 201)
    assert lipschitz_norm(Const(1.0), pts, pairs) == 1.0
    assert lipschitz_norm(identity(UNIT), pts, pairs) == pytest.approx(2.0, abs=1e-12)
    assert lipschitz_norm(Ramp(0.5, 0.1), pts, refined_pairs(UNIT, 1001)) == pytest.approx(11.0, rel=1e-9)


def test_pairs_are_separated():
    d = np.abs(PAIRS[:, 0, 0] - PAIRS[:, 1, 0])
    assert d.min() >= 1e-6


def test_declared_bounds_dominate_samples():
    for f in family():
        v = f(POINTS)
        assert np.all(np.abs(v) <= f.sup_bound + 1e-12)
        x, y = PAIRS[:, 0], PAIRS[:, 1]
        q = np.abs(f(x) - f(y)) / np.abs(x[:, 0] - y[:, 0])
        assert np.all(q <= f.lipschitz * (1 + 1e-9))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 5), st.integers(0, 5))
def test_product_rule(i, j):
    f, g = family()[i], family()[j]
    p = NormParams()
    lhs = weighted_norm(f * g, p, POINTS, PAIRS)
    assert lhs <= weighted_norm(f, p, POINTS, PAIRS) + weighted_norm(g, p, POINTS, PAIRS) + 1e-9


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 5), st.integers(0, 5))
def test_triangle_inequality(i, j):
    f, g = family()[i], family()[j]
    p = NormParams()
    assert weighted_norm(f + g, p, POINTS, PAIRS) <= weighted_norm(f, p, POINTS, PAIRS) + weighted_norm(g, p, POINTS, PAIRS) + 1e-9


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 5), st.floats(-10, 10, allow_nan=False))
def test_homogeneity(i, c):
    f = family()[i]
    p = NormParams()
    base = weighted_norm(f, p, POINTS, PAIRS)
    assert weighted_norm(c * f, p, POINTS, PAIRS) == pytest.approx(abs(c) * base, rel=1e-12, abs=1e-300)


def test_product_ramp_norm_matches_analytic_sup_metric():
    box = Box([0.0, 0.0], [1.0, 1.0])
    eta = 0.1
    f = product_ramp([0.5, 0.5], eta)
    g = np.linspace(0.3, 0.7, 81)
    pts = np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2)
    # pairs stepping diagonally through the corner region where both ramps are active
    h = 0.005
    pairs = np.stack([pts, pts + h], axis=1)
    analytic = 1 + 2 / eta
    est = lipschitz_norm(f, pts, pairs, metric="sup")
    assert abs(est - analytic) / analytic < 0.05
    assert est <= f.lip_norm + 1e-9


def test_embedding_constant_fit(nu_half):
    p = NormParams()
    fit = fit_embedding_constant(family(), nu_half.support[::100], p, POINTS, PAIRS, r=1.5)
    assert fit.s == pytest.approx(3.0)
    assert np.all(fit.ratios <= fit.constant + 1e-15)
    assert 0 < fit.constant < np.inf
