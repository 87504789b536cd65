import numpy as np
import pytest

from ifslab import reference
from ifslab.errors import DegenerateBox
from ifslab.system import AffineMap, Box, Constant, IfsSystem, ProbabilityField
from ifslab.verifier import check_moment_conditions, contraction_supremand, estimate_contraction_ratio, verify


@pytest.mark.parametrize("name", ["half", "tilt"])
def test_contraction_ratio_is_one_half(name):
    rep = estimate_contraction_ratio(getattr(reference, name)(), samples=1000, seed=0)
    assert rep.rho_hat == pytest.approx(0.5, abs=1e-9)
    assert rep.passed


def test_expanding_variant_fails(expanding):
    rep = estimate_contraction_ratio(expanding, samples=1000, seed=0)
    assert rep.rho_hat == pytest.approx(1.25, abs=1e-6)
    assert not rep.passed


def test_witness_reproduces_estimate(tilt):
    rep = estimate_contraction_ratio(tilt, samples=500, seed=4)
    assert contraction_supremand(tilt, *rep.witness) == pytest.approx(rep.rho_hat, abs=1e-12)


def test_superset_sample_never_decreases(tilt):
    small = estimate_contraction_ratio(tilt, samples=100, seed=9).rho_hat
    large = estimate_contraction_ratio(tilt, samples=1000, seed=9).rho_hat
    assert large >= small


def test_deterministic_reports(tilt):
    a = verify(tilt, samples=200, seed=5).to_dict()
    b = verify(tilt, samples=200, seed=5).to_dict()
    assert a == b


def test_bounded_by_common_lipschitz_constant(tilt):
    rep = verify(tilt, samples=300, seed=1)
    L = tilt.lipschitz_constants.max()
    assert rep.contraction.rho_hat <= L + 1e-9
    assert rep.conditions.h0_sup <= L + 1e-9
    assert rep.conditions.h0_sup >= rep.contraction.rho_hat - 1e-12


def test_half_growth_term(half):
    # the supremand (y/2 + 1/4)/(1 + y) is increasing on [0, 1], so the sup is 0.375 at y = 1
    rep = check_moment_conditions(half, samples=1000, seed=0)
    y = np.linspace(0, 1, 10001)
    brute = np.max((0.5 * (y / 2) + 0.5 * (y / 2 + 0.5)) / (1 + y))
    assert rep.h1_sup == pytest.approx(brute, abs=1e-6)
    assert rep.h1_sup == pytest.approx(0.375, abs=1e-6)


def test_half_probability_regularity_is_zero(half):
    assert check_moment_conditions(half, samples=100, seed=0).h2_sup == 0.0


def test_tilt_positivity(tilt):
    rep = check_moment_conditions(tilt, samples=1000, seed=0)
    assert rep.h4_sufficient
    assert rep.min_probability_bound == pytest.approx(0.25, abs=1e-9)
    assert rep.min_probability == pytest.approx(0.25, abs=1e-9)


def test_degenerate_box_raises():
    s = IfsSystem(1, (AffineMap([[0.5]], [0.0]),), ProbabilityField((Constant(1.0),)), domain_box=Box([0.3], [0.3]))
    with pytest.raises(DegenerateBox):
        estimate_contraction_ratio(s, samples=10, seed=0)


def test_report_carries_caveat_and_sizes(half):
    d = verify(half, samples=50, seed=0).to_dict()
    assert "caveat" in d["contraction"] and d["contraction"]["sample_size"] > 0
    assert d["passed"]
