import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ifslab import reference
from ifslab.errors import ConfigError, DegenerateField, FieldNotNormalized, IndexOutOfRange, NonFinite
from ifslab.system import (
    AffineMap,
    Box,
    ClippedAffine,
    Constant,
    IfsSystem,
    ProbabilityField,
    SoftmaxComponent,
    apply_map,
    dump_system,
    evaluate_probabilities,
    load_system,
    probe_points,
    validate_system,
)


def test_half_probabilities_are_constant(half):
    np.testing.assert_array_equal(evaluate_probabilities(half, [0.3]), [0.5, 0.5])


def test_tilt_probabilities_at_endpoints(tilt):
    np.testing.assert_allclose(evaluate_probabilities(tilt, [0.0]), [0.5, 0.5], atol=1e-15)
    np.testing.assert_allclose(evaluate_probabilities(tilt, [1.0]), [0.75, 0.25], atol=1e-15)


def test_probabilities_lie_in_simplex_on_probe_sample(tilt):
    pts = probe_points(tilt.domain_box, 1000, seed=3)
    p = tilt.probabilities(pts)
    assert np.all(p >= 0) and np.all(p <= 1)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


def test_evaluation_outside_box_warns_but_works(tilt):
    with pytest.warns(RuntimeWarning, match="outside the domain box"):
        p = evaluate_probabilities(tilt, [2.0])
    np.testing.assert_allclose(p, [0.75, 0.25])


def test_non_finite_point_raises(half):
    with pytest.raises(NonFinite):
        evaluate_probabilities(half, [np.nan])


def test_renormalize_with_all_zero_raw_values():
    field = ProbabilityField((Constant(0.0), Constant(0.0)), "renormalize")
    with pytest.raises(DegenerateField):
        field.evaluate(np.zeros((1, 1)))


def test_exact_mode_rejects_unnormalized_field():
    field = ProbabilityField((Constant(0.6), Constant(0.6)), "exact")
    with pytest.raises(FieldNotNormalized):
        field.evaluate(np.zeros((1, 1)))


def test_renormalize_divides_by_sum():
    field = ProbabilityField((Constant(1.0), Constant(3.0)), "renormalize")
    np.testing.assert_allclose(field.evaluate(np.zeros((2, 1))), [[0.25, 0.75]] * 2)


def test_softmax_field_sums_to_one():
    field = ProbabilityField((SoftmaxComponent([1.0], 0.0), SoftmaxComponent([-1.0], 0.5)))
    p = field.evaluate(np.linspace(-3, 3, 50)[:, None])
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


def test_apply_map_examples(half):
    np.testing.assert_array_equal(apply_map(half, 0, [0.8]), [0.4])
    np.testing.assert_array_equal(apply_map(half, 1, [0.0]), [0.5])
    sys2 = IfsSystem(2, (AffineMap(np.eye(2), [1.0, 1.0]),), ProbabilityField((Constant(1.0),)), domain_box=Box([0, 0], [1, 1]))
    np.testing.assert_array_equal(apply_map(sys2, 0, [0.0, 0.0]), [1.0, 1.0])


def test_apply_map_index_out_of_range(half):
    with pytest.raises(IndexOutOfRange):
        apply_map(half, 2, [0.1])
    with pytest.raises(IndexOutOfRange):
        apply_map(half, -1, [0.1])


def test_apply_map_is_bit_reproducible(tilt):
    x = np.array([0.123456789])
    assert apply_map(tilt, 1, x).tobytes() == apply_map(tilt, 1, x).tobytes()


@given(st.floats(-5, 5).filter(lambda c: c != 0), st.integers(1, 3))
def test_scaled_identity_lipschitz(c, d):
    m = AffineMap(c * np.eye(d), np.zeros(d))
    assert abs(m.cached_lipschitz - abs(c)) <= 1e-12 * max(1.0, abs(c))


def test_validate_reference_systems_clean(half, tilt):
    assert validate_system(half).violations == []
    assert validate_system(tilt).violations == []


def test_validate_reports_unnormalized_field(half):
    bad = IfsSystem(1, half.maps, ProbabilityField((Constant(0.6), Constant(0.6)), "exact"), domain_box=half.domain_box)
    assert any("does not sum to 1" in v for v in validate_system(bad).violations)


def test_validate_reports_length_mismatch(half):
    field = ProbabilityField((Constant(0.2), Constant(0.3), Constant(0.5)))
    bad = IfsSystem(1, half.maps, field, domain_box=half.domain_box)
    assert any("length mismatch" in v for v in validate_system(bad).violations)


def test_validate_reports_base_point_outside_box(half):
    bad = IfsSystem(1, half.maps, half.field, base_point=[3.0], domain_box=half.domain_box)
    assert any("outside" in v for v in validate_system(bad).violations)


def test_clipped_affine_lipschitz_and_range():
    e = ClippedAffine([0.25], 0.5, 0.25, 0.75)
    assert e.lipschitz("euclidean") == 0.25
    assert e.box_range(Box([0.0], [1.0])) == (0.5, 0.75)


def test_system_file_round_trip(tmp_path, tilt):
    path = tmp_path / "tilt.json"
    dump_system(tilt, path)
    again = load_system(path)
    assert again.to_dict() == tilt.to_dict()


def test_malformed_file_is_config_error(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{ not json")
    with pytest.raises(ConfigError):
        load_system(path)
    path.write_text(json.dumps({"dimension": 1}))
    with pytest.raises(ConfigError):
        load_system(path)


def test_unknown_probability_type_is_config_error(tmp_path, half):
    doc = half.to_dict()
    doc["probabilities"][0] = {"type": "spline"}
    path = tmp_path / "s.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(ConfigError):
        load_system(path)


def test_product_half_field_is_uniform():
    s = reference.product_half(2)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        p = s.probabilities(np.array([[0.2, 0.9]]))
    np.testing.assert_allclose(p, 0.25)
