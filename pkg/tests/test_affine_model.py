import json

import numpy as np
import pytest

from ramsey_affine.affine_model import (
    InvalidSpecError,
    diffusion_matrix,
    drift,
    eigen_variances,
    load_spec,
    spec_from_dict,
    spec_hash,
    spec_to_dict,
    validate_spec,
)
from ramsey_affine.fixtures import FIXTURES, backward_two_factor, vasicek


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_fixtures_are_valid(name):
    assert validate_spec(FIXTURES[name]()).ok


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_json_round_trip_keeps_hash(name, tmp_path):
    spec = FIXTURES[name]()
    d = spec_to_dict(spec)
    back = spec_from_dict(json.loads(json.dumps(d)))
    assert spec_to_dict(back) == d
    assert spec_hash(back) == spec_hash(spec) == spec.content_hash
    p = tmp_path / "m.json"
    p.write_text(json.dumps({"model": d}))
    assert load_spec(p).content_hash == spec.content_hash


def test_missing_and_unknown_fields_rejected():
    d = spec_to_dict(vasicek())
    with pytest.raises(ValueError, match="missing"):
        spec_from_dict({k: v for k, v in d.items() if k != "xi0"})
    with pytest.raises(ValueError, match="unknown"):
        spec_from_dict({**d, "extra": 1})


def _failed(spec):
    return [c.name for c in validate_spec(spec).failures]


def test_negative_eigen_intercept_is_named():
    rep = validate_spec(vasicek().replace(eigen_intercepts=[-1.0]))
    assert not rep.ok
    assert rep.failed("eigen_intercepts")
    assert "eigen_intercepts[1]" in str(rep)


def test_support_violations():
    s = backward_two_factor()
    assert _failed(s.replace(premium_loading_R=[2.0, 1.0])) == ["support:premium_loading_R"]
    assert _failed(s.replace(portfolio_loading=[4.0, 1.0])) == ["support:portfolio_loading"]
    assert _failed(s.replace(premium_loading_perp=[1.0, 0.0])) == ["support:premium_loading_perp"]


def test_block_structure_violation():
    s = backward_two_factor()
    assert "block:vol_loading" in _failed(s.replace(vol_loading=[[0.1, 0.05], [0.0, 0.2]]))
    assert "block:drift_matrix" in _failed(s.replace(drift_matrix=[[-0.5, 0.0], [0.3, -1.0]]))


def test_negative_rate_loading_rejected():
    assert _failed(vasicek().replace(rate_loading=([-1.0], 0.0))) == ["positivity:rate_loading"]


def test_non_finite_rejected():
    assert "finite" in _failed(vasicek().replace(xi0=[np.nan]))


def test_require_valid_raises():
    with pytest.raises(InvalidSpecError):
        vasicek().replace(eigen_intercepts=[-1.0]).require_valid()


def test_full_truncation_clips_negative_variance():
    spec = FIXTURES["cir"]()
    lam, clipped = eigen_variances(spec, np.array([[-0.01], [0.04]]))
    assert lam[0, 0] == 0.0 and clipped[0, 0]
    assert lam[1, 0] == pytest.approx(0.04) and not clipped[1, 0]
    np.testing.assert_array_equal(diffusion_matrix(spec, np.array([-0.01])), [[0.0]])


def test_drift_is_affine():
    spec = backward_two_factor()
    x = np.array([0.1, -0.2])
    np.testing.assert_allclose(drift(spec, x), spec.drift_matrix @ x + spec.drift_intercept)
