import json
import math

import numpy as np
from hypothesis import assume, given, settings, strategies as st

from oracles import cir_bond, rel_err, vasicek_bond
from ramsey_affine.affine_model import spec_from_dict, spec_to_dict
from ramsey_affine.fixtures import cir, mixture_two_factor, vasicek
from ramsey_affine.mc_oracle import SimConfig, brownian_increments
from ramsey_affine.mixture import Density, MixtureSpec, mixture_bond_price, normalization_error, weight_x
from ramsey_affine.yield_curves import bond_riccati, tail_limit

SETTINGS = settings(max_examples=30, deadline=None)
pos = st.floats(0.05, 2.0)


@SETTINGS
@given(kappa=pos, m=st.floats(-0.02, 0.08), sigma=st.floats(0.001, 0.05), premium=st.floats(-10, 10),
       tau=st.floats(0.1, 20.0))
def test_gaussian_exponents_match_closed_form(kappa, m, sigma, premium, tau):
    spec = vasicek(kappa=kappa, m=m, sigma=sigma, premium=premium)
    sol = bond_riccati(spec, tau, 1e-3)
    a, b = vasicek_bond(sol.T - sol.t0, kappa, m, sigma, -premium)
    assert rel_err(sol.A[0][0], a) < 1e-8
    assert abs(sol.B[0] - b) < 1e-8 * max(1.0, abs(b))


@SETTINGS
@given(kappa=pos, m=st.floats(0.005, 0.08), sigma=st.floats(0.02, 0.3), premium=st.floats(-2, 2),
       tau=st.floats(0.1, 20.0))
def test_square_root_exponents_match_closed_form(kappa, m, sigma, premium, tau):
    spec = cir(kappa=kappa, m=m, sigma=sigma, premium=premium)
    sol = bond_riccati(spec, tau, 1e-3)
    a, b = cir_bond(sol.T - sol.t0, kappa, m, sigma, -premium)
    assert rel_err(sol.A[0][0], a) < 1e-6
    assert abs(sol.B[0] - b) < 1e-6 * max(1e-3, abs(b))


@SETTINGS
@given(kappa=pos, m=st.floats(0.005, 0.08), sigma=st.floats(0.02, 0.3))
def test_positive_rate_bonds_decrease_with_maturity(kappa, m, sigma):
    spec = cir(kappa=kappa, m=m, sigma=sigma)
    sol = bond_riccati(spec, 10.0, 1e-2)
    logp = sol.A @ spec.xi0 + sol.B  # node t is tenor 10 - t
    assert np.all(np.diff(logp) > 0)
    assert np.all(logp[:-1] < 0)


@SETTINGS
@given(kappa=pos, sigma=st.floats(0.001, 0.05), xi0=st.floats(-0.05, 0.1))
def test_spec_json_round_trip(kappa, sigma, xi0):
    spec = vasicek(kappa=kappa, sigma=sigma, xi0=xi0)
    back = spec_from_dict(json.loads(json.dumps(spec_to_dict(spec))))
    assert back.content_hash == spec.content_hash


@SETTINGS
@given(x=st.floats(0.1, 10.0))
def test_default_weight_normalization(x):
    m = MixtureSpec.gauss_legendre(vasicek())
    assert normalization_error(m, x, "f") < 1e-6
    assert normalization_error(m, x, "g") < 1e-6


@SETTINGS
@given(kind=st.sampled_from(["exponential", "half_normal"]), param=st.floats(0.2, 5.0), x=st.floats(0.1, 10.0))
def test_weight_normalization(kind, param, x):
    # 16 nodes resolve f(theta / x) when its theta scale is not far below the node spacing
    scale = x / param if kind == "exponential" else x * param
    assume(scale >= 0.1)
    m = MixtureSpec.gauss_legendre(vasicek(), density_f=Density(kind, param))
    assert normalization_error(m, x) < 1e-6


@SETTINGS
@given(kind=st.sampled_from(["exponential", "half_normal"]), param=st.floats(0.2, 5.0),
       x=st.floats(0.1, 10.0), factor=st.floats(1.01, 3.0))
def test_weight_strictly_increasing(kind, param, x, factor):
    m = MixtureSpec.gauss_legendre(vasicek(), density_f=Density(kind, param))
    assert np.all(weight_x(m, m.theta_nodes, x * factor) > weight_x(m, m.theta_nodes, x))


@SETTINGS
@given(bonds=st.lists(st.floats(0.01, 1.5), min_size=16, max_size=16), y=st.floats(0.01, 100.0))
def test_mixture_bond_is_bounded(bonds, y):
    m = MixtureSpec.gauss_legendre(mixture_two_factor())
    b = np.array(bonds)
    out = mixture_bond_price(m, y, 0.0, 1.0, None, b)
    assert b.min() <= out <= b.max()


@SETTINGS
@given(bond=st.floats(0.01, 1.5), y=st.floats(0.01, 100.0), theta=st.floats(0.05, 0.95))
def test_point_mass_mixture_is_identity(bond, y, theta):
    m = MixtureSpec.single(vasicek(), theta)
    assert mixture_bond_price(m, y, 0.0, 1.0, None, np.array([bond])) == bond


@SETTINGS
@given(L=st.floats(-1, 1), c=st.floats(-5, 5), p=st.floats(0.3, 3.0))
def test_tail_extrapolation_exact_on_power_tails(L, c, p):
    seq = [L + c * t ** (-p) for t in (50.0, 100.0, 200.0)]
    lim, status = tail_limit(*seq, 1e-4)
    assert status in ("converged", "settled")
    assert abs(lim - L) < 1e-9 + (abs(c) * 200.0 ** (-p) if status == "settled" else 0.0)


@SETTINGS
@given(ids=st.lists(st.integers(0, 999), min_size=1, max_size=20, unique=True), seed=st.integers(0, 2**64 - 1))
def test_noise_depends_only_on_path_index(ids, seed):
    sim = SimConfig(1000, 0.25, 1.0, seed)
    full = brownian_increments(sim, np.arange(1000), 2)
    np.testing.assert_array_equal(brownian_increments(sim, ids, 2), full[ids])
