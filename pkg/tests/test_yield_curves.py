import math

import numpy as np
import pytest

from oracles import rel_err, vasicek_oracle
from ramsey_affine import yield_curves as yc
from ramsey_affine.fixtures import backward_two_factor, cir, nondecreasing, vasicek, vasicek_no_mr, zero_vol
from ramsey_affine.market import simulate_market
from ramsey_affine.mc_oracle import SimConfig
from ramsey_affine.yield_curves import (
    InconclusiveError,
    bond_riccati,
    bond_volatility,
    long_rate_classify,
    long_rate_path,
    tail_limit,
    yield_curve,
    yield_dynamics_check,
    zero_rate,
)


def test_zero_vol_curve_is_flat():
    c = yield_curve(zero_vol(), [0.5, 1, 2, 5, 10, 30], 1e-3)
    np.testing.assert_allclose(c.zero_rates, 0.02, rtol=0, atol=1e-12)
    np.testing.assert_array_equal(c.vol_norms, 0.0)


def test_curve_matches_closed_form():
    spec = vasicek()
    ten = [1, 2, 5, 10, 30]
    c = yield_curve(spec, ten, 1e-3)
    for tau, p in zip(ten, c.bond_prices):
        a, b = vasicek_oracle(spec)(tau)
        assert rel_err(p, math.exp(a * spec.xi0[0] + b)) < 1e-8


def test_zero_rate_and_bond_volatility():
    spec = vasicek()
    sol = bond_riccati(spec, 5.0, 1e-3)
    a, b = sol.at(1.0)
    assert zero_rate(spec, sol, 1.0, [0.05]) == pytest.approx(-(0.05 * a[0] + b) / 4.0, rel=1e-14)
    np.testing.assert_allclose(bond_volatility(spec, sol, 1.0, [0.05]), [a[0] * 0.01], rtol=1e-14)
    with pytest.raises(ValueError):
        zero_rate(spec, sol, 5.0, [0.05])


def test_curve_rejects_bad_tenors():
    with pytest.raises(ValueError):
        yield_curve(vasicek(), [1, 1, 2], 1e-2)
    with pytest.raises(ValueError):
        yield_curve(vasicek(), [-1, 2], 1e-2)


def test_tail_limit_statuses():
    L, c = 0.3, 2.0
    seq = [L + c / t for t in (50, 100, 200)]
    lim, st = tail_limit(*seq, 1e-4)
    assert st == "converged" and lim == pytest.approx(L, abs=1e-12)
    assert tail_limit(1.0, 1.0, 1.0, 1e-4) == (1.0, "settled")
    assert tail_limit(1.0, 2.0, 3.5, 1e-4)[1] == "divergent"
    assert tail_limit(1.0, 2.0, 1.0, 1e-4)[1] == "oscillating"


@pytest.mark.parametrize("make, expected", [
    (zero_vol, "Flat"), (vasicek, "Flat"), (cir, "Flat"), (backward_two_factor, "Flat"),
    (vasicek_no_mr, "Infinite"), (nondecreasing, "NonDecreasing"),
])
def test_long_rate_classification(make, expected):
    assert long_rate_classify(make()).classification == expected


def test_infinite_first_limit_is_sigma():
    res = long_rate_classify(vasicek_no_mr(sigma=0.02))
    assert res.first_limit == pytest.approx(0.02, rel=1e-3)


def test_nondecreasing_second_limit():
    spec = nondecreasing()
    res = long_rate_classify(spec)
    # |Gamma|^2 / tau -> 2 c xi1 for a driftless square-root factor feeding the rate through c
    assert res.second_limit == pytest.approx(2 * 0.2 * spec.xi0[0], rel=2e-2)


def test_oscillating_tail_is_inconclusive(monkeypatch):
    vals = iter([1.0, 3.0, 1.0])

    def fake(spec, a, xi):
        return np.array([next(vals)])

    monkeypatch.setattr(yc, "factor_volatility", fake)
    with pytest.raises(InconclusiveError) as exc:
        long_rate_classify(vasicek(), T_max=40, step=0.1)
    assert exc.value.diagnostics["second_status"] == "oscillating"


def test_long_rate_non_decreasing_along_paths():
    spec = nondecreasing()
    b = simulate_market(spec, SimConfig(256, 0.01, 5.0, 4), wealth=False, store_noise=False)
    l = long_rate_path(spec, b)
    assert np.min(np.diff(l, axis=1)) >= -1e-4


def test_flat_long_rate_is_constant_along_paths():
    spec = vasicek()
    b = simulate_market(spec, SimConfig(64, 0.05, 2.0, 4), wealth=False, store_noise=False)
    l = long_rate_path(spec, b)
    assert np.ptp(l) < 1e-6


def _coupled_yield_gaps(spec, T, steps, fine, paths=128, seed=6):
    out = []
    for h in steps:
        b = simulate_market(spec, SimConfig(paths, h, T, seed, substeps=int(round(h / fine))), wealth=False)
        out.append(yield_dynamics_check(spec, b, T))
    return out


@pytest.mark.parametrize("make", [vasicek, cir, backward_two_factor])
def test_yield_dynamics_reconstruction_halves(make):
    e = _coupled_yield_gaps(make(), 5.0, [2e-3, 1e-3, 5e-4], 5e-4)
    assert e[1] < 1e-2
    assert 1.5 < e[0] / e[1] < 2.6 and 1.5 < e[1] / e[2] < 2.6
