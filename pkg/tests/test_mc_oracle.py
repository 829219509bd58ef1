import math

import numpy as np
import pytest

from ramsey_affine.fixtures import backward_two_factor, cir, vasicek, zero_vol
from ramsey_affine.market import simulate_market
from ramsey_affine.mc_oracle import (
    SimConfig,
    brownian_increments,
    estimate,
    martingale_drift_test,
    mc_bond_price,
    simulate_factors,
)
from ramsey_affine.yield_curves import bond_price, bond_riccati


def test_sim_config_validation():
    with pytest.raises(ValueError, match="divide"):
        SimConfig(100, 0.3, 1.0, 0)
    with pytest.raises(ValueError, match="even"):
        SimConfig(101, 0.1, 1.0, 0, antithetic=True)
    with pytest.raises(ValueError, match="scheme"):
        SimConfig(100, 0.1, 1.0, 0, scheme="Milstein")
    with pytest.raises(ValueError, match="64-bit"):
        SimConfig(100, 0.1, 1.0, -1)
    assert SimConfig(100, 0.1, 1.0, 0, chunk_paths=100).chunk_paths == 128


def test_noise_is_reproducible_and_independent_of_chunking():
    sim = SimConfig(300, 0.05, 1.0, 42)
    a = brownian_increments(sim, np.arange(300), 2)
    b = np.concatenate([brownian_increments(sim, np.arange(s, min(s + 70, 300)), 2) for s in range(0, 300, 70)])
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(a[[5, 250, 17]], brownian_increments(sim, [5, 250, 17], 2))
    other = brownian_increments(sim.replace(seed=43), np.arange(300), 2)
    assert not np.array_equal(a, other)


def test_noise_moments():
    sim = SimConfig(4096, 0.25, 1.0, 1)
    dw = brownian_increments(sim, np.arange(sim.n_paths), 1)
    assert abs(dw.mean()) < 4 * math.sqrt(0.25 / dw.size)
    assert dw.var() == pytest.approx(0.25, rel=0.03)


def test_antithetic_pairs_mirror():
    sim = SimConfig(128, 0.1, 1.0, 9, antithetic=True)
    dw = brownian_increments(sim, np.arange(128), 1)
    np.testing.assert_array_equal(dw[0::2], -dw[1::2])


def test_substeps_couple_coarse_and_fine_paths():
    fine = SimConfig(64, 0.05, 1.0, 3)
    coarse = fine.replace(step=0.1, substeps=2)
    dwf = brownian_increments(fine, np.arange(64), 1)
    dwc = brownian_increments(coarse, np.arange(64), 1)
    np.testing.assert_allclose(dwc, dwf[:, 0::2] + dwf[:, 1::2], rtol=0, atol=1e-14)


def test_whole_simulation_is_bitwise_reproducible_across_chunk_sizes():
    spec = backward_two_factor()
    a = simulate_market(spec, SimConfig(300, 0.02, 1.0, 11, chunk_paths=64))
    b = simulate_market(spec, SimConfig(300, 0.02, 1.0, 11, chunk_paths=4096))
    for f in ("factors", "log_state_price", "log_wealth", "integrated_yc"):
        np.testing.assert_array_equal(getattr(a, f), getattr(b, f))


def test_full_truncation_keeps_square_root_factor_real():
    spec = cir(sigma=0.6, m=0.01)  # Feller condition violated, zero is hit
    fp = simulate_factors(spec, SimConfig(512, 0.01, 2.0, 5))
    assert fp.clip_count > 0
    assert np.all(np.isfinite(fp.xi))


def test_zero_vol_mc_is_exact():
    e = mc_bond_price(zero_vol(), SimConfig(64, 0.1, 10.0, 0), 10.0)
    assert e.std_error == 0.0
    assert e.mean == pytest.approx(math.exp(-0.2), rel=1e-12)


def test_mc_bond_agrees_with_riccati_small():
    spec = vasicek()
    sim = SimConfig(20_000, 0.02, 5.0, 2, antithetic=True)
    e = mc_bond_price(spec, sim, 5.0)
    ref = float(bond_price(spec, bond_riccati(spec, 5.0, 1e-3), 0.0, spec.xi0))
    assert abs(e.mean - ref) < 3 * e.std_error + 1e-4 * ref


def test_antithetic_reduces_variance_for_monotone_payoff():
    spec = vasicek()
    base = SimConfig(8192, 0.05, 5.0, 4)
    plain = mc_bond_price(spec, base, 5.0)
    anti = mc_bond_price(spec, base.replace(antithetic=True), 5.0)
    assert anti.std_error < 0.5 * plain.std_error


def test_estimate_and_antithetic_pairing():
    e = estimate([1.0, 3.0, 2.0, 2.0], antithetic=True)
    assert e.mean == 2.0 and e.std_error == 0.0 and e.n == 2


def test_drift_test_detects_drift_and_accepts_martingale():
    rng = np.random.default_rng(0)
    t = np.linspace(0, 1, 11)
    w = np.concatenate([np.zeros((4000, 1)), np.cumsum(rng.normal(0, math.sqrt(0.1), (4000, 10)), axis=1)], axis=1)
    assert martingale_drift_test(w, t).passed
    assert not martingale_drift_test(w + 0.2 * t, t).passed
