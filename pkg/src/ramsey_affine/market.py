"""Optimal wealth, state price and consumption paths, and the backward power-utility constraint.

All positive processes are simulated in log space with left-point Euler
increments on the factor paths of :mod:`.mc_oracle`:

    d log Y = (-r - 1/2 |v|^2) dt + v . dW,             v     = a_Y^T Theta s(xi)
    d log X = (r + kappa . eta - zeta - 1/2 |kappa|^2) dt + kappa . dW,
                                                       kappa = a_X^T Theta s(xi),
                                                       eta   = a_R^T Theta s(xi)

Consumption is ``C = zeta X``. Because the portfolio lives on E and the
orthogonal state-price direction off E, ``exp(int zeta) X Y`` is a martingale
(and so is ``X Y + int Y C ds``).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .affine_model import AffineModelSpec
from .mc_oracle import (
    FactorPaths,
    SimConfig,
    _chunks,
    _sum_last,
    affine_on_steps,
    brownian_increments,
    cumulate,
    euler_factor_paths,
    loading_volatility,
    log_state_price_increments,
)
from .riccati import AffineDriftSpec, RiccatiSolution, quadratic_variation_coeffs, solve_exponential_moment

__all__ = [
    "PathBundle",
    "PowerConstraintSolution",
    "backward_constraint_error",
    "orthogonal_identity_residual",
    "power_optimal_triplet",
    "propagate_backward_wealth",
    "simulate_market",
    "simulate_optimal_wealth",
    "simulate_state_price",
    "solve_backward_power_constraint",
]


@dataclass(eq=False)
class PathBundle:
    """Jointly simulated paths on a shared grid, unit initial values for ``X`` and ``Y``.

    Arrays are ``(n_paths, len(grid))`` (``factors`` adds a trailing factor
    axis). ``dW`` and ``sqrt_lam`` hold the per-step noise and truncated
    eigenvariance roots when the full grid is stored, else ``None``.
    """

    grid: np.ndarray
    factors: np.ndarray
    log_state_price: np.ndarray
    integrated_rate: np.ndarray
    integrated_consumption: np.ndarray
    log_wealth: np.ndarray | None = None
    integrated_yc: np.ndarray | None = None
    dW: np.ndarray | None = None
    sqrt_lam: np.ndarray | None = None
    noise_seed: int = 0
    clip_count: int = 0
    step: float = 0.0
    antithetic: bool = False

    @property
    def n_paths(self) -> int:
        return self.factors.shape[0]

    @property
    def state_price(self) -> np.ndarray:
        return np.exp(self.log_state_price)

    @property
    def wealth(self) -> np.ndarray:
        if self.log_wealth is None:
            raise ValueError("bundle carries no wealth paths; run simulate_optimal_wealth first")
        return np.exp(self.log_wealth)

    @property
    def zeta(self) -> np.ndarray:
        return self._zeta

    @property
    def consumption_rate(self) -> np.ndarray:
        """Consumption ``C_t = zeta_t X_t`` for unit initial wealth."""
        return self._zeta * self.wealth

    @property
    def capitalization(self) -> np.ndarray:
        """``exp(int_0^t zeta ds)``."""
        return np.exp(self.integrated_consumption)

    def __post_init__(self):
        self._zeta = np.zeros(self.factors.shape[:2])

    def _set_zeta(self, spec: AffineModelSpec) -> None:
        self._zeta = spec.consumption_rate(self.factors)

    def index_of(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.grid - t)))
        if abs(self.grid[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"time {t} is not on the bundle grid")
        return k


def _wealth_log_increments(spec, fp: FactorPaths, step: float, portfolio_loading, consumption_loading):
    a_x = spec.portfolio_loading if portfolio_loading is None else np.asarray(portfolio_loading, dtype=float)
    a_z, b_z = spec.consumption_loading if consumption_loading is None else consumption_loading
    kappa = loading_volatility(spec, a_x, fp.sqrt_lam)
    eta = loading_volatility(spec, spec.premium_loading_R, fp.sqrt_lam)
    r = affine_on_steps(fp.xi, *spec.rate_loading)
    zeta = affine_on_steps(fp.xi, np.asarray(a_z, dtype=float), float(b_z))
    inc = (r + _sum_last(kappa * eta) - zeta - 0.5 * _sum_last(kappa * kappa)) * step + _sum_last(kappa * fp.dW)
    return inc, r, zeta


def _check_admissible(spec: AffineModelSpec, portfolio_loading, perp_loading):
    if portfolio_loading is not None and np.any(np.abs(np.asarray(portfolio_loading)[~spec.e_mask]) > 0):
        raise ValueError("portfolio loading must be supported on E")
    if perp_loading is not None and np.any(np.abs(np.asarray(perp_loading)[spec.e_mask]) > 0):
        raise ValueError("orthogonal state-price loading must vanish on E")


def simulate_market(spec: AffineModelSpec, sim: SimConfig, *, wealth: bool = True, store_noise: bool = True,
                    portfolio_loading=None, perp_loading=None, consumption_loading=None) -> PathBundle:
    """Factors, state price and (optionally) optimal wealth in one pass, chunk by chunk.

    ``portfolio_loading``/``perp_loading`` override the optimal loadings to
    simulate an arbitrary admissible pair ``(kappa, nu)``; ``perp_loading``
    replaces ``premium_loading_perp`` in the state-price volatility.
    """
    spec.require_valid()
    _check_admissible(spec, portfolio_loading, perp_loading)
    a_y = spec.state_price_loading if perp_loading is None else np.asarray(perp_loading, float) - spec.premium_loading_R
    rec = sim.record_index
    full = sim.record_every == 1
    store_noise = store_noise and full
    n, p = spec.dim, sim.n_paths
    k = len(rec)
    factors = np.empty((p, k, n))
    logy = np.empty((p, k))
    irate = np.empty((p, k))
    icons = np.empty((p, k))
    logx = np.empty((p, k)) if wealth else None
    iyc = np.empty((p, k)) if wealth else None
    dW = np.empty((p, sim.n_steps, n)) if store_noise else None
    sq = np.empty((p, sim.n_steps, n)) if store_noise else None
    clips = 0
    for ids in _chunks(sim):
        fp = euler_factor_paths(spec, sim, brownian_increments(sim, ids, n))
        clips += fp.clip_count
        factors[ids] = fp.xi[:, rec]
        ly = cumulate(log_state_price_increments(spec, fp, sim.step, a_y))
        logy[ids] = ly[:, rec]
        if wealth:
            inc, r, zeta = _wealth_log_increments(spec, fp, sim.step, portfolio_loading, consumption_loading)
            lx = cumulate(inc)
            logx[ids] = lx[:, rec]
            iyc[ids] = cumulate(np.exp(ly[:, :-1] + lx[:, :-1]) * zeta * sim.step)[:, rec]
        else:
            r = affine_on_steps(fp.xi, *spec.rate_loading)
            zeta = affine_on_steps(fp.xi, *(spec.consumption_loading if consumption_loading is None
                                            else (np.asarray(consumption_loading[0], float), consumption_loading[1])))
        irate[ids] = cumulate(r * sim.step)[:, rec]
        icons[ids] = cumulate(zeta * sim.step)[:, rec]
        if store_noise:
            dW[ids] = fp.dW
            sq[ids] = fp.sqrt_lam
    b = PathBundle(sim.grid[rec], factors, logy, irate, icons, logx, iyc, dW, sq, sim.seed, clips, sim.step,
                   sim.antithetic)
    if consumption_loading is None:
        b._set_zeta(spec)
    else:
        a_z, b_z = consumption_loading
        b._zeta = _affine_paths(factors, np.asarray(a_z, float), float(b_z))
    return b


def _affine_paths(xi: np.ndarray, a: np.ndarray, b: float) -> np.ndarray:
    out = np.full(xi.shape[:-1], b)
    for j in range(a.shape[0]):
        if a[j] != 0.0:
            out = out + a[j] * xi[..., j]
    return out


def simulate_state_price(spec: AffineModelSpec, sim: SimConfig) -> PathBundle:
    """Factor and state-price paths with ``Y_0 = 1``; noise kept for :func:`simulate_optimal_wealth`."""
    return simulate_market(spec, sim, wealth=False)


def simulate_optimal_wealth(spec: AffineModelSpec, sim: SimConfig, bundle: PathBundle,
                            portfolio_loading=None, consumption_loading=None) -> PathBundle:
    """Add optimal wealth (``X_0 = 1``) and ``int Y C ds`` to ``bundle`` using its stored noise."""
    if bundle.dW is None or bundle.sqrt_lam is None:
        raise ValueError("bundle has no stored noise; simulate with record_every=1")
    _check_admissible(spec, portfolio_loading, None)
    fp = FactorPaths(bundle.grid, bundle.factors, bundle.dW, bundle.sqrt_lam, bundle.clip_count)
    inc, _, zeta = _wealth_log_increments(spec, fp, sim.step, portfolio_loading, consumption_loading)
    logx = cumulate(inc)
    out = replace(bundle, log_wealth=logx,
                  integrated_yc=cumulate(np.exp(bundle.log_state_price[:, :-1] + logx[:, :-1]) * zeta * sim.step),
                  integrated_consumption=cumulate(zeta * sim.step))
    out._zeta = bundle._zeta if consumption_loading is None else _affine_paths(
        bundle.factors, np.asarray(consumption_loading[0], float), float(consumption_loading[1]))
    return out


def power_optimal_triplet(theta: float, x: float, y: float, bundle: PathBundle):
    """``(x X*, y Y*, zeta x X*)`` on the bundle paths.

    Optimal processes are linear in their initial conditions, so other
    initial values are pure rescalings of the unit-start paths.
    """
    if not 0 < theta < 1:
        raise ValueError("theta must lie in (0, 1)")
    if not (x > 0 and y > 0):
        raise ValueError("initial wealth and state price must be positive")
    X = x * bundle.wealth
    return X, y * bundle.state_price, bundle.zeta * X


# -- backward power constraint -------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PowerConstraintSolution:
    """Exponents of ``E[(S_H / S_t) (Y_H / Y_t)^(1 - 1/theta) | F_t] = exp(A_t . xi_t + B_t)``, ``S = exp(int zeta)``."""

    theta: float
    horizon: float
    riccati: RiccatiSolution

    @property
    def power(self) -> float:
        return 1.0 - 1.0 / self.theta

    @property
    def grid(self) -> np.ndarray:
        return self.riccati.grid

    @property
    def A(self) -> np.ndarray:
        return self.riccati.A

    @property
    def B(self) -> np.ndarray:
        return self.riccati.B

    def portfolio_loading(self, t: float) -> np.ndarray:
        """Loading of the wealth volatility ``(A_t - a_Y / theta)^T Theta s``."""
        a, _ = self.riccati.at(t)
        return a - self.riccati.spec.state_price_loading / self.theta


def solve_backward_power_constraint(spec: AffineModelSpec, theta: float, T_H: float, step: float,
                                    **kw) -> PowerConstraintSolution:
    """Riccati exponents of the terminal power-utility constraint with horizon ``T_H``.

    With ``p = 1 - 1/theta`` the log of ``S_H Y_H^p`` is ``int h ds + int c Theta s dW
    - 1/2 int q(c) ds`` where ``c = p a_Y`` and
    ``h = zeta - p r + 1/2 (p^2 - p) q(a_Y)``, all affine in ``xi``.
    """
    if not 0 < theta < 1:
        raise ValueError(f"theta must lie in (0, 1), got {theta}")
    if not T_H > 0:
        raise ValueError("horizon must be positive")
    spec.require_valid()
    p = 1.0 - 1.0 / theta
    a_y = spec.state_price_loading
    grad_q, q0 = quadratic_variation_coeffs(spec, a_y)
    zeta = AffineDriftSpec(*spec.consumption_loading)
    rate = AffineDriftSpec(*spec.rate_loading)
    quad = AffineDriftSpec(grad_q, q0).scaled(0.5 * (p * p - p))
    running = zeta - rate.scaled(p) + quad
    sol = solve_exponential_moment(spec, p * a_y, running, 0.0, T_H, step, **kw)
    return PowerConstraintSolution(float(theta), float(T_H), sol)


def _exponent_on_bundle(sol: PowerConstraintSolution, bundle: PathBundle) -> np.ndarray:
    if bundle.grid[-1] < sol.horizon - 1e-9:
        raise ValueError("bundle does not reach the constraint horizon")
    k_end = bundle.index_of(sol.horizon)
    out = np.empty((bundle.n_paths, k_end + 1))
    for k in range(k_end + 1):
        a, b = sol.riccati.at(bundle.grid[k])
        out[:, k] = _affine_paths(bundle.factors[:, k], a, b)
    return out


def propagate_backward_wealth(solution: PowerConstraintSolution, bundle: PathBundle) -> np.ndarray:
    """``X_t = Y_t^(-1/theta) exp(A_t . xi_t + B_t)`` on the bundle grid up to the horizon."""
    e = _exponent_on_bundle(solution, bundle)
    return np.exp(e - bundle.log_state_price[:, : e.shape[1]] / solution.theta)


def backward_constraint_error(spec: AffineModelSpec, solution: PowerConstraintSolution, bundle: PathBundle) -> float:
    """Sup over grid and paths of ``|X_t Y_t^(1/theta) exp(-A_t . xi_t - B_t) - 1|``.

    ``X`` is simulated as a wealth consuming at rate ``zeta`` from
    ``X_0 = exp(A_0 . xi_0 + B_0)`` with portfolio loading ``A_t - a_Y / theta``,
    driven by the bundle's own noise. The ratio is identically one in
    continuous time; the returned value is the discretization error.
    """
    if bundle.dW is None:
        raise ValueError("bundle has no stored noise")
    e = _exponent_on_bundle(solution, bundle)
    k_end = e.shape[1] - 1
    xi = bundle.factors[:, : k_end + 1]
    sq = bundle.sqrt_lam[:, :k_end]
    dW = bundle.dW[:, :k_end]
    h = bundle.step
    eta = loading_volatility(spec, spec.premium_loading_R, sq)
    r = affine_on_steps(xi, *spec.rate_loading) - affine_on_steps(xi, *spec.consumption_loading)
    inc = np.empty((bundle.n_paths, k_end))
    for k in range(k_end):
        kap = loading_volatility(spec, solution.portfolio_loading(bundle.grid[k]), sq[:, k])
        inc[:, k] = (r[:, k] + _sum_last(kap * eta[:, k]) - 0.5 * _sum_last(kap * kap)) * h + _sum_last(kap * dW[:, k])
    logx = e[:, :1] + cumulate(inc)
    ratio = logx + bundle.log_state_price[:, : k_end + 1] / solution.theta - e
    return float(np.max(np.abs(np.expm1(ratio))))


def orthogonal_identity_residual(spec: AffineModelSpec, solution: PowerConstraintSolution) -> float:
    """Max over grid nodes of ``|A_t^perp - a_Y^perp / theta|`` (components off E)."""
    perp = ~spec.e_mask
    if not perp.any():
        return 0.0
    target = spec.state_price_loading[perp] / solution.theta
    return float(np.max(np.abs(solution.A[:, perp] - target)))
