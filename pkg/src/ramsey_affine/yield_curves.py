"""Zero-coupon prices under the optimal state price, yields, bond volatilities and the long rate.

The bond price ``E[Y_T / Y_t | F_t]`` is exponential affine,
``exp(A(t) . xi_t + B(t))``. With time-constant coefficients the exponents
depend on ``T - t`` only, so one Riccati solve to the longest maturity
serves every tenor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .affine_model import AffineModelSpec, factor_volatility
from .market import PathBundle
from .riccati import AffineDriftSpec, RiccatiSolution, solve_exponential_moment

__all__ = [
    "InconclusiveError",
    "LongRateResult",
    "YieldCurve",
    "bond_price",
    "bond_riccati",
    "bond_volatility",
    "curve_from_solution",
    "long_rate_classify",
    "long_rate_path",
    "tail_limit",
    "yield_curve",
    "yield_dynamics_check",
    "zero_rate",
]


class InconclusiveError(ArithmeticError):
    """Tail extrapolation oscillates beyond tolerance; no classification is made."""

    def __init__(self, message: str, diagnostics: dict):
        self.diagnostics = diagnostics
        super().__init__(message)


def bond_riccati(spec: AffineModelSpec, T: float, step: float, t0: float = 0.0, **kw) -> RiccatiSolution:
    """Exponents of the maturity-``T`` bond price on ``[t0, T]``, ``A(T) = 0``, ``B(T) = 0``."""
    if not T > t0:
        raise ValueError("maturity must exceed the start time")
    minus_r = -AffineDriftSpec(*spec.rate_loading)
    return solve_exponential_moment(spec, spec.state_price_loading, minus_r, t0, T, step, **kw)


def bond_price(spec: AffineModelSpec, sol: RiccatiSolution, t: float, xi) -> np.ndarray:
    a, b = sol.at(t)
    return np.exp(np.asarray(xi, dtype=float) @ a + b)


def zero_rate(spec: AffineModelSpec, sol: RiccatiSolution, t: float, xi, T: float | None = None) -> np.ndarray:
    """``-log B(t, T) / (T - t)``; ``T`` defaults to the maturity the solution was built for."""
    T = sol.T if T is None else T
    if abs(T - sol.T) > 1e-12 * max(1.0, T):
        raise ValueError("solution was built for a different maturity")
    if not t < T:
        raise ValueError("zero rate needs t < T")
    a, b = sol.at(t)
    return -(np.asarray(xi, dtype=float) @ a + b) / (T - t)


def bond_volatility(spec: AffineModelSpec, sol: RiccatiSolution, t: float, xi) -> np.ndarray:
    """``Gamma_t(T) = A(t)^T Theta s(xi)``."""
    a, _ = sol.at(t)
    return factor_volatility(spec, a, xi)


@dataclass(frozen=True, eq=False)
class YieldCurve:
    as_of: float
    tenors: np.ndarray
    bond_prices: np.ndarray
    zero_rates: np.ndarray
    vol_norms: np.ndarray
    model_hash: str = ""
    label: dict = field(default_factory=dict)

    def __post_init__(self):
        if np.any(~(self.bond_prices > 0)) or not np.all(np.isfinite(self.zero_rates)):
            raise ArithmeticError("yield curve has non-positive prices or non-finite rates")

    def rows(self):
        return [(float(T), float(p), float(z), float(v))
                for T, p, z, v in zip(self.tenors, self.bond_prices, self.zero_rates, self.vol_norms)]


def _check_tenors(tenors) -> np.ndarray:
    ten = np.asarray(tenors, dtype=float).reshape(-1)
    if ten.size == 0 or np.any(ten <= 0) or np.any(np.diff(ten) <= 0):
        raise ValueError("tenors must be positive and strictly increasing")
    return ten


def rates_from_prices(prices, tenors) -> np.ndarray:
    """``-log B / tau``; every curve goes through this so equal prices give equal rates."""
    return -np.log(prices) / tenors


def curve_from_solution(spec: AffineModelSpec, sol: RiccatiSolution, tenors, xi=None) -> YieldCurve:
    """Curve at time 0 for time-to-maturity ``tenors`` from one solve on ``[0, T_max]``.

    Tenor ``tau`` reads the exponents at node ``T_max - tau``.
    """
    ten = _check_tenors(tenors)
    if ten[-1] > sol.T - sol.t0 + 1e-12:
        raise ValueError("tenor beyond the solution horizon")
    xi = spec.xi0 if xi is None else np.asarray(xi, dtype=float)
    logp = np.empty(ten.size)
    vol = np.empty(ten.size)
    for j, tau in enumerate(ten):
        a, b = sol.at(sol.T - tau)
        logp[j] = xi @ a + b
        v = factor_volatility(spec, a, xi)
        vol[j] = math.sqrt(float(v @ v))
    prices = np.exp(logp)
    return YieldCurve(0.0, ten, prices, rates_from_prices(prices, ten), vol, spec.content_hash)


def yield_curve(spec: AffineModelSpec, tenors, step: float, xi=None, **kw) -> YieldCurve:
    ten = _check_tenors(tenors)
    return curve_from_solution(spec, bond_riccati(spec, float(ten[-1]), step, **kw), ten, xi)


def yield_dynamics_check(spec: AffineModelSpec, bundle: PathBundle, T: float, *, min_tau: float | None = None,
                         riccati_step: float | None = None) -> float:
    """Max pathwise gap between the direct yield and its dynamic reconstruction.

    Along each path, with ``Gamma = A(s)^T Theta s(xi_s)``,
    ``v = a_Y^T Theta s(xi_s)`` (so ``eta - nu = -v``),

        R_t (T - t) = T R_0 - int r ds - int Gamma . dW + int Gamma . v ds + 1/2 int |Gamma|^2 ds

    is evaluated with left-point sums on the bundle grid and compared with
    ``-log B(t, T) / (T - t)``. Grid times closer to maturity than
    ``min_tau`` (default ``0.1 T``) are skipped: the division by ``T - t``
    amplifies the O(step) integration error without bound as ``t -> T``.
    """
    if bundle.dW is None or bundle.sqrt_lam is None:
        raise ValueError("bundle has no stored noise; simulate with record_every=1")
    min_tau = 0.1 * T if min_tau is None else min_tau
    h = bundle.step
    k_T = bundle.index_of(T)
    sol = bond_riccati(spec, T, h if riccati_step is None else riccati_step)
    xi = bundle.factors
    u_y = spec.vol_loading.T @ spec.state_price_loading
    a0, b0 = sol.at(0.0)
    acc = np.full(bundle.n_paths, -float(spec.xi0 @ a0 + b0))  # T R_0
    worst = 0.0
    for k in range(k_T + 1):
        t = bundle.grid[k]
        tau = T - t
        if tau < min_tau - 1e-12:
            break
        a, b = sol.at(t)
        direct = -(xi[:, k] @ a + b)
        worst = max(worst, float(np.max(np.abs(acc - direct))) / tau)
        if k == k_T:
            break
        s = bundle.sqrt_lam[:, k]
        gam = s * (spec.vol_loading.T @ a)
        v = s * u_y
        r = xi[:, k] @ spec.rate_loading[0] + spec.rate_loading[1]
        acc = acc - r * h - np.sum(gam * bundle.dW[:, k], axis=1) + (np.sum(gam * v, axis=1)
                                                                     + 0.5 * np.sum(gam * gam, axis=1)) * h
    return worst


# -- long rate ---------------------------------------------------------------------


def tail_limit(s0: float, s1: float, s2: float, tol: float) -> tuple[float, str]:
    """Extrapolated limit of a sequence sampled at geometrically spaced maturities.

    Uses the Aitken delta-squared transform, exact for tails of the form
    ``L + c tau^-p``. Returns ``(limit, status)`` with status ``converged``,
    ``settled`` (differences below ``tol``), ``divergent`` (limit reported
    as ``inf``) or ``oscillating``.
    """
    d1, d2 = s1 - s0, s2 - s1
    if abs(d1) <= tol * 1e-3 and abs(d2) <= tol * 1e-3:
        return s2, "settled"
    if d1 * d2 < 0 and min(abs(d1), abs(d2)) > tol:
        return math.nan, "oscillating"
    if d1 != 0 and d2 / d1 >= 1.0 and abs(d2) > tol:
        return math.copysign(math.inf, d2), "divergent"
    denom = d2 - d1
    if denom == 0 or d1 * d2 <= 0:
        return s2, "settled"
    return s2 - d2 * d2 / denom, "converged"


@dataclass(frozen=True)
class LongRateResult:
    classification: str
    first_limit: float
    second_limit: float
    diagnostics: dict

    def to_dict(self) -> dict:
        return {"classification": self.classification, "first_limit": self.first_limit,
                "second_limit": self.second_limit, "diagnostics": self.diagnostics}


def _tail_taus(T_max: float) -> list[float]:
    return [T_max / 4, T_max / 2, T_max]


def long_rate_classify(spec: AffineModelSpec, t: float = 0.0, xi=None, T_max: float = 200.0, *,
                       step: float = 1e-2, tol: float = 1e-4, sol: RiccatiSolution | None = None) -> LongRateResult:
    """Classify the long-rate behaviour from the tail of ``|Gamma_t(T)| / (T - t)`` and ``|Gamma_t(T)|^2 / (T - t)``.

    ``Infinite`` if the first limit is nonzero, ``NonDecreasing`` if only the
    second is, ``Flat`` if both vanish (all within ``tol``). The exponents
    depend on ``T - t`` only, so ``t`` enters solely through ``xi``.
    The first limit is extrapolated only when the second diverges; otherwise
    it is zero by construction.
    """
    xi = spec.xi0 if xi is None else np.asarray(xi, dtype=float)
    sol = bond_riccati(spec, T_max, step) if sol is None else sol
    taus = _tail_taus(T_max)
    g1, g2 = [], []
    for tau in taus:
        a, _ = sol.at(sol.T - tau)
        n2 = float(np.sum(factor_volatility(spec, a, xi) ** 2))
        g1.append(math.sqrt(n2) / tau)
        g2.append(n2 / tau)
    l2, st2 = tail_limit(*g2, tol)
    if st2 in ("converged", "settled"):
        # |Gamma| / tau = sqrt(|Gamma|^2 / tau / tau): a finite second limit forces the first to zero
        l1, st1 = 0.0, "implied"
    else:
        l1, st1 = tail_limit(*g1, tol)
    diag = {"t": float(t), "T_max": float(T_max), "step": float(step), "tol": float(tol), "tail_taus": taus,
            "gamma_over_tau": g1, "gamma_sq_over_tau": g2, "first_status": st1, "second_status": st2}
    if st1 == "oscillating" or (st2 == "oscillating" and abs(l1) <= tol):
        raise InconclusiveError("long-rate tail extrapolation oscillates beyond tolerance", diag)
    if abs(l1) > tol:
        cls = "Infinite"
    elif abs(l2) > tol:
        cls = "NonDecreasing"
    else:
        cls = "Flat"
    return LongRateResult(cls, l1, l2, diag)


def long_rate_coefficients(spec: AffineModelSpec, sol: RiccatiSolution, tol: float = 1e-4) -> tuple[np.ndarray, float]:
    """``(L_A, L_B)`` with ``l(xi) = -(L_A . xi + L_B)``, the extrapolated limits of ``A / tau`` and ``B / tau``."""
    taus = _tail_taus(sol.T - sol.t0)
    vals = [sol.at(sol.T - tau) for tau in taus]
    la = np.empty(spec.dim)
    for i in range(spec.dim):
        la[i], st = tail_limit(*(v[0][i] / tau for v, tau in zip(vals, taus)), tol)
        if not math.isfinite(la[i]):
            raise ArithmeticError("long rate is infinite: A(tau) / tau does not converge")
    lb, _ = tail_limit(*(v[1] / tau for v, tau in zip(vals, taus)), tol)
    if not math.isfinite(lb):
        raise ArithmeticError("long rate is infinite: B(tau) / tau does not converge")
    return la, float(lb)


def long_rate_path(spec: AffineModelSpec, bundle: PathBundle, *, T_max: float = 2000.0, step: float = 5e-2,
                   tol: float = 1e-4) -> np.ndarray:
    """Long rate ``l_t = -(L_A . xi_t + L_B)`` along every bundle path, shape ``(P, K+1)``."""
    la, lb = long_rate_coefficients(spec, bond_riccati(spec, T_max, step), tol)
    return -(bundle.factors @ la + lb)


def sweep_rows(curves: Sequence[YieldCurve]):
    for c in curves:
        for row in c.rows():
            yield row
