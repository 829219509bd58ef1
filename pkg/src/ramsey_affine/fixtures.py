"""Reference models with known closed forms or known qualitative behaviour.

Each builder returns a valid :class:`AffineModelSpec`; ``FIXTURES`` maps the
names used by the bundled config files to the builders.
"""

from __future__ import annotations

from .affine_model import AffineModelSpec

__all__ = [
    "FIXTURES",
    "backward_two_factor",
    "cir",
    "mixture_two_factor",
    "nondecreasing",
    "vasicek",
    "vasicek_no_mr",
    "zero_vol",
]


def vasicek(kappa: float = 0.5, m: float = 0.03, sigma: float = 0.01, premium: float = 5.0,
            portfolio: float = 10.0, zeta: float = 0.03, xi0: float = 0.03) -> AffineModelSpec:
    """``dr = kappa (m - r) dt + sigma dW``, market price of risk ``premium * sigma``."""
    return AffineModelSpec(
        dim=1, drift_matrix=[[-kappa]], drift_intercept=[kappa * m], vol_loading=[[sigma]],
        eigen_intercepts=[1.0], eigen_loadings=[[0.0]], admissible_coords=(1,),
        rate_loading=([1.0], 0.0), consumption_loading=([0.0], zeta),
        premium_loading_R=[premium], premium_loading_perp=[0.0], portfolio_loading=[portfolio],
        xi0=[xi0], name="vasicek")


def cir(kappa: float = 0.5, m: float = 0.04, sigma: float = 0.1, premium: float = 2.0,
        portfolio: float = 1.0, zeta: float = 0.03, xi0: float = 0.04) -> AffineModelSpec:
    """``dr = kappa (m - r) dt + sigma sqrt(r) dW``, market price of risk ``premium * sigma * sqrt(r)``."""
    return AffineModelSpec(
        dim=1, drift_matrix=[[-kappa]], drift_intercept=[kappa * m], vol_loading=[[sigma]],
        eigen_intercepts=[0.0], eigen_loadings=[[1.0]], admissible_coords=(1,),
        rate_loading=([1.0], 0.0), consumption_loading=([0.0], zeta),
        premium_loading_R=[premium], premium_loading_perp=[0.0], portfolio_loading=[portfolio],
        xi0=[xi0], name="cir")


def zero_vol(rate: float = 0.02) -> AffineModelSpec:
    return AffineModelSpec(
        dim=1, drift_matrix=[[0.0]], drift_intercept=[0.0], vol_loading=[[0.0]],
        eigen_intercepts=[0.0], eigen_loadings=[[0.0]], admissible_coords=(1,),
        rate_loading=([0.0], rate), consumption_loading=([0.0], 0.0),
        premium_loading_R=[0.0], premium_loading_perp=[0.0], portfolio_loading=[0.0],
        xi0=[0.0], name="zero_vol")


def vasicek_no_mr(sigma: float = 0.01, xi0: float = 0.03) -> AffineModelSpec:
    """Driftless Gaussian short rate: bond volatility grows linearly in maturity."""
    return AffineModelSpec(
        dim=1, drift_matrix=[[0.0]], drift_intercept=[0.0], vol_loading=[[sigma]],
        eigen_intercepts=[1.0], eigen_loadings=[[0.0]], admissible_coords=(1,),
        rate_loading=([1.0], 0.0), consumption_loading=([0.0], 0.0),
        premium_loading_R=[0.0], premium_loading_perp=[0.0], portfolio_loading=[0.0],
        xi0=[xi0], name="vasicek_no_mr")


def nondecreasing(sigma: float = 0.3, c: float = 0.2, b_r: float = 0.01, xi0=(1.0, 0.02)) -> AffineModelSpec:
    """Driftless square-root factor ``xi1`` feeding a volatility-free rate factor ``d xi2 = c xi1 dt``.

    ``r = xi2 + b_r``. The bond exponent on ``xi1`` grows like ``sqrt(tau)``,
    so ``|Gamma|^2 / tau -> 2 c xi1 > 0`` while ``|Gamma| / tau -> 0``; the
    long rate is ``xi2`` plus a constant, non-decreasing because ``xi1 >= 0``.
    Any drift or variance intercept on ``xi1`` would make the long rate
    infinite, so ``xi1`` is absorbed at zero; ``xi1(0)`` is large against
    ``sigma^2 t`` so paths stay clear of zero over a few years.
    """
    return AffineModelSpec(
        dim=2, drift_matrix=[[0.0, 0.0], [c, 0.0]], drift_intercept=[0.0, 0.0],
        vol_loading=[[sigma, 0.0], [0.0, 0.0]], eigen_intercepts=[0.0, 0.0],
        eigen_loadings=[[1.0, 0.0], [0.0, 0.0]], admissible_coords=(1, 2),
        rate_loading=([0.0, 1.0], b_r), consumption_loading=([0.0, 0.0], 0.0),
        premium_loading_R=[0.0, 0.0], premium_loading_perp=[0.0, 0.0], portfolio_loading=[0.0, 0.0],
        xi0=list(xi0), name="nondecreasing")


def backward_two_factor(perp: float = 0.0) -> AffineModelSpec:
    """Hedgeable square-root rate factor (E = {1}) plus an unhedgeable Gaussian factor.

    With ``perp = 0`` the orthogonal state-price direction vanishes, which is
    what a time-constant backward power constraint requires.
    """
    return AffineModelSpec(
        dim=2, drift_matrix=[[-0.5, 0.0], [0.0, -1.0]], drift_intercept=[0.02, 0.0],
        vol_loading=[[0.1, 0.0], [0.0, 0.2]], eigen_intercepts=[0.0, 1.0],
        eigen_loadings=[[1.0, 0.0], [0.0, 0.0]], admissible_coords=(1,),
        rate_loading=([1.0, 0.0], 0.0), consumption_loading=([0.5, 0.0], 0.02),
        premium_loading_R=[2.0, 0.0], premium_loading_perp=[0.0, perp], portfolio_loading=[4.0, 0.0],
        xi0=[0.04, 0.0], name="backward_two_factor" if perp == 0 else "backward_two_factor_perp")


def mixture_two_factor() -> AffineModelSpec:
    """Two Gaussian rate factors: ``xi1`` hedgeable (E = {1}), ``xi2`` unhedgeable and priced by ``premium_loading_perp``."""
    return AffineModelSpec(
        dim=2, drift_matrix=[[-0.5, 0.0], [0.0, -0.3]], drift_intercept=[0.5 * 0.02, 0.3 * 0.01],
        vol_loading=[[0.01, 0.0], [0.0, 0.01]], eigen_intercepts=[1.0, 1.0],
        eigen_loadings=[[0.0, 0.0], [0.0, 0.0]], admissible_coords=(1,),
        rate_loading=([1.0, 1.0], 0.0), consumption_loading=([0.0, 0.0], 0.03),
        premium_loading_R=[20.0, 0.0], premium_loading_perp=[0.0, -10.0], portfolio_loading=[10.0, 0.0],
        xi0=[0.02, 0.01], name="mixture_two_factor")


FIXTURES = {
    "vasicek": vasicek,
    "cir": cir,
    "zero_vol": zero_vol,
    "vasicek_no_mr": vasicek_no_mr,
    "nondecreasing": nondecreasing,
    "backward_two_factor": backward_two_factor,
    "mixture_two_factor": mixture_two_factor,
}
