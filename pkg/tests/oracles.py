"""Closed-form bond exponents for the one-factor fixtures, derived independently of the solver.

Under the pricing measure the state-price volatility ``a_y sigma`` (Gaussian) or
``a_y sigma sqrt(r)`` (square root) shifts the drift of ``r``. The bond price
``exp(A(tau) r + B(tau))`` then solves linear (Gaussian) or scalar Riccati
(square-root) ODEs whose solutions are the standard ones below.
"""

import math


def vasicek_bond(tau, kappa, m, sigma, a_y):
    """``dr = kappa (m - r) dt + sigma dW``; pricing mean ``m + sigma^2 a_y / kappa``."""
    mq = m + sigma * sigma * a_y / kappa
    av = -math.expm1(-kappa * tau) / kappa
    b = (mq - sigma**2 / (2 * kappa**2)) * (av - tau) - sigma**2 * av * av / (4 * kappa)
    return -av, b


def cir_bond(tau, kappa, m, sigma, a_y):
    """``dr = kappa (m - r) dt + sigma sqrt(r) dW``; pricing speed ``kappa - sigma^2 a_y``."""
    kq = kappa - sigma * sigma * a_y
    g = math.sqrt(kq * kq + 2 * sigma * sigma)
    e = math.expm1(g * tau)
    den = (g + kq) * e + 2 * g
    return -2 * e / den, (2 * kappa * m / sigma**2) * (math.log(2 * g / den) + 0.5 * (kq + g) * tau)


def vasicek_oracle(spec):
    kappa = -spec.drift_matrix[0, 0]
    return lambda tau: vasicek_bond(tau, kappa, spec.drift_intercept[0] / kappa, spec.vol_loading[0, 0],
                                    -spec.premium_loading_R[0] + spec.premium_loading_perp[0])


def cir_oracle(spec):
    kappa = -spec.drift_matrix[0, 0]
    return lambda tau: cir_bond(tau, kappa, spec.drift_intercept[0] / kappa, spec.vol_loading[0, 0],
                                -spec.premium_loading_R[0] + spec.premium_loading_perp[0])


def rel_err(x, ref):
    return abs(x - ref) / abs(ref)
