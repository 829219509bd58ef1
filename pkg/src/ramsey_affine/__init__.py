"""Affine factor markets: optimal state prices, marginal-utility yield curves and risk-aversion mixtures."""

from .affine_model import AffineModelSpec, InvalidSpecError, ValidationReport, load_spec, validate_spec
from .riccati import (
    AffineDriftSpec,
    RiccatiBlowupError,
    RiccatiSolution,
    solve_exponential_moment,
    solve_riccati_backward,
)
from .mc_oracle import Estimate, SimConfig
from .market import PathBundle, PowerConstraintSolution, simulate_market, solve_backward_power_constraint
from .yield_curves import YieldCurve, bond_riccati, long_rate_classify, yield_curve
from .mixture import MixtureSpec, simulate_mixture

__version__ = "0.1.0"

__all__ = [
    "AffineDriftSpec",
    "AffineModelSpec",
    "Estimate",
    "InvalidSpecError",
    "MixtureSpec",
    "PathBundle",
    "PowerConstraintSolution",
    "RiccatiBlowupError",
    "RiccatiSolution",
    "SimConfig",
    "ValidationReport",
    "YieldCurve",
    "bond_riccati",
    "load_spec",
    "long_rate_classify",
    "simulate_market",
    "simulate_mixture",
    "solve_backward_power_constraint",
    "solve_exponential_moment",
    "solve_riccati_backward",
    "validate_spec",
    "yield_curve",
]
