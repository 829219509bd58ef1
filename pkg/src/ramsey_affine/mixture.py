"""Mixtures over risk aversion: aggregate wealth and state price, y-dependent bond prices, utility reconstruction.

Per-theta optimal processes are linear in their initial values. Integrating
them against wealth-indexed weights

    Xbar_t(x) = int f(theta / x) X^theta_t dtheta,    Ybar_t(y) = int g(theta / y) Y^theta_t dtheta

gives strictly increasing, nonlinear flows with ``Xbar_0(x) = x`` and
``Ybar_0(y) = y``. The theta integral runs over a truncated range
``(theta_min, theta_max)``; the weights are divided by the truncated mass so
that the normalization stays exact, and Gauss-Legendre quadrature
discretizes it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf, erfc

from .affine_model import AffineModelSpec
from .market import PathBundle, simulate_market
from .mc_oracle import SimConfig
from .yield_curves import YieldCurve, bond_riccati, curve_from_solution, rates_from_prices

__all__ = [
    "Density",
    "MarginalUtility",
    "MixtureBundle",
    "MixtureSpec",
    "bar_processes",
    "invert_bar_X",
    "merton_family",
    "mixture_bond_price",
    "mixture_yield_curve",
    "reconstruct_marginal_utility",
    "simulate_mixture",
    "weight_x",
    "weight_y",
]


@dataclass(frozen=True)
class Density:
    """Strictly decreasing density on ``(0, inf)``: ``exponential`` (``param`` = rate) or ``half_normal`` (``param`` = scale)."""

    kind: str = "exponential"
    param: float = 1.0

    def __post_init__(self):
        if self.kind not in ("exponential", "half_normal"):
            raise ValueError(f"unknown density kind {self.kind!r}")
        if not self.param > 0:
            raise ValueError("density parameter must be positive")

    def pdf(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "exponential":
            return self.param * np.exp(-self.param * z)
        s = self.param
        return math.sqrt(2 / math.pi) / s * np.exp(-0.5 * (z / s) ** 2)

    def cdf(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "exponential":
            return -np.expm1(-self.param * z)
        return erf(z / (self.param * math.sqrt(2)))

    def sf(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "exponential":
            return np.exp(-self.param * z)
        return erfc(z / (self.param * math.sqrt(2)))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "param": self.param}


def merton_family(base: AffineModelSpec, theta: float, perp_slope=None, consumption_slope=None) -> AffineModelSpec:
    """Per-theta spec: portfolio ``a_X / theta``; orthogonal and consumption loadings shared unless sloped in theta."""
    perp = base.premium_loading_perp
    if perp_slope is not None:
        perp = perp + theta * np.asarray(perp_slope, dtype=float)
    cons = base.consumption_loading
    if consumption_slope is not None:
        a, b = consumption_slope
        cons = (cons[0] + theta * np.asarray(a, dtype=float), cons[1] + theta * float(b))
    return base.replace(portfolio_loading=base.portfolio_loading / theta, premium_loading_perp=perp,
                        consumption_loading=cons, name=f"{base.name}[theta={theta:.17g}]")


@dataclass(frozen=True, eq=False)
class MixtureSpec:
    """Risk-aversion grid, quadrature weights, weight densities and the per-theta model family.

    A single node with ``point_mass=True`` is the degenerate mixture: the
    weights are exactly ``x`` and ``y`` and the linear case is reproduced
    exactly.
    """

    base_spec: AffineModelSpec
    theta_nodes: np.ndarray
    quadrature_weights: np.ndarray
    theta_range: tuple[float, float] = (0.05, 0.95)
    density_f: Density = field(default_factory=Density)
    density_g: Density = field(default_factory=Density)
    family: Callable[[AffineModelSpec, float], AffineModelSpec] | None = None
    perp_slope: np.ndarray | None = None
    consumption_slope: tuple | None = None
    point_mass: bool = False

    def __post_init__(self):
        th = np.asarray(self.theta_nodes, dtype=float).reshape(-1)
        w = np.asarray(self.quadrature_weights, dtype=float).reshape(-1)
        lo, hi = self.theta_range
        if not 0 < lo < hi < 1:
            raise ValueError("theta range must satisfy 0 < theta_min < theta_max < 1")
        if th.size == 0 or th.shape != w.shape or np.any(np.diff(th) <= 0) or np.any(w <= 0):
            raise ValueError("theta nodes must increase strictly and weights must be positive")
        if np.any(th < lo) or np.any(th > hi):
            raise ValueError("theta nodes must lie in the theta range")
        if self.point_mass and th.size != 1:
            raise ValueError("a point-mass mixture has exactly one node")
        object.__setattr__(self, "theta_nodes", th)
        object.__setattr__(self, "quadrature_weights", w)
        object.__setattr__(self, "theta_range", (float(lo), float(hi)))
        specs = tuple(self._make_spec(t) for t in th)
        for s in specs:
            s.require_valid()
        object.__setattr__(self, "theta_specs", specs)

    def _make_spec(self, theta: float) -> AffineModelSpec:
        if self.family is not None:
            return self.family(self.base_spec, theta)
        return merton_family(self.base_spec, theta, self.perp_slope, self.consumption_slope)

    @classmethod
    def gauss_legendre(cls, base_spec: AffineModelSpec, n_nodes: int = 16, theta_range=(0.05, 0.95), **kw) -> "MixtureSpec":
        lo, hi = theta_range
        z, w = np.polynomial.legendre.leggauss(int(n_nodes))
        return cls(base_spec, 0.5 * (hi - lo) * z + 0.5 * (hi + lo), 0.5 * (hi - lo) * w, (lo, hi), **kw)

    @classmethod
    def single(cls, base_spec: AffineModelSpec, theta: float, **kw) -> "MixtureSpec":
        lo = min(0.05, theta / 2)
        hi = max(0.95, (1 + theta) / 2)
        return cls(base_spec, np.array([theta]), np.array([1.0]), (lo, hi), point_mass=True, **kw)

    @property
    def n_nodes(self) -> int:
        return self.theta_nodes.size

    def to_dict(self) -> dict:
        return {"theta_nodes": self.theta_nodes.tolist(), "quadrature_weights": self.quadrature_weights.tolist(),
                "theta_range": list(self.theta_range), "density_f": self.density_f.to_dict(),
                "density_g": self.density_g.to_dict(), "point_mass": self.point_mass,
                "perp_slope": None if self.perp_slope is None else np.asarray(self.perp_slope).tolist(),
                "consumption_slope": None if self.consumption_slope is None else
                {"a": np.asarray(self.consumption_slope[0]).tolist(), "b": float(self.consumption_slope[1])}}


def _weight(mix: MixtureSpec, dens: Density, theta, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise ValueError("weights need a positive argument")
    theta = np.asarray(theta, dtype=float)
    if mix.point_mass:
        return np.broadcast_to(x, np.broadcast(theta, x).shape).astype(float)
    lo, hi = mix.theta_range
    # mass of f(theta / x) outside the range, spread evenly over it; this
    # mass grows with x for a decreasing density, so monotonicity survives
    missing = x * (dens.cdf(lo / x) + dens.sf(hi / x))
    return dens.pdf(theta / x) + missing / (hi - lo)


def weight_x(mix: MixtureSpec, theta, x) -> np.ndarray:
    """``f(theta / x)`` plus the mass of ``f(. / x)`` outside the theta range spread uniformly over it.

    Its integral over the theta range is exactly ``x``, and it is strictly
    increasing in ``x`` for every theta in the range.
    """
    return _weight(mix, mix.density_f, theta, x)


def weight_y(mix: MixtureSpec, theta, y) -> np.ndarray:
    return _weight(mix, mix.density_g, theta, y)


def normalization_error(mix: MixtureSpec, x: float, which: str = "f") -> float:
    """``|sum_k w_k weight(theta_k, x) - x| / x``."""
    wf = weight_x if which == "f" else weight_y
    total = float(np.sum(mix.quadrature_weights * wf(mix, mix.theta_nodes, x)))
    return abs(total - x) / x


@dataclass(eq=False)
class MixtureBundle:
    mix: MixtureSpec
    bundles: tuple[PathBundle, ...]

    @property
    def grid(self) -> np.ndarray:
        return self.bundles[0].grid

    def index_of(self, t: float) -> int:
        return self.bundles[0].index_of(t)


def simulate_mixture(mix: MixtureSpec, sim: SimConfig, *, store_noise: bool = False) -> MixtureBundle:
    """One bundle per theta node, all driven by the same noise (same seed and path indices)."""
    bundles = tuple(simulate_market(s, sim, store_noise=store_noise) for s in mix.theta_specs)
    return MixtureBundle(mix, bundles)


def _stack(mb: MixtureBundle, k: int, attr: str) -> np.ndarray:
    return np.stack([getattr(b, attr)[:, k] for b in mb.bundles])


def _weighted_sum(w: np.ndarray, v: np.ndarray) -> np.ndarray:
    out = w[0] * v[0]
    for j in range(1, w.shape[0]):
        out = out + w[j] * v[j]
    return out


def _node_weights(mix: MixtureSpec, wf, arg, n_paths: int) -> np.ndarray:
    arg = np.broadcast_to(np.asarray(arg, dtype=float), (n_paths,))
    return mix.quadrature_weights[:, None] * wf(mix, mix.theta_nodes[:, None], arg[None, :])


def bar_processes(mix: MixtureSpec, y, x, mb: MixtureBundle, t: float):
    """``(Xbar_t(x), Ybar_t(y), Cbar_t(x))`` on every path; ``x`` and ``y`` may be per-path arrays."""
    k = mb.index_of(t)
    X = np.exp(_stack(mb, k, "log_wealth"))
    Y = np.exp(_stack(mb, k, "log_state_price"))
    Z = np.stack([b.zeta[:, k] for b in mb.bundles])
    p = X.shape[1]
    wx = _node_weights(mix, weight_x, x, p)
    wy = _node_weights(mix, weight_y, y, p)
    return _weighted_sum(wx, X), _weighted_sum(wy, Y), _weighted_sum(wx, Z * X)


def bar_X(mix: MixtureSpec, mb: MixtureBundle, t: float, x) -> np.ndarray:
    k = mb.index_of(t)
    X = np.exp(_stack(mb, k, "log_wealth"))
    return _weighted_sum(_node_weights(mix, weight_x, x, X.shape[1]), X)


def bar_Y(mix: MixtureSpec, mb: MixtureBundle, t: float, y) -> np.ndarray:
    k = mb.index_of(t)
    Y = np.exp(_stack(mb, k, "log_state_price"))
    return _weighted_sum(_node_weights(mix, weight_y, y, Y.shape[1]), Y)


def aggregate_martingale(mix: MixtureSpec, mb: MixtureBundle, x: float, y: float) -> np.ndarray:
    """``exp(int zeta) Xbar_t(x) Ybar_t(y)`` on the grid; needs a consumption rate shared across theta."""
    ic = np.stack([b.integrated_consumption for b in mb.bundles])
    if np.any(ic != ic[0]):
        raise ValueError("consumption rate differs across theta; the aggregate has no single compensator")
    out = np.empty((mb.bundles[0].n_paths, len(mb.grid)))
    for k, t in enumerate(mb.grid):
        bx, by, _ = bar_processes(mix, y, x, mb, t)
        out[:, k] = np.exp(ic[0][:, k]) * bx * by
    return out


def mixture_bond_price(mix: MixtureSpec, y, t: float, T: float, mb: MixtureBundle | None, per_theta_bonds) -> np.ndarray:
    """``sum_k pi_k B^theta_k(t, T)`` with ``pi_k`` proportional to ``w_k g(theta_k / y) Y^theta_k_t``.

    ``per_theta_bonds`` has shape ``(K,)`` or ``(K, P)``. At ``t = 0`` no
    bundle is needed. The result is a convex combination, so it lies in
    ``[min_k B, max_k B]``; it is formed as ``min + sum pi_k (B_k - min)``
    and capped at the max so rounding cannot leave that interval.
    """
    if T < t:
        raise ValueError("maturity before valuation time")
    b = np.asarray(per_theta_bonds, dtype=float)
    if b.shape[0] != mix.n_nodes:
        raise ValueError("need one bond price per theta node")
    if t == 0 or mb is None:
        if t != 0:
            raise ValueError("a bundle is required for t > 0")
        Y = np.ones((mix.n_nodes, 1))
    else:
        Y = np.exp(_stack(mb, mb.index_of(t), "log_state_price"))
    p = Y.shape[1]
    c = _node_weights(mix, weight_y, y, p) * Y
    pi = c / _weighted_sum(np.ones(mix.n_nodes), c)
    b2 = b.reshape(mix.n_nodes, -1)
    lo = b2.min(axis=0)
    hi = b2.max(axis=0)
    out = np.minimum(lo + _weighted_sum(pi, b2 - lo), hi)
    return out if (b.ndim == 2 or p > 1) else out[0]


def per_theta_curves(mix: MixtureSpec, tenors, step: float) -> list[YieldCurve]:
    t_max = float(np.max(tenors))
    return [curve_from_solution(s, bond_riccati(s, t_max, step), tenors) for s in mix.theta_specs]


def mixture_yield_curve(mix: MixtureSpec, y: float, tenors, step: float = 1e-3,
                        curves: Sequence[YieldCurve] | None = None) -> YieldCurve:
    """Curve at time 0 for a state-price initial value ``y``; ``vol_norms`` are mixed like prices."""
    curves = per_theta_curves(mix, tenors, step) if curves is None else curves
    prices = np.stack([c.bond_prices for c in curves])
    vols = np.stack([c.vol_norms for c in curves])
    bp = mixture_bond_price(mix, y, 0.0, 0.0, None, prices)
    bp = np.atleast_1d(bp)
    c = _node_weights(mix, weight_y, y, 1)[:, 0]
    pi = c / np.sum(c)
    ten = curves[0].tenors
    return YieldCurve(0.0, ten, bp, rates_from_prices(bp, ten), _weighted_sum(pi, vols),
                      mix.base_spec.content_hash, {"y": float(y)})


def invert_bar_X(mix: MixtureSpec, mb: MixtureBundle, t: float, z, *, rtol: float = 1e-10,
                 bracket: tuple[float, float] = (1e-12, 1e12)) -> np.ndarray:
    """Per-path ``x`` with ``Xbar_t(x) = z`` by bisection in ``log x``."""
    k = mb.index_of(t)
    X = np.exp(_stack(mb, k, "log_wealth"))
    p = X.shape[1]
    z = np.broadcast_to(np.asarray(z, dtype=float), (p,)).copy()
    if np.any(~(z > 0)):
        raise ValueError("z must be positive")

    def F(x):
        return _weighted_sum(_node_weights(mix, weight_x, x, p), X)

    guess = z / F(np.ones(p))
    lo = np.clip(guess / 2, *bracket)
    hi = np.clip(guess * 2, *bracket)
    for _ in range(200):
        bad_lo = F(lo) > z
        bad_hi = F(hi) < z
        if not (bad_lo.any() or bad_hi.any()):
            break
        lo = np.where(bad_lo, np.maximum(lo / 16, bracket[0]), lo)
        hi = np.where(bad_hi, np.minimum(hi * 16, bracket[1]), hi)
        stuck = (bad_lo & (lo <= bracket[0])) | (bad_hi & (hi >= bracket[1]))
        if stuck.any():
            j = int(np.flatnonzero(stuck)[0])
            raise ArithmeticError(f"cannot bracket z = {z[j]:.6g} on path {j}: Xbar_t over [{lo[j]:.3g}, {hi[j]:.3g}] "
                                  f"spans [{F(lo)[j]:.6g}, {F(hi)[j]:.6g}]")
    while True:
        done = hi - lo <= rtol * lo
        if done.all():
            break
        mid = np.sqrt(lo * hi)
        up = F(mid) < z
        lo = np.where(~done & up, mid, lo)
        hi = np.where(~done & ~up, mid, hi)
    return np.sqrt(lo * hi)


@dataclass(frozen=True)
class MarginalUtility:
    """Deterministic marginal utility: ``power`` ``u_x(x) = x^(-theta0)`` or ``log`` ``u_x(x) = 1/x``."""

    kind: str = "power"
    theta0: float = 0.5

    def __post_init__(self):
        if self.kind not in ("power", "log"):
            raise ValueError(f"unknown utility kind {self.kind!r}")
        if self.kind == "power" and not 0 < self.theta0 < 1:
            raise ValueError("theta0 must lie in (0, 1)")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return 1.0 / x if self.kind == "log" else x ** (-self.theta0)


def reconstruct_marginal_utility(mix: MixtureSpec, mb: MixtureBundle, t: float, x,
                                 base_u: MarginalUtility | None = None) -> np.ndarray:
    """``U_x(t, x) = Ybar_t(u_x(Xbar_t^{-1}(x)))`` on every path."""
    base_u = MarginalUtility() if base_u is None else base_u
    return bar_Y(mix, mb, t, base_u(invert_bar_X(mix, mb, t, x)))


def mixture_from_config(base: AffineModelSpec, cfg: dict) -> MixtureSpec:
    """Build a mixture from a JSON-style dict (see the README for keys)."""
    known = {"n_nodes", "theta_range", "density_f", "density_g", "family", "perp_slope", "consumption_slope",
             "point_mass_theta"}
    unknown = sorted(set(cfg) - known)
    if unknown:
        raise ValueError(f"mixture config has unknown fields: {', '.join(unknown)}")
    if cfg.get("family", "merton") != "merton":
        raise ValueError("only the 'merton' theta family is available from config")

    def dens(d):
        return Density(**d) if d else Density()

    cs = cfg.get("consumption_slope")
    kw = dict(density_f=dens(cfg.get("density_f")), density_g=dens(cfg.get("density_g")),
              perp_slope=None if cfg.get("perp_slope") is None else np.asarray(cfg["perp_slope"], dtype=float),
              consumption_slope=None if cs is None else (np.asarray(cs["a"], dtype=float), float(cs["b"])))
    if cfg.get("point_mass_theta") is not None:
        return MixtureSpec.single(base, float(cfg["point_mass_theta"]), **kw)
    return MixtureSpec.gauss_legendre(base, int(cfg.get("n_nodes", 16)), tuple(cfg.get("theta_range", (0.05, 0.95))), **kw)
