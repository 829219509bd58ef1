"""Monte Carlo verification engine.

Independent of the Riccati machinery: factor paths come from a
full-truncation Euler scheme driven by counter-based (Philox) normals, and
expectations are plain sample means with CLT confidence intervals.

Noise layout: paths are grouped in fixed blocks of ``BLOCK`` consecutive
stream indices; block ``b`` draws from ``Philox(key=(seed, b))`` in
``(lane, substep, factor)`` order. A path's increments therefore depend only
on ``(seed, path index)``, never on chunking or on how many workers run.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np

from .affine_model import AffineModelSpec

__all__ = [
    "BLOCK",
    "DriftTest",
    "Estimate",
    "FactorPaths",
    "PowerConstraintCheck",
    "SimConfig",
    "brownian_increments",
    "estimate",
    "euler_factor_paths",
    "martingale_drift_test",
    "mc_bond_price",
    "mc_power_constraint_check",
    "simulate_factors",
]

BLOCK = 64
SCHEMES = ("EulerFullTruncation",)
Z95 = 1.959963984540054


@dataclass(frozen=True)
class SimConfig:
    n_paths: int
    step: float
    horizon: float
    seed: int
    scheme: str = "EulerFullTruncation"
    antithetic: bool = False
    # each step's increment is the sum of `substeps` finer normals, so a run at
    # (step, substeps=2) sees the same Brownian path as (step / 2, substeps=1)
    substeps: int = 1
    record_every: int = 1
    chunk_paths: int = 4096

    def __post_init__(self):
        if int(self.n_paths) < 2:
            raise ValueError("n_paths must be >= 2")
        if not (self.step > 0 and self.horizon > 0):
            raise ValueError("step and horizon must be positive")
        m = round(self.horizon / self.step)
        if m < 1 or abs(m * self.step - self.horizon) > 1e-12 * max(1.0, self.horizon):
            raise ValueError(f"step {self.step} does not divide horizon {self.horizon}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; supported: {SCHEMES}")
        if self.antithetic and self.n_paths % 2:
            raise ValueError("antithetic sampling needs an even n_paths")
        if self.substeps < 1 or self.record_every < 1:
            raise ValueError("substeps and record_every must be >= 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        chunk = max(BLOCK, int(math.ceil(self.chunk_paths / BLOCK)) * BLOCK)
        object.__setattr__(self, "chunk_paths", chunk)
        object.__setattr__(self, "n_paths", int(self.n_paths))
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.step))

    @property
    def grid(self) -> np.ndarray:
        m = self.n_steps
        g = self.horizon * (np.arange(m + 1) / m)
        g[-1] = self.horizon
        return g

    @property
    def record_index(self) -> np.ndarray:
        idx = np.arange(0, self.n_steps + 1, self.record_every)
        if idx[-1] != self.n_steps:
            idx = np.append(idx, self.n_steps)
        return idx

    def index_of(self, t: float) -> int:
        k = round(t / self.step)
        if abs(k * self.step - t) > 1e-9 * max(1.0, abs(t)) or not 0 <= k <= self.n_steps:
            raise ValueError(f"time {t} is not on the simulation grid (step {self.step}, horizon {self.horizon})")
        return int(k)

    def replace(self, **kw) -> "SimConfig":
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d.update(kw)
        return SimConfig(**d)

    def to_dict(self) -> dict:
        return {f: getattr(self, f) for f in self.__dataclass_fields__}


@dataclass(frozen=True)
class Estimate:
    mean: float
    std_error: float
    n: int

    @property
    def ci95(self) -> tuple[float, float]:
        return (self.mean - Z95 * self.std_error, self.mean + Z95 * self.std_error)

    def contains(self, value: float, n_se: float = Z95) -> bool:
        return abs(value - self.mean) <= n_se * self.std_error

    def to_record(self, name: str, *, n_paths: int | None = None, seed: int | None = None,
                  verdict: str | None = None, **extra) -> dict:
        rec = {"name": name, "mean": self.mean, "std_error": self.std_error, "ci95": list(self.ci95),
               "n_paths": self.n if n_paths is None else n_paths, "seed": seed, "verdict": verdict}
        rec.update(extra)
        return rec


def estimate(samples, antithetic: bool = False) -> Estimate:
    """Sample mean and standard error; antithetic pairs are averaged first."""
    x = np.asarray(samples, dtype=float)
    if antithetic:
        x = 0.5 * (x[0::2] + x[1::2])
    n = x.shape[0]
    mean = float(np.mean(x))
    se = float(np.std(x, ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
    return Estimate(mean, se, n)


# -- noise ------------------------------------------------------------------


def _block_normals(seed: int, block: int, n_sub: int, dim: int) -> np.ndarray:
    gen = np.random.Generator(np.random.Philox(key=np.array([seed, block], dtype=np.uint64)))
    return gen.standard_normal((BLOCK, n_sub, dim))


def brownian_increments(sim: SimConfig, path_ids, dim: int) -> np.ndarray:
    """Brownian increments ``(len(path_ids), n_steps, dim)`` for the given global path indices."""
    path_ids = np.asarray(path_ids, dtype=np.int64)
    if sim.antithetic:
        streams, sign = path_ids // 2, np.where(path_ids % 2 == 0, 1.0, -1.0)
    else:
        streams, sign = path_ids, np.ones(path_ids.shape[0])
    m, sub = sim.n_steps, sim.substeps
    out = np.empty((path_ids.shape[0], m, dim))
    blocks = streams // BLOCK
    scale = math.sqrt(sim.step / sub)
    for b in np.unique(blocks):
        z = _block_normals(sim.seed, int(b), m * sub, dim)
        sel = np.flatnonzero(blocks == b)
        zz = z[streams[sel] % BLOCK]
        if sub > 1:
            zz = zz.reshape(len(sel), m, sub, dim).sum(axis=2)
        out[sel] = zz * (scale * sign[sel])[:, None, None]
    return out


def _chunks(sim: SimConfig):
    for start in range(0, sim.n_paths, sim.chunk_paths):
        yield np.arange(start, min(start + sim.chunk_paths, sim.n_paths))


# -- factor scheme ------------------------------------------------------------


@dataclass(eq=False)
class FactorPaths:
    grid: np.ndarray
    xi: np.ndarray         # (P, M+1, N)
    dW: np.ndarray         # (P, M, N)
    sqrt_lam: np.ndarray   # (P, M, N) truncated sqrt eigenvariances at the left node
    clip_count: int = 0


@numba.njit(cache=True)
def _euler_kernel(xi0, R, d0, Th, rho, lam0, dW, h):
    p, m, n = dW.shape
    xi = np.empty((p, m + 1, n))
    sq = np.empty((p, m, n))
    cur = np.empty(n)
    nxt = np.empty(n)
    clips = 0
    for q in range(p):
        for i in range(n):
            cur[i] = xi0[i]
            xi[q, 0, i] = xi0[i]
        for k in range(m):
            for i in range(n):
                lam = lam0[i]
                for j in range(n):
                    lam += rho[i, j] * cur[j]
                if lam < 0.0:
                    clips += 1
                    lam = 0.0
                sq[q, k, i] = math.sqrt(lam)
            for i in range(n):
                mu = d0[i]
                for j in range(n):
                    mu += R[i, j] * cur[j]
                x = cur[i] + mu * h
                for j in range(n):
                    x += Th[i, j] * (sq[q, k, j] * dW[q, k, j])
                nxt[i] = x
            for i in range(n):
                cur[i] = nxt[i]
                xi[q, k + 1, i] = nxt[i]
    return xi, sq, clips


def euler_factor_paths(spec: AffineModelSpec, sim: SimConfig, dW: np.ndarray) -> FactorPaths:
    """Full-truncation Euler: ``xi += (R xi + d) dt + Theta diag(sqrt(max(lam, 0))) dW``.

    Each path is stepped independently with fixed summation order, so results
    do not depend on how paths are chunked.
    """
    xi, sq, clips = _euler_kernel(
        np.ascontiguousarray(spec.xi0), np.ascontiguousarray(spec.drift_matrix),
        np.ascontiguousarray(spec.drift_intercept), np.ascontiguousarray(spec.vol_loading),
        np.ascontiguousarray(spec.eigen_loadings), np.ascontiguousarray(spec.eigen_intercepts),
        np.ascontiguousarray(dW), float(sim.step))
    return FactorPaths(sim.grid, xi, dW, sq, int(clips))


@numba.njit(cache=True)
def _discount_kernel(xi0, R, d0, Th, rho, lam0, dW, h, a_r, b_r, u_y, a_z, b_z, rec):
    """Euler factor step fused with ``log Y`` and ``int zeta`` accumulation; returns both at ``rec`` nodes."""
    p, m, n = dW.shape
    nr = rec.shape[0]
    logy = np.empty((p, nr))
    izeta = np.empty((p, nr))
    cur = np.empty(n)
    nxt = np.empty(n)
    sq = np.empty(n)
    for q in range(p):
        for i in range(n):
            cur[i] = xi0[i]
        ly = 0.0
        iz = 0.0
        j_rec = 0
        if rec[0] == 0:
            logy[q, 0] = 0.0
            izeta[q, 0] = 0.0
            j_rec = 1
        for k in range(m):
            r = b_r
            z = b_z
            for i in range(n):
                r += a_r[i] * cur[i]
                z += a_z[i] * cur[i]
                lam = lam0[i]
                for j in range(n):
                    lam += rho[i, j] * cur[j]
                sq[i] = math.sqrt(lam) if lam > 0.0 else 0.0
            v2 = 0.0
            vdw = 0.0
            for i in range(n):
                v = u_y[i] * sq[i]
                v2 += v * v
                vdw += v * dW[q, k, i]
            ly += (-r - 0.5 * v2) * h + vdw
            iz += z * h
            for i in range(n):
                mu = d0[i]
                for j in range(n):
                    mu += R[i, j] * cur[j]
                x = cur[i] + mu * h
                for j in range(n):
                    x += Th[i, j] * (sq[j] * dW[q, k, j])
                nxt[i] = x
            for i in range(n):
                cur[i] = nxt[i]
            while j_rec < nr and rec[j_rec] == k + 1:
                logy[q, j_rec] = ly
                izeta[q, j_rec] = iz
                j_rec += 1
    return logy, izeta


def discount_paths(spec: AffineModelSpec, sim: SimConfig, dW: np.ndarray, rec, loading=None):
    """``(log Y, int zeta)`` at grid indices ``rec`` without storing factor paths (same scheme as the stored route)."""
    a_y = spec.state_price_loading if loading is None else np.asarray(loading, dtype=float)
    c = np.ascontiguousarray
    return _discount_kernel(
        c(spec.xi0), c(spec.drift_matrix), c(spec.drift_intercept), c(spec.vol_loading), c(spec.eigen_loadings),
        c(spec.eigen_intercepts), c(dW), float(sim.step), c(spec.rate_loading[0]), float(spec.rate_loading[1]),
        c(spec.vol_loading.T @ a_y), c(spec.consumption_loading[0]), float(spec.consumption_loading[1]),
        np.asarray(rec, dtype=np.int64))


def simulate_factors(spec: AffineModelSpec, sim: SimConfig) -> FactorPaths:
    """All factor paths plus the stored noise (reused by the market simulators)."""
    spec.require_valid()
    parts = [euler_factor_paths(spec, sim, brownian_increments(sim, ids, spec.dim)) for ids in _chunks(sim)]
    if len(parts) == 1:
        return parts[0]
    return FactorPaths(
        sim.grid,
        np.concatenate([q.xi for q in parts]),
        np.concatenate([q.dW for q in parts]),
        np.concatenate([q.sqrt_lam for q in parts]),
        sum(q.clip_count for q in parts),
    )


# -- log-exponential processes on stored paths ---------------------------------


def _sum_last(x: np.ndarray) -> np.ndarray:
    out = x[..., 0].copy()
    for j in range(1, x.shape[-1]):
        out += x[..., j]
    return out


def loading_volatility(spec: AffineModelSpec, loading, sqrt_lam: np.ndarray) -> np.ndarray:
    """``a^T Theta s(xi_k)`` on every stored step, shape ``(P, M, N)``."""
    u = spec.vol_loading.T @ np.asarray(loading, dtype=float)
    return sqrt_lam * u


def affine_on_steps(xi: np.ndarray, a: np.ndarray, b: float) -> np.ndarray:
    """``a . xi_k + b`` at the left node of every step, shape ``(P, M)``."""
    out = np.full(xi.shape[:1] + (xi.shape[1] - 1,), float(b))
    for j in range(a.shape[0]):
        if a[j] != 0.0:
            out = out + a[j] * xi[:, :-1, j]
    return out


def cumulate(increments: np.ndarray) -> np.ndarray:
    """Running sums with a leading zero, ``(P, M) -> (P, M+1)``."""
    out = np.zeros((increments.shape[0], increments.shape[1] + 1))
    np.cumsum(increments, axis=1, out=out[:, 1:])
    return out


def log_state_price_increments(spec: AffineModelSpec, fp: FactorPaths, step: float, loading=None) -> np.ndarray:
    """Euler increments of ``log Y``: ``(-r - 1/2 |vol|^2) dt + vol . dW`` with ``vol = a_Y^T Theta s``."""
    a = spec.state_price_loading if loading is None else np.asarray(loading, dtype=float)
    vol = loading_volatility(spec, a, fp.sqrt_lam)
    r = affine_on_steps(fp.xi, *spec.rate_loading)
    return (-r - 0.5 * _sum_last(vol * vol)) * step + _sum_last(vol * fp.dW)


# -- estimators -------------------------------------------------------------------


def mc_bond_price(spec: AffineModelSpec, sim: SimConfig, T) -> Estimate | list[Estimate]:
    """Estimate ``E[Y*_T]`` (``Y*_0 = 1``) by simulation; ``T`` may be a scalar or a sequence of tenors."""
    spec.require_valid()
    tenors = np.atleast_1d(np.asarray(T, dtype=float))
    if np.max(tenors) > sim.horizon + 1e-12:
        raise ValueError(f"tenor {np.max(tenors)} beyond simulation horizon {sim.horizon}")
    idx = np.array([sim.index_of(t) for t in tenors])
    values = np.empty((sim.n_paths, len(idx)))
    for ids in _chunks(sim):
        logy, _ = discount_paths(spec, sim, brownian_increments(sim, ids, spec.dim), idx)
        values[ids] = np.exp(logy)
    ests = [estimate(values[:, j], sim.antithetic) for j in range(len(idx))]
    return ests[0] if np.ndim(T) == 0 else ests


@dataclass(frozen=True)
class DriftTest:
    drift: Estimate
    passed: bool
    bucket_drifts: tuple[Estimate, ...] = field(default=())

    @property
    def verdict(self) -> str:
        return "pass" if self.passed else "fail"


def martingale_drift_test(paths, times, *, antithetic: bool = False, level: float = 0.95) -> DriftTest:
    """Test a candidate martingale for zero drift.

    Increments of ``paths`` (shape ``(P, K+1)`` on ``times``) are regressed on
    the bucket lengths through the origin, pooled over paths and buckets. The
    standard error uses per-bucket sample variances, which is valid under the
    null because martingale increments are uncorrelated. Verdict is pass iff
    zero lies in the two-sided ``level`` confidence interval.
    """
    m = np.asarray(paths, dtype=float)
    t = np.asarray(times, dtype=float)
    if m.ndim != 2 or m.shape[1] != t.shape[0] or m.shape[1] < 2:
        raise ValueError("paths must have shape (n_paths, len(times)) with at least two times")
    if antithetic:
        m = 0.5 * (m[0::2] + m[1::2])
    z = _z(level)
    dm = np.diff(m, axis=1)
    dt = np.diff(t)
    p = dm.shape[0]
    mean_inc = dm.mean(axis=0)
    var_inc = dm.var(axis=0, ddof=1) if p > 1 else np.zeros_like(mean_inc)
    s2 = float(np.sum(dt * dt))
    mu = float(np.sum(dt * mean_inc) / s2)
    se = float(math.sqrt(np.sum(dt * dt * var_inc) / p) / s2)
    buckets = tuple(Estimate(float(mean_inc[k] / dt[k]), float(math.sqrt(var_inc[k] / p) / dt[k]), p)
                    for k in range(dt.shape[0]))
    return DriftTest(Estimate(mu, se, p), abs(mu) <= z * se, buckets)


def _z(level: float) -> float:
    if abs(level - 0.95) < 1e-12:
        return Z95
    from scipy.stats import norm

    return float(norm.ppf(0.5 + level / 2))


@dataclass(frozen=True)
class PowerConstraintCheck:
    estimate: Estimate
    target: float
    passed: bool
    heavy_tail: bool

    @property
    def verdict(self) -> str:
        return "pass" if self.passed else "fail"


def mc_power_constraint_check(spec: AffineModelSpec, sim: SimConfig, theta: float, T_H: float,
                              *, target: float | None = None, riccati_step: float = 1e-3,
                              n_se: float = 3.0) -> PowerConstraintCheck:
    """Estimate ``E[S_{T_H} Y_{T_H}^{1 - 1/theta}]`` and compare with the Riccati value at ``t = 0``.

    ``S = exp(int zeta ds)``. Warns when the relative standard error exceeds
    10%, which happens for small ``theta`` (large negative power of ``Y``).
    """
    if not 0 < theta < 1:
        raise ValueError("theta must lie in (0, 1)")
    spec.require_valid()
    k_h = sim.index_of(T_H)
    p = 1.0 - 1.0 / theta
    values = np.empty(sim.n_paths)
    for ids in _chunks(sim):
        logy, izeta = discount_paths(spec, sim, brownian_increments(sim, ids, spec.dim), [k_h])
        values[ids] = np.exp(izeta[:, 0] + p * logy[:, 0])
    est = estimate(values, sim.antithetic)
    if target is None:
        from .market import solve_backward_power_constraint

        sol = solve_backward_power_constraint(spec, theta, T_H, riccati_step)
        target = float(np.exp(sol.riccati.A[0] @ spec.xi0 + sol.riccati.B[0]))
    heavy = est.std_error > 0.1 * abs(est.mean)
    if heavy:
        warnings.warn(f"heavy-tailed power-constraint integrand: std_error/mean = "
                      f"{est.std_error / abs(est.mean):.2%}; increase n_paths", RuntimeWarning, stacklevel=2)
    return PowerConstraintCheck(est, float(target), bool(abs(est.mean - target) <= n_se * est.std_error), heavy)


def tenor_indices(sim: SimConfig, tenors: Sequence[float]) -> list[int]:
    return [sim.index_of(t) for t in tenors]
