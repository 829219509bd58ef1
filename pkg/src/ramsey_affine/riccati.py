"""Exponential-affine functionals of the factor and their Riccati exponents.

For a constant loading ``a`` the process ``a . xi + b`` decomposes as

    d(a . xi + b) = a^T Theta s(xi) dW - 1/2 q(a, xi) dt + f(a, xi) dt

with ``q(a, xi) = grad_q(a) . xi + q0(a)`` and ``f`` affine in ``xi``. A process
``X = a_t . xi_t + b_t + int delta(xi) ds`` is the log of an exponential local
martingale iff ``(a_t, b_t)`` solves the backward Riccati system

    da/dt + drift_matrix^T a + 1/2 grad_q(a) + delta_grad = 0
    db/dt + a . drift_intercept + 1/2 q0(a) + delta_0    = 0

which this module integrates with fixed-step RK4.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .affine_model import AffineModelSpec

__all__ = [
    "AffineDriftSpec",
    "RiccatiBlowupError",
    "RiccatiResidualError",
    "RiccatiSolution",
    "affine_drift_f",
    "exp_affine_expectation",
    "integrate_forward",
    "martingale_residual",
    "quadratic_variation_coeffs",
    "solve_exponential_moment",
    "solve_riccati_backward",
]

DEFAULT_BLOWUP_BOUND = 1e6
DEFAULT_RESIDUAL_TOL = 1e-6


class RiccatiBlowupError(ArithmeticError):
    """The Riccati loading left the explosion bound: the exponential moment does not exist."""

    def __init__(self, t: float, bound: float):
        self.t = t
        self.bound = bound
        super().__init__(f"Riccati solution exceeded |A| <= {bound:g} at t = {t:.6g}")


class RiccatiResidualError(ArithmeticError):
    pass


@dataclass(frozen=True, eq=False)
class AffineDriftSpec:
    """Affine running integrand ``delta(xi) = grad . xi + intercept``."""

    grad: np.ndarray
    intercept: float

    def __post_init__(self):
        g = np.array(self.grad, dtype=float).reshape(-1)
        if not (np.all(np.isfinite(g)) and math.isfinite(self.intercept)):
            raise ValueError("AffineDriftSpec entries must be finite")
        g.flags.writeable = False
        object.__setattr__(self, "grad", g)
        object.__setattr__(self, "intercept", float(self.intercept))

    @classmethod
    def zero(cls, n: int) -> "AffineDriftSpec":
        return cls(np.zeros(n), 0.0)

    def __add__(self, other: "AffineDriftSpec") -> "AffineDriftSpec":
        return AffineDriftSpec(self.grad + other.grad, self.intercept + other.intercept)

    def __neg__(self) -> "AffineDriftSpec":
        return AffineDriftSpec(-self.grad, -self.intercept)

    def __sub__(self, other: "AffineDriftSpec") -> "AffineDriftSpec":
        return self + (-other)

    def scaled(self, c: float) -> "AffineDriftSpec":
        return AffineDriftSpec(c * self.grad, c * self.intercept)

    def __call__(self, xi) -> np.ndarray:
        return np.asarray(xi, dtype=float) @ self.grad + self.intercept


def quadratic_variation_coeffs(spec: AffineModelSpec, a) -> tuple[np.ndarray, float]:
    """``(grad_q, q0)`` with ``||a^T Theta s(xi)||^2 = grad_q . xi + q0``."""
    u2 = (spec.vol_loading.T @ np.asarray(a, dtype=float)) ** 2
    return spec.eigen_loadings.T @ u2, float(spec.eigen_intercepts @ u2)


def affine_drift_f(spec: AffineModelSpec, a, a_dot=None, b_dot: float = 0.0) -> AffineDriftSpec:
    """Gradient and intercept of ``f(a, xi)``, the drift of ``a . xi + b`` plus half its quadratic variation."""
    a = np.asarray(a, dtype=float)
    a_dot = np.zeros(spec.dim) if a_dot is None else np.asarray(a_dot, dtype=float)
    grad_q, q0 = quadratic_variation_coeffs(spec, a)
    grad = a_dot + spec.drift_matrix.T @ a + 0.5 * grad_q
    intercept = b_dot + float(a @ spec.drift_intercept) + 0.5 * q0
    return AffineDriftSpec(grad, intercept)


@numba.njit(cache=True)
def _rhs(a, mlin_t, rho_t, theta_t, dgrad, d0, lam0, dint, out):
    # returns dB/dt, writes dA/dt into out
    n = a.shape[0]
    u2 = np.empty(n)
    for i in range(n):
        s = 0.0
        for j in range(n):
            s += theta_t[i, j] * a[j]
        u2[i] = s * s
    for k in range(n):
        s = 0.0
        for j in range(n):
            s += mlin_t[k, j] * a[j]
        g = 0.0
        for i in range(n):
            g += rho_t[k, i] * u2[i]
        out[k] = -(s + 0.5 * g + dgrad[k])
    sb = 0.0
    q0 = 0.0
    for j in range(n):
        sb += a[j] * d0[j]
        q0 += lam0[j] * u2[j]
    return -(sb + 0.5 * q0 + dint)


@numba.njit(cache=True)
def _rk4(a0, b0, h, n_steps, mlin_t, rho_t, theta_t, dgrad, d0, lam0, dint, bound):
    n = a0.shape[0]
    A = np.empty((n_steps + 1, n))
    B = np.empty(n_steps + 1)
    A[0, :] = a0
    B[0] = b0
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    a = a0.copy()
    b = b0
    for s in range(n_steps):
        kb1 = _rhs(a, mlin_t, rho_t, theta_t, dgrad, d0, lam0, dint, k1)
        for i in range(n):
            tmp[i] = a[i] + 0.5 * h * k1[i]
        kb2 = _rhs(tmp, mlin_t, rho_t, theta_t, dgrad, d0, lam0, dint, k2)
        for i in range(n):
            tmp[i] = a[i] + 0.5 * h * k2[i]
        kb3 = _rhs(tmp, mlin_t, rho_t, theta_t, dgrad, d0, lam0, dint, k3)
        for i in range(n):
            tmp[i] = a[i] + h * k3[i]
        kb4 = _rhs(tmp, mlin_t, rho_t, theta_t, dgrad, d0, lam0, dint, k4)
        big = 0.0
        for i in range(n):
            a[i] = a[i] + (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            v = abs(a[i])
            if not (v <= bound):
                big = v
        b = b + (h / 6.0) * (kb1 + 2.0 * kb2 + 2.0 * kb3 + kb4)
        A[s + 1, :] = a
        B[s + 1] = b
        if big != 0.0 or not math.isfinite(b):
            return A, B, s + 1
    return A, B, -1


def _coefficients(spec: AffineModelSpec, drift: AffineDriftSpec):
    return (
        np.ascontiguousarray(spec.drift_matrix.T),
        np.ascontiguousarray(spec.eigen_loadings.T),
        np.ascontiguousarray(spec.vol_loading.T),
        np.ascontiguousarray(drift.grad),
        np.ascontiguousarray(spec.drift_intercept),
        np.ascontiguousarray(spec.eigen_intercepts),
        float(drift.intercept),
    )


def _uniform_grid(t0: float, T: float, step: float) -> tuple[np.ndarray, float, int]:
    if not step > 0:
        raise ValueError(f"step must be positive, got {step}")
    span = T - t0
    if not span > 0:
        raise ValueError(f"need t0 < T, got t0={t0}, T={T}")
    if step > span * (1 + 1e-12):
        raise ValueError(f"step {step} exceeds the interval length {span}")
    m = int(round(span / step))
    if abs(m * step - span) > 1e-9 * max(1.0, span):
        m = int(math.ceil(span / step))
    grid = t0 + span * (np.arange(m + 1) / m)
    grid[-1] = T
    return grid, span / m, m


@dataclass(frozen=True, eq=False)
class RiccatiSolution:
    """Gridded exponents ``(A(t), B(t))`` on ``t0 = grid[0] < ... < grid[-1] = T``.

    The Riccati system with running integrand ``drift`` is satisfied by
    ``(A + shift, B)``; ``shift`` is zero for plain solves and equals the
    martingale loading for the shifted exponential moments built by
    :func:`solve_exponential_moment`.
    """

    grid: np.ndarray
    A: np.ndarray
    B: np.ndarray
    terminal_a: np.ndarray
    terminal_b: float
    drift: AffineDriftSpec
    shift: np.ndarray
    spec: AffineModelSpec = field(repr=False)

    @property
    def t0(self) -> float:
        return float(self.grid[0])

    @property
    def T(self) -> float:
        return float(self.grid[-1])

    @property
    def step(self) -> float:
        return (self.T - self.t0) / (len(self.grid) - 1)

    def _locate(self, t: float) -> tuple[int, float]:
        if t < self.t0 - 1e-12 or t > self.T + 1e-12:
            raise ValueError(f"t = {t} outside the solution grid [{self.t0}, {self.T}]")
        x = (t - self.t0) / self.step
        k = int(round(x))
        if abs(x - k) <= 1e-9:
            return min(max(k, 0), len(self.grid) - 1), 0.0
        k = min(int(math.floor(x)), len(self.grid) - 2)
        return k, x - k

    def at(self, t: float) -> tuple[np.ndarray, float]:
        """``(A(t), B(t))``, linearly interpolated between grid nodes."""
        k, w = self._locate(float(t))
        if w == 0.0:
            return self.A[k], float(self.B[k])
        return (1 - w) * self.A[k] + w * self.A[k + 1], float((1 - w) * self.B[k] + w * self.B[k + 1])

    def to_csv(self, path) -> None:
        from ._io import atomic_write_text, fmt

        n = self.A.shape[1]
        rows = [["t"] + [f"A_{i + 1}" for i in range(n)] + ["B"]]
        for t, a, b in zip(self.grid, self.A, self.B):
            rows.append([fmt(t)] + [fmt(x) for x in a] + [fmt(b)])
        atomic_write_text(path, "\n".join(",".join(r) for r in rows) + "\n")


def _riccati_rhs_batch(spec: AffineModelSpec, drift: AffineDriftSpec, a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    u2 = (a @ spec.vol_loading) ** 2
    da = -(a @ spec.drift_matrix + 0.5 * u2 @ spec.eigen_loadings + drift.grad)
    db = -(a @ spec.drift_intercept + 0.5 * u2 @ spec.eigen_intercepts + drift.intercept)
    return da, db


def solve_riccati_backward(
    spec: AffineModelSpec,
    terminal_a,
    terminal_b: float,
    drift: AffineDriftSpec | None,
    t0: float,
    T: float,
    step: float,
    *,
    bound: float = DEFAULT_BLOWUP_BOUND,
    residual_tol: float | None = DEFAULT_RESIDUAL_TOL,
) -> RiccatiSolution:
    """Integrate the Riccati system backward from ``(terminal_a, terminal_b)`` at ``T`` to ``t0``.

    Fixed-step RK4 on the uniform grid with ``round((T - t0) / step)``
    intervals (rounded up if ``step`` does not divide the span). Raises
    :class:`RiccatiBlowupError` when ``|A|`` exceeds ``bound`` and
    :class:`RiccatiResidualError` when the finite-difference residual of the
    returned trajectory exceeds ``residual_tol`` (relative to the size of the
    right-hand side).
    """
    spec.require_valid()
    n = spec.dim
    drift = AffineDriftSpec.zero(n) if drift is None else drift
    a_T = np.array(terminal_a, dtype=float).reshape(n)
    grid, h, m = _uniform_grid(float(t0), float(T), float(step))
    A_rev, B_rev, hit = _rk4(a_T, float(terminal_b), -h, m, *_coefficients(spec, drift), float(bound))
    if hit >= 0:
        raise RiccatiBlowupError(float(grid[m - hit]), bound)
    A = np.ascontiguousarray(A_rev[::-1])
    B = np.ascontiguousarray(B_rev[::-1])
    A.flags.writeable = False
    B.flags.writeable = False
    a_T.flags.writeable = False
    sol = RiccatiSolution(grid, A, B, a_T, float(terminal_b), drift, np.zeros(n), spec)
    if residual_tol is not None and m >= 4:
        res = martingale_residual(spec, sol)
        if res > residual_tol:
            raise RiccatiResidualError(f"Riccati residual {res:.3g} exceeds tolerance {residual_tol:g}")
    return sol


def integrate_forward(spec: AffineModelSpec, sol: RiccatiSolution) -> tuple[np.ndarray, float]:
    """Re-integrate ``sol`` forward from its initial node with the same RK4 scheme; returns the end state."""
    m = len(sol.grid) - 1
    a0 = np.ascontiguousarray(sol.A[0] + sol.shift)
    A, B, _ = _rk4(a0, float(sol.B[0]), sol.step, m, *_coefficients(spec, sol.drift), np.inf)
    return A[-1] - sol.shift, float(B[-1])


def _fd4(y: np.ndarray, h: float) -> np.ndarray:
    """Fourth-order finite-difference derivative along axis 0 (needs >= 5 nodes)."""
    d = np.empty_like(y)
    d[2:-2] = (-y[4:] + 8 * y[3:-1] - 8 * y[1:-3] + y[:-4]) / (12 * h)
    d[0] = (-25 * y[0] + 48 * y[1] - 36 * y[2] + 16 * y[3] - 3 * y[4]) / (12 * h)
    d[1] = (-3 * y[0] - 10 * y[1] + 18 * y[2] - 6 * y[3] + y[4]) / (12 * h)
    d[-1] = (25 * y[-1] - 48 * y[-2] + 36 * y[-3] - 16 * y[-4] + 3 * y[-5]) / (12 * h)
    d[-2] = (3 * y[-1] + 10 * y[-2] - 18 * y[-3] + 6 * y[-4] - y[-5]) / (12 * h)
    return d


def martingale_residual(spec: AffineModelSpec, sol: RiccatiSolution) -> float:
    """Max Riccati residual of ``sol`` over its grid, scaled by ``1 + max|rhs|``.

    Time derivatives come from fourth-order finite differences of the stored
    trajectory, so the value is an independent check of the stored numbers
    rather than of the integrator's internal stages.
    """
    a = sol.A + sol.shift
    h = sol.step
    if len(sol.grid) >= 5:
        da, db = _fd4(a, h), _fd4(sol.B, h)
    else:
        da, db = np.gradient(a, h, axis=0), np.gradient(sol.B, h)
    ra, rb = _riccati_rhs_batch(spec, sol.drift, a)
    scale = 1.0 + max(float(np.max(np.abs(ra))), float(np.max(np.abs(rb))))
    return max(float(np.max(np.abs(da - ra))), float(np.max(np.abs(db - rb)))) / scale


def exp_affine_expectation(sol: RiccatiSolution, t: float, xi) -> np.ndarray:
    """``exp(A(t) . xi + B(t))``.

    For a plain solve this is ``E[exp(a_T . xi_T + b_T + int_t^T delta ds) | xi_t = xi]``;
    for a shifted solve it is the exponential moment described in
    :func:`solve_exponential_moment`.
    """
    a, b = sol.at(t)
    return np.exp(np.asarray(xi, dtype=float) @ a + b)


def solve_exponential_moment(
    spec: AffineModelSpec,
    loading,
    running: AffineDriftSpec,
    t0: float,
    T: float,
    step: float,
    **kw,
) -> RiccatiSolution:
    """Exponents of ``E[exp(int_t^T h(xi) ds + int_t^T c Theta s dW - 1/2 int_t^T q(c, xi) ds) | F_t]``.

    ``c`` is ``loading`` and ``h`` is ``running``. The martingale part is the
    log-exponential martingale ``c . xi - int f(c, xi) ds``, so the shifted
    loading ``A + c`` solves the Riccati system with terminal value ``c`` and
    running integrand ``h - f(c, .)``. The returned solution stores ``A`` (with
    ``A(T) = 0``, ``B(T) = 0``) and ``shift = c``.
    """
    c = np.array(loading, dtype=float).reshape(spec.dim)
    delta = running - affine_drift_f(spec, c)
    base = solve_riccati_backward(spec, c, 0.0, delta, t0, T, step, **kw)
    A = base.A - c
    A.flags.writeable = False
    c.flags.writeable = False
    return RiccatiSolution(base.grid, A, base.B, np.zeros(spec.dim), 0.0, delta, c, spec)


def read_solution_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    with open(path) as fh:
        rows = list(csv.reader(fh))
    data = np.array([[float(x) for x in r] for r in rows[1:]])
    return data[:, 0], data[:, 1:-1], data[:, -1]
