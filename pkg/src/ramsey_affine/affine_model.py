"""Affine factor model: parameterization, validation and pointwise coefficients.

The factor ``xi`` follows

    d xi = (drift_matrix @ xi + drift_intercept) dt + vol_loading @ diag(sqrt(lam(xi))) dW

with eigenvariances ``lam_i(xi) = eigen_loadings[i] . xi + eigen_intercepts[i]``.
The short rate and the consumption rate are affine in ``xi`` and every
volatility in the market (risk premium, orthogonal state-price direction,
optimal portfolio) is of the form ``a^T Theta s(xi)`` for a constant loading
vector ``a``.

Admissible portfolios load on a coordinate subspace ``E`` of the factor space,
given by ``admissible_coords`` as 1-based factor labels.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Sequence

import numpy as np

__all__ = [
    "AffineModelSpec",
    "Check",
    "InvalidSpecError",
    "ValidationReport",
    "diffusion_matrix",
    "drift",
    "eigen_variances",
    "factor_volatility",
    "spec_from_dict",
    "spec_to_dict",
    "load_spec",
    "validate_spec",
]

SPEC_FIELDS = (
    "dim",
    "drift_matrix",
    "drift_intercept",
    "vol_loading",
    "eigen_intercepts",
    "eigen_loadings",
    "admissible_coords",
    "rate_loading",
    "consumption_loading",
    "premium_loading_R",
    "premium_loading_perp",
    "portfolio_loading",
    "xi0",
)

# entries below this are treated as structural zeros in block/support checks
_ZERO_TOL = 1e-14


class InvalidSpecError(ValueError):
    """Raised when a downstream operation receives a spec that failed validation."""

    def __init__(self, report: "ValidationReport"):
        self.report = report
        super().__init__("invalid affine model spec: " + "; ".join(c.detail for c in report.failures))


def _vec(x, n: int | None = None, name: str = "") -> np.ndarray:
    arr = np.array(x, dtype=float).reshape(-1)
    if n is not None and arr.shape != (n,):
        raise ValueError(f"{name}: expected a vector of length {n}, got shape {arr.shape}")
    arr.flags.writeable = False
    return arr


def _mat(x, n: int, name: str = "") -> np.ndarray:
    arr = np.array(x, dtype=float)
    if arr.ndim == 0 and n == 1:
        arr = arr.reshape(1, 1)
    if arr.shape != (n, n):
        raise ValueError(f"{name}: expected a {n}x{n} matrix, got shape {arr.shape}")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class AffineModelSpec:
    """Full parameterization of an affine market with time-constant coefficients.

    Attributes
    ----------
    dim : int
        Number of factors N.
    drift_matrix, drift_intercept :
        Factor drift ``drift_matrix @ xi + drift_intercept``.
    vol_loading : (N, N) array
        Matrix Theta; the diffusion matrix is ``Theta @ diag(sqrt(lam))``.
    eigen_intercepts, eigen_loadings :
        ``lam_i(xi) = eigen_loadings[i] @ xi + eigen_intercepts[i]``.
    admissible_coords : tuple of int
        1-based labels of the factor coordinates spanning E.
    rate_loading, consumption_loading : (vector, float)
        ``r = a_r @ xi + b_r`` and ``zeta = a_z @ xi + b_z``.
    premium_loading_R : vector supported on E
        Hedgeable risk premium ``eta_R = a^T Theta s(xi)``.
    premium_loading_perp : vector supported off E
        Orthogonal state-price direction ``nu* = a^T Theta s(xi)``.
    portfolio_loading : vector supported on E
        Optimal portfolio ``kappa* = a^T Theta s(xi)``.
    xi0 : vector
        Initial factor value.
    """

    dim: int
    drift_matrix: np.ndarray
    drift_intercept: np.ndarray
    vol_loading: np.ndarray
    eigen_intercepts: np.ndarray
    eigen_loadings: np.ndarray
    admissible_coords: tuple[int, ...]
    rate_loading: tuple[np.ndarray, float]
    consumption_loading: tuple[np.ndarray, float]
    premium_loading_R: np.ndarray
    premium_loading_perp: np.ndarray
    portfolio_loading: np.ndarray
    xi0: np.ndarray
    name: str = field(default="", compare=False)

    def __post_init__(self):
        n = int(self.dim)
        if n < 1:
            raise ValueError(f"dim must be a positive integer, got {self.dim}")
        object.__setattr__(self, "dim", n)
        object.__setattr__(self, "drift_matrix", _mat(self.drift_matrix, n, "drift_matrix"))
        object.__setattr__(self, "vol_loading", _mat(self.vol_loading, n, "vol_loading"))
        object.__setattr__(self, "eigen_loadings", _mat(self.eigen_loadings, n, "eigen_loadings"))
        for name in ("drift_intercept", "eigen_intercepts", "premium_loading_R",
                     "premium_loading_perp", "portfolio_loading", "xi0"):
            object.__setattr__(self, name, _vec(getattr(self, name), n, name))
        for name in ("rate_loading", "consumption_loading"):
            a, b = getattr(self, name)
            object.__setattr__(self, name, (_vec(a, n, name + ".a"), float(b)))
        coords = tuple(sorted(int(c) for c in self.admissible_coords))
        if any(c < 1 or c > n for c in coords) or len(set(coords)) != len(coords):
            raise ValueError(f"admissible_coords must be distinct labels in 1..{n}, got {self.admissible_coords}")
        object.__setattr__(self, "admissible_coords", coords)

    # -- derived quantities -------------------------------------------------

    @cached_property
    def e_mask(self) -> np.ndarray:
        """Boolean mask of the coordinates spanning E."""
        mask = np.zeros(self.dim, dtype=bool)
        mask[[c - 1 for c in self.admissible_coords]] = True
        mask.flags.writeable = False
        return mask

    @cached_property
    def state_price_loading(self) -> np.ndarray:
        """Loading ``a_Y = a_perp - a_R`` of the optimal state-price volatility ``nu* - eta_R``."""
        out = self.premium_loading_perp - self.premium_loading_R
        out.flags.writeable = False
        return out

    @cached_property
    def report(self) -> "ValidationReport":
        return validate_spec(self)

    def require_valid(self) -> "AffineModelSpec":
        if not self.report.ok:
            raise InvalidSpecError(self.report)
        return self

    def short_rate(self, xi: np.ndarray) -> np.ndarray:
        a, b = self.rate_loading
        return _affine(xi, a, b)

    def consumption_rate(self, xi: np.ndarray) -> np.ndarray:
        a, b = self.consumption_loading
        return _affine(xi, a, b)

    def replace(self, **changes) -> "AffineModelSpec":
        d = {f: getattr(self, f) for f in SPEC_FIELDS}
        d["name"] = self.name
        d.update(changes)
        return AffineModelSpec(**d)

    @cached_property
    def content_hash(self) -> str:
        return spec_hash(self)


def _affine(xi, a: np.ndarray, b: float) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    out = np.full(xi.shape[:-1], b, dtype=float)
    for j in range(a.shape[0]):
        if a[j] != 0.0:
            out = out + a[j] * xi[..., j]
    return out


# -- validation -------------------------------------------------------------


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[Check, ...]

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]

    def failed(self, name: str) -> bool:
        return any(c.name == name and not c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {"ok": self.ok, "checks": [{"name": c.name, "passed": c.passed, "detail": c.detail} for c in self.checks]}

    def __str__(self) -> str:
        lines = [f"{'PASS' if c.passed else 'FAIL'}  {c.name}" + (f": {c.detail}" if c.detail else "") for c in self.checks]
        lines.append("spec valid" if self.ok else f"spec INVALID ({len(self.failures)} failing checks)")
        return "\n".join(lines)


def _block_violation(m: np.ndarray, mask: np.ndarray) -> tuple[int, int] | None:
    n = m.shape[0]
    for i in range(n):
        for j in range(n):
            if mask[i] != mask[j] and abs(m[i, j]) > _ZERO_TOL:
                return i, j
    return None


def validate_spec(spec: AffineModelSpec) -> ValidationReport:
    """Check every structural invariant of ``spec``.

    Failures name the offending entry (1-based indices). The report never
    raises; use :meth:`AffineModelSpec.require_valid` to reject a spec.
    """
    checks: list[Check] = []
    n = spec.dim
    mask = spec.e_mask

    arrays = {f: getattr(spec, f) for f in ("drift_matrix", "drift_intercept", "vol_loading", "eigen_intercepts",
                                            "eigen_loadings", "premium_loading_R", "premium_loading_perp",
                                            "portfolio_loading", "xi0")}
    arrays["rate_loading"] = np.append(spec.rate_loading[0], spec.rate_loading[1])
    arrays["consumption_loading"] = np.append(spec.consumption_loading[0], spec.consumption_loading[1])
    bad = [k for k, v in arrays.items() if not np.all(np.isfinite(v))]
    checks.append(Check("finite", not bad, f"non-finite entries in {', '.join(bad)}" if bad else ""))

    neg = np.flatnonzero(spec.eigen_intercepts < 0)
    checks.append(Check("eigen_intercepts", neg.size == 0,
                        f"eigen_intercepts[{neg[0] + 1}] = {spec.eigen_intercepts[neg[0]]} < 0" if neg.size else ""))

    lam0 = spec.eigen_loadings @ spec.xi0 + spec.eigen_intercepts
    neg = np.flatnonzero(lam0 < 0)
    checks.append(Check("eigenvariance_at_xi0", neg.size == 0,
                        f"lambda_{neg[0] + 1}(xi0) = {lam0[neg[0]]} < 0" if neg.size else ""))

    for name, inside in (("premium_loading_R", True), ("portfolio_loading", True), ("premium_loading_perp", False)):
        vec = getattr(spec, name)
        wrong = np.flatnonzero((np.abs(vec) > _ZERO_TOL) & (mask != inside))
        where = "outside" if inside else "inside"
        checks.append(Check(f"support:{name}", wrong.size == 0,
                            f"{name}[{wrong[0] + 1}] = {vec[wrong[0]]} is {where} E" if wrong.size else ""))

    for name in ("vol_loading", "drift_matrix"):
        hit = _block_violation(getattr(spec, name), mask)
        checks.append(Check(f"block:{name}", hit is None,
                            f"{name}[{hit[0] + 1},{hit[1] + 1}] = {getattr(spec, name)[hit]} couples E and its complement"
                            if hit else ""))

    for name in ("rate_loading", "consumption_loading"):
        a, b = getattr(spec, name)
        neg = np.flatnonzero(a < 0)
        detail = ""
        if neg.size:
            detail = f"{name}.a[{neg[0] + 1}] = {a[neg[0]]} < 0"
        elif b < 0:
            detail = f"{name}.b = {b} < 0"
        checks.append(Check(f"positivity:{name}", not detail, detail))

    return ValidationReport(tuple(checks))


# -- pointwise coefficients -------------------------------------------------


def eigen_variances(spec: AffineModelSpec, xi) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(lam_plus, clipped)`` where negative eigenvariances are truncated at zero.

    ``xi`` may carry leading batch dimensions; ``clipped`` flags the entries
    that were truncated.
    """
    xi = np.asarray(xi, dtype=float)
    raw = _eigen_raw(spec, xi)
    clipped = raw < 0.0
    return np.where(clipped, 0.0, raw), clipped


def _eigen_raw(spec: AffineModelSpec, xi: np.ndarray) -> np.ndarray:
    n = spec.dim
    rho = spec.eigen_loadings
    out = np.empty(xi.shape[:-1] + (n,), dtype=float)
    for i in range(n):
        acc = np.full(xi.shape[:-1], spec.eigen_intercepts[i])
        for j in range(n):
            if rho[i, j] != 0.0:
                acc = acc + rho[i, j] * xi[..., j]
        out[..., i] = acc
    return out


def drift(spec: AffineModelSpec, xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    return np.einsum("ij,...j->...i", spec.drift_matrix, xi) + spec.drift_intercept


def diffusion_matrix(spec: AffineModelSpec, xi) -> np.ndarray:
    """``Theta @ diag(sqrt(lam_plus(xi)))``; truncated directions give zero columns."""
    lam, _ = eigen_variances(spec, xi)
    return spec.vol_loading * np.sqrt(lam)[..., None, :]


def factor_volatility(spec: AffineModelSpec, a, xi) -> np.ndarray:
    """Volatility vector ``a^T Theta s(xi)`` of the affine functional ``a . xi``."""
    lam, _ = eigen_variances(spec, xi)
    return (spec.vol_loading.T @ np.asarray(a, dtype=float)) * np.sqrt(lam)


# -- JSON round trip --------------------------------------------------------


def spec_to_dict(spec: AffineModelSpec) -> dict[str, Any]:
    """Canonical JSON-ready dict; matrices are row-major nested lists."""
    d: dict[str, Any] = {"dim": spec.dim}
    for f in ("drift_matrix", "vol_loading", "eigen_loadings"):
        d[f] = getattr(spec, f).tolist()
    for f in ("drift_intercept", "eigen_intercepts", "premium_loading_R", "premium_loading_perp",
              "portfolio_loading", "xi0"):
        d[f] = getattr(spec, f).tolist()
    d["admissible_coords"] = list(spec.admissible_coords)
    for f in ("rate_loading", "consumption_loading"):
        a, b = getattr(spec, f)
        d[f] = {"a": a.tolist(), "b": b}
    return d


def spec_from_dict(d: dict[str, Any]) -> AffineModelSpec:
    missing = [f for f in SPEC_FIELDS if f not in d]
    if missing:
        raise ValueError(f"model spec is missing fields: {', '.join(missing)}")
    unknown = sorted(set(d) - set(SPEC_FIELDS) - {"name"})
    if unknown:
        raise ValueError(f"model spec has unknown fields: {', '.join(unknown)}")
    kw = {f: d[f] for f in SPEC_FIELDS}
    for f in ("rate_loading", "consumption_loading"):
        v = d[f]
        if isinstance(v, dict):
            kw[f] = (v["a"], v["b"])
        elif isinstance(v, Sequence) and len(v) == 2:
            kw[f] = (v[0], v[1])
        else:
            raise ValueError(f"{f} must be an object with keys 'a' and 'b'")
    kw["name"] = d.get("name", "")
    return AffineModelSpec(**kw)


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def spec_hash(spec: AffineModelSpec) -> str:
    return hashlib.sha256(canonical_json(spec_to_dict(spec)).encode()).hexdigest()


def load_spec(path) -> AffineModelSpec:
    with open(path) as fh:
        doc = json.load(fh)
    if "model" in doc and isinstance(doc["model"], dict):
        doc = doc["model"]
    return spec_from_dict(doc)
