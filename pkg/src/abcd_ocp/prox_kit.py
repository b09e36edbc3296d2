"""Box projection, the box support function and the weighted prox used by the mu-step."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid_fem import FemOperators


@dataclass(frozen=True)
class BoxBounds:
    lo: float
    hi: float

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)):
            raise ValueError("box bounds must be finite")
        if not self.lo <= 0.0 <= self.hi:
            raise ValueError(f"box bounds need lo <= 0 <= hi, got [{self.lo}, {self.hi}]")


def project_box(z: np.ndarray, bounds: BoxBounds) -> np.ndarray:
    return np.clip(z, bounds.lo, bounds.hi)


def support_box(z: np.ndarray, bounds: BoxBounds) -> float:
    """``sup_{w in [lo, hi]^n} <z, w>``; zero entries contribute nothing."""
    z = np.asarray(z, dtype=float)
    return float(np.sum(np.where(z >= 0, bounds.hi * z, bounds.lo * z)))


def prox_support_weighted(v: np.ndarray, ops: FemOperators, alpha: float,
                          bounds: BoxBounds) -> np.ndarray:
    """
    Minimizer of ``(1/(2 alpha)) ||xi - v||^2_{gamma W^{-1}} + support_box(xi)``.

    Computed through the Moreau identity as
    ``v - (alpha/gamma) W proj((gamma/alpha) W^{-1} v)``.
    """
    scale = ops.gamma / alpha
    return v - ops.w * project_box(scale * ops.w_inv * v, bounds) / scale


def moreau_residual(x: np.ndarray, metric: np.ndarray, bounds: BoxBounds) -> float:
    """
    Residual of the Moreau identity for ``f`` the box indicator and a diagonal metric.

    ``prox_M^f(x)`` is the box projection (the metric is diagonal), and
    ``prox_{M^{-1}}^{f*}(Mx)`` is evaluated independently in closed form as the
    componentwise minimizer of ``support_box(y) + (1/2)||y - Mx||^2_{M^{-1}}``,
    i.e. soft shrinkage of ``Mx`` by ``m*hi`` above and ``m*lo`` below.
    """
    x = np.asarray(x, dtype=float)
    m = np.asarray(metric, dtype=float)
    if np.any(m <= 0):
        raise ValueError("metric must be positive")
    prox_f = project_box(x, bounds)
    y = m * x
    # minimize hi*y' (y'>=0) or lo*y' (y'<0) + (y' - y)^2 / (2m)
    prox_conj = np.where(y > m * bounds.hi, y - m * bounds.hi,
                         np.where(y < m * bounds.lo, y - m * bounds.lo, 0.0))
    return float(np.linalg.norm(x - prox_f - prox_conj / m))
