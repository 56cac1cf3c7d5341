"""Strictly consistent scoring functions and proper scoring rules.

These are the training losses: squared error elicits the mean, the pinball
score elicits a quantile, the joint score elicits the (quantile, tail-mean)
pair, and the CRPS elicits the whole distribution function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grids import DistortionFunction, _tail_indicator, grid_nodes

__all__ = [
    "CostPartition",
    "score_mean",
    "score_var",
    "score_var_cvar",
    "crps",
    "alpha_beta_distortion",
]


@dataclass(frozen=True)
class CostPartition:
    """Strictly increasing evaluation points over the cost space."""

    points: np.ndarray

    def __post_init__(self) -> None:
        pts = np.array(self.points, dtype=float, copy=True)
        if pts.ndim != 1 or pts.size < 2:
            raise ValueError("partition needs at least two points")
        if not np.all(np.isfinite(pts)):
            raise ValueError("partition points must be finite")
        if np.any(np.diff(pts) <= 0.0):
            raise ValueError("partition points must be strictly increasing")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def size(self) -> int:
        return int(self.points.size)

    def spacings(self) -> np.ndarray:
        """Per-point integration weights; the last spacing is repeated."""
        d = np.diff(self.points)
        return np.append(d, d[-1])

    def covers(self, values: np.ndarray) -> bool:
        return bool(np.min(values) >= self.points[0] and np.max(values) <= self.points[-1])


def score_mean(a: float, z: float) -> float:
    """Squared error; the expected score is minimised at the mean."""
    return (a - z) ** 2


def score_var(a: float, z: float, alpha: float) -> float:
    """Pinball score with identity spread; minimised at the alpha-quantile."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    return ((1.0 if z <= a else 0.0) - alpha) * (a - z)


def score_var_cvar(a1: float, a2: float, z: float, alpha: float, c: float) -> float:
    """Joint score for the (quantile, upper tail mean) pair at level alpha.

    Requires a1 <= a2 and the shift ``c`` large enough that a2 + c and z + c
    stay positive.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    if a1 > a2 + 1e-12:
        raise ValueError(f"need a1 <= a2, got {a1} > {a2}")
    if a2 + c <= 0.0 or z + c <= 0.0:
        raise ValueError("shift c must keep a2 + c and z + c positive")
    tail = a1 * ((1.0 if z <= a1 else 0.0) - alpha) + (z if z > a1 else 0.0)
    return (
        math.log((a2 + c) / (z + c))
        - a2 / (a2 + c)
        + tail / ((a2 + c) * (1.0 - alpha))
    )


def crps(forecast: np.ndarray, z: float, partition: CostPartition) -> float:
    """Quadrature of the continuous ranked probability score on the partition."""
    f = np.asarray(forecast, dtype=float)
    if f.shape != partition.points.shape:
        raise ValueError(
            f"forecast length {f.size} does not match partition size {partition.size}"
        )
    if np.any(f < -1e-12) or np.any(f > 1.0 + 1e-12):
        raise ValueError("forecast CDF values must lie in [0, 1]")
    indicator = (partition.points >= z).astype(float)
    return float(np.sum((f - indicator) ** 2 * partition.spacings()))


def alpha_beta_distortion(p: float, alpha: float, beta: float, n: int) -> DistortionFunction:
    """Two-sided tail weights: mass p below ``alpha``, mass 1-p above ``beta``.

    gamma(u) = (p 1{u < alpha} + (1-p) 1{u >= beta}) / eta with
    eta = p alpha + (1-p)(1-beta).  Each indicator branch is discretised on the
    grid and renormalised to carry exactly its share of mass, which keeps the
    split into lower-tail and upper-tail means exact.  ``p = 0`` recovers the
    upper-tail weights of ``cvar_distortion`` up to the open/closed boundary.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must be in [0, 1], got {p}")
    if not 0.0 < alpha <= beta < 1.0:
        raise ValueError(f"need 0 < alpha <= beta < 1, got alpha={alpha}, beta={beta}")
    eta = p * alpha + (1.0 - p) * (1.0 - beta)
    u = grid_nodes(n)
    values = np.zeros(n)
    if p > 0.0:
        values += (p * alpha / eta) * _tail_indicator(u < alpha, n, f"lower tail {alpha}")
    if p < 1.0:
        values += ((1.0 - p) * (1.0 - beta) / eta) * _tail_indicator(
            u >= beta, n, f"upper tail {beta}"
        )
    return DistortionFunction(values, nondecreasing=(p == 0.0))
