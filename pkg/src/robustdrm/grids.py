"""Grid representation of quantile and distortion functions on the unit interval.

Functions are sampled at the N midpoint nodes u_i = (2i-1)/(2N).  The midpoint
grid makes the unit-mass normalisation of distortion weights and every linear
quadrature exact, and it never touches the endpoints where tail distortions
blow up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "DimensionMismatchError",
    "GridFunction",
    "QuantileFunction",
    "DistortionFunction",
    "grid_nodes",
    "inner_product",
    "grid_norm",
    "wasserstein2",
    "isotonic_project",
    "distortion_risk",
    "empirical_quantile",
    "shift",
    "mean_distortion",
    "cvar_distortion",
    "lower_tail_distortion",
]

_MONOTONE_SLACK = 1e-9
_MASS_TOL = 1e-10


class DimensionMismatchError(ValueError):
    """Two grid functions with different resolutions were combined."""


def grid_nodes(n: int) -> np.ndarray:
    """Midpoint nodes u_i = (2i-1)/(2n) of the uniform n-point grid on [0,1]."""
    if n < 2:
        raise ValueError(f"grid size must be at least 2, got {n}")
    return (2.0 * np.arange(1, n + 1) - 1.0) / (2.0 * n)


@dataclass(frozen=True)
class GridFunction:
    """A real function on [0,1] stored by its values at the midpoint nodes."""

    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.array(self.values, dtype=float, copy=True)
        if v.ndim != 1 or v.size < 2:
            raise ValueError("grid function needs a 1-d vector of length >= 2")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid function values must be finite")
        self._validate(v)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def _validate(self, v: np.ndarray) -> None:  # overridden by subclasses
        pass

    @property
    def n(self) -> int:
        return int(self.values.size)

    def nodes(self) -> np.ndarray:
        return grid_nodes(self.n)


class QuantileFunction(GridFunction):
    """Nondecreasing grid function: the discrete home of quantile functions."""

    def _validate(self, v: np.ndarray) -> None:
        scale = max(1.0, float(np.max(np.abs(v))))
        if np.any(np.diff(v) < -_MONOTONE_SLACK * scale):
            raise ValueError("quantile function values must be nondecreasing")


@dataclass(frozen=True)
class DistortionFunction(GridFunction):
    """Nonnegative grid weights with unit grid mean.

    ``nondecreasing`` marks weight profiles that put more mass on higher
    quantile levels; the closed-form worst-case solvers require it.
    """

    nondecreasing: bool = False

    def _validate(self, v: np.ndarray) -> None:
        if np.any(v < -1e-12):
            raise ValueError("distortion weights must be nonnegative")
        mean = float(np.mean(v))
        if abs(mean - 1.0) > _MASS_TOL:
            raise ValueError(
                f"distortion weights must have unit grid mean, got {mean!r}"
            )
        if self.nondecreasing:
            scale = max(1.0, float(np.max(np.abs(v))))
            if np.any(np.diff(v) < -_MONOTONE_SLACK * scale):
                raise ValueError("weights marked nondecreasing must be sorted")


def _check_same_grid(f: GridFunction, g: GridFunction) -> None:
    if f.n != g.n:
        raise DimensionMismatchError(f"grid sizes differ: {f.n} vs {g.n}")


def inner_product(f: GridFunction, g: GridFunction) -> float:
    """Midpoint quadrature of the L2 inner product on [0,1]."""
    _check_same_grid(f, g)
    return float(np.dot(f.values, g.values) / f.n)


def grid_norm(f: GridFunction) -> float:
    """L2 norm sqrt(<f, f>) under the grid inner product."""
    return math.sqrt(max(inner_product(f, f), 0.0))


def wasserstein2(f: QuantileFunction, g: QuantileFunction) -> float:
    """Order-2 Wasserstein distance: the L2 gap between quantile functions."""
    _check_same_grid(f, g)
    diff = f.values - g.values
    return math.sqrt(float(np.dot(diff, diff) / f.n))


def _pava(y: np.ndarray) -> np.ndarray:
    """Pool-adjacent-violators: L2 projection onto nondecreasing vectors."""
    n = y.size
    level = np.empty(n, dtype=float)
    count = np.empty(n, dtype=np.int64)
    m = 0
    for i in range(n):
        level[m] = y[i]
        count[m] = 1
        m += 1
        while m > 1 and level[m - 2] > level[m - 1]:
            total = count[m - 2] + count[m - 1]
            level[m - 2] = (count[m - 2] * level[m - 2] + count[m - 1] * level[m - 1]) / total
            count[m - 2] = total
            m -= 1
    return np.repeat(level[:m], count[:m])


def isotonic_project(f: GridFunction) -> QuantileFunction:
    """Project onto nondecreasing grid functions in the L2 grid norm.

    Pool-adjacent-violators; idempotent and 1-Lipschitz.
    """
    return QuantileFunction(_pava(np.asarray(f.values, dtype=float)))


def distortion_risk(gamma: DistortionFunction, quantile: QuantileFunction) -> float:
    """Distortion risk <gamma, F>: quantile values integrated against weights."""
    return inner_product(gamma, quantile)


def empirical_quantile(samples: np.ndarray, n: int) -> QuantileFunction:
    """Left-continuous empirical quantile of ``samples`` on the n-point grid.

    The value at level u is the ceil(u*M)-th smallest of the M samples.
    """
    s = np.sort(np.asarray(samples, dtype=float).ravel())
    if s.size == 0:
        raise ValueError("empirical quantile needs at least one sample")
    if not np.all(np.isfinite(s)):
        raise ValueError("samples must be finite")
    u = grid_nodes(n)
    idx = np.clip(np.ceil(u * s.size).astype(np.int64) - 1, 0, s.size - 1)
    return QuantileFunction(s[idx])


def shift(q: QuantileFunction, offset: float) -> QuantileFunction:
    """Quantile function of the cash-shifted variable Z + offset."""
    return QuantileFunction(q.values + float(offset))


def mean_distortion(n: int) -> DistortionFunction:
    """Uniform weights: plain expectation."""
    return DistortionFunction(np.ones(n), nondecreasing=True)


def _tail_indicator(mask: np.ndarray, n: int, what: str) -> np.ndarray:
    count = int(mask.sum())
    if count == 0:
        raise ValueError(f"grid of size {n} too coarse to resolve {what}")
    # Renormalise the sampled indicator so the grid mean is exactly one.
    values = np.zeros(n)
    values[mask] = n / count
    return values

def cvar_distortion(alpha: float, n: int) -> DistortionFunction:
    """Weights averaging the quantile levels above ``alpha``.

    Discretised as the indicator of {u > alpha}, renormalised to unit grid
    mean, so that the induced risk is exactly the mean of the top tail on the
    grid.  ``alpha = 0`` recovers the plain expectation.
    """
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must be in [0, 1), got {alpha}")
    u = grid_nodes(n)
    return DistortionFunction(_tail_indicator(u > alpha, n, f"cvar level {alpha}"),
                              nondecreasing=True)


def lower_tail_distortion(alpha: float, n: int) -> DistortionFunction:
    """Weights averaging the quantile levels below ``alpha`` (lower tail mean)."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    u = grid_nodes(n)
    return DistortionFunction(_tail_indicator(u < alpha, n, f"lower tail {alpha}"),
                              nondecreasing=False)
