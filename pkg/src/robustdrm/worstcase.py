"""Worst-case quantile functions over Wasserstein uncertainty budgets.

Three solvers, one dispatcher:

* ``worst_case_wasserstein`` -- ball constraint only, any weight profile;
  found by bisection on the dual multiplier with an isotonic projection.
* ``shifted_robust_risk`` -- ball constraint with nondecreasing weights; the
  maximiser is an explicit shift and the risk has a closed form.
* ``worst_case_moments`` -- ball constraint plus matched first and second
  moments, nondecreasing weights; fully closed form, with a large-budget
  branch where the ball constraint goes slack.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .grids import (
    DistortionFunction,
    GridFunction,
    QuantileFunction,
    distortion_risk,
    grid_norm,
    inner_product,
    isotonic_project,
    wasserstein2,
)

__all__ = [
    "SetKind",
    "UncertaintySet",
    "WassersteinWorstCase",
    "MomentWorstCase",
    "NonMonotoneWeightsError",
    "DegenerateInputError",
    "BracketingError",
    "worst_case_wasserstein",
    "shifted_robust_risk",
    "worst_case_moments",
    "robust_risk",
]


class SetKind(Enum):
    """Which constraints carve out the uncertainty set."""

    WASSERSTEIN = "wasserstein"
    WASSERSTEIN_MOMENTS = "wasserstein_moments"


@dataclass(frozen=True)
class UncertaintySet:
    epsilon: float
    kind: SetKind = SetKind.WASSERSTEIN

    def __post_init__(self) -> None:
        if not math.isfinite(self.epsilon) or self.epsilon < 0.0:
            raise ValueError(f"tolerance must be finite and >= 0, got {self.epsilon}")


class NonMonotoneWeightsError(ValueError):
    """A solver requiring nondecreasing distortion weights got a profile without them."""


class DegenerateInputError(ValueError):
    """Constant quantile function or uniform weights: the closed form collapses."""


class BracketingError(RuntimeError):
    """The dual-multiplier bisection could not bracket the budget constraint."""


@dataclass(frozen=True)
class WassersteinWorstCase:
    """Ball-only worst case: perturbed quantile, dual multiplier, risk."""

    worst_quantile: QuantileFunction
    lambda_star: float
    risk_value: float


@dataclass(frozen=True)
class MomentWorstCase:
    """Moment-pinned worst case with the full multiplier bundle.

    ``degenerate`` marks the large-budget branch: the ball constraint is slack
    (lambda_star = 0) and the worst case depends on the input only through its
    first two moments.
    """

    worst_quantile: QuantileFunction
    lambda_star: float
    b_lambda: float
    a_lambda: float
    k: float
    mu: float
    sigma2: float
    sigma_gamma2: float
    delta: float
    degenerate: bool
    risk_value: float


def worst_case_wasserstein(
    quantile: QuantileFunction,
    gamma: DistortionFunction,
    epsilon: float,
    *,
    distance_tol: float = 1e-10,
    max_iter: int = 200,
) -> WassersteinWorstCase:
    """Maximise the distortion risk over the epsilon-ball around ``quantile``.

    The perturbed quantile is the isotonic projection of F + gamma/(2 lambda),
    with lambda > 0 chosen by bisection so the ball constraint binds.  For
    ``epsilon = 0`` the input is returned unchanged.
    """
    if epsilon < 0.0:
        raise ValueError("epsilon must be >= 0")
    if epsilon == 0.0:
        return WassersteinWorstCase(quantile, math.inf, distortion_risk(gamma, quantile))

    f = quantile.values
    g = gamma.values
    n = quantile.n
    if gamma.n != n:
        raise ValueError(f"grid sizes differ: {n} vs {gamma.n}")

    def distance_at(lam: float) -> tuple[float, np.ndarray]:
        from .grids import _pava

        worst = _pava(f + g / (2.0 * lam))
        gap = worst - f
        return math.sqrt(float(np.dot(gap, gap) / n)), worst

    lam_lo = 1e-8
    d_lo, _ = distance_at(lam_lo)
    if d_lo < epsilon:
        raise BracketingError(
            f"budget {epsilon} unreachable: max attainable distance {d_lo:.3e}"
        )
    lam_hi = max(1.0, grid_norm(gamma) / (2.0 * epsilon))
    d_hi, _ = distance_at(lam_hi)
    doublings = 0
    while d_hi > epsilon:
        lam_hi *= 2.0
        doublings += 1
        if doublings > 200:
            raise BracketingError(
                f"could not bracket: distance {d_hi:.3e} above {epsilon} at lambda {lam_hi:.3e}"
            )
        d_hi, _ = distance_at(lam_hi)

    lam = lam_hi
    dist = d_hi
    worst_vals = None
    for _ in range(max_iter):
        lam = 0.5 * (lam_lo + lam_hi)
        dist, worst_vals = distance_at(lam)
        if abs(dist - epsilon) <= distance_tol:
            break
        if dist > epsilon:
            lam_lo = lam
        else:
            lam_hi = lam
    if worst_vals is None:  # pragma: no cover - max_iter >= 1 always
        dist, worst_vals = distance_at(lam)

    worst = QuantileFunction(worst_vals)
    return WassersteinWorstCase(worst, lam, distortion_risk(gamma, worst))


def shifted_robust_risk(
    quantile: QuantileFunction, gamma: DistortionFunction, epsilon: float
) -> float:
    """Ball-only robust risk for nondecreasing weights: <gamma, F> + eps * ||gamma||."""
    if epsilon < 0.0:
        raise ValueError("epsilon must be >= 0")
    if not gamma.nondecreasing:
        raise NonMonotoneWeightsError(
            "shifted robust risk requires nondecreasing distortion weights"
        )
    return distortion_risk(gamma, quantile) + epsilon * grid_norm(gamma)


def worst_case_moments(
    quantile: QuantileFunction,
    gamma: DistortionFunction,
    epsilon: float,
) -> MomentWorstCase:
    """Worst case over the ball intersected with matched first two moments.

    Requires nondecreasing weights, a non-constant quantile function and
    non-uniform weights.  Below the large-budget threshold the ball binds and
    the worst case keeps the input's shape; above it the solution depends on
    the input only through (mu, sigma) and the risk is mu + sigma * sigma_gamma.
    """
    if epsilon < 0.0:
        raise ValueError("epsilon must be >= 0")
    if not gamma.nondecreasing:
        raise NonMonotoneWeightsError(
            "moment-constrained worst case requires nondecreasing weights"
        )
    if gamma.n != quantile.n:
        raise ValueError(f"grid sizes differ: {quantile.n} vs {gamma.n}")

    f = quantile.values
    g = gamma.values
    mu = float(np.mean(f))
    second = float(np.dot(f, f) / f.size)
    sigma2 = second - mu * mu
    scale2 = max(second, 1.0)
    if sigma2 <= 1e-14 * scale2:
        raise DegenerateInputError("constant quantile function: sigma^2 = 0")
    sigma2 = max(sigma2, 0.0)
    sigma = math.sqrt(sigma2)

    sigma_gamma2 = float(np.dot(g, g) / g.size) - 1.0
    if sigma_gamma2 <= 1e-14:
        raise DegenerateInputError("uniform distortion weights: sigma_gamma^2 = 0")
    sigma_gamma = math.sqrt(sigma_gamma2)

    cov = inner_product(quantile, gamma) - mu  # <F, gamma> - mu, >= 0 for sorted weights
    k = sigma2 - 0.5 * epsilon * epsilon

    if epsilon == 0.0:
        return MomentWorstCase(
            worst_quantile=quantile,
            lambda_star=math.inf,
            b_lambda=math.inf,
            a_lambda=math.nan,
            k=k,
            mu=mu,
            sigma2=sigma2,
            sigma_gamma2=sigma_gamma2,
            delta=math.nan,
            degenerate=False,
            risk_value=distortion_risk(gamma, quantile),
        )

    threshold = 2.0 * sigma2 * (1.0 - cov / (sigma * sigma_gamma))
    eps2 = epsilon * epsilon
    if eps2 > threshold:
        b0 = sigma_gamma / sigma
        worst = QuantileFunction(mu + sigma * (g - 1.0) / sigma_gamma)
        return MomentWorstCase(
            worst_quantile=worst,
            lambda_star=0.0,
            b_lambda=b0,
            a_lambda=1.0 - b0 * mu,
            k=k,
            mu=mu,
            sigma2=sigma2,
            sigma_gamma2=sigma_gamma2,
            delta=math.nan,
            degenerate=True,
            risk_value=distortion_risk(gamma, worst),
        )

    # k^2 - sigma^4 factored as -(eps^2/2)(k + sigma^2) to avoid cancellation
    denom = -0.5 * eps2 * (k + sigma2)
    if denom >= 0.0:  # pragma: no cover - excluded by the threshold gate
        raise DegenerateInputError(
            f"budget {epsilon} outside the binding-ball regime (k^2 >= sigma^4)"
        )
    delta = 4.0 * k * k * (cov * cov - sigma2 * sigma_gamma2) / denom
    delta = max(delta, 0.0)
    lambda_star = max((-2.0 * cov + math.sqrt(delta)) / (2.0 * sigma2), 0.0)
    b_arg = lambda_star * lambda_star * sigma2 + sigma_gamma2 + 2.0 * lambda_star * cov
    b_lambda = math.sqrt(max(b_arg, 0.0)) / sigma
    a_lambda = (lambda_star * mu + 1.0) - b_lambda * mu

    worst = QuantileFunction(mu + (lambda_star * (f - mu) + g - 1.0) / b_lambda)
    return MomentWorstCase(
        worst_quantile=worst,
        lambda_star=lambda_star,
        b_lambda=b_lambda,
        a_lambda=a_lambda,
        k=k,
        mu=mu,
        sigma2=sigma2,
        sigma_gamma2=sigma_gamma2,
        delta=delta,
        degenerate=False,
        risk_value=distortion_risk(gamma, worst),
    )


def robust_risk(
    quantile: QuantileFunction,
    gamma: DistortionFunction,
    uncertainty: UncertaintySet,
) -> float:
    """Worst-case distortion risk under the given uncertainty set."""
    if uncertainty.epsilon == 0.0:
        return distortion_risk(gamma, quantile)
    if uncertainty.kind is SetKind.WASSERSTEIN:
        if gamma.nondecreasing:
            return shifted_robust_risk(quantile, gamma, uncertainty.epsilon)
        return worst_case_wasserstein(quantile, gamma, uncertainty.epsilon).risk_value
    return worst_case_moments(quantile, gamma, uncertainty.epsilon).risk_value
