"""Task cost functions c(theta, a) and the incurred-cost evaluation.

All continuous costs share one family: a flipped bell curve
1 - exp(-(t - a)^2 / w(t)^2) in a common [0, 10] scale, where the width w
depends on the (rescaled) parameter so that accuracy demands vary across
parameter space. Parameters and actions live on different scales, so both
are affinely rescaled into [0, 10] first. Everything here is a pure
function and broadcasts over numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .core import TaskId, rescale_linear
from .simulators import LV_SPEC, classify_zone_batch

EPSILON = 0.1

# Central 99.8% quantile span used to map unbounded priors onto [0, 10].
_Q999 = float(norm.ppf(0.999))

# Per-marginal [0.1%, 99.9%] prior quantile ranges for Lotka-Volterra.
LV_RESCALE_RANGES = [
    (
        float(np.exp(mu - _Q999 * LV_SPEC.log_std)),
        float(np.exp(mu + _Q999 * LV_SPEC.log_std)),
    )
    for mu in LV_SPEC.log_means
]

# Linear-Gaussian prior N(0, 1) on the scored coordinate.
LG_RESCALE_RANGE = (-_Q999, _Q999)

SIR_RATIO_MAX = 10.0


@dataclass(frozen=True)
class CostSpec:
    """Selects the cost function for a task (and the marginal for LV)."""

    task: TaskId
    epsilon: float = EPSILON
    marginal_index: int = 0

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.task is TaskId.LOTKA_VOLTERRA and self.marginal_index not in range(4):
            raise ValueError("marginal_index must be in 0..3")


def _bell(t, a, width):
    return 1.0 - np.exp(-((t - a) ** 2) / width**2)


def _check_action(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if np.any(a < 0.0) or np.any(a > 100.0):
        raise ValueError("continuous actions must lie in [0, 100]")
    return a


def cost_toy(theta, a, epsilon: float = EPSILON):
    """Bell cost whose tolerance shrinks as theta grows."""
    theta = np.asarray(theta, dtype=float)
    if np.any(theta < 0.0) or np.any(theta > 5.0):
        raise ValueError("toy theta must lie in [0, 5]")
    a = _check_action(a)
    t = rescale_linear(theta, 0.0, 5.0, 0.0, 10.0)
    at = rescale_linear(a, 0.0, 100.0, 0.0, 10.0)
    return _bell(t, at, 2.0 / (np.abs(t) + epsilon))


def cost_linear_gaussian(theta, a, epsilon: float = EPSILON):
    """Bell cost on the first coordinate, widest mid-range at t = 5.

    theta is either a full parameter array whose last axis has length 10,
    or bare first-coordinate values of any other shape.
    """
    theta = np.asarray(theta, dtype=float)
    theta0 = theta[..., 0] if theta.ndim > 0 and theta.shape[-1] == 10 else theta
    a = _check_action(a)
    t = rescale_linear(theta0, LG_RESCALE_RANGE[0], LG_RESCALE_RANGE[1], 0.0, 10.0)
    at = rescale_linear(a, 0.0, 100.0, 0.0, 10.0)
    return _bell(t, at, 0.5 / (np.abs(t - 5.0) + epsilon))


def cost_lv_marginal(theta, a, i: int, epsilon: float = EPSILON):
    """Bell cost on one Lotka-Volterra marginal; larger rates demand more accuracy."""
    if i not in range(4):
        raise ValueError("marginal index must be in 0..3")
    theta = np.asarray(theta, dtype=float)
    theta_i = theta[..., i] if theta.ndim > 0 and theta.shape[-1] == 4 else theta
    a = _check_action(a)
    lo, hi = LV_RESCALE_RANGES[i]
    t = rescale_linear(theta_i, lo, hi, 0.0, 10.0)
    at = rescale_linear(a, 0.0, 100.0, 0.0, 10.0)
    return _bell(t, at, 3.0 / (np.abs(t) + epsilon))


def cost_sir(beta, gamma, a, epsilon: float = EPSILON):
    """Bell cost on the reproduction ratio beta/gamma, sharpest around 1."""
    beta = np.asarray(beta, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    if np.any(beta <= 0.0) or np.any(gamma <= 0.0):
        raise ValueError("SIR rates must be positive")
    a = _check_action(a)
    r = np.clip(beta / gamma, 0.0, SIR_RATIO_MAX)
    at = rescale_linear(a, 0.0, 100.0, 0.0, 10.0)
    return _bell(r, at, 2.0 / (np.abs(10.0 - np.abs(r - 1.0)) + epsilon))


def cost_bvep(eta_gt, a):
    """0-1 cost: zero iff the chosen zone action matches the true zone."""
    zones = classify_zone_batch(np.asarray(eta_gt, dtype=float))
    a = np.asarray(a)
    if np.any((a != 0) & (a != 1) & (a != 2)):
        raise ValueError("BVEP actions are the zone indices 0 (HZ), 1 (PZ), 2 (EZ)")
    return (zones != a).astype(float)


def cost_fn_for(spec: CostSpec):
    """Vectorized cost c(thetas, actions) for a spec.

    thetas has shape (..., theta_dim) (or bare floats for the toy task) and
    actions broadcasts against the leading shape.
    """
    task = spec.task
    if task is TaskId.TOY:
        return lambda th, a: cost_toy(np.asarray(th)[..., 0] if np.ndim(th) > 1 else th, a, spec.epsilon)
    if task is TaskId.LINEAR_GAUSSIAN:
        return lambda th, a: cost_linear_gaussian(th, a, spec.epsilon)
    if task is TaskId.LOTKA_VOLTERRA:
        return lambda th, a: cost_lv_marginal(th, a, spec.marginal_index, spec.epsilon)
    if task is TaskId.SIR:
        return lambda th, a: cost_sir(
            np.asarray(th)[..., 0], np.asarray(th)[..., 1], a, spec.epsilon
        )
    if task is TaskId.BVEP:
        return lambda th, a: cost_bvep(np.asarray(th)[..., 0], a)
    raise ValueError(f"unknown task {task}")


def incurred_cost(theta_gt, a, spec: CostSpec) -> float:
    """Cost of action a when the ground-truth parameter is theta_gt."""
    theta_gt = np.atleast_1d(np.asarray(theta_gt, dtype=float))
    if theta_gt.shape != (spec.task.theta_dim,):
        raise ValueError(
            f"theta_gt has shape {theta_gt.shape}, expected ({spec.task.theta_dim},)"
        )
    return float(cost_fn_for(spec)(theta_gt[None, :], a)[0])
