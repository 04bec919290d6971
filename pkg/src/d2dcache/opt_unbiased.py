"""Optimal caching when every group carries the same trust bias.

For a fixed total caching density the objective is separable and concave,
so the optimum spreads the density as evenly as the per-group caps allow.
The total is then found by a one-dimensional sweep.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from d2dcache.model import CachingStrategy, GroupProfile, SystemParams, active_ratio_from_load, f_kernel


class BiasMismatchError(ValueError):
    """Raised when the unbiased solver is given groups with differing biases."""


@dataclass(frozen=True)
class UnbiasedSolution:
    c_star: CachingStrategy
    x_star: float
    gain: float
    trace: List[Tuple[float, float]] = field(default_factory=list, repr=False)


def water_fill(lam: np.ndarray, x_bar: float) -> np.ndarray:
    """Spread ``x_bar`` as evenly as possible under caps ``lam``."""
    lam = np.asarray(lam, dtype=float)
    total = float(lam.sum())
    if x_bar < 0 or x_bar > total * (1 + 1e-12) + 1e-300:
        raise ValueError(f"x_bar={x_bar} outside [0, {total}]")
    M = lam.size
    order = np.argsort(lam, kind="stable")
    sorted_lam = lam[order]
    level = sorted_lam[-1]
    filled = 0.0
    for n in range(M):
        level = (x_bar - filled) / (M - n)
        if level <= sorted_lam[n]:
            break
        filled += sorted_lam[n]
    else:
        level = sorted_lam[-1]
    return np.minimum(level, lam)


def inner_allocate(groups: GroupProfile, x_bar: float) -> CachingStrategy:
    return CachingStrategy(water_fill(groups.lam, x_bar))


def unbiased_gain(params: SystemParams, groups: GroupProfile, c: np.ndarray, x_bar: float) -> float:
    """Offloading gain with the shared active ratio of the unbiased case."""
    lambda_0 = groups.lambda_0
    if x_bar <= 0 or lambda_0 - x_bar <= 0:
        return 0.0
    disk = params.disk
    share = -math.expm1(-disk * x_bar)
    rho = active_ratio_from_load(share / x_bar, lambda_0 - x_bar, params.R)
    phi = disk * (x_bar + params.lambda_B * params.theta_B + c * rho * params.theta_I)
    live = c > 0
    return disk * (lambda_0 - x_bar) * float(np.sum(c[live] * f_kernel(phi[live])))


def x_grid(lambda_0: float, step: float) -> np.ndarray:
    """0, step, 2 step, ... up to the largest multiple not exceeding lambda_0."""
    if not step > 0:
        raise ValueError("step must be positive")
    n = int(math.floor(lambda_0 / step * (1 + 1e-12)))
    return step * np.arange(n + 1)


def solve_unbiased(params: SystemParams, groups: GroupProfile, step_x: Optional[float] = None) -> UnbiasedSolution:
    if not groups.is_unbiased():
        raise BiasMismatchError(f"unbiased solver needs equal biases, got {groups.bias}")
    lambda_0 = groups.lambda_0
    if lambda_0 <= 0:
        return UnbiasedSolution(CachingStrategy(np.zeros(groups.M)), 0.0, 0.0, [(0.0, 0.0)])
    step = lambda_0 / 1000 if step_x is None else step_x
    best_gain, best_x, best_c = -1.0, 0.0, np.zeros(groups.M)
    trace = []
    for x in x_grid(lambda_0, step):
        c = water_fill(groups.lam, x)
        gain = unbiased_gain(params, groups, c, x)
        trace.append((float(x), gain))
        if gain > best_gain:
            best_gain, best_x, best_c = gain, float(x), c
    return UnbiasedSolution(CachingStrategy(best_c), best_x, best_gain, trace)
