"""Reference caching policies used for comparison."""

from __future__ import annotations

import enum
from typing import Optional

import numpy as np

from d2dcache.model import CachingStrategy, GroupProfile, SystemParams
from d2dcache.opt_unbiased import solve_unbiased


class PolicyId(str, enum.Enum):
    PROPOSED_EXACT = "proposed_exact"
    PROPOSED_ASYMPTOTIC = "proposed_asymptotic"
    UNIFORM = "uniform"
    ONE_UT = "one_ut"


def policy_one_ut(groups: GroupProfile, delta: float) -> CachingStrategy:
    """Every group caches at density ``delta`` (capped at its own density)."""
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    return CachingStrategy(np.minimum(delta, np.asarray(groups.lam, dtype=float)))


def policy_uniform(params: SystemParams, groups: GroupProfile, step_x: Optional[float] = None) -> CachingStrategy:
    """Optimal allocation computed as if all biases were equal.

    The caller evaluates the returned densities under the true biases.
    """
    return solve_unbiased(params, groups.with_uniform_bias(), step_x).c_star
