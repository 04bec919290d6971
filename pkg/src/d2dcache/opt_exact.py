"""Globally optimal caching for arbitrary trust biases.

The outer problem is a two-dimensional grid over the total density
``x = sum(c)`` and the weighted total ``y = sum(v * c)``.  Fixing both makes
the active ratios constant and the inner objective ``sum(c * f(phi))``
concave, which is maximised by gradient projection onto the two equality
constraints with an exact line search.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from d2dcache import numerics
from d2dcache.model import (
    CachingStrategy,
    GroupProfile,
    SystemParams,
    active_ratio_from_load,
    f_kernel,
    f_kernel_prime,
    f_kernel_second,
)
from d2dcache.opt_unbiased import water_fill, x_grid

_FEAS_TOL = 1e-12


class SingularProjectionError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class GridSpec:
    """Search steps; ``step_y=None`` divides each y-interval into ``y_divisions`` cells."""

    step_x: Optional[float] = None
    step_y: Optional[float] = None
    convergence: float = 1e-9
    x_divisions: int = 200
    y_divisions: int = 200
    max_iterations: int = 1000

    def __post_init__(self) -> None:
        for name in ("step_x", "step_y"):
            val = getattr(self, name)
            if val is not None and not val > 0:
                raise ValueError(f"{name} must be positive")
        if not self.convergence > 0:
            raise ValueError("convergence must be positive")
        if self.x_divisions < 1 or self.y_divisions < 1:
            raise ValueError("grid divisions must be >= 1")


@dataclass(frozen=True)
class ExactSolution:
    c_star: CachingStrategy
    x_star: float
    y_star: float
    gain: float
    grid_trace: Dict[Tuple[float, float], float] = field(default_factory=dict, repr=False)
    iterations_total: int = 0


def y_bounds(weights, lam, x_bar: float) -> Tuple[float, float]:
    """Search interval for y at fixed x (may be looser than the feasible range)."""
    v = np.asarray(weights, dtype=float)
    lam = np.asarray(lam, dtype=float)
    low = float(v.min()) * x_bar
    high = min(float(v.max()) * x_bar, float(v @ lam))
    return low, high


def _greedy(order: np.ndarray, lam: np.ndarray, x_bar: float) -> np.ndarray:
    c = np.zeros_like(lam)
    rest = x_bar
    for k in order:
        take = min(rest, lam[k])
        c[k] = take
        rest -= take
        if rest <= 0:
            break
    return c


def extreme_allocations(weights, lam, x_bar: float) -> Tuple[np.ndarray, np.ndarray]:
    """Box points with ``sum(c) = x_bar`` minimising and maximising ``sum(v * c)``."""
    v = np.asarray(weights, dtype=float)
    lam = np.asarray(lam, dtype=float)
    idx = np.arange(v.size)
    lo = _greedy(np.lexsort((idx, v)), lam, x_bar)
    hi = _greedy(np.lexsort((idx, -v)), lam, x_bar)
    return lo, hi


def feasible_y_range(weights, lam, x_bar: float) -> Tuple[float, float]:
    v = np.asarray(weights, dtype=float)
    lo, hi = extreme_allocations(v, lam, x_bar)
    return float(v @ lo), float(v @ hi)


def feasible_init(weights, lam, x_bar: float, y_bar: float) -> Optional[np.ndarray]:
    """A box point with the given x and y, or ``None`` when none exists.

    Starts at the y-minimising vertex and moves mass toward high-weight
    groups along the segment to the y-maximising vertex.
    """
    v = np.asarray(weights, dtype=float)
    lam = np.asarray(lam, dtype=float)
    lo, hi = extreme_allocations(v, lam, x_bar)
    y_lo, y_hi = float(v @ lo), float(v @ hi)
    slack = _FEAS_TOL * max(1.0, abs(y_hi))
    if y_bar < y_lo - slack or y_bar > y_hi + slack:
        return None
    if y_hi - y_lo <= slack:
        if np.ptp(v) <= 1e-12 * max(1.0, float(v.max())):
            return water_fill(lam, x_bar)
        return lo
    t = min(max((y_bar - y_lo) / (y_hi - y_lo), 0.0), 1.0)
    return lo + t * (hi - lo)


class InnerProblem:
    """Concave inner objective at fixed (x, y)."""

    def __init__(self, params: SystemParams, groups: GroupProfile, x_bar: float, y_bar: float):
        self.params = params
        self.groups = groups
        self.x_bar = x_bar
        self.y_bar = y_bar
        self.v = groups.weights(params.alpha)
        self.lam = groups.lam
        disk = params.disk
        self.disk = disk
        lambda_ur = groups.lambda_0 - x_bar
        rho = np.zeros(groups.M)
        base = np.full(groups.M, np.inf)
        if y_bar > 0:
            for m in range(groups.M):
                vm = self.v[m]
                if vm <= 0:
                    continue
                share = -math.expm1(-disk * y_bar / vm)
                rho[m] = active_ratio_from_load(vm * share / y_bar, lambda_ur, params.R)
                base[m] = disk * (y_bar / vm + params.lambda_B * params.theta_B)
        self.rho = rho
        self.base = base
        self.slope = disk * rho * params.theta_I

    def phi(self, c: np.ndarray) -> np.ndarray:
        return self.base + self.slope * c

    def value(self, c: np.ndarray) -> float:
        live = c > 0
        if not np.any(live):
            return 0.0
        return float(np.sum(c[live] * f_kernel(self.phi(c)[live])))

    def gradient(self, c: np.ndarray) -> np.ndarray:
        phi = self.phi(c)
        g = np.zeros_like(c)
        ok = np.isfinite(phi)
        g[ok] = f_kernel(phi[ok]) + self.slope[ok] * c[ok] * f_kernel_prime(phi[ok])
        return g

    def hessian_diagonal(self, c: np.ndarray) -> np.ndarray:
        phi = self.phi(c)
        s = self.slope
        return s * (2.0 * f_kernel_prime(phi) + c * s * f_kernel_second(phi))

    def gain(self, c: np.ndarray) -> float:
        return (self.groups.lambda_0 - self.x_bar) * self.disk * self.value(c)


def constraint_matrix(weights: np.ndarray) -> np.ndarray:
    """Rows of the equality constraints, dropping the weight row when it is redundant."""
    v = np.asarray(weights, dtype=float)
    if v.size < 2 or np.ptp(v) <= 1e-12 * max(1.0, float(np.abs(v).max())):
        return np.ones((1, v.size))
    return np.vstack([np.ones(v.size), v])


def projection_matrix(N: np.ndarray) -> np.ndarray:
    """I - N^T (N N^T)^{-1} N."""
    gram = N @ N.T
    if np.linalg.cond(gram) > 1e12:
        raise SingularProjectionError("constraint Gram matrix is singular")
    return np.eye(N.shape[1]) - N.T @ np.linalg.solve(gram, N)


def projected_direction(g: np.ndarray, c: np.ndarray, lam: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Projected gradient, holding at their bounds the coordinates it would push out."""
    M = c.size
    free = np.ones(M, dtype=bool)
    atol = 1e-15
    while True:
        p = np.zeros(M)
        idx = np.flatnonzero(free)
        N = constraint_matrix(v[idx])
        if idx.size > N.shape[0]:
            p[idx] = projection_matrix(N) @ g[idx]
        out = free & (((c <= atol) & (p < 0)) | ((c >= lam - atol) & (p > 0)))
        if not np.any(out):
            return p
        free &= ~out


def _max_step(c: np.ndarray, p: np.ndarray, lam: np.ndarray) -> float:
    with np.errstate(divide="ignore", invalid="ignore"):
        up = np.where(p > 0, (lam - c) / p, np.inf)
        down = np.where(p < 0, -c / p, np.inf)
    return float(max(0.0, min(up.min(), down.min())))


def inner_maximize(
    params: SystemParams,
    groups: GroupProfile,
    x_bar: float,
    y_bar: float,
    spec: GridSpec = GridSpec(),
    c0: Optional[np.ndarray] = None,
    problem: Optional[InnerProblem] = None,
) -> Tuple[Optional[np.ndarray], float, int]:
    """Gradient projection at fixed (x, y); returns (c, F, iterations) or (None, -inf, 0)."""
    prob = problem or InnerProblem(params, groups, x_bar, y_bar)
    c = feasible_init(prob.v, groups.lam, x_bar, y_bar) if c0 is None else np.array(c0, dtype=float)
    if c is None:
        return None, -math.inf, 0
    F = prob.value(c)
    if groups.M <= constraint_matrix(prob.v).shape[0]:
        # The equality constraints pin c down completely.
        return c, F, 0
    iters = 0
    for _ in range(spec.max_iterations):
        p = projected_direction(prob.gradient(c), c, groups.lam, prob.v)
        if not np.any(p):
            break
        s_max = _max_step(c, p, groups.lam)
        if s_max <= 0:
            break
        s = numerics.bisect_max(lambda s: prob.value(np.clip(c + s * p, 0.0, groups.lam)), 0.0, s_max, s_max * 1e-10)
        c_new = np.clip(c + s * p, 0.0, groups.lam)
        F_new = prob.value(c_new)
        iters += 1
        if F_new < F:
            break
        gained = F_new - F
        c, F = c_new, F_new
        if gained <= spec.convergence:
            break
    return c, F, iters


def y_values(weights, lam, x_bar: float, spec: GridSpec) -> np.ndarray:
    low, high = y_bounds(weights, lam, x_bar)
    width = max(high - low, 0.0)
    step = spec.step_y if spec.step_y is not None else width / spec.y_divisions
    if width <= 0 or step <= 0:
        return np.array([low])
    n = int(math.floor(width / step * (1 + 1e-12)))
    return low + step * np.arange(n + 1)


def solve_exact(params: SystemParams, groups: GroupProfile, spec: GridSpec = GridSpec()) -> ExactSolution:
    lambda_0 = groups.lambda_0
    M = groups.M
    if lambda_0 <= 0:
        return ExactSolution(CachingStrategy(np.zeros(M)), 0.0, 0.0, 0.0, {(0.0, 0.0): 0.0}, 0)
    v = groups.weights(params.alpha)
    step_x = spec.step_x if spec.step_x is not None else lambda_0 / spec.x_divisions
    best = (-math.inf, 0.0, 0.0, np.zeros(M))
    trace: Dict[Tuple[float, float], float] = {}
    total_iters = 0
    for x in x_grid(lambda_0, step_x):
        x = float(x)
        y_lo, y_hi = feasible_y_range(v, groups.lam, x)
        slack = _FEAS_TOL * max(1.0, y_hi)
        for y in y_values(v, groups.lam, x, spec):
            y = float(y)
            if y < y_lo - slack or y > y_hi + slack:
                continue
            c, F, iters = inner_maximize(params, groups, x, y, spec)
            if c is None:
                continue
            total_iters += iters
            U = (lambda_0 - x) * params.disk * F
            trace[(x, y)] = F
            if U > best[0]:
                best = (U, x, y, c)
    U, x, y, c = best
    c = np.clip(c, 0.0, groups.lam)
    return ExactSolution(CachingStrategy(c), x, float(v @ c), float(U), trace, total_iters)
