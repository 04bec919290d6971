"""Low-complexity caching via the unlimited-range success probability.

With the D2D range relaxed to infinity the success probability becomes a
sum of ratios.  Bounding every active ratio by its value at the smallest
attainable weighted density makes each denominator linear in ``c``; the
resulting sum-of-ratios program is solved through its parametric form
(multipliers ``u`` and ratio levels ``beta`` updated by a damped Newton
step), and the total density is picked by a one-dimensional sweep.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from d2dcache.model import VORONOI_SHAPE, CachingStrategy, GroupProfile, SystemParams, _vector, offload_gain
from d2dcache.opt_unbiased import water_fill, x_grid


class SorNonConvergence(RuntimeError):
    def __init__(self, message: str, residual: float, x_bar: Optional[float] = None):
        super().__init__(message)
        self.residual = residual
        self.x_bar = x_bar


@dataclass
class SorState:
    c: np.ndarray
    u: np.ndarray
    beta: np.ndarray
    phi: np.ndarray
    iteration: int = 0
    residual: float = math.inf
    beta_trace: List[float] = field(default_factory=list)
    damping_exponents: List[int] = field(default_factory=list)


@dataclass(frozen=True)
class AsymptoticSolution:
    c_star: CachingStrategy
    x_star: float
    gain_lower: float
    gain_unbounded: float
    gain_model: float
    trace: List[float] = field(default_factory=list, repr=False)
    sweep: List[Tuple[float, float]] = field(default_factory=list, repr=False)


def _saturation(v: np.ndarray, requesters: float, y: float) -> np.ndarray:
    if requesters <= 0:
        return np.zeros_like(v)
    with np.errstate(divide="ignore", invalid="ignore"):
        load = np.where(v > 0, v * requesters / (VORONOI_SHAPE * y), 0.0)
    return 1.0 - (1.0 + load) ** (-VORONOI_SHAPE)


def rho_asymptotic(weights, lambda_0: float, c, x_bar: Optional[float] = None) -> np.ndarray:
    """Active ratios as the D2D range grows without bound."""
    v = np.asarray(weights, dtype=float)
    c = _vector(c)
    x = float(c.sum()) if x_bar is None else x_bar
    y = float(v @ c)
    if y <= 0:
        return np.zeros_like(v)
    return _saturation(v, lambda_0 - x, y)


def y_min(weights, lam, x_bar: float) -> Tuple[float, np.ndarray]:
    """Smallest ``sum(v * c)`` over the box with ``sum(c) = x_bar``, and a minimiser."""
    v = np.asarray(weights, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if x_bar > lam.sum() * (1 + 1e-12):
        raise ValueError(f"x_bar={x_bar} exceeds total density {lam.sum()}")
    c = np.zeros_like(lam)
    rest = x_bar
    for k in np.lexsort((np.arange(v.size), v)):
        take = min(rest, lam[k])
        c[k] = take
        rest -= take
        if rest <= 0:
            break
    return float(v @ c), c


def rho_upper(weights, lam, x_bar: float) -> np.ndarray:
    """Upper bound on the active ratios over all allocations with total ``x_bar``."""
    v = np.asarray(weights, dtype=float)
    lambda_0 = float(np.sum(lam))
    y, _ = y_min(v, lam, x_bar)
    requesters = lambda_0 - x_bar
    if y <= 0:
        return np.where((v > 0) & (requesters > 0), 1.0, 0.0)
    return _saturation(v, requesters, y)


class RatioProblem:
    """Sum of ratios ``sum(c_m v_m / phi_m(c))`` at a fixed total density."""

    def __init__(self, params: SystemParams, groups: GroupProfile, x_bar: float):
        self.v = groups.weights(params.alpha)
        self.lam = np.asarray(groups.lam, dtype=float)
        self.x_bar = float(x_bar)
        self.rho_bar = rho_upper(self.v, self.lam, x_bar)
        self.bs = params.lambda_B * params.theta_B
        self.theta_I = params.theta_I

    def phi(self, c: np.ndarray) -> np.ndarray:
        return float(self.v @ c) + self.v * (self.bs + self.rho_bar * c * self.theta_I)

    def ratios(self, c: np.ndarray) -> np.ndarray:
        phi = self.phi(c)
        num = c * self.v
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(num > 0, num / phi, 0.0)

    def value(self, c: np.ndarray) -> float:
        return float(self.ratios(c).sum())

    def coefficients(self, u: np.ndarray, beta: np.ndarray) -> np.ndarray:
        """Coefficient of c_k in sum_m u_m (c_m v_m - beta_m phi_m(c))."""
        v = self.v
        return v * u - v * float(u @ beta) - u * beta * self.rho_bar * self.theta_I * v

    def greedy(self, coef: np.ndarray) -> np.ndarray:
        c = np.zeros_like(self.lam)
        rest = self.x_bar
        for k in np.lexsort((np.arange(coef.size), -coef)):
            take = min(rest, self.lam[k])
            c[k] = take
            rest -= take
            if rest <= 0:
                break
        return c

    def project(self, z: np.ndarray) -> np.ndarray:
        """Euclidean projection onto {sum(c) = x_bar, 0 <= c <= lam}.

        The clipped sum is piecewise linear and nonincreasing in the shift, so
        the shift is found exactly between consecutive breakpoints.
        """
        lam = self.lam
        if self.x_bar >= lam.sum():
            return lam.copy()
        knots = np.unique(np.concatenate([z - lam, z]))
        sums = np.clip(z[None, :] - knots[:, None], 0.0, lam).sum(axis=1)
        # sums is nonincreasing in the knots; find the bracketing pair
        k = int(np.searchsorted(-sums, -self.x_bar, side="left"))
        if k == 0:
            tau = knots[0]
        elif k >= knots.size:
            tau = knots[-1]
        else:
            s0, s1 = sums[k - 1], sums[k]
            t = 0.0 if s0 == s1 else (s0 - self.x_bar) / (s0 - s1)
            tau = knots[k - 1] + t * (knots[k] - knots[k - 1])
        c = np.clip(z - tau, 0.0, lam)
        gap = self.x_bar - c.sum()
        inside = (c > 0) & (c < lam)
        if gap and np.any(inside):
            c[inside] += gap / inside.sum()
            c = np.clip(c, 0.0, lam)
        return c

    def residuals(self, c: np.ndarray, u: np.ndarray, beta: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        phi = self.phi(c)
        return u * phi - 1.0, beta * phi - c * self.v


def sor_inner_lp(state: SorState, params: SystemParams, groups: GroupProfile, x_bar: float) -> CachingStrategy:
    """Exact maximiser of the parametric linear objective: greedy fill by coefficient.

    Ties in the coefficient go to the lower group index.
    """
    problem = RatioProblem(params, groups, x_bar)
    return CachingStrategy(problem.greedy(problem.coefficients(state.u, state.beta)))


def ps_infinity_lower(params: SystemParams, groups: GroupProfile, c, x_bar: Optional[float] = None) -> float:
    """Unlimited-range success probability with every active ratio at its upper bound."""
    c = _vector(c)
    x = float(c.sum()) if x_bar is None else x_bar
    return RatioProblem(params, groups, x).value(c)


def ps_infinity(params: SystemParams, groups: GroupProfile, c) -> float:
    """Unlimited-range success probability with the allocation's own active ratios."""
    c = _vector(c)
    v = groups.weights(params.alpha)
    rho = rho_asymptotic(v, groups.lambda_0, c)
    y = float(v @ c)
    num = c * v
    den = y + params.lambda_B * params.theta_B * v + c * rho * params.theta_I * v
    with np.errstate(divide="ignore", invalid="ignore"):
        return float(np.sum(np.where(num > 0, num / den, 0.0)))


def _ascent_step(problem: RatioProblem, c: np.ndarray, coef: np.ndarray, step: float) -> Tuple[np.ndarray, float]:
    """Maximise the linear objective from ``c`` by gradient projection with Armijo backtracking.

    The unbounded step (the greedy vertex) is tried first; when it does
    not improve the ratio sum the step shrinks along the projection arc.
    Returns the new point and the step to try next time.
    """
    base = problem.value(c)
    vertex = problem.greedy(coef)
    if problem.value(vertex) >= base + 1e-4 * float(coef @ (vertex - c)) and problem.value(vertex) > base:
        return vertex, step
    s = step
    floor = 1e-14 * max(problem.x_bar, 1e-300)
    for _ in range(60):
        trial = problem.project(c + s * coef)
        if float(np.max(np.abs(trial - c))) <= floor:
            break
        gain = problem.value(trial) - base
        if gain >= 1e-4 * float(coef @ (trial - c)) and gain >= 0:
            # Keep shrinking while it pays; a long accepted step that
            # overshoots the arc maximum otherwise zigzags for hundreds of steps.
            best, best_val = trial, base + gain
            for _ in range(60):
                shorter = problem.project(c + 0.5 * s * coef)
                val = problem.value(shorter)
                if val <= best_val:
                    break
                best, best_val, s = shorter, val, 0.5 * s
            return best, 2.0 * s
        s *= 0.5
    return c, step


def solve_sor(
    params: SystemParams,
    groups: GroupProfile,
    x_bar: float,
    zeta: float = 0.5,
    eps: float = 0.01,
    tol: float = 1e-8,
    max_iterations: int = 500,
    c0=None,
) -> SorState:
    """Parametric sum-of-ratios iteration at a fixed total density ``x_bar``."""
    if not 0 < zeta < 1 or not 0 < eps < 1:
        raise ValueError("zeta and eps must lie in (0, 1)")
    lambda_0 = groups.lambda_0
    if x_bar < 0 or x_bar > lambda_0 * (1 + 1e-12):
        raise ValueError(f"x_bar={x_bar} outside [0, {lambda_0}]")
    x_bar = min(x_bar, lambda_0)
    problem = RatioProblem(params, groups, x_bar)
    c = water_fill(groups.lam, x_bar) if c0 is None else np.array(_vector(c0), dtype=float)
    if abs(c.sum() - x_bar) > 1e-9 * max(1.0, x_bar) or np.any(c < 0) or np.any(c > groups.lam + 1e-12):
        raise ValueError("initial allocation is infeasible")
    phi = problem.phi(c)
    if x_bar == 0 or np.any(phi <= 0):
        u = np.where(phi > 0, 1.0 / np.where(phi > 0, phi, 1.0), 1.0)
        beta = np.zeros(groups.M)
        return SorState(c, u, beta, phi, 0, 0.0, [0.0], [])

    u = 1.0 / phi
    beta = c * problem.v / phi
    state = SorState(c, u, beta, phi, 0, 0.0, [float(beta.sum())], [])
    step = x_bar / max(float(np.max(np.abs(problem.coefficients(u, beta)))), 1e-300)
    for t in range(1, max_iterations + 1):
        coef = problem.coefficients(u, beta)
        c, step = _ascent_step(problem, c, coef, step)
        phi = problem.phi(c)
        chi, kappa = problem.residuals(c, u, beta)
        norm0 = float(chi @ chi + kappa @ kappa)
        i = 1
        while i <= 60:
            z = zeta**i
            u_try = u - z * chi / phi
            b_try = beta - z * kappa / phi
            chi_t, kappa_t = problem.residuals(c, u_try, b_try)
            if float(chi_t @ chi_t + kappa_t @ kappa_t) <= (1.0 - eps * z) ** 2 * norm0:
                break
            i += 1
        u, beta = u_try, b_try
        chi, kappa = problem.residuals(c, u, beta)
        residual = float(max(np.max(np.abs(chi)), np.max(np.abs(kappa)), np.max(np.abs(kappa) / phi)))
        state = SorState(
            c, u, beta, phi, t, residual, state.beta_trace + [float(beta.sum())], state.damping_exponents + [i]
        )
        if residual <= tol:
            return state
    raise SorNonConvergence(
        f"sum-of-ratios iteration did not converge in {max_iterations} steps (residual {state.residual:.3e})",
        state.residual,
        x_bar,
    )


def solve_asymptotic(
    params: SystemParams, groups: GroupProfile, step_x: Optional[float] = None, **sor_options
) -> AsymptoticSolution:
    lambda_0 = groups.lambda_0
    M = groups.M
    if lambda_0 <= 0:
        zero = CachingStrategy(np.zeros(M))
        return AsymptoticSolution(zero, 0.0, 0.0, 0.0, 0.0, [0.0], [(0.0, 0.0)])
    step = lambda_0 / 200 if step_x is None else step_x
    best = None
    sweep = []
    for x in x_grid(lambda_0, step):
        x = float(x)
        try:
            state = solve_sor(params, groups, x, **sor_options)
        except SorNonConvergence as err:
            raise SorNonConvergence(f"{err} at x_bar={x}", err.residual, x) from err
        gain = (lambda_0 - x) * ps_infinity_lower(params, groups, state.c, x)
        sweep.append((x, gain))
        if best is None or gain > best[0]:
            best = (gain, x, state)
    gain, x, state = best
    c = np.clip(state.c, 0.0, groups.lam)
    return AsymptoticSolution(
        c_star=CachingStrategy(c),
        x_star=x,
        gain_lower=gain,
        gain_unbounded=(lambda_0 - x) * ps_infinity(params, groups, c),
        gain_model=offload_gain(params, groups, c).offload_gain,
        trace=list(state.beta_trace),
        sweep=sweep,
    )


def _compositions(n: int, caps: np.ndarray) -> np.ndarray:
    """All integer vectors k with sum(k) = n and 0 <= k <= caps."""
    if caps.size == 1:
        return np.array([[n]]) if n <= caps[0] else np.zeros((0, 1), dtype=int)
    rows = []
    for k0 in range(min(n, int(caps[0])) + 1):
        tail = _compositions(n - k0, caps[1:])
        if tail.size:
            rows.append(np.column_stack([np.full(len(tail), k0), tail]))
    return np.vstack(rows) if rows else np.zeros((0, caps.size), dtype=int)


def brute_force_ratio_max(
    params: SystemParams, groups: GroupProfile, x_bar: float, step: float = 2e-4
) -> Tuple[float, np.ndarray]:
    """Grid maximum of the bounded ratio sum over allocations with total ``x_bar``.

    Grid points are multiples of ``step``; ``x_bar`` should be one too.
    """
    n = int(round(x_bar / step))
    caps = np.floor(np.asarray(groups.lam) / step + 1e-9).astype(int)
    grid = _compositions(n, caps) * step
    if grid.size == 0:
        raise ValueError("no grid point satisfies the constraints")
    problem = RatioProblem(params, groups, x_bar)
    values = np.array([problem.value(c) for c in grid])
    k = int(np.argmax(values))
    return float(values[k]), grid[k]
