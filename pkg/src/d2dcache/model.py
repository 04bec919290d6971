"""Closed-form D2D performance metrics of a multi-group, trust-biased caching network.

Conventions used throughout the package:

* densities are per square metre, distances in metres;
* ``v_m = B_m ** (2 / alpha)`` is the association weight of group ``m``;
* a group with ``c_m = 0`` (or zero trust) is never selected, so its
  association probability, active ratio and conditional success are 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from d2dcache import numerics

ArrayLike = Union[Sequence[float], np.ndarray]

VORONOI_SHAPE = 3.5
_PROB_SLACK = 1e-9


class ConsistencyError(ArithmeticError):
    """A computed probability left [0, 1]; indicates a formula or input bug."""


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class SystemParams:
    """Physical-layer constants; ``gamma_th`` is linear, powers in watts."""

    alpha: float
    gamma_th: float
    p_t: float
    p_B: float
    lambda_B: float
    R: float
    theta_I: float = field(init=False, repr=False)
    theta_B: float = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if not self.alpha > 2:
            raise ValueError(f"alpha must exceed 2, got {self.alpha}")
        if not self.gamma_th >= 0:
            raise ValueError("gamma_th must be nonnegative")
        if not self.R > 0:
            raise ValueError("R must be positive")
        if not self.lambda_B >= 0:
            raise ValueError("lambda_B must be nonnegative")
        if not self.p_t > 0:
            raise ValueError("p_t must be positive")
        if not self.p_B >= 0:
            raise ValueError("p_B must be nonnegative")
        theta_i = numerics.theta_interference(self.alpha, self.gamma_th)
        if self.p_B > 0:
            theta_b = numerics.theta_bs(self.alpha, self.gamma_th, self.p_B / self.p_t)
        else:
            theta_b = 0.0
        object.__setattr__(self, "theta_I", theta_i)
        object.__setattr__(self, "theta_B", theta_b)

    @classmethod
    def from_db(
        cls,
        alpha: float = 3.0,
        gamma_th_db: float = 3.0,
        p_t_dbm: float = 15.0,
        p_b_dbm: float = 20.0,
        lambda_B: float = 1e-4,
        R: float = 15.0,
    ) -> "SystemParams":
        return cls(
            alpha=alpha,
            gamma_th=db_to_linear(gamma_th_db),
            p_t=dbm_to_watts(p_t_dbm),
            p_B=dbm_to_watts(p_b_dbm),
            lambda_B=lambda_B,
            R=R,
        )

    @property
    def disk(self) -> float:
        """pi R^2, the area of the D2D range."""
        return math.pi * self.R**2

    def replace(self, **changes) -> "SystemParams":
        kw = dict(
            alpha=self.alpha, gamma_th=self.gamma_th, p_t=self.p_t, p_B=self.p_B,
            lambda_B=self.lambda_B, R=self.R,
        )
        kw.update(changes)
        return SystemParams(**kw)


@dataclass(frozen=True)
class GroupProfile:
    """Per-group interested-user densities and trust biases."""

    lam: np.ndarray
    bias: np.ndarray

    def __post_init__(self) -> None:
        lam = np.asarray(self.lam, dtype=float).reshape(-1)
        bias = np.asarray(self.bias, dtype=float).reshape(-1)
        if lam.size < 1:
            raise ValueError("at least one group is required")
        if lam.shape != bias.shape:
            raise ValueError("lam and bias must have the same length")
        if np.any(lam < 0):
            raise ValueError("user densities must be nonnegative")
        if np.any(bias < 0) or np.any(bias > 1):
            raise ValueError("biases must lie in [0, 1]")
        if abs(bias.sum() - 1.0) > 1e-9:
            raise ValueError(f"biases must sum to 1, got {bias.sum()!r}")
        lam.flags.writeable = False
        bias.flags.writeable = False
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "bias", bias)

    @classmethod
    def from_counts(cls, lam: ArrayLike, counts: ArrayLike) -> "GroupProfile":
        return cls(np.asarray(lam, dtype=float), trust_bias_from_counts(counts))

    @property
    def M(self) -> int:
        return int(self.lam.size)

    @property
    def lambda_0(self) -> float:
        return float(self.lam.sum())

    def weights(self, alpha: float) -> np.ndarray:
        """Association weights v_m = B_m^(2/alpha)."""
        return self.bias ** (2.0 / alpha)

    def with_uniform_bias(self) -> "GroupProfile":
        return GroupProfile(self.lam, np.full(self.M, 1.0 / self.M))

    def is_unbiased(self, tol: float = 1e-12) -> bool:
        return bool(np.ptp(self.bias) <= tol)


@dataclass(frozen=True)
class CachingStrategy:
    """Per-group caching densities, validated against a group profile."""

    c: np.ndarray

    def __post_init__(self) -> None:
        c = np.array(self.c, dtype=float).reshape(-1)
        if np.any(c < 0):
            raise ValueError("caching densities must be nonnegative")
        c.flags.writeable = False
        object.__setattr__(self, "c", c)

    def check(self, groups: GroupProfile, tol: float = 1e-12) -> "CachingStrategy":
        if self.c.shape != groups.lam.shape:
            raise ValueError("caching vector length differs from group count")
        if np.any(self.c > groups.lam + tol):
            raise ValueError("caching density exceeds user density")
        return self

    @property
    def total(self) -> float:
        return float(self.c.sum())


@dataclass(frozen=True)
class TrustCounts:
    counts: np.ndarray

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts, dtype=float).reshape(-1)
        if np.any(counts < 0):
            raise ValueError("trust counts must be nonnegative")
        if not np.any(counts > 0):
            raise ValueError("at least one trust count must be positive")
        object.__setattr__(self, "counts", counts)


@dataclass(frozen=True)
class Metrics:
    assoc_prob: np.ndarray
    active_ratio: np.ndarray
    success_prob_given_group: np.ndarray
    success_prob: float
    offload_gain: float
    phi: np.ndarray
    offload_gain_abs: Optional[float] = None

    def group_gain(self, groups: GroupProfile, c: ArrayLike) -> np.ndarray:
        """Per-group gain (lambda_m - c_m) * P_s, using the total success probability."""
        return (groups.lam - _vector(c)) * self.success_prob


def _vector(c) -> np.ndarray:
    if isinstance(c, CachingStrategy):
        return c.c
    return np.asarray(c, dtype=float).reshape(-1)


def trust_bias_from_counts(counts: Union[TrustCounts, ArrayLike]) -> np.ndarray:
    """Normalise verified-content counts into trust biases."""
    if not isinstance(counts, TrustCounts):
        counts = TrustCounts(np.asarray(counts, dtype=float))
    return counts.counts / counts.counts.sum()


# --- f(t) = (1 - e^-t) / t and its derivatives -------------------------------

_SERIES_TERMS = 24
_SERIES_COEF = [
    np.array([(-1.0) ** n * math.perm(n, k) / math.factorial(n + 1) for n in range(k, k + _SERIES_TERMS)])
    for k in range(3)
]


def _kernel(t, order: int, cut: float):
    # f(t) = sum_n (-t)^n / (n+1)!; near 0 the closed forms cancel badly.
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("f is defined for t >= 0 only")
    small = t < cut
    ts = np.where(small, 1.0, t)
    em = np.exp(-ts)
    if order == 0:
        out = -np.expm1(-ts) / ts
    elif order == 1:
        out = (em * (ts + 1.0) - 1.0) / ts**2
    else:
        out = (2.0 - em * (2.0 + 2.0 * ts + ts**2)) / ts**3
    if np.any(small):
        out = np.where(small, np.polynomial.polynomial.polyval(np.where(small, t, 0.0), _SERIES_COEF[order]), out)
    return float(out) if out.ndim == 0 else out


def f_kernel(t):
    """(1 - e^-t) / t with f(0) = 1."""
    return _kernel(t, 0, 1e-6)


def f_kernel_prime(t):
    return _kernel(t, 1, 1e-2)


def f_kernel_second(t):
    return _kernel(t, 2, 1e-1)


# --- closed-form metrics -------------------------------------------------------


def assoc_prob(params: SystemParams, groups: GroupProfile, c) -> np.ndarray:
    """Probability that the typical requester is served by a transmitter of each group."""
    c = _vector(c)
    v = groups.weights(params.alpha)
    y = float(v @ c)
    out = np.zeros(groups.M)
    if y <= 0:
        return out
    live = (c > 0) & (v > 0)
    vm = v[live]
    out[live] = vm * c[live] / y * -np.expm1(-params.disk * y / vm)
    return out


def active_ratio_from_load(assoc_per_cache: float, lambda_ur: float, R: float) -> float:
    """Active-transmitter ratio given the mean cell area ``assoc_per_cache`` = P_m / c_m.

    The Voronoi cell of a transmitter is gamma distributed (shape 3.5) and
    truncated to the D2D disk; the transmitter is idle when no requester
    falls in its cell.
    """
    if assoc_per_cache <= 0 or lambda_ur <= 0:
        return 0.0
    k = VORONOI_SHAPE
    disk = math.pi * R * R
    scaled = k / assoc_per_cache
    head = (1.0 + lambda_ur * assoc_per_cache / k) ** (-k)
    num = numerics.lower_incomplete_gamma(k, (lambda_ur + scaled) * disk)
    den = numerics.lower_incomplete_gamma(k, scaled * disk)
    if den == 0.0:
        # Both arguments underflow the series; use the leading power law.
        ratio = (1.0 + lambda_ur / scaled) ** k
    else:
        ratio = num / den
    return 1.0 - head * ratio


def active_ratio(params: SystemParams, groups: GroupProfile, c, assoc: Optional[np.ndarray] = None) -> np.ndarray:
    c = _vector(c)
    if assoc is None:
        assoc = assoc_prob(params, groups, c)
    lambda_ur = float(np.sum(groups.lam - c))
    rho = np.zeros(groups.M)
    for m in range(groups.M):
        if c[m] > 0 and assoc[m] > 0:
            rho[m] = active_ratio_from_load(assoc[m] / c[m], lambda_ur, params.R)
    return rho


def _check_prob(name: str, value) -> None:
    arr = np.atleast_1d(value)
    if np.any(arr < -_PROB_SLACK) or np.any(arr > 1 + _PROB_SLACK):
        raise ConsistencyError(f"{name} left [0, 1]: {value}")


def success_prob(params: SystemParams, groups: GroupProfile, c, area: Optional[float] = None) -> Metrics:
    """All metrics for caching densities ``c``."""
    c = _vector(c)
    if c.shape != groups.lam.shape:
        raise ValueError("caching vector length differs from group count")
    v = groups.weights(params.alpha)
    y = float(v @ c)
    disk = params.disk
    assoc = assoc_prob(params, groups, c)
    rho = active_ratio(params, groups, c, assoc)

    live = (c > 0) & (v > 0)
    phi = np.full(groups.M, np.inf)
    pth = np.zeros(groups.M)
    terms = np.zeros(groups.M)
    if np.any(live):
        phi[live] = disk * (y / v[live] + params.lambda_B * params.theta_B + c[live] * rho[live] * params.theta_I)
        terms[live] = disk * c[live] * f_kernel(phi[live])
        ok = live & (assoc > 0)
        pth[ok] = terms[ok] / assoc[ok]
    ps = float(terms.sum())

    _check_prob("association probability", assoc)
    _check_prob("association probability sum", assoc.sum())
    _check_prob("active ratio", rho)
    _check_prob("conditional success probability", pth)
    _check_prob("success probability", ps)

    gain = (groups.lambda_0 - float(c.sum())) * ps
    return Metrics(
        assoc_prob=assoc,
        active_ratio=rho,
        success_prob_given_group=pth,
        success_prob=ps,
        offload_gain=gain,
        phi=phi,
        offload_gain_abs=None if area is None else gain * area,
    )


def offload_gain(params: SystemParams, groups: GroupProfile, c, area: Optional[float] = None) -> Metrics:
    """Density of requesters offloaded over D2D; same record as :func:`success_prob`."""
    return success_prob(params, groups, c, area)
