"""Monte-Carlo Poisson-point-process simulator of the trust-biased D2D network.

Every realization places the interested users of each group as a PPP,
thins them into transmitters (UTs) and requesters (URs), drops base
stations, lets every requester pick the transmitter with the largest
biased received power within range, and measures SIRs under Rayleigh
fading.  A reference requester is added at the window centre.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, TextIO

import numpy as np
from scipy.spatial import cKDTree

from d2dcache.model import GroupProfile, SystemParams, _vector

METRICS = ("success_prob", "assoc_prob", "active_ratio", "offload_gain")
Z99 = 2.5758293035489004


class DegenerateEstimateError(RuntimeError):
    """The event a metric is conditioned on never occurred."""


@dataclass(frozen=True)
class SimConfig:
    window_side: float = 100.0
    realizations: int = 2000
    seed: int = 0
    boundary: str = "torus"
    guard_margin: float = 0.0
    workers: Optional[int] = None

    def __post_init__(self) -> None:
        if not self.window_side > 0:
            raise ValueError("window_side must be positive")
        if self.realizations < 1:
            raise ValueError("realizations must be >= 1")
        if self.boundary not in ("torus", "guard"):
            raise ValueError(f"unknown boundary {self.boundary!r}")
        if not 0 <= self.guard_margin < self.window_side / 2:
            raise ValueError("guard margin must be in [0, window_side / 2)")

    @property
    def area(self) -> float:
        return self.window_side**2

    @property
    def torus(self) -> bool:
        return self.boundary == "torus"

    @property
    def measured_area(self) -> float:
        if self.torus:
            return self.area
        return (self.window_side - 2 * self.guard_margin) ** 2

    def n_workers(self) -> int:
        if self.workers is not None:
            return max(1, int(self.workers))
        env = os.environ.get("D2DCACHE_THREADS")
        return max(1, int(env)) if env else 1


@dataclass
class Realization:
    """Point sets of one draw; URs and UTs are stored flat with a group index."""

    ut_xy: np.ndarray
    ut_group: np.ndarray
    ur_xy: np.ndarray
    ur_group: np.ndarray
    bs_xy: np.ndarray
    ref_xy: np.ndarray
    stream_index: int
    # filled by associate()
    ur_server: Optional[np.ndarray] = None
    ur_distance: Optional[np.ndarray] = None
    ref_server: int = -1
    ref_distance: float = math.inf
    ut_active: Optional[np.ndarray] = None
    fading_rng: Optional[np.random.Generator] = field(default=None, repr=False)

    def groups_present(self, M: int) -> List[np.ndarray]:
        return [self.ut_xy[self.ut_group == m] for m in range(M)]

    def dump(self, out: TextIO) -> None:
        """Write ``kind group x y`` lines (group 1-based, 0 for base stations)."""
        for kind, xy, grp in (
            ("UT", self.ut_xy, self.ut_group + 1),
            ("UR", self.ur_xy, self.ur_group + 1),
            ("BS", self.bs_xy, np.zeros(len(self.bs_xy), dtype=int)),
        ):
            for g, (x, y) in zip(grp, xy):
                out.write(f"{kind} {int(g)} {x:.6f} {y:.6f}\n")


@dataclass(frozen=True)
class SimEstimate:
    metric: str
    mean: np.ndarray
    ci99_half: np.ndarray
    realizations: int
    seed: int
    samples: int
    cross_check: Optional[float] = None

    @property
    def sigma(self) -> np.ndarray:
        return self.ci99_half / Z99

    def scalar(self) -> float:
        return float(np.asarray(self.mean).reshape(-1)[0])


def _streams(seed: int, stream_index: int):
    ss = np.random.SeedSequence(entropy=int(seed) & ((1 << 64) - 1), spawn_key=(int(stream_index),))
    points, fading = ss.spawn(2)
    return np.random.default_rng(points), np.random.default_rng(fading)


def draw_realization(
    params: SystemParams, groups: GroupProfile, c, cfg: SimConfig, stream_index: int
) -> Realization:
    c = _vector(c)
    if np.any(c < 0) or np.any(c > groups.lam + 1e-12):
        raise ValueError("caching densities must satisfy 0 <= c <= lambda")
    rng, fading = _streams(cfg.seed, stream_index)
    side = cfg.window_side
    area = cfg.area
    ut_xy, ut_g, ur_xy, ur_g = [], [], [], []
    for m in range(groups.M):
        lam = float(groups.lam[m])
        n = rng.poisson(lam * area)
        xy = rng.uniform(0.0, side, size=(n, 2))
        q = min(1.0, c[m] / lam) if lam > 0 else 0.0
        caches = rng.uniform(size=n) <= q if q > 0 else np.zeros(n, dtype=bool)
        ut_xy.append(xy[caches])
        ut_g.append(np.full(int(caches.sum()), m))
        ur_xy.append(xy[~caches])
        ur_g.append(np.full(int((~caches).sum()), m))
    n_bs = rng.poisson(params.lambda_B * area)
    bs_xy = rng.uniform(0.0, side, size=(n_bs, 2))
    return Realization(
        ut_xy=np.concatenate(ut_xy) if ut_xy else np.empty((0, 2)),
        ut_group=np.concatenate(ut_g).astype(int) if ut_g else np.empty(0, dtype=int),
        ur_xy=np.concatenate(ur_xy) if ur_xy else np.empty((0, 2)),
        ur_group=np.concatenate(ur_g).astype(int) if ur_g else np.empty(0, dtype=int),
        bs_xy=bs_xy,
        ref_xy=np.array([side / 2.0, side / 2.0]),
        stream_index=stream_index,
        fading_rng=fading,
    )


def _displacement(a: np.ndarray, b: np.ndarray, side: float, torus: bool) -> np.ndarray:
    """Pairwise distances between rows of ``a`` and ``b``."""
    dx = np.abs(a[:, 0, None] - b[None, :, 0])
    dy = np.abs(a[:, 1, None] - b[None, :, 1])
    if torus:
        dx = np.minimum(dx, side - dx)
        dy = np.minimum(dy, side - dy)
    return np.hypot(dx, dy)


def associate(real: Realization, params: SystemParams, groups: GroupProfile, cfg: SimConfig) -> Realization:
    """Max biased-received-power association of every requester (and the reference)."""
    n_ur = len(real.ur_xy)
    n_ut = len(real.ut_xy)
    servers = np.full(n_ur + 1, -1, dtype=int)
    dist = np.full(n_ur + 1, np.inf)
    if n_ut > 0:
        boxsize = cfg.window_side if cfg.torus else None
        rx = np.vstack([real.ur_xy, real.ref_xy[None, :]])
        best = np.full(n_ur + 1, -np.inf)
        # Within a group the strongest biased power is the nearest UT.
        for m in range(groups.M):
            members = np.flatnonzero(real.ut_group == m)
            if len(members) == 0 or groups.bias[m] <= 0:
                continue
            tree = cKDTree(real.ut_xy[members], boxsize=boxsize)
            d, k = tree.query(rx, k=1, distance_upper_bound=params.R)
            hit = np.isfinite(d)
            score = np.full(n_ur + 1, -np.inf)
            score[hit] = math.log(groups.bias[m]) - params.alpha * np.log(np.maximum(d[hit], 1e-12))
            better = score > best
            best[better] = score[better]
            servers[better] = members[k[better]]
            dist[better] = d[better]
    real.ur_server = servers[:n_ur]
    real.ur_distance = dist[:n_ur]
    real.ref_server = int(servers[n_ur])
    real.ref_distance = float(dist[n_ur])
    active = np.zeros(n_ut, dtype=bool)
    served = real.ur_server[real.ur_server >= 0]
    active[served] = True
    real.ut_active = active
    return real


def _bs_term(real: Realization, receivers: np.ndarray, params: SystemParams, cfg: SimConfig, rng) -> np.ndarray:
    if len(real.bs_xy) == 0 or params.p_B == 0 or len(receivers) == 0:
        return np.zeros(len(receivers))
    d = _displacement(receivers, real.bs_xy, cfg.window_side, cfg.torus)
    h = rng.exponential(size=d.shape)
    return (params.p_B / params.p_t) * np.sum(h * d ** (-params.alpha), axis=1)


def _interference(
    real: Realization,
    receivers: np.ndarray,
    server_idx: np.ndarray,
    params: SystemParams,
    cfg: SimConfig,
    rng,
) -> np.ndarray:
    """Same-group active-UT interference (server excluded) plus BS interference."""
    out = np.zeros(len(receivers))
    groups_of = real.ut_group[server_idx]
    for m in np.unique(groups_of):
        rows = np.flatnonzero(groups_of == m)
        cand = np.flatnonzero(real.ut_active & (real.ut_group == m))
        if len(cand) == 0:
            continue
        d = _displacement(receivers[rows], real.ut_xy[cand], cfg.window_side, cfg.torus)
        h = rng.exponential(size=d.shape)
        own = cand[None, :] == server_idx[rows][:, None]
        with np.errstate(divide="ignore"):
            contrib = np.where(own, 0.0, h * np.maximum(d, 1e-12) ** (-params.alpha))
        out[rows] = contrib.sum(axis=1)
    return out + _bs_term(real, receivers, params, cfg, rng)


def measure_sir(real: Realization, params: SystemParams, cfg: SimConfig, reference: Optional[int] = None) -> Optional[float]:
    """SIR of one requester (``None`` = the added reference); ``None`` if unassociated."""
    if reference is None:
        server, d0, xy = real.ref_server, real.ref_distance, real.ref_xy
    else:
        server, d0, xy = int(real.ur_server[reference]), float(real.ur_distance[reference]), real.ur_xy[reference]
    if server < 0:
        return None
    rng = real.fading_rng
    signal = rng.exponential() * d0 ** (-params.alpha)
    interference = _interference(real, xy[None, :], np.array([server]), params, cfg, rng)[0]
    if interference == 0.0:
        return math.inf
    return float(signal / interference)


def _all_ur_sir(real: Realization, params: SystemParams, cfg: SimConfig) -> np.ndarray:
    """SIR for every requester in the window (0 for the unassociated)."""
    sir = np.zeros(len(real.ur_xy))
    served = np.flatnonzero(real.ur_server >= 0)
    if len(served) == 0:
        return sir
    rng = real.fading_rng
    signal = rng.exponential(size=len(served)) * real.ur_distance[served] ** (-params.alpha)
    interf = _interference(real, real.ur_xy[served], real.ur_server[served], params, cfg, rng)
    with np.errstate(divide="ignore"):
        sir[served] = np.where(interf > 0, signal / np.where(interf > 0, interf, 1.0), np.inf)
    return sir


def _inner(xy: np.ndarray, cfg: SimConfig) -> np.ndarray:
    if cfg.torus:
        return np.ones(len(xy), dtype=bool)
    lo, hi = cfg.guard_margin, cfg.window_side - cfg.guard_margin
    return np.all((xy >= lo) & (xy <= hi), axis=1)


@dataclass
class _Sample:
    ref_group: int
    ref_sir: float
    ut_counts: np.ndarray
    active_counts: np.ndarray
    ur_success: int
    ur_count: int


def _one(params: SystemParams, groups: GroupProfile, c, cfg: SimConfig, k: int, need_all: bool) -> _Sample:
    real = associate(draw_realization(params, groups, c, cfg, k), params, groups, cfg)
    sir = measure_sir(real, params, cfg)
    ref_group = int(real.ut_group[real.ref_server]) if real.ref_server >= 0 else -1
    inner_ut = _inner(real.ut_xy, cfg)
    ut_counts = np.bincount(real.ut_group[inner_ut], minlength=groups.M)
    active_counts = np.bincount(real.ut_group[inner_ut & real.ut_active], minlength=groups.M)
    ur_success = ur_count = 0
    if need_all:
        inner_ur = _inner(real.ur_xy, cfg)
        all_sir = _all_ur_sir(real, params, cfg)
        ur_success = int(np.sum((all_sir > params.gamma_th) & (real.ur_server >= 0) & inner_ur))
        ur_count = int(inner_ur.sum())
    return _Sample(ref_group, -1.0 if sir is None else sir, ut_counts, active_counts, ur_success, ur_count)


def _run(params, groups, c, cfg: SimConfig, need_all: bool) -> List[_Sample]:
    idx = range(cfg.realizations)
    workers = cfg.n_workers()
    if workers == 1:
        return [_one(params, groups, c, cfg, k, need_all) for k in idx]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda k: _one(params, groups, c, cfg, k, need_all), idx))


def _mean_ci(x: np.ndarray):
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    mean = x.mean(axis=0)
    if n > 1:
        half = Z99 * x.std(axis=0, ddof=1) / math.sqrt(n)
    else:
        half = np.zeros_like(mean)
    return mean, half


def _success_from(samples: Sequence[_Sample], gamma_th: float) -> np.ndarray:
    return np.array([1.0 if s.ref_group >= 0 and s.ref_sir > gamma_th else 0.0 for s in samples])


def estimate(params: SystemParams, groups: GroupProfile, c, cfg: SimConfig, metric: str) -> SimEstimate:
    """Monte-Carlo estimate with a 99% normal-approximation half-width."""
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}")
    c = _vector(c)
    samples = _run(params, groups, c, cfg, need_all=(metric == "offload_gain"))
    n = len(samples)
    cross = None
    if metric == "success_prob":
        mean, half = _mean_ci(_success_from(samples, params.gamma_th))
    elif metric == "assoc_prob":
        onehot = np.zeros((n, groups.M))
        for k, s in enumerate(samples):
            if s.ref_group >= 0:
                onehot[k, s.ref_group] = 1.0
        mean, half = _mean_ci(onehot)
    elif metric == "active_ratio":
        uts = np.array([s.ut_counts for s in samples], dtype=float)
        act = np.array([s.active_counts for s in samples], dtype=float)
        if np.any(uts.sum(axis=0) == 0) and np.all(uts.sum(axis=0)[c > 0] == 0):
            raise DegenerateEstimateError("no transmitter was ever drawn")
        mean = np.zeros(groups.M)
        half = np.zeros(groups.M)
        for m in range(groups.M):
            ok = uts[:, m] > 0
            if ok.any():
                mean[m], half[m] = _mean_ci(act[ok, m] / uts[ok, m])
    else:
        per_area = np.array([s.ur_success for s in samples], dtype=float) / cfg.measured_area
        mean, half = _mean_ci(per_area)
        ps = _success_from(samples, params.gamma_th).mean()
        cross = float(ps * (groups.lambda_0 - c.sum()))
    return SimEstimate(
        metric=metric,
        mean=np.atleast_1d(mean),
        ci99_half=np.atleast_1d(half),
        realizations=cfg.realizations,
        seed=cfg.seed,
        samples=n,
        cross_check=cross,
    )


def success_curve(
    params: SystemParams, groups: GroupProfile, c, cfg: SimConfig, thresholds: Iterable[float]
) -> List[SimEstimate]:
    """Success-probability estimates for several linear thresholds on common realizations.

    Association and SIR samples do not depend on the threshold, so one set
    of realizations serves every entry.
    """
    samples = _run(params, groups, _vector(c), cfg, need_all=False)
    out = []
    for g in thresholds:
        mean, half = _mean_ci(_success_from(samples, g))
        out.append(SimEstimate("success_prob", np.atleast_1d(mean), np.atleast_1d(half), cfg.realizations, cfg.seed, len(samples)))
    return out
