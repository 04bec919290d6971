"""Data series behind the twelve evaluation figures.

Each figure starts from built-in defaults which a config file and
``--set`` overrides may change (system constants, solver and sim
settings).  The x-axis values and the series list are fixed per figure.
Rows are ``(x, series, value, ci99_half)`` with ``ci99_half=None`` for
analytic values.
"""

from __future__ import annotations

from typing import Callable, Dict, List, Mapping, Optional, Tuple

import numpy as np

from d2dcache import config as cfgmod
from d2dcache.baselines import policy_one_ut, policy_uniform
from d2dcache.model import GroupProfile, SystemParams, db_to_linear, offload_gain, success_prob
from d2dcache.opt_asymptotic import RatioProblem, brute_force_ratio_max, ps_infinity, solve_asymptotic, solve_sor
from d2dcache.opt_exact import solve_exact
from d2dcache.opt_unbiased import water_fill
from d2dcache.sim import estimate, success_curve

Row = Tuple[float, str, float, Optional[float]]

GAMMA_DB = (0.0, 2.0, 4.0, 6.0, 8.0, 10.0)
DENSITIES = (0.02, 0.04, 0.06, 0.08, 0.1)
R_GAP = (5.0, 10.0, 15.0, 20.0, 30.0)

_FIG1 = {
    "groups.lambda": "0.1, 0.1, 0.1",
    "groups.bias": "0.1, 0.3, 0.6",
    "groups.c": "0.05, 0.09, 0.08",
}
_FIG2 = {"groups.lambda": "0.02, 0.02, 0.02", "groups.bias": "0.1, 0.3, 0.6", "groups.c": "0.01, 0.01, 0.01"}
_FIG5 = {"groups.lambda": "0.02, 0.02", "groups.bias": "0.1, 0.9"}
_FIG9 = {"groups.lambda": "0.03, 0.01", "groups.bias": "0.1, 0.9"}

DEFAULTS: Dict[int, Dict[str, str]] = {
    1: _FIG1,
    2: _FIG2,
    3: _FIG1,
    4: _FIG2,
    5: _FIG5,
    6: _FIG5,
    7: _FIG5,
    8: {"groups.lambda": "0.04, 0.02", "groups.bias": "0.1, 0.9"},
    9: _FIG9,
    10: _FIG9,
    11: {"groups.lambda": "0.1, 0.1", "groups.bias": "0.1, 0.9"},
    12: {"groups.lambda": "0.05, 0.05", "groups.bias": f"{10 / 11!r}, {1 / 11!r}"},
}


def build_config(figure_id: int, entries: Mapping[str, str] = (), overrides: Mapping[str, str] = ()) -> cfgmod.ExperimentConfig:
    if figure_id not in DEFAULTS:
        raise cfgmod.ConfigError("figure", f"unknown figure id {figure_id}; choose 1-12")
    merged = dict(DEFAULTS[figure_id])
    merged.update(entries or {})
    merged.update(overrides or {})
    return cfgmod.from_entries(merged)


def _vec(values) -> str:
    return ", ".join(repr(float(v)) for v in values)


def _set(cfg: cfgmod.ExperimentConfig, entries: Mapping[str, str]) -> cfgmod.ExperimentConfig:
    return cfgmod.apply_overrides(cfg, dict(entries))


def _success_series(cfg, label: str, simulate: bool) -> List[Row]:
    params, groups, c = cfg.params(), cfg.group_profile(), cfg.caching()
    rows: List[Row] = []
    analytic = []
    for g_db in GAMMA_DB:
        p = _set(cfg, {"system.gamma_th_db": repr(g_db)}).params()
        analytic.append(success_prob(p, groups, c).success_prob)
        rows.append((g_db, f"analytic_{label}", analytic[-1], None))
    if simulate:
        ests = success_curve(params, groups, c, cfg.sim_config(), [db_to_linear(g) for g in GAMMA_DB])
        for g_db, est in zip(GAMMA_DB, ests):
            rows.append((g_db, f"sim_{label}", est.scalar(), float(est.ci99_half[0])))
    return rows


def figure_1(cfg) -> List[Row]:
    rows: List[Row] = []
    for alpha in (3.0, 4.0):
        rows += _success_series(_set(cfg, {"system.alpha": repr(alpha)}), f"alpha{alpha:g}", True)
    return rows


def _density_cfg(cfg, lam: float, M: int):
    return _set(cfg, {"groups.lambda": _vec([lam] * M), "groups.c": _vec([0.5 * lam] * M)})


def figure_2(cfg) -> List[Row]:
    rows: List[Row] = []
    M = len(cfg.groups.lam)
    for R in (10.0, 15.0, 20.0):
        for lam in DENSITIES:
            pt = _set(_density_cfg(cfg, lam, M), {"system.r_max": repr(R)})
            p, g, c = pt.params(), pt.group_profile(), pt.caching()
            rows.append((lam, f"analytic_R{R:g}", success_prob(p, g, c).success_prob, None))
            est = estimate(p, g, c, pt.sim_config(), "success_prob")
            rows.append((lam, f"sim_R{R:g}", est.scalar(), float(est.ci99_half[0])))
    return rows


def figure_3(cfg) -> List[Row]:
    rows: List[Row] = []
    groups, c = cfg.group_profile(), cfg.caching()
    for alpha in (3.0, 4.0):
        for g_db in GAMMA_DB:
            base = _set(cfg, {"system.alpha": repr(alpha), "system.gamma_th_db": repr(g_db)})
            for R in R_GAP:
                p = _set(base, {"system.r_max": repr(R)}).params()
                rows.append((g_db, f"Ps_R{R:g}_alpha{alpha:g}", success_prob(p, groups, c).success_prob, None))
            rows.append((g_db, f"Ps_inf_alpha{alpha:g}", ps_infinity(base.params(), groups, c), None))
    return rows


def figure_4(cfg) -> List[Row]:
    rows: List[Row] = []
    M = len(cfg.groups.lam)
    for lam in DENSITIES:
        pt = _density_cfg(cfg, lam, M)
        g, c = pt.group_profile(), pt.caching()
        for R in R_GAP:
            p = _set(pt, {"system.r_max": repr(R)}).params()
            rows.append((lam, f"Ps_R{R:g}", success_prob(p, g, c).success_prob, None))
        rows.append((lam, "Ps_inf", ps_infinity(pt.params(), g, c), None))
    return rows


def _random_start(groups: GroupProfile, x_bar: float, rng: np.random.Generator, params: SystemParams) -> np.ndarray:
    share = rng.dirichlet(np.ones(groups.M))
    return RatioProblem(params, groups, x_bar).project(share * x_bar)


def figure_5(cfg, x_bar: float = 0.02) -> List[Row]:
    rows: List[Row] = []
    s = cfg.solver
    configs = {
        "M2": cfg,
        "M3": _set(cfg, {"groups.lambda": "0.02, 0.02, 0.02", "groups.bias": "0.1, 0.4, 0.5"}),
    }
    for name, pt in configs.items():
        params, groups = pt.params(), pt.group_profile()
        rng = np.random.default_rng(pt.sim.seed)
        starts = {
            "uniform": water_fill(groups.lam, x_bar),
            "random1": _random_start(groups, x_bar, rng, params),
            "random2": _random_start(groups, x_bar, rng, params),
        }
        longest = 0
        for label, c0 in starts.items():
            state = solve_sor(
                params, groups, x_bar, zeta=s.zeta, eps=s.eps, tol=s.tol, max_iterations=s.max_iterations, c0=c0
            )
            longest = max(longest, len(state.beta_trace))
            rows += [(float(k), f"{name}_{label}", b, None) for k, b in enumerate(state.beta_trace)]
        best, _ = brute_force_ratio_max(params, groups, x_bar, 2e-4)
        rows += [(float(k), f"{name}_bruteforce", best, None) for k in range(longest)]
    return rows


def _asymptotic(cfg):
    s = cfg.solver
    return solve_asymptotic(
        cfg.params(),
        cfg.group_profile(),
        cfg.step_x(),
        zeta=s.zeta,
        eps=s.eps,
        tol=s.tol,
        max_iterations=s.max_iterations,
    )


def figure_6(cfg) -> List[Row]:
    rows: List[Row] = []
    for alpha in (3.0, 4.0):
        for lam in DENSITIES:
            pt = _set(cfg, {"system.alpha": repr(alpha), "groups.lambda": _vec([lam, lam])})
            rows.append((lam, f"U_inf_alpha{alpha:g}", _asymptotic(pt).gain_lower, None))
            for R in (10.0, 15.0, 20.0):
                pr = _set(pt, {"system.r_max": repr(R)})
                rows.append((lam, f"U_R{R:g}_alpha{alpha:g}", solve_exact(pr.params(), pr.group_profile(), pr.grid_spec()).gain, None))
    return rows


def _policy_rows(x: float, cfg) -> List[Row]:
    params, groups = cfg.params(), cfg.group_profile()
    step = cfg.step_x()
    exact = solve_exact(params, groups, cfg.grid_spec())
    return [
        (x, "proposed_exact", offload_gain(params, groups, exact.c_star).offload_gain, None),
        (x, "proposed_asymptotic", _asymptotic(cfg).gain_lower, None),
        (x, "uniform", offload_gain(params, groups, policy_uniform(params, groups, step)).offload_gain, None),
        (x, "one_ut", offload_gain(params, groups, policy_one_ut(groups, step)).offload_gain, None),
    ]


def figure_7(cfg) -> List[Row]:
    lam2 = cfg.groups.lam[1]
    rows: List[Row] = []
    for lam1 in (0.02, 0.04, 0.06, 0.08, 0.1):
        rows += _policy_rows(lam1, _set(cfg, {"groups.lambda": _vec([lam1, lam2])}))
    return rows


def figure_8(cfg) -> List[Row]:
    rows: List[Row] = []
    for b1 in np.round(np.arange(0.1, 0.95, 0.1), 10):
        rows += _policy_rows(float(b1), _set(cfg, {"groups.bias": _vec([b1, 1.0 - b1])}))
    return rows


def figure_9(cfg) -> List[Row]:
    rows: List[Row] = []
    for g_db in GAMMA_DB:
        rows += _policy_rows(g_db, _set(cfg, {"system.gamma_th_db": repr(g_db)}))
    return rows


def figure_10(cfg) -> List[Row]:
    rows: List[Row] = []
    for alpha in (2.5, 3.0, 3.5, 4.0, 4.5):
        rows += _policy_rows(alpha, _set(cfg, {"system.alpha": repr(alpha)}))
    return rows


DENSITY_RATIOS = (0.2, 0.4, 0.6, 0.8, 1.0, 1.5, 2.0)
BIAS_RATIOS = (0.1, 0.2, 0.4, 0.6, 0.8, 1.0)


def figure_11(cfg) -> List[Row]:
    rows: List[Row] = []
    lam2 = cfg.groups.lam[1]
    for r in DENSITY_RATIOS:
        sol = _asymptotic(_set(cfg, {"groups.lambda": _vec([r * lam2, lam2])}))
        rows += [(r, "density_c1", float(sol.c_star.c[0]), None), (r, "density_c2", float(sol.c_star.c[1]), None)]
    for r in BIAS_RATIOS:
        b1 = r / (1.0 + r)
        sol = _asymptotic(_set(cfg, {"groups.lambda": _vec([lam2, lam2]), "groups.bias": _vec([b1, 1.0 - b1])}))
        rows += [(r, "bias_c1", float(sol.c_star.c[0]), None), (r, "bias_c2", float(sol.c_star.c[1]), None)]
    return rows


def figure_12(cfg) -> List[Row]:
    rows: List[Row] = []
    for alpha in (3.0, 4.0):
        for g_db in GAMMA_DB:
            sol = _asymptotic(_set(cfg, {"system.alpha": repr(alpha), "system.gamma_th_db": repr(g_db)}))
            rows += [
                (g_db, f"c1_alpha{alpha:g}", float(sol.c_star.c[0]), None),
                (g_db, f"c2_alpha{alpha:g}", float(sol.c_star.c[1]), None),
            ]
    return rows


FIGURES: Dict[int, Callable[[cfgmod.ExperimentConfig], List[Row]]] = {
    1: figure_1,
    2: figure_2,
    3: figure_3,
    4: figure_4,
    5: figure_5,
    6: figure_6,
    7: figure_7,
    8: figure_8,
    9: figure_9,
    10: figure_10,
    11: figure_11,
    12: figure_12,
}


def figure_rows(figure_id: int, entries: Mapping[str, str] = (), overrides: Mapping[str, str] = ()) -> List[Row]:
    cfg = build_config(figure_id, entries, overrides)
    return FIGURES[figure_id](cfg)
