"""Command-line experiment runner.

    d2dcache eval|optimize|simulate --config PATH [--set block.key=value ...] [--out PATH.csv] [--seed N]
    d2dcache figure ID [--config PATH] [--set ...] [--out PATH.csv] [--seed N]

Exit codes: 0 success, 2 configuration error, 3 solver non-convergence,
4 degenerate Monte-Carlo estimate.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
import time
from typing import Dict, List, Optional, Sequence

import numpy as np

from d2dcache import config as cfgmod
from d2dcache import figures
from d2dcache.baselines import PolicyId, policy_one_ut, policy_uniform
from d2dcache.model import offload_gain
from d2dcache.opt_asymptotic import SorNonConvergence, solve_asymptotic
from d2dcache.opt_exact import solve_exact
from d2dcache.opt_unbiased import BiasMismatchError, solve_unbiased
from d2dcache.sim import DegenerateEstimateError, estimate

log = logging.getLogger("d2dcache")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NONCONVERGENCE = 3
EXIT_DEGENERATE = 4


def _sweep_header(cfg: cfgmod.ExperimentConfig) -> List[str]:
    return list(cfg.sweep.parameter)


def eval_rows(cfg: cfgmod.ExperimentConfig) -> List[Dict[str, object]]:
    if cfg.groups.c is None:
        raise cfgmod.ConfigError("groups.c", "no caching vector given; set groups.c or run 'optimize' first")
    rows = []
    for values, pt in cfg.sweep_points():
        params, groups, c = pt.params(), pt.group_profile(), pt.caching()
        m = offload_gain(params, groups, c)
        row: Dict[str, object] = dict(zip(cfg.sweep.parameter, values))
        for k in range(groups.M):
            row[f"assoc_{k + 1}"] = m.assoc_prob[k]
        for k in range(groups.M):
            row[f"active_{k + 1}"] = m.active_ratio[k]
        for k in range(groups.M):
            row[f"success_given_{k + 1}"] = m.success_prob_given_group[k]
        row["success_prob"] = m.success_prob
        row["offload_gain"] = m.offload_gain
        rows.append(row)
    return rows


def _solve(cfg: cfgmod.ExperimentConfig, algorithm: str):
    """(policy name, c, iterations) for one algorithm."""
    params, groups = cfg.params(), cfg.group_profile()
    s = cfg.solver
    if algorithm == "exact":
        sol = solve_exact(params, groups, cfg.grid_spec())
        return PolicyId.PROPOSED_EXACT.value, sol.c_star.c, sol.iterations_total
    if algorithm == "asymptotic":
        sol = solve_asymptotic(
            params, groups, cfg.step_x(), zeta=s.zeta, eps=s.eps, tol=s.tol, max_iterations=s.max_iterations
        )
        log.info("asymptotic gain: bounded %.6g, unbounded %.6g", sol.gain_lower, sol.gain_unbounded)
        return PolicyId.PROPOSED_ASYMPTOTIC.value, sol.c_star.c, len(sol.trace) - 1
    if algorithm == "unbiased":
        sol = solve_unbiased(params, groups, cfg.step_x())
        return "unbiased", sol.c_star.c, len(sol.trace)
    if algorithm == "uniform":
        return PolicyId.UNIFORM.value, policy_uniform(params, groups, cfg.step_x()).c, 0
    if algorithm == "one_ut":
        return PolicyId.ONE_UT.value, policy_one_ut(groups, cfg.step_x()).c, 0
    raise cfgmod.ConfigError("solver.algorithm", f"unknown algorithm {algorithm!r}")


def optimize_rows(cfg: cfgmod.ExperimentConfig) -> List[Dict[str, object]]:
    algos = ["exact", "asymptotic", "uniform", "one_ut"] if cfg.algorithm == "all" else [cfg.algorithm]
    rows = []
    for values, pt in cfg.sweep_points():
        params, groups = pt.params(), pt.group_profile()
        v = groups.weights(params.alpha)
        for algo in algos:
            t0 = time.perf_counter()
            name, c, iters = _solve(pt, algo)
            seconds = time.perf_counter() - t0
            row: Dict[str, object] = dict(zip(cfg.sweep.parameter, values))
            row.update(algorithm=name, x=float(np.sum(c)), y=float(v @ c))
            row["gain"] = offload_gain(params, groups, c).offload_gain
            for k in range(groups.M):
                row[f"c_{k + 1}"] = float(c[k])
            row.update(iters=iters, seconds=seconds)
            rows.append(row)
    return rows


def simulate_rows(cfg: cfgmod.ExperimentConfig) -> List[Dict[str, object]]:
    if cfg.groups.c is None:
        raise cfgmod.ConfigError("groups.c", "no caching vector given; set groups.c or run 'optimize' first")
    rows = []
    for values, pt in cfg.sweep_points():
        params, groups, c = pt.params(), pt.group_profile(), pt.caching()
        sc = pt.sim_config()
        for metric in pt.sim.metric:
            est = estimate(params, groups, c, sc, metric)
            vector = metric in ("assoc_prob", "active_ratio")
            for k, (mean, half) in enumerate(zip(est.mean, est.ci99_half)):
                row: Dict[str, object] = dict(zip(cfg.sweep.parameter, values))
                row.update(
                    metric=f"{metric}_{k + 1}" if vector else metric,
                    mean=float(mean),
                    ci99_half=float(half),
                    realizations=est.realizations,
                    seed=est.seed,
                )
                rows.append(row)
            if est.cross_check is not None:
                row = dict(zip(cfg.sweep.parameter, values))
                row.update(metric=f"{metric}_crosscheck", mean=est.cross_check, ci99_half="", realizations=est.realizations, seed=est.seed)
                rows.append(row)
    return rows


def figure_table(rows) -> List[Dict[str, object]]:
    return [
        {"x": x, "series": series, "value": value, "ci99_half": "" if ci is None else ci} for x, series, value, ci in rows
    ]


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(rows: Sequence[Dict[str, object]], out) -> None:
    if not rows:
        return
    header: List[str] = []
    for row in rows:
        header += [k for k in row if k not in header]
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(row.get(k, "")) for k in header])


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="d2dcache", description="Trust-aware D2D caching experiments.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("eval", "optimize", "simulate", "figure"):
        p = sub.add_parser(name)
        if name == "figure":
            p.add_argument("figure_id", type=int)
            p.add_argument("--config", default=None)
        else:
            p.add_argument("--config", required=True)
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="block.key=value")
        p.add_argument("--out", default=None)
        p.add_argument("--seed", type=int, default=None)
    return ap


def _overrides(args) -> Dict[str, str]:
    items = dict(cfgmod.parse_override(o) for o in args.overrides)
    if args.seed is not None:
        items["sim.seed"] = str(args.seed)
    return items


def run(argv: Optional[Sequence[str]] = None, stdout=None) -> int:
    stdout = stdout or sys.stdout
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        overrides = _overrides(args)
        if args.command == "figure":
            entries = {}
            if args.config:
                with open(args.config, encoding="utf-8") as fh:
                    entries = cfgmod.parse_lines(fh.read())
            rows = figure_table(figures.figure_rows(args.figure_id, entries, overrides))
        else:
            cfg = cfgmod.apply_overrides(cfgmod.load(args.config), overrides)
            rows = {"eval": eval_rows, "optimize": optimize_rows, "simulate": simulate_rows}[args.command](cfg)
    except (cfgmod.ConfigError, BiasMismatchError, OSError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except SorNonConvergence as err:
        print(f"solver did not converge: {err}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except DegenerateEstimateError as err:
        print(f"degenerate estimate: {err}", file=sys.stderr)
        return EXIT_DEGENERATE
    buf = io.StringIO()
    write_csv(rows, buf)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(buf.getvalue())
    else:
        stdout.write(buf.getvalue())
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
