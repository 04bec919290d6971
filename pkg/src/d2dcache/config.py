"""Experiment configuration: a flat ``block.key = value`` text format.

Example::

    # three groups, fixed caching vector
    system.alpha = 3
    system.gamma_th_db = 3
    groups.lambda = 0.1, 0.1, 0.1
    groups.bias = 0.1, 0.3, 0.6
    groups.c = 0.05, 0.09, 0.08
    sweep.parameter = system.alpha; system.gamma_th_db
    sweep.values = 3, 4; 0, 2, 4, 6, 8, 10

Vectors are comma separated.  A sweep may name several parameters
separated by ``;`` with matching value lists; rows are produced for the
Cartesian product in the order given.
"""

from __future__ import annotations

import dataclasses
import itertools
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Mapping, Optional, Tuple

import numpy as np

from d2dcache.model import GroupProfile, SystemParams, trust_bias_from_counts
from d2dcache.opt_exact import GridSpec
from d2dcache.sim import METRICS, SimConfig

ALGORITHMS = ("exact", "asymptotic", "unbiased", "uniform", "one_ut", "all")
ALGORITHM_ALIASES = {"proposed_exact": "exact", "proposed_asymptotic": "asymptotic"}


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def _float(path: str, raw: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(path, f"expected a number, got {raw!r}") from None


def _opt_float(path: str, raw: str) -> Optional[float]:
    return None if raw.strip().lower() in ("", "none", "auto") else _float(path, raw)


def _int(path: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(path, f"expected an integer, got {raw!r}") from None


def _opt_int(path: str, raw: str) -> Optional[int]:
    return None if raw.strip().lower() in ("", "none", "auto") else _int(path, raw)


def _vec(path: str, raw: str) -> Tuple[float, ...]:
    parts = [p.strip() for p in raw.split(",") if p.strip()]
    return tuple(_float(path, p) for p in parts)


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ", ".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class SystemBlock:
    alpha: float = 3.0
    gamma_th_db: float = 3.0
    p_t_dbm: float = 15.0
    p_b_dbm: float = 20.0
    lambda_b: float = 1e-4
    r_max: float = 15.0


@dataclass(frozen=True)
class GroupsBlock:
    lam: Tuple[float, ...] = ()
    bias: Optional[Tuple[float, ...]] = None
    trust_count: Optional[Tuple[float, ...]] = None
    c: Optional[Tuple[float, ...]] = None


@dataclass(frozen=True)
class SolverBlock:
    algorithm: str = "exact"
    step_x: Optional[float] = None
    step_y: Optional[float] = None
    x_divisions: int = 200
    y_divisions: int = 200
    convergence: float = 1e-9
    tol: float = 1e-8
    zeta: float = 0.5
    eps: float = 0.01
    max_iterations: int = 500


@dataclass(frozen=True)
class SimBlock:
    window: float = 100.0
    realizations: int = 2000
    seed: int = 0
    boundary: str = "torus"
    guard: float = 0.0
    metric: Tuple[str, ...] = ("success_prob",)
    threads: Optional[int] = None


@dataclass(frozen=True)
class SweepBlock:
    parameter: Tuple[str, ...] = ()
    values: Tuple[Tuple[float, ...], ...] = ()


# key name in the file -> (block attribute, field name, parser)
_SCHEMA = {
    "system": (
        "system",
        {
            "alpha": ("alpha", _float),
            "gamma_th_db": ("gamma_th_db", _float),
            "p_t_dbm": ("p_t_dbm", _float),
            "p_b_dbm": ("p_b_dbm", _float),
            "lambda_b": ("lambda_b", _float),
            "r_max": ("r_max", _float),
        },
    ),
    "groups": (
        "groups",
        {
            "lambda": ("lam", _vec),
            "bias": ("bias", _vec),
            "trust_count": ("trust_count", _vec),
            "c": ("c", _vec),
        },
    ),
    "solver": (
        "solver",
        {
            "algorithm": ("algorithm", lambda p, r: r.strip()),
            "step_x": ("step_x", _opt_float),
            "step_y": ("step_y", _opt_float),
            "x_divisions": ("x_divisions", _int),
            "y_divisions": ("y_divisions", _int),
            "convergence": ("convergence", _float),
            "tol": ("tol", _float),
            "zeta": ("zeta", _float),
            "eps": ("eps", _float),
            "max_iterations": ("max_iterations", _int),
        },
    ),
    "sim": (
        "sim",
        {
            "window": ("window", _float),
            "realizations": ("realizations", _int),
            "seed": ("seed", _int),
            "boundary": ("boundary", lambda p, r: r.strip()),
            "guard": ("guard", _float),
            "metric": ("metric", lambda p, r: tuple(s.strip() for s in r.split(",") if s.strip())),
            "threads": ("threads", _opt_int),
        },
    ),
    "sweep": (
        "sweep",
        {
            "parameter": ("parameter", lambda p, r: tuple(s.strip() for s in r.split(";") if s.strip())),
            "values": ("values", lambda p, r: tuple(_vec(p, s) for s in r.split(";") if s.strip())),
        },
    ),
}

_BLOCK_TYPES = {
    "system": SystemBlock,
    "groups": GroupsBlock,
    "solver": SolverBlock,
    "sim": SimBlock,
    "sweep": SweepBlock,
}


@dataclass(frozen=True)
class ExperimentConfig:
    system: SystemBlock = field(default_factory=SystemBlock)
    groups: GroupsBlock = field(default_factory=GroupsBlock)
    solver: SolverBlock = field(default_factory=SolverBlock)
    sim: SimBlock = field(default_factory=SimBlock)
    sweep: SweepBlock = field(default_factory=SweepBlock)

    def __post_init__(self) -> None:
        g = self.groups
        if not g.lam:
            raise ConfigError("groups.lambda", "at least one group is required")
        M = len(g.lam)
        if (g.bias is None) == (g.trust_count is None):
            raise ConfigError("groups.bias", "give exactly one of groups.bias or groups.trust_count")
        for key, vec in (("groups.bias", g.bias), ("groups.trust_count", g.trust_count), ("groups.c", g.c)):
            if vec is not None and len(vec) != M:
                raise ConfigError(key, f"expected {M} entries, got {len(vec)}")
        if g.bias is not None and abs(sum(g.bias) - 1.0) > 1e-9:
            raise ConfigError("groups.bias", f"biases must sum to 1, got {sum(g.bias)!r}")
        algo = ALGORITHM_ALIASES.get(self.solver.algorithm, self.solver.algorithm)
        if algo not in ALGORITHMS:
            raise ConfigError("solver.algorithm", f"unknown algorithm {self.solver.algorithm!r}; choose from {ALGORITHMS}")
        for m in self.sim.metric:
            if m not in METRICS:
                raise ConfigError("sim.metric", f"unknown metric {m!r}; choose from {METRICS}")
        if len(self.sweep.parameter) != len(self.sweep.values):
            raise ConfigError("sweep.values", "need one value list per sweep parameter")
        for p in self.sweep.parameter:
            block, _, key = p.partition(".")
            if block not in ("system", "groups", "solver", "sim") or key not in _SCHEMA[block][1]:
                raise ConfigError("sweep.parameter", f"unknown parameter {p!r}")
        # Validate the physical objects eagerly so errors carry a field path.
        try:
            self.params()
        except ValueError as err:
            raise ConfigError("system", str(err)) from None
        try:
            groups = self.group_profile()
        except ValueError as err:
            raise ConfigError("groups", str(err)) from None
        if g.c is not None and any(ci < 0 or ci > li + 1e-12 for ci, li in zip(g.c, groups.lam)):
            raise ConfigError("groups.c", "need 0 <= c_m <= lambda_m")
        try:
            self.sim_config()
        except ValueError as err:
            raise ConfigError("sim", str(err)) from None

    @property
    def algorithm(self) -> str:
        return ALGORITHM_ALIASES.get(self.solver.algorithm, self.solver.algorithm)

    def params(self) -> SystemParams:
        s = self.system
        return SystemParams.from_db(
            alpha=s.alpha,
            gamma_th_db=s.gamma_th_db,
            p_t_dbm=s.p_t_dbm,
            p_b_dbm=s.p_b_dbm,
            lambda_B=s.lambda_b,
            R=s.r_max,
        )

    def group_profile(self) -> GroupProfile:
        g = self.groups
        bias = g.bias if g.bias is not None else trust_bias_from_counts(g.trust_count)
        return GroupProfile(np.array(g.lam, dtype=float), np.array(bias, dtype=float))

    def caching(self) -> Optional[np.ndarray]:
        return None if self.groups.c is None else np.array(self.groups.c, dtype=float)

    def grid_spec(self) -> GridSpec:
        s = self.solver
        return GridSpec(
            step_x=s.step_x,
            step_y=s.step_y,
            convergence=s.convergence,
            x_divisions=s.x_divisions,
            y_divisions=s.y_divisions,
        )

    def step_x(self) -> float:
        lambda_0 = float(sum(self.groups.lam))
        return self.solver.step_x if self.solver.step_x is not None else lambda_0 / self.solver.x_divisions

    def sim_config(self) -> SimConfig:
        s = self.sim
        return SimConfig(
            window_side=s.window,
            realizations=s.realizations,
            seed=s.seed,
            boundary=s.boundary,
            guard_margin=s.guard,
            workers=s.threads,
        )

    def sweep_points(self) -> Iterator[Tuple[Tuple[float, ...], "ExperimentConfig"]]:
        """(values, config) for every sweep point; a single point when no sweep is set."""
        if not self.sweep.parameter:
            yield (), self
            return
        base = without_sweep(self)
        for combo in itertools.product(*self.sweep.values):
            overrides = {p: _fmt(float(v)) for p, v in zip(self.sweep.parameter, combo)}
            yield combo, apply_overrides(base, overrides)


def parse_lines(text: str) -> Dict[str, str]:
    entries: Dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'block.key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        entries[key] = value
    return entries


def from_entries(entries: Mapping[str, str], base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    blocks = {name: {} for name in _SCHEMA}
    for path, raw in entries.items():
        block, _, key = path.partition(".")
        if block not in _SCHEMA:
            raise ConfigError(path, f"unknown block {block!r}")
        attr, fields_ = _SCHEMA[block]
        if key not in fields_:
            raise ConfigError(path, f"unknown key {key!r} in block {block!r}")
        name, parse = fields_[key]
        blocks[block][name] = parse(path, raw)
    start = base or _EMPTY
    g_changes = blocks["groups"]
    # Giving one bias form replaces the other.
    if "bias" in g_changes and "trust_count" not in g_changes:
        g_changes["trust_count"] = None
    if "trust_count" in g_changes and "bias" not in g_changes:
        g_changes["bias"] = None
    kwargs = {
        name: dataclasses.replace(getattr(start, name), **blocks[name]) for name in _BLOCK_TYPES
    }
    return ExperimentConfig(**kwargs)


class _Unchecked:
    """Block holder used as the starting point before validation."""

    system = SystemBlock()
    groups = GroupsBlock()
    solver = SolverBlock()
    sim = SimBlock()
    sweep = SweepBlock()


_EMPTY = _Unchecked()


def loads(text: str) -> ExperimentConfig:
    return from_entries(parse_lines(text))


def load(path: str) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as err:
        raise ConfigError(path, str(err)) from None
    return loads(text)


def parse_override(item: str) -> Tuple[str, str]:
    if "=" not in item:
        raise ConfigError(item, "override must look like block.key=value")
    key, value = item.split("=", 1)
    return key.strip(), value.strip()


def apply_overrides(cfg: ExperimentConfig, overrides: Mapping[str, str]) -> ExperimentConfig:
    return from_entries(overrides, base=cfg) if overrides else cfg


def without_sweep(cfg: ExperimentConfig) -> ExperimentConfig:
    return dataclasses.replace(cfg, sweep=SweepBlock())


def to_entries(cfg: ExperimentConfig) -> List[Tuple[str, str]]:
    out = []
    for block, (attr, fields_) in _SCHEMA.items():
        obj = getattr(cfg, attr)
        for key, (name, _) in fields_.items():
            value = getattr(obj, name)
            if value is None and block == "groups":
                continue
            if block == "sweep":
                if not cfg.sweep.parameter:
                    continue
                if name == "parameter":
                    value = "; ".join(value)
                else:
                    value = "; ".join(_fmt(tuple(v)) for v in value)
                out.append((f"{block}.{key}", value))
                continue
            if block == "sim" and name == "metric":
                out.append((f"{block}.{key}", ", ".join(value)))
                continue
            out.append((f"{block}.{key}", _fmt(value)))
    return out


def dumps(cfg: ExperimentConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in to_entries(cfg))


def dump(cfg: ExperimentConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(cfg))
