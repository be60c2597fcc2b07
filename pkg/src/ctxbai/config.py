"""Experiment configuration and its TOML schema.

A config file has these tables (only ``[instance]`` and ``[experiment]`` are
required)::

    [instance]
    family = "gaussian"          # "gaussian" or "bernoulli"
    context_probs = [0.5, 0.5]   # omitted: a single context
    means = [[1.0, 1.2], [0.8, 0.9]]   # K rows by M columns; a flat list means M = 1
    sds = [[1.0, 1.0], [2.0, 1.0]]     # gaussian only; scalar, per-arm list or K x M
    check_variance = true        # false admits zero-variance cells

    [bounds]                     # clipping / validation constants
    c_mu = 100.0
    c_nu = 10000.0
    c_sigma2 = 100.0

    [strategy]
    name = "rs_aipw"             # "rs_aipw", "uniform_eba" or "fixed"
    mixing_exponent = 0.5        # false disables mixing toward uniform
    init_rounds_per_arm = 1
    allocation = "target"        # fixed only: "target", "uniform" or a K x M table
    true_nuisance = true         # fixed only

    [baseline]                   # optional second strategy, same keys as [strategy]
    name = "uniform_eba"

    [experiment]
    budgets = [1000, 2000, 4000]
    n_trials = 10000
    seed = 20240501
    threads = 1
    chunk_size = 8192

    [diagnostics]
    enabled = false
    xi_rounds = [50, 100]
    allocation = false           # record the final plug-in allocation

    [oracle]
    grid_step = 0.001

    [output]
    csv = "results.csv"
    json = "results.json"
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .allocation import AllocationTable, instance_allocation, uniform_allocation
from .bandit import BERNOULLI, GAUSSIAN, BanditInstance, Bounds
from .engine import StrategySpec
from .strategy import FIXED, STRATEGIES, StrategyConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

THREADS_ENV = "CTXBAI_THREADS"


class ConfigError(ValueError):
    """Invalid or unreadable experiment configuration."""


@dataclass(frozen=True)
class DiagnosticsConfig:
    enabled: bool = False
    xi_rounds: tuple = ()
    allocation: bool = False


@dataclass(frozen=True)
class OutputConfig:
    csv: str | None = None
    json: str | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    instance: BanditInstance
    strategy: StrategySpec
    budgets: tuple
    n_trials: int
    seed: int = 0
    baseline: StrategySpec | None = None
    threads: int = 1
    chunk_size: int = 8192
    diagnostics: DiagnosticsConfig = field(default_factory=DiagnosticsConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    grid_step: float = 1e-3
    raw: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        budgets = tuple(int(b) for b in self.budgets)
        if not budgets:
            raise ConfigError("at least one budget is required")
        if any(b2 <= b1 for b1, b2 in zip(budgets, budgets[1:])):
            raise ConfigError("budgets must be strictly increasing")
        if self.n_trials < 1:
            raise ConfigError("n_trials must be at least 1")
        if self.threads < 1 or self.chunk_size < 1:
            raise ConfigError("threads and chunk_size must be positive")
        for spec in (self.strategy, self.baseline):
            if spec is not None and budgets[0] < spec.init_len(self.instance.K):
                raise ConfigError("every budget must cover the initialization block")
        object.__setattr__(self, "budgets", budgets)

    def with_overrides(self, seed=None, trials=None, threads=None) -> "ExperimentConfig":
        changes = {}
        if seed is not None:
            changes["seed"] = int(seed)
        if trials is not None:
            changes["n_trials"] = int(trials)
        if threads is not None:
            changes["threads"] = int(threads)
        return replace(self, **changes) if changes else self


def _table(value, name="table") -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ConfigError(f"{name} must be a list or a K x M table")
    return arr


def _instance(section: dict, bounds: Bounds) -> BanditInstance:
    family = section.get("family", GAUSSIAN)
    if "means" not in section:
        raise ConfigError("[instance] needs means")
    means = _table(section["means"], name="means")
    K, M = means.shape
    probs = section.get("context_probs", [1.0 / M] * M)
    if len(probs) != M:
        raise ConfigError("context_probs length must match the number of mean columns")
    check = bool(section.get("check_variance", True))
    if family == BERNOULLI:
        if "sds" in section:
            raise ConfigError("bernoulli instances derive sds from the means")
        return BanditInstance.bernoulli(means, probs, bounds=bounds, check_variance=check)
    if family != GAUSSIAN:
        raise ConfigError(f"unknown family {family!r}")
    if "sds" not in section:
        raise ConfigError("gaussian instances need sds")
    sds = np.asarray(section["sds"], dtype=float)
    if sds.ndim == 1:
        sds = sds[:, None]  # one sd per arm, shared by all contexts
    try:
        sds = np.broadcast_to(sds, (K, M))
    except ValueError as exc:
        raise ConfigError("sds do not match the shape of means") from exc
    return BanditInstance.gaussian(means, sds, probs, bounds=bounds, check_variance=check)


def _strategy(section: dict, instance: BanditInstance, bounds: Bounds) -> StrategySpec:
    name = section.get("name", "rs_aipw")
    if name not in STRATEGIES:
        raise ConfigError(f"unknown strategy {name!r}")
    mixing = section.get("mixing_exponent", 0.5)
    if mixing is False:
        mixing = None
    cfg = StrategyConfig(
        bounds=bounds,
        mixing_exponent=None if mixing is None else float(mixing),
        init_rounds_per_arm=int(section.get("init_rounds_per_arm", 1)),
    )
    table = None
    if name == FIXED:
        alloc = section.get("allocation", "target")
        if alloc == "target":
            table = instance_allocation(instance)
        elif alloc == "uniform":
            table = uniform_allocation(instance.K, instance.M)
        else:
            table = AllocationTable(_table(alloc, name="allocation"))
        if table.w.shape != (instance.K, instance.M):
            raise ConfigError("allocation table shape must be K x M")
    return StrategySpec(name, cfg, table, bool(section.get("true_nuisance", True)))


def config_from_dict(raw: dict) -> ExperimentConfig:
    try:
        bounds = Bounds(**raw.get("bounds", {}))
        if "instance" not in raw:
            raise ConfigError("missing [instance] table")
        instance = _instance(raw["instance"], bounds)
        strategy = _strategy(raw.get("strategy", {}), instance, bounds)
        baseline = _strategy(raw["baseline"], instance, bounds) if "baseline" in raw else None
        exp = raw.get("experiment")
        if exp is None or "budgets" not in exp:
            raise ConfigError("[experiment] needs budgets")
        diag = raw.get("diagnostics", {})
        out = raw.get("output", {})
        return ExperimentConfig(
            instance=instance,
            strategy=strategy,
            baseline=baseline,
            budgets=tuple(exp["budgets"]),
            n_trials=int(exp.get("n_trials", 1000)),
            seed=int(exp.get("seed", 0)),
            threads=int(exp.get("threads", 1)),
            chunk_size=int(exp.get("chunk_size", 8192)),
            diagnostics=DiagnosticsConfig(
                enabled=bool(diag.get("enabled", False)),
                xi_rounds=tuple(int(t) for t in diag.get("xi_rounds", ())),
                allocation=bool(diag.get("allocation", False)),
            ),
            output=OutputConfig(csv=out.get("csv"), json=out.get("json")),
            grid_step=float(raw.get("oracle", {}).get("grid_step", 1e-3)),
            raw=raw,
        )
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    return config_from_dict(raw)
