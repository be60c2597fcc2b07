"""Monte Carlo experiments: trials over a budget grid, aggregation and output.

Trials are cut into chunks of consecutive indices and simulated in lockstep;
chunks may run on several threads. Each trial's stream key depends only on
(seed, budget, trial index), and chunk results are concatenated in index
order, so every output is independent of chunking and thread count.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from . import diagnostics as diag
from .allocation import RateReport, instance_allocation, upper_bound_rate
from .config import THREADS_ENV, ExperimentConfig
from .engine import BatchResult, StrategySpec, simulate
from .rng import trial_keys

CSV_HEADER = ("T", "trials", "misid", "p_hat", "se", "neg_log_p_over_T")
BASELINE_STREAM = 1


def resolve_threads(config_threads: int, override: int | None = None) -> int:
    """Explicit override, then the environment variable, then the config."""
    if override is not None:
        return max(1, int(override))
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return max(1, int(config_threads))


def _keys(config: ExperimentConfig, budget: int, trials, baseline: bool) -> np.ndarray:
    extra = (BASELINE_STREAM,) if baseline else ()
    return trial_keys(config.seed, budget, trials, *extra)


def _concat(parts: list[BatchResult]) -> BatchResult:
    def cat(name):
        vals = [getattr(p, name) for p in parts]
        return None if vals[0] is None else np.concatenate(vals, axis=0)

    return BatchResult(**{f: cat(f) for f in BatchResult.__dataclass_fields__})


def run_batch(
    config: ExperimentConfig,
    budget: int,
    trials,
    spec: StrategySpec | None = None,
    baseline: bool = False,
    diagnostics: bool = False,
    threads: int | None = None,
) -> BatchResult:
    """Simulate the given trial indices at one budget, results in index order."""
    spec = spec or (config.baseline if baseline else config.strategy)
    trials = np.asarray(trials, dtype=np.int64)
    dcfg = config.diagnostics
    xi_rounds = [t for t in dcfg.xi_rounds if t <= budget] if diagnostics else None
    step = config.chunk_size
    chunks = [trials[i:i + step] for i in range(0, len(trials), step)]

    def work(chunk):
        return simulate(
            config.instance, spec, budget, _keys(config, budget, chunk, baseline),
            record_diagnostics=diagnostics,
            xi_rounds=xi_rounds,
            record_final_allocation=diagnostics and dcfg.allocation,
        )

    n_threads = resolve_threads(config.threads, threads)
    if n_threads == 1 or len(chunks) == 1:
        parts = [work(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            parts = list(pool.map(work, chunks))
    return _concat(parts)


@dataclass(frozen=True)
class TrialOutcome:
    recommended: int
    misidentified: bool
    diagnostics: dict | None = None


def run_trial(config: ExperimentConfig, budget: int, trial: int, baseline: bool = False) -> TrialOutcome:
    """One trial; a pure function of (seed, budget, trial index)."""
    res = run_batch(config, budget, [trial], baseline=baseline,
                    diagnostics=config.diagnostics.enabled, threads=1)
    rec = int(res.recommended[0])
    extra = None
    if res.cond_ratio_sum is not None:
        extra = {"cond_ratio_sum": res.cond_ratio_sum[0].tolist()}
        if res.xi is not None:
            extra["xi"] = res.xi[0].tolist()
        if res.final_allocation is not None:
            extra["final_allocation"] = res.final_allocation[0].tolist()
    return TrialOutcome(rec, rec != config.instance.best, extra)


@dataclass(frozen=True)
class BudgetRow:
    T: int
    trials: int
    misid: int
    p_hat: float
    se: float
    neg_log_p_over_T: float

    @classmethod
    def from_counts(cls, T: int, trials: int, misid: int) -> "BudgetRow":
        p = misid / trials
        se = math.sqrt(p * (1.0 - p) / trials)
        rate = -math.log(p) / T if p > 0 else math.inf
        return cls(int(T), int(trials), int(misid), p, se, rate)

    def to_dict(self) -> dict:
        return {
            "T": self.T, "trials": self.trials, "misid": self.misid, "p_hat": self.p_hat,
            "se": self.se, "neg_log_p_over_T": _finite_or_none(self.neg_log_p_over_T),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BudgetRow":
        rate = d["neg_log_p_over_T"]
        return cls(d["T"], d["trials"], d["misid"], d["p_hat"], d["se"],
                   math.inf if rate is None else rate)


def _finite_or_none(v: float):
    return None if math.isinf(v) else v


@dataclass(eq=False)
class ExperimentResult:
    strategy: str
    rows: list
    baseline: str | None = None
    baseline_rows: list = field(default_factory=list)
    rates: RateReport | None = None
    decay_fit: diag.DecayFit | None = None
    decay_fit_error: str | None = None
    diagnostics: list | None = None
    config: dict = field(default_factory=dict)
    seed: int = 0
    version: str = __version__

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "seed": self.seed,
            "strategy": self.strategy,
            "rows": [r.to_dict() for r in self.rows],
            "baseline": self.baseline,
            "baseline_rows": [r.to_dict() for r in self.baseline_rows],
            "rates": None if self.rates is None else self.rates.to_dict(),
            "decay_fit": None if self.decay_fit is None else self.decay_fit.to_dict(),
            "decay_fit_error": self.decay_fit_error,
            "diagnostics": self.diagnostics,
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentResult":
        return cls(
            strategy=d["strategy"],
            rows=[BudgetRow.from_dict(r) for r in d["rows"]],
            baseline=d["baseline"],
            baseline_rows=[BudgetRow.from_dict(r) for r in d["baseline_rows"]],
            rates=None if d["rates"] is None else RateReport.from_dict(d["rates"]),
            decay_fit=None if d["decay_fit"] is None else diag.DecayFit.from_dict(d["decay_fit"]),
            decay_fit_error=d["decay_fit_error"],
            diagnostics=d["diagnostics"],
            config=d["config"],
            seed=d["seed"],
            version=d["version"],
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, ExperimentResult):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, allow_nan=False)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentResult":
        return cls.from_dict(json.loads(text))

    def to_csv(self, baseline: bool = False) -> str:
        return rows_to_csv(self.baseline_rows if baseline else self.rows)


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in rows:
        writer.writerow([r.T, r.trials, r.misid, _g17(r.p_hat), _g17(r.se), _g17(r.neg_log_p_over_T)])
    return buf.getvalue()


def rows_from_csv(text: str) -> list:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(header) != CSV_HEADER:
        raise ValueError("unexpected CSV header")
    return [
        BudgetRow(int(T), int(n), int(m), float(p), float(se), float(rate))
        for T, n, m, p, se, rate in reader
    ]


def _g17(v: float) -> str:
    return format(v, ".17g")


def _diagnostics_summary(config: ExperimentConfig, budget: int, res: BatchResult) -> dict:
    inst = config.instance
    suboptimal = [a for a in range(inst.K) if a != inst.best]
    out = {
        "T": budget,
        "variance_convergence": {
            str(a): diag.variance_convergence(res.cond_ratio_sum, budget, inst, a) for a in suboptimal
        },
    }
    if res.xi is not None:
        rounds = [t for t in config.diagnostics.xi_rounds if t <= budget]
        out["xi"] = {
            str(a): diag.xi_residuals(res.xi, rounds, a, recorded=rounds) for a in suboptimal
        }
        for rows in out["xi"].values():
            for r in rows:
                for k in ("se", "z"):
                    r[k] = _finite_or_none(r[k])
    if res.final_allocation is not None:
        dist = diag.allocation_distance(res.final_allocation, instance_allocation(inst).w)
        out["allocation_distance_mean"] = float(np.mean(dist))
    return out


def _rows(config: ExperimentConfig, baseline: bool, threads, collect) -> list:
    rows = []
    best = config.instance.best
    trials = np.arange(config.n_trials)
    for T in config.budgets:
        want_diag = config.diagnostics.enabled and not baseline
        res = run_batch(config, T, trials, baseline=baseline, diagnostics=want_diag, threads=threads)
        misid = int(np.count_nonzero(res.recommended != best))
        rows.append(BudgetRow.from_counts(T, config.n_trials, misid))
        if want_diag:
            collect.append(_diagnostics_summary(config, T, res))
    return rows


def run_experiment(config: ExperimentConfig, threads: int | None = None) -> ExperimentResult:
    """Every budget for the strategy (and baseline, if configured)."""
    summaries: list = []
    rows = _rows(config, False, threads, summaries)
    baseline_rows = _rows(config, True, threads, []) if config.baseline is not None else []

    try:
        rates = upper_bound_rate(config.instance)
    except (ValueError, ZeroDivisionError):
        rates = None  # zero-variance instances have no finite exponent
    fit, fit_error = None, None
    try:
        fit = diag.fit_decay_rate([r.T for r in rows], [r.misid for r in rows], config.n_trials)
    except diag.InsufficientDataError as exc:
        fit_error = str(exc)

    return ExperimentResult(
        strategy=config.strategy.name,
        rows=rows,
        baseline=None if config.baseline is None else config.baseline.name,
        baseline_rows=baseline_rows,
        rates=rates,
        decay_fit=fit,
        decay_fit_error=fit_error,
        diagnostics=summaries if config.diagnostics.enabled else None,
        config=_jsonable(config.raw),
        seed=config.seed,
    )


def _jsonable(raw):
    """Round-trip the config echo through JSON so equality survives reloading."""
    return json.loads(json.dumps(raw, default=str))
