"""Command line entry point: ``ctxbai {run,allocation,oracle,diagnose} CONFIG``.

Exit status is 0 on success, 1 for configuration or usage errors and 2 for
failures while running.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .allocation import (
    instance_allocation,
    maximin_objective,
    oracle_maximin_allocation,
    upper_bound_rate,
)
from .config import ConfigError, DiagnosticsConfig, load_config
from .harness import ExperimentResult, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("config", help="experiment TOML file")
    common.add_argument("--seed", type=int, help="override the base seed")
    common.add_argument("--trials", type=int, help="override trials per budget")
    common.add_argument("--threads", type=int, help="worker threads (overrides CTXBAI_THREADS)")
    common.add_argument("--out", help="write the result to this path instead of the config's outputs")
    common.add_argument("--format", choices=("csv", "json"), help="output format")

    parser = _Parser(prog="ctxbai", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("run", parents=[common], help="full Monte Carlo experiment")
    sub.add_parser("allocation", parents=[common], help="target allocation table and rate exponents")
    sub.add_parser("oracle", parents=[common], help="grid-search check of the closed-form allocation")
    sub.add_parser("diagnose", parents=[common], help="martingale residuals and variance convergence")
    return parser


def _table_text(w: np.ndarray, title: str) -> str:
    K, M = w.shape
    head = "arm  " + "  ".join(f"x={x:<8d}" for x in range(M))
    lines = [title, head]
    for a in range(K):
        lines.append(f"{a:<4d} " + "  ".join(f"{w[a, x]:<10.6f}" for x in range(M)))
    return "\n".join(lines)


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        Path(out).write_text(text if text.endswith("\n") else text + "\n")


def _write_result(result: ExperimentResult, config, args) -> None:
    if args.out is not None:
        fmt = args.format or "csv"
        _emit(result.to_json() if fmt == "json" else result.to_csv(), args.out)
        if fmt == "csv" and result.baseline_rows:
            out = Path(args.out)
            _emit(result.to_csv(baseline=True), str(out.with_name(out.stem + "_baseline" + out.suffix)))
        return
    targets = {"csv": config.output.csv, "json": config.output.json}
    if args.format is not None:
        targets = {args.format: targets[args.format]}
    wrote = False
    for fmt, path in targets.items():
        if path is not None:
            _emit(result.to_json() if fmt == "json" else result.to_csv(), path)
            wrote = True
    if not wrote:
        _emit(result.to_json() if args.format == "json" else result.to_csv(), None)


def _summary(result: ExperimentResult) -> str:
    lines = []
    for name, rows in ((result.strategy, result.rows), (result.baseline, result.baseline_rows)):
        if not rows:
            continue
        lines.append(f"{name}:")
        for r in rows:
            lines.append(f"  T={r.T:<7d} misid={r.misid:<6d}/{r.trials:<7d} p_hat={r.p_hat:.3e} se={r.se:.2e}")
    if result.rates is not None:
        lines.append(f"upper exponent {result.rates.upper_exponent:.6g}, lower {result.rates.lower_exponent:.6g}")
    if result.decay_fit is not None:
        f = result.decay_fit
        lines.append(f"fitted slope {f.slope:.6g} (se {f.slope_se:.2g}, r2 {f.r2:.4f})")
    elif result.decay_fit_error:
        lines.append(f"no decay fit: {result.decay_fit_error}")
    return "\n".join(lines)


def _cmd_run(config, args) -> None:
    result = run_experiment(config, threads=args.threads)
    _write_result(result, config, args)
    if args.out is not None or config.output.csv or config.output.json:
        print(_summary(result))


def _cmd_allocation(config, args) -> None:
    inst = config.instance
    w = instance_allocation(inst)
    rates = upper_bound_rate(inst)
    value, binding = maximin_objective(inst, w)
    payload = {
        "best_arm": inst.best,
        "allocation": w.tolist(),
        "maximin_objective": value,
        "binding_arm": binding,
        "rates": rates.to_dict(),
    }
    text = json.dumps(payload, indent=2)
    if args.format != "json":
        text = "\n".join([
            _table_text(w.w, f"target allocation (best arm {inst.best})"),
            f"maximin objective {value:.10g} (binding arm {binding})",
            f"upper exponent {rates.upper_exponent:.10g}",
            f"lower exponent {rates.lower_exponent:.10g}",
            text,
        ])
    _emit(text, args.out)


def _cmd_oracle(config, args) -> None:
    inst = config.instance
    w = instance_allocation(inst)
    formula_value, _ = maximin_objective(inst, w)
    grid_w, grid_value = oracle_maximin_allocation(inst, grid_step=config.grid_step)
    payload = {
        "formula_allocation": w.tolist(),
        "formula_value": formula_value,
        "grid_allocation": grid_w.tolist(),
        "grid_value": grid_value,
        "grid_step": config.grid_step,
        "value_gap": formula_value - grid_value,
        "max_abs_diff": float(np.max(np.abs(w.w - grid_w.w))),
    }
    text = json.dumps(payload, indent=2)
    if args.format != "json":
        text = "\n".join([
            _table_text(w.w, "closed form"),
            _table_text(grid_w.w, f"grid search (step {config.grid_step:g})"),
            f"objective: closed form {formula_value:.10g}, grid {grid_value:.10g}",
            text,
        ])
    _emit(text, args.out)


def _cmd_diagnose(config, args) -> None:
    dcfg = config.diagnostics
    rounds = dcfg.xi_rounds or tuple(sorted({max(1, b // 10) for b in config.budgets} | set(config.budgets)))
    config = replace(config, baseline=None, diagnostics=DiagnosticsConfig(True, rounds, dcfg.allocation))
    result = run_experiment(config, threads=args.threads)
    if args.format == "json":
        _emit(json.dumps(result.to_dict()["diagnostics"], indent=2, allow_nan=False), args.out)
        return
    lines = []
    for block in result.diagnostics:
        lines.append(f"T={block['T']}")
        for arm, v in block["variance_convergence"].items():
            lines.append(f"  arm {arm}: V_T = {v:.6g}")
        for arm, rows in block.get("xi", {}).items():
            for r in rows:
                z = "n/a" if r["z"] is None else f"{r['z']:+.2f}"
                lines.append(f"  arm {arm} xi at t={r['t']}: mean {r['mean']:+.3e} z {z}")
        if "allocation_distance_mean" in block:
            lines.append(f"  mean allocation distance {block['allocation_distance_mean']:.6g}")
    _emit("\n".join(lines), args.out)


COMMANDS = {
    "run": _cmd_run,
    "allocation": _cmd_allocation,
    "oracle": _cmd_oracle,
    "diagnose": _cmd_diagnose,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    try:
        config = load_config(args.config).with_overrides(args.seed, args.trials, args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        COMMANDS[args.command](config, args)
    except (ValueError, RuntimeError, OSError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
