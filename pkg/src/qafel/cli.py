"""Command-line entry point: validate configs, execute single runs, and
sweep over grids of config keys, emitting byte-stable CSV/JSON results.
"""

from __future__ import annotations

import argparse
import itertools
import json
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import analysis, seeding, tasks as tasks_mod
from .config import ConfigError, ExperimentConfig, parse_config, serialize_config, with_overrides
from .quantizers import compression_parameter
from .simulator import MetricsLog, run_simulation, staleness_trace

CSV_COLUMNS = (
    "t", "sim_time", "uploads", "bytes_up", "bytes_down",
    "grad_norm_sq", "loss", "mean_staleness", "max_staleness", "running_R",
)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    logs: dict[int, MetricsLog]
    summary: dict


def _estimate_gap(task, logs: dict[int, MetricsLog]) -> tuple[float, bool]:
    """f(x0) - f*: exact for a solvable least-squares task, otherwise the
    (optimistic) surrogate f(x0) - min observed loss."""
    x0 = np.zeros(task.dim)
    f0 = tasks_mod.loss(task, x0)
    if task.kind == "quadratic" and not task.degenerate:
        return f0 - task.optimal_value(), True
    best = min(min(row.loss for row in log.rows) for log in logs.values())
    return f0 - best, False


def theory_report(config: ExperimentConfig, task, logs: dict[int, MetricsLog]) -> dict:
    """Learning-rate condition verdict and rate bound from estimated task
    constants and the measured staleness of these runs."""
    constants = tasks_mod.estimate_constants(
        task, probe_points=30, rng=seeding.substream(0, seeding.LBL_GENERIC)
    )
    level = task.L if task.kind == "quadratic" else max(task.L, constants.L)
    tau_max = max((tau for log in logs.values() for tau in staleness_trace(log)), default=0)
    gap, gap_exact = _estimate_gap(task, logs)
    t_steps = min(len(log.rows) - 1 for log in logs.values())
    t_steps = max(t_steps, 1)
    params = analysis.TheoryParams(
        L=level,
        sigma2=constants.sigma2,
        G=constants.G,
        delta_c=compression_parameter(config.q_client, task.dim),
        delta_s=compression_parameter(config.q_server, task.dim),
        K=config.hp.K,
        P=config.hp.P,
        T=t_steps,
        tau_max=tau_max,
        eta_g=config.hp.eta_g,
        eta_l=config.hp.eta_l,
        F_star_gap=max(gap, 0.0),
        server_quantizer_biased=not config.q_server.unbiased,
    )
    bound = analysis.theoretical_bound(params)
    measured = analysis.convergence_rate(list(logs.values()), t_steps)
    return {
        "estimate_based": True,
        "F_star_gap_exact": gap_exact,
        "constants": {"L": level, "sigma2": constants.sigma2, "G": constants.G},
        "tau_max_measured": tau_max,
        "lr_condition_satisfied": bound.condition.satisfied,
        "lr_condition_margin": bound.condition.margin,
        "bound_total": bound.total,
        "bound_terms": {
            "optimization": bound.optimization,
            "drift": bound.drift,
            "quantization": bound.quantization,
        },
        "measured_R": measured,
    }


def run_experiment(config: ExperimentConfig, seeds=None) -> ExperimentResult:
    """One simulation per seed plus aggregate statistics."""
    seeds = tuple(seeds) if seeds is not None else config.seeds
    task = tasks_mod.build_task(config.task)
    logs = {seed: run_simulation(config, seed, task=task) for seed in seeds}

    uploads_to_target = [
        log.reached_target_at_uploads
        for log in logs.values()
        if log.reached_target_at_uploads is not None
    ]
    per_seed = {
        str(seed): {
            "steps": log.rows[-1].t,
            "uploads": log.uploads_total,
            "final_loss": log.rows[-1].loss,
            "uploads_to_target": log.reached_target_at_uploads,
            **analysis.comm_summary(log),
        }
        for seed, log in logs.items()
    }
    summary = {
        "seeds": list(seeds),
        "target_metric": "loss_threshold",
        "target_loss": config.target_loss,
        "runs_reaching_target": len(uploads_to_target),
        "uploads_to_target_mean": float(np.mean(uploads_to_target)) if uploads_to_target else None,
        "uploads_to_target_std": float(np.std(uploads_to_target)) if uploads_to_target else None,
        "per_seed": per_seed,
        "theory": theory_report(config, task, logs),
    }
    return ExperimentResult(config=config, logs=logs, summary=summary)


def rows_to_csv(log: MetricsLog) -> str:
    lines = [",".join(CSV_COLUMNS)]
    for row in log.rows:
        lines.append(
            ",".join(
                repr(value) if isinstance(value, float) else str(value)
                for value in (
                    row.t, row.sim_time, row.uploads, row.bytes_up, row.bytes_down,
                    row.grad_norm_sq, row.loss, row.mean_staleness,
                    row.max_staleness, row.running_R,
                )
            )
        )
    return "\n".join(lines) + "\n"


def rows_to_json(log: MetricsLog) -> str:
    payload = [
        {col: getattr(row, col if col != "t" else "t") for col in CSV_COLUMNS}
        for row in log.rows
    ]
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def emit(result: ExperimentResult, fmt: str, out_dir: Path, label: str = "run") -> list[Path]:
    """Writes per-seed step logs and the aggregate summary; byte-stable
    for identical inputs."""
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown format {fmt!r}")
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for seed, log in sorted(result.logs.items()):
        path = out_dir / f"{label}_seed{seed}.{fmt}"
        text = rows_to_csv(log) if fmt == "csv" else rows_to_json(log)
        path.write_text(text, encoding="utf-8")
        written.append(path)
    summary_path = out_dir / f"{label}_summary.json"
    blob = {"config": serialize_config(result.config), "summary": result.summary}
    summary_path.write_text(json.dumps(blob, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    written.append(summary_path)
    return written


def _parse_grid(items: list[str]) -> dict[str, list[str]]:
    grid: dict[str, list[str]] = {}
    for item in items:
        if "=" not in item:
            raise ConfigError([f"grid item must be KEY=V1,V2,...: {item!r}"])
        key, values = item.split("=", 1)
        grid[key.strip()] = [v.strip() for v in values.split("|") if v.strip()]
        if not grid[key.strip()]:
            raise ConfigError([f"grid item has no values: {item!r}"])
    return grid


def run_sweep(config: ExperimentConfig, grid: dict[str, list[str]]) -> list[tuple[dict, ExperimentResult]]:
    keys = sorted(grid)
    results = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        overrides = dict(zip(keys, combo))
        point = with_overrides(config, overrides)
        results.append((overrides, run_experiment(point)))
    return results


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="qafel", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_validate = sub.add_parser("validate", help="check a config file")
    p_validate.add_argument("config", type=Path)

    p_run = sub.add_parser("run", help="execute one experiment")
    p_run.add_argument("config", type=Path)
    p_run.add_argument("--out", type=Path, default=Path("results"))
    p_run.add_argument("--format", choices=("csv", "json"), default="csv")
    p_run.add_argument("--seed-override", type=int, default=None)

    p_sweep = sub.add_parser("sweep", help="run a grid of config overrides")
    p_sweep.add_argument("config", type=Path)
    p_sweep.add_argument("--grid", nargs="+", required=True, metavar="KEY=V1|V2")
    p_sweep.add_argument("--out", type=Path, default=Path("results"))
    p_sweep.add_argument("--format", choices=("csv", "json"), default="csv")

    args = parser.parse_args(argv)
    try:
        text = args.config.read_text(encoding="utf-8")
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    if args.command == "validate":
        try:
            parse_config(text)
        except ConfigError as exc:
            for err in exc.errors:
                print(f"invalid: {err}")
            return 1
        print("ok")
        return 0

    try:
        config = parse_config(text)
    except ConfigError as exc:
        for err in exc.errors:
            print(f"invalid: {err}", file=sys.stderr)
        return 1

    if args.command == "run":
        if args.seed_override is not None:
            config = replace(config, seeds=(args.seed_override,))
        result = run_experiment(config)
        for path in emit(result, args.format, args.out):
            print(path)
        return 0

    # sweep
    try:
        grid = _parse_grid(args.grid)
        results = run_sweep(config, grid)
    except ConfigError as exc:
        for err in exc.errors:
            print(f"invalid: {err}", file=sys.stderr)
        return 1
    for index, (overrides, result) in enumerate(results):
        label = f"sweep{index:03d}"
        for path in emit(result, args.format, args.out, label=label):
            print(path)
        (args.out / f"{label}_point.json").write_text(
            json.dumps(overrides, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
