"""Command-line front end: plan, validate, demo.

Artifacts are plain CSV (plot data) and JSON (structured results); floats are
written with Python's shortest round-trip representation, so parsing a CSV
back recovers the exact values. Exit codes: 0 when the planner met its
target, 2 when it hit the size cap, 1 on any error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import List, Optional

import numpy as np

from .config import (
    ConfigError,
    RunConfig,
    build_planner_config,
    build_prior,
    build_system,
    build_tasks,
    demo_config,
    load_config,
    preset_config,
)
from .planner import PlanResult, plan
from .saa import RolloutExecutor
from .seeds import derive_seed, make_rng
from .tasks import ConfigurationError
from .validate import ValidationReport, collect_true_measurements, run_validation

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CAP = 2


def _fmt(value) -> str:
    """Shortest round-trip text for CSV cells."""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: str, header: List[str], rows: List[List]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _coordinate_names(dx: int, du: int) -> List[str]:
    return [f"x{i + 1}" for i in range(dx)] + [f"u{i + 1}" for i in range(du)]


# ---------------------------------------------------------------------------
# plan
# ---------------------------------------------------------------------------

def run_plan(cfg: RunConfig, out_dir: str) -> int:
    """Run the configured number of planning repetitions and write artifacts."""
    os.makedirs(out_dir, exist_ok=True)
    root_seed = cfg.seed
    system = build_system(cfg)
    prior = build_prior(cfg, system, make_rng(root_seed, "prior-data"))

    results: List[PlanResult] = []
    rep_seeds: List[int] = []
    for rep in range(cfg.repetitions):
        task_seed = derive_seed(root_seed, "tasks", rep)
        tasks = build_tasks(cfg, system, make_rng(task_seed))
        pconf = build_planner_config(cfg, system, seed=derive_seed(root_seed, "plan", rep))
        with RolloutExecutor(system, tasks, prior) as executor:
            results.append(plan(system, tasks, prior, pconf, executor=executor))
        rep_seeds.append(task_seed)

    # best repetition: highest final estimate, then smaller set, then order
    def rank(i: int):
        r = results[i]
        return (-r.satisfaction_history[-1][1], r.num_locations, i)

    best_idx = min(range(len(results)), key=rank)
    best = results[best_idx]

    plan_doc = {
        "result": best.to_dict(),
        "setup": {
            "root_seed": int(root_seed),
            "repetition": int(best_idx),
            "task_seed": int(rep_seeds[best_idx]),
        },
        "repetition_summaries": [
            {
                "repetition": i,
                "task_seed": int(rep_seeds[i]),
                "num_locations": int(r.num_locations),
                "final_satisfaction": float(r.satisfaction_history[-1][1]),
                "terminated_by": r.terminated_by,
            }
            for i, r in enumerate(results)
        ],
        "config": cfg.to_dict(),
    }
    with open(os.path.join(out_dir, "plan.json"), "w", encoding="utf-8") as fh:
        json.dump(plan_doc, fh, indent=2)

    # satisfaction as a function of set size, one column per repetition
    max_n = max(r.num_locations for r in results)
    header = ["N"] + [f"rep_{i}" for i in range(len(results))] + ["mean", "std"]
    rows = []
    for n in range(max_n + 1):
        cells: List = [n]
        vals = []
        for r in results:
            lookup = dict((k, c) for k, c in r.satisfaction_history)
            if n in lookup:
                cells.append(lookup[n])
                vals.append(lookup[n])
            else:
                cells.append("")
        cells.append(float(np.mean(vals)))
        cells.append(float(np.std(vals)))
        rows.append(cells)
    write_csv(os.path.join(out_dir, "satisfaction_vs_N.csv"), header, rows)

    names = _coordinate_names(system.dx, system.du)
    write_csv(os.path.join(out_dir, "locations.csv"), names,
              [list(row) for row in np.asarray(best.locations)])

    return EXIT_OK if best.terminated_by == "satisfied" else EXIT_CAP


def load_plan(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    doc["result_obj"] = PlanResult.from_dict(doc["result"])
    return doc


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------

def run_validate(plan_path: str, cfg: RunConfig, runs: int, out_dir: str) -> int:
    os.makedirs(out_dir, exist_ok=True)
    doc = load_plan(plan_path)
    result: PlanResult = doc["result_obj"]
    root_seed = int(doc["setup"]["root_seed"])
    task_seed = int(doc["setup"]["task_seed"])

    system = build_system(cfg)
    if system.true_unknown is None:
        raise ConfigError("validation requires system.unknown_dynamics ground truth")
    prior = build_prior(cfg, system, make_rng(root_seed, "prior-data"))
    tasks = build_tasks(cfg, system, make_rng(task_seed))

    collect_rng = make_rng(root_seed, "collect")
    locations, residuals = collect_true_measurements(system, result.locations, collect_rng)
    controller_gp = prior
    if locations.shape[0]:
        controller_gp = prior.condition_many(locations, residuals)

    report = run_validation(system, tasks, controller_gp, runs,
                            make_rng(root_seed, "validate"))

    rows = []
    for j, task in enumerate(tasks):
        for t in range(1, task.horizon + 1):
            rows.append([task.task_id, t, float(report.step_mean[j, t - 1]),
                         float(report.step_std[j, t - 1])])
    write_csv(os.path.join(out_dir, "violations.csv"),
              ["task", "t", "mean_violation", "std_violation"], rows)

    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)
    return EXIT_OK


# ---------------------------------------------------------------------------
# demo
# ---------------------------------------------------------------------------

def run_demo(seed: int, full_scale: bool, smooth: bool, out_dir: str,
             runs: int = 100) -> int:
    cfg = demo_config(full_scale=full_scale, smooth=smooth, seed=seed)
    code = run_plan(cfg, out_dir)
    doc = load_plan(os.path.join(out_dir, "plan.json"))
    print("planning repetitions:")
    print(f"  {'rep':>3} {'N_final':>8} {'C_final':>10} {'terminated_by':>14}")
    for s in doc["repetition_summaries"]:
        print(f"  {s['repetition']:>3} {s['num_locations']:>8} "
              f"{s['final_satisfaction']:>10.4f} {s['terminated_by']:>14}")
    if code != EXIT_OK:
        print("planner hit the size cap; validating the best attempt anyway")
    run_validate(os.path.join(out_dir, "plan.json"), cfg, runs, out_dir)
    with open(os.path.join(out_dir, "report.json"), "r", encoding="utf-8") as fh:
        report = json.load(fh)
    print("validation over", report["runs"], "true-system runs:")
    for j, rate in enumerate(report["task_violation_rate"]):
        print(f"  task {j + 1}: violation rate {rate:.3f}, "
              f"max violation {report['task_max_violation'][j]:.4f}")
    print(f"  overall satisfaction rate: {report['overall_satisfaction_rate']:.3f}")
    return code


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_config_args(p: argparse.ArgumentParser):
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--config", help="path to a YAML run configuration")
    group.add_argument("--preset", help="name of a built-in configuration preset")


def _resolve_config(args) -> RunConfig:
    cfg = preset_config(args.preset) if args.preset else load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="dsml",
        description="Plan measurement locations for multi-task learning-based control.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_plan = sub.add_parser("plan", help="optimize a measurement set")
    _add_config_args(p_plan)
    p_plan.add_argument("--seed", type=int, help="override the planner seed")
    p_plan.add_argument("--out-dir", default="out", help="artifact directory")

    p_val = sub.add_parser("validate", help="check a plan against the true system")
    p_val.add_argument("plan", help="path to plan.json")
    _add_config_args(p_val)
    p_val.add_argument("--runs", type=int, default=100,
                       help="number of true-system simulations per task")
    p_val.add_argument("--out-dir", default="out", help="artifact directory")

    p_demo = sub.add_parser("demo", help="run the built-in planar tracking demo")
    p_demo.add_argument("--seed", type=int, default=7)
    p_demo.add_argument("--full-scale", action="store_true",
                        help="horizon 100 and 100 scenarios instead of desk scale")
    p_demo.add_argument("--literal-dynamics", action="store_true",
                        help="use the pole-afflicted literal demo map as ground truth")
    p_demo.add_argument("--runs", type=int, default=100)
    p_demo.add_argument("--out-dir", default="out", help="artifact directory")

    args = parser.parse_args(argv)
    try:
        if args.command == "plan":
            return run_plan(_resolve_config(args), args.out_dir)
        if args.command == "validate":
            return run_validate(args.plan, _resolve_config(args), args.runs, args.out_dir)
        if args.command == "demo":
            return run_demo(args.seed, args.full_scale, not args.literal_dynamics,
                            args.out_dir, runs=args.runs)
        parser.error(f"unknown command {args.command}")
    except (ConfigError, ConfigurationError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
