"""Command-line interface: run experiments, dry-run the planner, evaluate
saved policies, recompute metrics from CSV, render ASCII trajectories."""
from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from . import backend_name
from .gridworld import make_task, suite_by_id
from .harness import (
    ExperimentConfig,
    compute_run_metrics,
    evaluate_policy,
    export_curves,
    load_config,
    render_trajectory,
    run_crl_experiment,
)
from .learner import deserialize_params, init_policy
from .metrics import PerformanceMatrix, ReferenceCurves
from .planner import formulate, render_plan
from .rng import derive_seed


def _cmd_run(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config.seeds = [args.seed]
    if args.method is not None:
        config.method = args.method
    if args.planner is not None:
        config.planner.kind = args.planner
    if args.out is not None:
        config.out_dir = args.out
    results = []
    if args.workers > 1 and len(config.seeds) > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            futures = {s: pool.submit(run_crl_experiment, config, s)
                       for s in config.seeds}
            for s in config.seeds:
                matrix, log = futures[s].result()
                results.append((s, matrix, log))
    else:
        for s in config.seeds:
            matrix, log = run_crl_experiment(config, s)
            results.append((s, matrix, log))

    refs = None
    if config.method == "sg":
        refs = "self"
    elif config.reference_run_dir:
        refs = _load_reference_dir(config.reference_run_dir, config, results)
    paths = export_curves(results, config.out_dir, refs=refs)
    for p in paths:
        print(p)
    return 0


def _load_reference_dir(ref_dir: str, config: ExperimentConfig, results):
    refs = {}
    for s, matrix, _ in results:
        stem = "" if len(results) == 1 else f"_seed{s}"
        path = os.path.join(ref_dir, f"perf{stem}.csv")
        if not os.path.exists(path):
            path = os.path.join(ref_dir, "perf.csv")
        with open(path, "r", encoding="utf-8") as f:
            ref = PerformanceMatrix.from_csv(
                f.read(), list(config.tasks), config.budget,
                boundaries=matrix.boundaries)
        refs[s] = ReferenceCurves(ref)
    return refs


def _cmd_plan(args) -> int:
    suite = suite_by_id()
    if args.task not in suite:
        print(f"unknown task {args.task!r}; known: {sorted(suite)}", file=sys.stderr)
        return 2
    env = make_task(suite[args.task], derive_seed(args.seed, "env", 0))
    desc = env.describe()
    from .planner import PlannerClient

    client = PlannerClient(args.planner, endpoint=args.endpoint or "",
                           model=args.model or "")
    seq, text = formulate(client, desc, [], max_parse_retries=1)
    print("# environment")
    print(desc.text)
    print("# plan")
    print(render_plan(seq))
    return 0


def _cmd_eval(args) -> int:
    suite = suite_by_id()
    spec = suite[args.task]
    if args.params:
        with open(args.params, "r", encoding="utf-8") as f:
            params = deserialize_params(json.load(f))
    else:
        params = init_policy(spec.obs_len, 6, derive_seed(args.seed, "policy", 0))
    mean = evaluate_policy(params, spec, args.episodes,
                           derive_seed(args.seed, "eval", 0),
                           env_seed=derive_seed(args.seed, "env", 0))
    print(f"{spec.task_id}: mean normalized return over "
          f"{args.episodes} episodes = {mean:.4f}")
    return 0


def _cmd_metrics(args) -> int:
    with open(args.perf, "r", encoding="utf-8") as f:
        text = f.read()
    header = text.strip().splitlines()[0]
    n_tasks = len(header.split(",")) - 1
    task_ids = [f"task_{i + 1}" for i in range(n_tasks)]
    boundaries = [(t, i * args.budget, (i + 1) * args.budget)
                  for i, t in enumerate(task_ids)]
    matrix = PerformanceMatrix.from_csv(text, task_ids, args.budget,
                                        boundaries=boundaries)
    refs = None
    if args.ref:
        with open(args.ref, "r", encoding="utf-8") as f:
            ref = PerformanceMatrix.from_csv(f.read(), task_ids, args.budget,
                                             boundaries=boundaries)
        refs = ReferenceCurves(ref)
    m = compute_run_metrics(matrix, refs)
    fw = "n/a" if m["FW"] is None else f"{m['FW']:.6f}"
    print(f"A_N={m['A_N']:.6f} FW={fw} FG={m['FG']:.6f}")
    return 0


def _cmd_render(args) -> int:
    suite = suite_by_id()
    spec = suite[args.task]
    if args.params:
        with open(args.params, "r", encoding="utf-8") as f:
            params = deserialize_params(json.load(f))
    else:
        params = init_policy(spec.obs_len, 6, derive_seed(args.seed, "policy", 0))
    frames = render_trajectory(spec, params, args.seed, args.max_frames)
    for i, frame in enumerate(frames):
        print(f"--- frame {i} ---")
        print(frame)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="hicore",
        description="Continual RL over a key-door gridworld suite "
                    f"(kernel backend: {backend_name()})")
    sub = p.add_subparsers(dest="command", required=True)

    runp = sub.add_parser("run", help="run a configured experiment")
    runp.add_argument("--config", required=True)
    runp.add_argument("--seed", type=int, default=None,
                      help="override: run only this seed")
    runp.add_argument("--method", default=None)
    runp.add_argument("--planner", default=None,
                      choices=["llm", "scripted", "replay"])
    runp.add_argument("--out", default=None)
    runp.add_argument("--workers", type=int, default=1,
                      help="parallel seeds (process pool)")
    runp.set_defaults(func=_cmd_run)

    planp = sub.add_parser("plan", help="dry-run the planner on a task")
    planp.add_argument("--task", required=True)
    planp.add_argument("--planner", default="scripted",
                       choices=["llm", "scripted", "replay"])
    planp.add_argument("--endpoint", default=None)
    planp.add_argument("--model", default=None)
    planp.add_argument("--seed", type=int, default=0)
    planp.set_defaults(func=_cmd_plan)

    evalp = sub.add_parser("eval", help="evaluate saved params on a task")
    evalp.add_argument("--task", required=True)
    evalp.add_argument("--params", default=None,
                       help="JSON parameter snapshot (default: fresh init)")
    evalp.add_argument("--episodes", type=int, default=20)
    evalp.add_argument("--seed", type=int, default=0)
    evalp.set_defaults(func=_cmd_eval)

    metp = sub.add_parser("metrics", help="recompute metrics from perf.csv")
    metp.add_argument("--perf", required=True)
    metp.add_argument("--budget", type=int, required=True,
                      help="per-task step budget used by the run")
    metp.add_argument("--ref", default=None,
                      help="reference perf.csv for forward transfer")
    metp.set_defaults(func=_cmd_metrics)

    rendp = sub.add_parser("render", help="ASCII-render one episode")
    rendp.add_argument("--task", required=True)
    rendp.add_argument("--params", default=None)
    rendp.add_argument("--seed", type=int, default=0)
    rendp.add_argument("--max-frames", type=int, default=50)
    rendp.set_defaults(func=_cmd_render)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
