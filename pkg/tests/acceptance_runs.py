"""Top-level run helpers for the acceptance suite (picklable for process
pools). A run is fully determined by (method, seed, tasks, budget)."""
from __future__ import annotations

from hicore.harness import ExperimentConfig, PlannerSettings, run_crl_experiment

SUITE = ["task1", "task2", "task3", "task4"]
BUDGET = 300_000
SEEDS = [1, 2, 3, 4, 5]


def scale_config(method: str, tasks=None, budget: int = BUDGET,
                 **over) -> ExperimentConfig:
    kw = dict(
        tasks=list(tasks or SUITE),
        budget=budget,
        seeds=list(SEEDS),
        method="hicore" if method.startswith("hicore") else method,
        planner=PlannerSettings(kind="scripted"),
        no_library=(method == "hicore_sg"),
        no_feedback=(method == "hicore_once"),
    )
    kw.update(over)
    return ExperimentConfig(**kw)


def run_one(method: str, seed: int, tasks=None, budget: int = BUDGET,
            **over):
    """Returns (method, seed, matrix). Used by the big-run fixture."""
    config = scale_config(method, tasks=tasks, budget=budget, **over)
    matrix, _ = run_crl_experiment(config, seed)
    return method, seed, matrix
