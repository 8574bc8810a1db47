"""Dev-only: shaped vs sparse on task1 across seeds, scored by the harness
evaluation convention (fixed eval episodes on the training structure)."""
import sys

import numpy as np

from hicore.gridworld import task_suite, make_task
from hicore.goals import GoalProgress
from hicore.planner import scripted_plan
from hicore.learner import init_policy, collect_rollout, ppo_update, PpoConfig
from hicore.harness import evaluate_policy
from hicore.rng import SplitMix64, derive_seed


def run(seed, shaped, budget=300_000, task_idx=0):
    spec = task_suite()[task_idx]
    env_seed = derive_seed(seed, "env", 0)
    env = make_task(spec, env_seed)
    goals = progress = None
    if shaped:
        goals = scripted_plan(env.describe())
        progress = GoalProgress(goals, window=50)
    params = init_policy(spec.obs_len, 6, derive_seed(seed, "policy", 0))
    cfg = PpoConfig()
    rng = SplitMix64(derive_seed(seed, "actions", 0))
    srng = np.random.default_rng(derive_seed(seed, "shuffle", 0))
    steps = 0
    while steps < budget:
        t = min(cfg.rollout_len, budget - steps)
        ro = collect_rollout(env, goals, progress, params, t, rng)
        params, _ = ppo_update(params, ro, cfg, srng)
        steps += t
    return evaluate_policy(params, spec, 20, derive_seed(seed, "eval", 0),
                           env_seed=env_seed)


if __name__ == "__main__":
    which = sys.argv[1]
    seeds = [int(s) for s in sys.argv[2:]]
    for seed in seeds:
        v = run(seed, shaped=(which == "shaped"))
        print(f"{which} task1 seed={seed}: eval={v:.3f}", flush=True)
