"""Dev-only: drive shaped PPO on one task and print final stats."""
import sys

import numpy as np

from hicore.gridworld import task_suite, make_task
from hicore.goals import GoalProgress, achievement_stats
from hicore.planner import scripted_plan
from hicore.learner import init_policy, collect_rollout, ppo_update, PpoConfig
from hicore.rng import SplitMix64, derive_seed


def drive(task_idx, seed, cfg, budget=300_000):
    spec = task_suite()[task_idx]
    env = make_task(spec, derive_seed(seed, "env", 0))
    goals = scripted_plan(env.describe())
    progress = GoalProgress(goals, window=50)
    params = init_policy(spec.obs_len, 6, derive_seed(seed, "policy", 0))
    rng = SplitMix64(derive_seed(seed, "actions", 0))
    srng = np.random.default_rng(derive_seed(seed, "shuffle", 0))
    rets = []
    steps = 0
    while steps < budget:
        t = min(cfg.rollout_len, budget - steps)
        ro = collect_rollout(env, goals, progress, params, t, rng)
        params, st = ppo_update(params, ro, cfg, srng)
        rets.extend(e.ret for e in ro.episodes)
        steps += t
    stats = achievement_stats(progress)
    return np.mean(rets[-50:]), [round(r, 2) for r in stats.rates]


if __name__ == "__main__":
    name = sys.argv[1]
    variants = {
        "A": PpoConfig(),
        "B": PpoConfig(lr=1e-3),
        "C": PpoConfig(lr=1e-3, gamma=0.995),
        "D": PpoConfig(epochs=8),
        "E": PpoConfig(lr=1e-3, epochs=8, gamma=0.995),
    }
    cfg = variants[name]
    for task_idx, seed in ((0, 1), (0, 4), (1, 1)):
        ret, rates = drive(task_idx, seed, cfg)
        print(f"{name} task{task_idx+1} seed={seed}: ret={ret:.3f} rates={rates}",
              flush=True)
