"""Benchmark the compiled kernel backend against the pure-Python fallback.

Times the three hot paths (env stepping, fused rollout collection, and
whole-episode evaluation) on the largest base task and prints steps/second
for each backend plus the speedup.

Run:  python benchmarks/bench_core.py [--steps N]
"""
import argparse
import time

import numpy as np

from hicore.gridworld import make_task, task_suite
from hicore.learner import init_policy
from hicore.rng import SplitMix64, derive_seed

try:
    from hicore._kernels import _core
except ImportError:
    _core = None
from hicore._kernels import _pycore

BACKENDS = [("python", _pycore)] + ([("compiled", _core)] if _core else [])


def bench_env_step(backend, spec, n_steps):
    env = make_task(spec, seed=1)
    rng = SplitMix64(0)
    start = time.perf_counter()
    done_count = 0
    for t in range(n_steps):
        if env.done:
            env.reset(env.next_episode_seed())
        backend.env_step(env.kind, env.color, env.door, env.astate,
                         spec.max_steps, env.goal_x, env.goal_y,
                         rng.randrange(6))
        done_count += int(env.done)
    return n_steps / (time.perf_counter() - start)


def _net_views(params):
    return (params.w1, params.b1, params.w2, params.b2,
            params.wa, params.ba, params.wv, params.bv)


def bench_rollout(backend, spec, n_steps):
    env = make_task(spec, seed=1)
    params = init_policy(spec.obs_len, 6, seed=0)
    rng = np.array([derive_seed(3)], dtype=np.uint64)
    T = 2048
    obs = np.zeros((T, spec.obs_len))
    act = np.zeros(T, dtype=np.int64)
    f64 = lambda: np.zeros(T)
    logp, val, rext, rint = f64(), f64(), f64(), f64()
    rintg = np.zeros((T, 0))
    done = np.zeros(T, dtype=np.uint8)
    empty8 = np.zeros(0, dtype=np.int8)
    gachv = np.zeros(0, dtype=np.uint8)
    ow, oh = spec.obs_shape
    steps = 0
    start = time.perf_counter()
    while steps < n_steps:
        t = 0
        while t < T:
            t = backend.run_segment(
                env.kind, env.color, env.door, env.astate, rng,
                spec.max_steps, env.goal_x, env.goal_y, ow, oh,
                *_net_views(params), empty8, empty8, np.zeros(0), gachv,
                env.door_xy, obs, act, logp, val, rext, rint, rintg, done, t)
            if done[t - 1]:
                env.reset(env.next_episode_seed())
        steps += T
    return steps / (time.perf_counter() - start)


def bench_episodes(backend, spec, n_steps):
    env = make_task(spec, seed=1)
    params = init_policy(spec.obs_len, 6, seed=0)
    rng = np.array([derive_seed(4)], dtype=np.uint64)
    ow, oh = spec.obs_shape
    steps = 0
    episodes = 0
    start = time.perf_counter()
    while steps < n_steps:
        env.reset(episodes)
        _, n = backend.run_episode(
            env.kind, env.color, env.door, env.astate, rng,
            spec.max_steps, env.goal_x, env.goal_y, ow, oh,
            *_net_views(params))
        steps += n
        episodes += 1
    return steps / (time.perf_counter() - start)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=60_000,
                    help="steps per measurement")
    args = ap.parse_args()
    spec = {s.task_id: s for s in task_suite()}["task4"]
    print(f"task: {spec.task_id} ({spec.width}x{spec.height}, "
          f"obs dim {spec.obs_len}), {args.steps} steps per cell")
    print(f"{'path':<16}" + "".join(f"{name:>14}" for name, _ in BACKENDS)
          + (f"{'speedup':>10}" if len(BACKENDS) == 2 else ""))
    for label, fn in (("env_step", bench_env_step),
                      ("rollout", bench_rollout),
                      ("episode", bench_episodes)):
        rates = [fn(backend, spec, args.steps) for _, backend in BACKENDS]
        row = f"{label:<16}" + "".join(f"{r:>12.0f}/s" for r in rates)
        if len(rates) == 2:
            row += f"{rates[1] / rates[0]:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
