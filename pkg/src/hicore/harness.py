"""Experiment orchestration: config, the full continual-RL loop
(report -> retrieve -> formulate -> learn -> monitor -> refine -> store ->
evaluate), ablation switches, logging, ASCII rendering and CSV export.

Evaluation bookkeeping: methods that keep a single continuing policy (ft,
ft_l2, packnet, and the warm-started goal-shaped variant) are scored on every
task with the current parameters, so forgetting is visible. Methods that
start each task fresh (sg and the default goal-shaped method) are scored per
task with that task's own agent: its frozen final snapshot once its phase
ended, the live parameters during its phase, and its untrained initial
parameters before — which makes their forgetting exactly zero by
construction, as a from-scratch baseline demands.
"""
from __future__ import annotations

import json
import os
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import (
    DuplicateRecord,
    EmptyWindow,
    InvalidValue,
    MissingField,
    PlanningFailed,
    ShapeMismatch,
)
from .goals import GoalProgress, achievement_stats, threshold_met
from .gridworld import (
    Action,
    DoorState,
    GridEnv,
    Heading,
    Kind,
    TaskSpec,
    make_task,
    suite_by_id,
)
from .learner import (
    PolicyParams,
    PpoConfig,
    StrategyState,
    collect_rollout,
    init_policy,
    packnet_prune,
    policy_forward,
    ppo_update,
    serialize_params,
    task_boundary,
)
from .library import LibraryIndex, PlanRecord
from .metrics import (
    PerformanceMatrix,
    ReferenceCurves,
    average_performance,
    forgetting,
    forward_transfer,
    record_checkpoint,
)
from .planner import PlannerClient, compose_feedback, formulate
from .rng import SplitMix64, derive_seed

METHODS = ("hicore", "sg", "ft", "ft_l2", "packnet")
PLANNER_KINDS = ("llm", "scripted", "replay")

_CONFIG_KEYS = {
    "tasks", "budget", "seeds", "method", "ablation", "planner", "tau",
    "window", "replans", "ppo", "out_dir", "library_path", "eval_episodes",
    "checkpoints_per_task", "retrieve_k", "l2_lambda",
    "packnet_retrain_frac", "store_low_level_params", "reference_run_dir",
}
_ABLATION_KEYS = {"no_library", "no_feedback", "fine_tune_low_level"}
_PLANNER_KEYS = {"kind", "endpoint", "model", "temperature", "replay_path"}


@dataclass
class PlannerSettings:
    kind: str = "scripted"
    endpoint: str = ""
    model: str = ""
    temperature: float = 0.0
    replay_path: Optional[str] = None

    def make_client(self) -> PlannerClient:
        return PlannerClient(self.kind, endpoint=self.endpoint,
                             model=self.model, temperature=self.temperature,
                             replay_path=self.replay_path)


@dataclass
class ExperimentConfig:
    tasks: list[str]
    budget: int
    seeds: list[int]
    method: str
    no_library: bool = False
    no_feedback: bool = False
    fine_tune_low_level: bool = False
    planner: PlannerSettings = field(default_factory=PlannerSettings)
    tau: float = 0.8
    window: int = 50
    replans: int = 3
    ppo: PpoConfig = field(default_factory=PpoConfig)
    out_dir: str = "runs/out"
    library_path: Optional[str] = None
    eval_episodes: int = 20
    checkpoints_per_task: int = 20
    retrieve_k: Optional[int] = None
    l2_lambda: float = 0.01
    packnet_retrain_frac: float = 0.1
    store_low_level_params: bool = False
    reference_run_dir: Optional[str] = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["planner"] = asdict(self.planner)
        d["ppo"] = asdict(self.ppo)
        return d


def _validate_config(cfg: ExperimentConfig) -> ExperimentConfig:
    suite = suite_by_id()
    if not cfg.tasks:
        raise InvalidValue("tasks list is empty")
    for t in cfg.tasks:
        if t not in suite:
            raise InvalidValue(f"unknown task id {t!r}; known: {sorted(suite)}")
    if cfg.budget <= 0:
        raise InvalidValue("budget must be positive")
    if not cfg.seeds:
        raise InvalidValue("seeds list is empty")
    if cfg.method not in METHODS:
        raise InvalidValue(f"unknown method {cfg.method!r}; known: {METHODS}")
    ablations = cfg.no_library or cfg.no_feedback or cfg.fine_tune_low_level
    if ablations and cfg.method != "hicore":
        raise InvalidValue("ablation flags are valid only with method=hicore")
    if not 0.0 < cfg.tau <= 1.0:
        raise InvalidValue("tau must be in (0, 1]")
    if cfg.window < 1:
        raise InvalidValue("window must be >= 1")
    if cfg.replans < 0:
        raise InvalidValue("replans must be >= 0")
    if cfg.planner.kind not in PLANNER_KINDS:
        raise InvalidValue(f"unknown planner kind {cfg.planner.kind!r}")
    if cfg.eval_episodes < 1:
        raise InvalidValue("eval_episodes must be >= 1")
    if cfg.checkpoints_per_task < 2:
        raise InvalidValue("checkpoints_per_task must be >= 2")
    if not 0.0 < cfg.packnet_retrain_frac < 1.0:
        raise InvalidValue("packnet_retrain_frac must be in (0, 1)")
    return cfg


def config_from_dict(raw: dict) -> ExperimentConfig:
    unknown = set(raw) - _CONFIG_KEYS
    if unknown:
        raise InvalidValue(f"unknown config keys: {sorted(unknown)}")
    for required in ("tasks", "budget", "seeds", "method"):
        if required not in raw:
            raise MissingField(required)
    ablation = raw.get("ablation", {})
    if set(ablation) - _ABLATION_KEYS:
        raise InvalidValue(f"unknown ablation keys: {sorted(set(ablation) - _ABLATION_KEYS)}")
    planner_raw = raw.get("planner", {})
    if set(planner_raw) - _PLANNER_KEYS:
        raise InvalidValue(f"unknown planner keys: {sorted(set(planner_raw) - _PLANNER_KEYS)}")
    try:
        planner = PlannerSettings(**planner_raw)
        ppo = PpoConfig(**raw.get("ppo", {}))
    except (TypeError, ValueError) as e:
        raise InvalidValue(str(e)) from None
    cfg = ExperimentConfig(
        tasks=list(raw["tasks"]),
        budget=int(raw["budget"]),
        seeds=list(raw["seeds"]),
        method=str(raw["method"]),
        no_library=bool(ablation.get("no_library", False)),
        no_feedback=bool(ablation.get("no_feedback", False)),
        fine_tune_low_level=bool(ablation.get("fine_tune_low_level", False)),
        planner=planner,
        tau=float(raw.get("tau", 0.8)),
        window=int(raw.get("window", 50)),
        replans=int(raw.get("replans", 3)),
        ppo=ppo,
        out_dir=str(raw.get("out_dir", "runs/out")),
        library_path=raw.get("library_path"),
        eval_episodes=int(raw.get("eval_episodes", 20)),
        checkpoints_per_task=int(raw.get("checkpoints_per_task", 20)),
        retrieve_k=raw.get("retrieve_k"),
        l2_lambda=float(raw.get("l2_lambda", 0.01)),
        packnet_retrain_frac=float(raw.get("packnet_retrain_frac", 0.1)),
        store_low_level_params=bool(raw.get("store_low_level_params", False)),
        reference_run_dir=raw.get("reference_run_dir"),
    )
    return _validate_config(cfg)


def load_config(path: str) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as e:
            raise InvalidValue(f"config is not valid JSON: {e}") from None
    return config_from_dict(raw)


class RunLog:
    """Append-only event stream, timestamped by global step."""

    def __init__(self):
        self.events: list[dict] = []

    def log(self, step: int, kind: str, **payload) -> None:
        self.events.append({"step": int(step), "type": kind, **payload})

    def of_type(self, kind: str) -> list[dict]:
        return [e for e in self.events if e["type"] == kind]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e) + "\n" for e in self.events)


def evaluate_policy(params: PolicyParams, task: TaskSpec, episodes: int,
                    seed: int, env_seed: Optional[int] = None) -> float:
    """Mean extrinsic return of the stochastic policy over fresh episodes."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    if task.obs_len != params.obs_dim:
        raise ShapeMismatch(
            f"task {task.task_id} obs len {task.obs_len} != policy {params.obs_dim}")
    from . import _kernels as K

    env = make_task(task, env_seed if env_seed is not None
                    else derive_seed(seed, "eval-env"))
    act_rng = SplitMix64(derive_seed(seed, "eval-actions"))
    ow, oh = task.obs_shape
    total = 0.0
    for ep in range(episodes):
        env.reset(derive_seed(seed, "eval-episode", ep))
        ret, _ = K.impl.run_episode(
            env.kind, env.color, env.door, env.astate, act_rng.state,
            task.max_steps, env.goal_x, env.goal_y, ow, oh,
            params.w1, params.b1, params.w2, params.b2,
            params.wa, params.ba, params.wv, params.bv)
        total += ret
    return total / episodes


def _marks(budget: int, count: int) -> list[int]:
    return sorted(set((j * budget) // count for j in range(1, count + 1)))


def run_crl_experiment(config: ExperimentConfig, seed: int):
    """Run the task sequence once; returns (PerformanceMatrix, RunLog)."""
    _validate_config(config)
    suite = suite_by_id()
    specs = [suite[t] for t in config.tasks]
    n_tasks = len(specs)
    budget = config.budget
    log = RunLog()
    log.log(0, "config", seed=seed, config=config.to_dict())

    matrix = PerformanceMatrix(task_ids=list(config.tasks), budget=budget)
    matrix.boundaries = [(t, i * budget, (i + 1) * budget)
                         for i, t in enumerate(config.tasks)]

    library = LibraryIndex()
    if config.library_path and os.path.exists(config.library_path):
        library = LibraryIndex.load(config.library_path)

    client = config.planner.make_client() if config.method == "hicore" else None
    strategy = StrategyState(
        kind=config.method,
        fine_tune=config.fine_tune_low_level,
        anchor_lambda=config.l2_lambda,
        total_tasks=n_tasks,
    )

    # Fixed per-task evaluation environments and seeds keep eval noise paired
    # across checkpoints (a frozen policy scores identically every time).
    env_seeds = [derive_seed(seed, "env", j) for j in range(n_tasks)]
    eval_seeds = [derive_seed(seed, "eval", j) for j in range(n_tasks)]
    snapshots: dict[int, PolicyParams] = {}
    fresh_cache: dict[int, PolicyParams] = {}
    single_agent = strategy.carries_params()

    def owner_params(j: int, current: PolicyParams, ti: int) -> PolicyParams:
        if single_agent or j == ti:
            return current
        if j in snapshots:
            return snapshots[j]
        if j not in fresh_cache:
            fresh_cache[j] = init_policy(
                specs[j].obs_len, len(Action),
                derive_seed(seed, "policy", j), strategy.hidden)
        return fresh_cache[j]

    def eval_row(current: PolicyParams, ti: int) -> np.ndarray:
        row = np.zeros(n_tasks)
        for j, sp in enumerate(specs):
            p = owner_params(j, current, ti)
            try:
                row[j] = evaluate_policy(p, sp, config.eval_episodes,
                                         eval_seeds[j], env_seed=env_seeds[j])
            except ShapeMismatch:
                log.log(global_step, "eval_shape_mismatch", task=sp.task_id)
                row[j] = 0.0
        return row

    params: Optional[PolicyParams] = None
    global_step = 0

    for ti, spec in enumerate(specs):
        params = task_boundary(strategy, params, ti, spec.obs_len,
                               len(Action), seed)
        env = make_task(spec, env_seeds[ti])
        act_rng = SplitMix64(derive_seed(seed, "actions", ti))
        shuffle_rng = np.random.default_rng(derive_seed(seed, "shuffle", ti))
        log.log(global_step, "task_start", task=spec.task_id, index=ti)

        goals = progress = None
        plan_text = None
        desc = None
        experiences = []
        if config.method == "hicore":
            desc = env.describe()
            if not config.no_library and len(library) > 0:
                k = len(library) if config.retrieve_k is None \
                    else min(config.retrieve_k, len(library))
                results = library.retrieve(desc.text, k)
                experiences = [r for r, _ in results]
                log.log(global_step, "retrieve", task=spec.task_id, k=k,
                        results=[{"env_description": r.env_description,
                                  "score": s} for r, s in results])
            try:
                goals, plan_text = formulate(client, desc, experiences,
                                             None, max_parse_retries=1)
                progress = GoalProgress(goals, window=config.window)
                log.log(global_step, "plan", task=spec.task_id,
                        replan=0, plan_text=plan_text)
            except PlanningFailed as e:
                log.log(global_step, "planning_failed", task=spec.task_id,
                        error=str(e))

        ckpt_marks = _marks(budget, config.checkpoints_per_task)
        replan_marks = []
        if (config.method == "hicore" and not config.no_feedback
                and config.replans > 0):
            replan_marks = [(j * budget) // (config.replans + 1)
                            for j in range(1, config.replans + 1)]
        prune_mark = None
        if config.method == "packnet" and ti < n_tasks - 1:
            prune_mark = int(budget * (1.0 - config.packnet_retrain_frac))

        steps_done = 0
        replans_used = 0
        ep_returns: deque[float] = deque(maxlen=config.window)

        def current_stats():
            try:
                return achievement_stats(progress)
            except EmptyWindow:
                return None

        def mean_ext() -> float:
            return float(np.mean(ep_returns)) if ep_returns else 0.0

        while steps_done < budget:
            t_roll = min(config.ppo.rollout_len, budget - steps_done)
            rollout = collect_rollout(env, goals, progress, params,
                                      t_roll, act_rng)
            for ep in rollout.episodes:
                ep_returns.append(ep.ret)
            params, _ = ppo_update(params, rollout, config.ppo,
                                   shuffle_rng, strategy)
            steps_done += t_roll
            global_step += t_roll

            if (prune_mark is not None and steps_done >= prune_mark
                    and strategy.pending_mask is None):
                keep = 1.0 / (n_tasks - ti)
                strategy.pending_mask = packnet_prune(params, strategy.masks,
                                                      keep)
                log.log(global_step, "packnet_prune", task=spec.task_id,
                        keep_fraction=keep)

            while ckpt_marks and steps_done >= ckpt_marks[0]:
                ckpt_marks.pop(0)
                record_checkpoint(matrix, global_step, eval_row(params, ti))
                log.log(global_step, "checkpoint",
                        perf=[float(v) for v in matrix.rows[-1]])

            while (replan_marks and steps_done >= replan_marks[0]
                   and goals is not None and replans_used < config.replans):
                replan_marks.pop(0)
                stats = current_stats()
                if stats is None or threshold_met(stats, config.tau):
                    continue
                feedback = compose_feedback(stats, mean_ext(), steps_done)
                try:
                    goals, plan_text = formulate(
                        client, desc, experiences, feedback,
                        max_parse_retries=1)
                    progress = GoalProgress(goals, window=config.window)
                    replans_used += 1
                    env.reset(env.next_episode_seed())
                    log.log(global_step, "plan", task=spec.task_id,
                            replan=replans_used, plan_text=plan_text,
                            feedback=feedback.text)
                except PlanningFailed as e:
                    goals = progress = None
                    log.log(global_step, "planning_failed",
                            task=spec.task_id, error=str(e))

        if (config.method == "hicore" and not config.no_library
                and goals is not None):
            stats = current_stats()
            if stats is not None and threshold_met(stats, config.tau):
                feedback = compose_feedback(stats, mean_ext(), steps_done)
                blob = serialize_params(params) \
                    if config.store_low_level_params else None
                record = PlanRecord(desc.text, plan_text, feedback.text,
                                    success=True, low_level_params=blob)
                try:
                    library.store(record)
                    log.log(global_step, "store", task=spec.task_id,
                            library_size=len(library))
                except DuplicateRecord:
                    log.log(global_step, "store_duplicate", task=spec.task_id)
            else:
                fraction = stats.fraction if stats is not None else 0.0
                log.log(global_step, "store_skipped", task=spec.task_id,
                        fraction=fraction, tau=config.tau)

        if not single_agent:
            snapshots[ti] = params.copy()
        log.log(global_step, "task_end", task=spec.task_id, index=ti)

    if config.library_path:
        library.save(config.library_path)
    final_metrics = {"A_N": average_performance(matrix)}
    log.log(global_step, "final", metrics=final_metrics)
    return matrix, log


# -- rendering ----------------------------------------------------------------

_AGENT_CHARS = {Heading.N: "^", Heading.E: ">", Heading.S: "v", Heading.W: "<"}


def render_frame(env: GridEnv) -> str:
    """One ASCII frame: '#' wall, 'k' key, 'D'/'d' locked/unlocked door,
    'G' goal, '>^<v' agent by heading, '.' floor."""
    h, w = env.kind.shape
    ax, ay = env.agent_pos
    rows = []
    for y in range(h):
        chars = []
        for x in range(w):
            if (x, y) == (ax, ay):
                chars.append(_AGENT_CHARS[env.heading])
                continue
            k = env.kind[y, x]
            if k == Kind.WALL:
                chars.append("#")
            elif k == Kind.KEY:
                chars.append("k")
            elif k == Kind.DOOR:
                chars.append("D" if env.door[y, x] == DoorState.LOCKED else "d")
            elif k == Kind.GOAL:
                chars.append("G")
            else:
                chars.append(".")
        rows.append("".join(chars))
    return "\n".join(rows)


def render_trajectory(task: TaskSpec, params: PolicyParams, seed: int,
                      max_frames: int = 50) -> list[str]:
    """Play one stochastic episode and return ASCII frames, initial state
    first, at most max_frames."""
    env = make_task(task, derive_seed(seed, "render-env"))
    env.reset(derive_seed(seed, "render-episode"))
    rng = SplitMix64(derive_seed(seed, "render-actions"))
    frames = [render_frame(env)]
    while not env.done and len(frames) < max_frames:
        probs, _ = policy_forward(params, env.encode_obs())
        u = rng.uniform()
        acc = 0.0
        a = len(probs) - 1
        for i, p in enumerate(probs):
            acc += p
            if u < acc:
                a = i
                break
        env.step(a)
        frames.append(render_frame(env))
    return frames


# -- export -------------------------------------------------------------------

def compute_run_metrics(matrix: PerformanceMatrix,
                        refs: Optional[ReferenceCurves] = None) -> dict:
    """A_N, FW (None without reference curves), FG for one run."""
    fw = None if refs is None else forward_transfer(matrix, refs)
    return {
        "A_N": average_performance(matrix),
        "FW": fw,
        "FG": forgetting(matrix),
    }


def export_curves(results, out_dir: str, refs=None) -> list[str]:
    """Write per-seed perf CSVs and event logs plus one metrics.csv.

    ``results``: list of (seed, matrix, log). ``refs``: optional mapping
    seed -> ReferenceCurves for the forward-transfer column; "self" scores
    every run against its own curves (the from-scratch baseline convention).
    Returns the written paths.
    """
    from .errors import EmptyMatrix, IoFailure

    if not results:
        raise ValueError("no runs to export")
    for _, matrix, _ in results:
        if not matrix.rows:
            raise EmptyMatrix("cannot export a run with no checkpoints")
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    single = len(results) == 1
    metric_rows = []
    try:
        for s, matrix, log in results:
            stem = "" if single else f"_seed{s}"
            perf_path = os.path.join(out_dir, f"perf{stem}.csv")
            with open(perf_path, "w", encoding="utf-8") as f:
                f.write(matrix.to_csv())
            paths.append(perf_path)
            events_path = os.path.join(out_dir, f"events{stem}.jsonl")
            with open(events_path, "w", encoding="utf-8") as f:
                f.write(log.to_jsonl())
            paths.append(events_path)
            if refs == "self":
                run_refs = ReferenceCurves(matrix)
            elif refs is not None:
                run_refs = refs.get(s)
            else:
                run_refs = None
            metric_rows.append((s, compute_run_metrics(matrix, run_refs)))

        metrics_path = os.path.join(out_dir, "metrics.csv")
        with open(metrics_path, "w", encoding="utf-8") as f:
            f.write("# action_selection=stochastic\n")
            f.write("seed,A_N,FW,FG\n")
            for s, m in metric_rows:
                fw = "" if m["FW"] is None else f"{m['FW']:.6f}"
                f.write(f"{s},{m['A_N']:.6f},{fw},{m['FG']:.6f}\n")
            a = np.array([m["A_N"] for _, m in metric_rows])
            g = np.array([m["FG"] for _, m in metric_rows])
            fws = [m["FW"] for _, m in metric_rows if m["FW"] is not None]
            fw_agg = (f"{np.mean(fws):.6f}±{np.std(fws):.6f}" if fws else "")
            f.write(f"aggregate,{a.mean():.6f}±{a.std():.6f},{fw_agg},"
                    f"{g.mean():.6f}±{g.std():.6f}\n")
        paths.append(metrics_path)
    except OSError as e:
        raise IoFailure(f"cannot write outputs to {out_dir}: {e}") from None
    return paths
