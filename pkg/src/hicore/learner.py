"""Goal-shaped PPO on a small actor-critic MLP, with task-boundary strategies.

The network is a shared two-layer tanh trunk with a softmax actor head and a
scalar critic head, trained on the per-step sum of extrinsic and intrinsic
reward with clipped-surrogate PPO, GAE advantages and Adam. Gradients are
computed analytically in numpy; tests check them against finite differences.

Task-boundary strategies: fresh policy per task (sg and the default
goal-shaped method), plain carry-over (ft), carry-over with an L2 anchor on
the previous task's weights (ft_l2), and magnitude-pruned parameter isolation
with per-task masks (packnet).
"""
from __future__ import annotations

import base64
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels as K
from .errors import NoFreeCapacity, NonFiniteLoss, ShapeMismatch
from .goals import GoalProgress, GoalSequence, empty_goal_arrays
from .gridworld import GridEnv
from .rng import SplitMix64, derive_seed

_TENSOR_NAMES = ("w1", "b1", "w2", "b2", "wa", "ba", "wv", "bv")

_ADAM_B1 = 0.9
_ADAM_B2 = 0.999
_ADAM_EPS = 1e-8


@dataclass
class PpoConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip_eps: float = 0.2
    epochs: int = 4
    minibatch: int = 64
    lr: float = 3e-4
    value_weight: float = 0.5
    entropy_weight: float = 0.01
    rollout_len: int = 2048

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must be in [0, 1]")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must be in [0, 1]")
        if self.clip_eps <= 0:
            raise ValueError("clip_eps must be positive")
        if self.epochs < 1 or self.minibatch < 1 or self.rollout_len < 1:
            raise ValueError("epochs, minibatch and rollout_len must be >= 1")


class PolicyParams:
    """Actor-critic weights plus Adam moments; all float64, (in, out) layout."""

    def __init__(self, obs_dim: int, act_dim: int, hidden: tuple[int, int],
                 tensors: dict[str, np.ndarray]):
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.hidden = hidden
        for name in _TENSOR_NAMES:
            setattr(self, name, np.ascontiguousarray(tensors[name], dtype=np.float64))
        self.adam_m = {n: np.zeros_like(getattr(self, n)) for n in _TENSOR_NAMES}
        self.adam_v = {n: np.zeros_like(getattr(self, n)) for n in _TENSOR_NAMES}
        self.adam_t = 0

    def tensors(self) -> list[tuple[str, np.ndarray]]:
        return [(n, getattr(self, n)) for n in _TENSOR_NAMES]

    def copy(self) -> "PolicyParams":
        c = PolicyParams(self.obs_dim, self.act_dim, self.hidden,
                         {n: t.copy() for n, t in self.tensors()})
        c.adam_m = {n: m.copy() for n, m in self.adam_m.items()}
        c.adam_v = {n: v.copy() for n, v in self.adam_v.items()}
        c.adam_t = self.adam_t
        return c

    def n_params(self) -> int:
        return sum(t.size for _, t in self.tensors())


def _orthogonal(rng: np.random.Generator, shape: tuple[int, int], gain: float) -> np.ndarray:
    rows, cols = shape
    flat = rng.standard_normal((rows, cols))
    if rows < cols:
        flat = flat.T
    q, r = np.linalg.qr(flat)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def init_policy(obs_dim: int, act_dim: int, seed: int,
                hidden: tuple[int, int] = (64, 64)) -> PolicyParams:
    """Orthogonal trunk init (gain sqrt(2)), small actor head, unit critic head."""
    if obs_dim <= 0 or act_dim <= 0:
        raise ValueError("dims must be positive")
    rng = np.random.default_rng(derive_seed(seed, "init", obs_dim, act_dim))
    h1, h2 = hidden
    g = np.sqrt(2.0)
    tensors = {
        "w1": _orthogonal(rng, (obs_dim, h1), g),
        "b1": np.zeros(h1),
        "w2": _orthogonal(rng, (h1, h2), g),
        "b2": np.zeros(h2),
        "wa": _orthogonal(rng, (h2, act_dim), 0.01),
        "ba": np.zeros(act_dim),
        "wv": _orthogonal(rng, (h2, 1), 1.0),
        "bv": np.zeros(1),
    }
    return PolicyParams(obs_dim, act_dim, hidden, tensors)


def _forward_trunk(params: PolicyParams, x: np.ndarray):
    h1 = np.tanh(x @ params.w1 + params.b1)
    h2 = np.tanh(h1 @ params.w2 + params.b2)
    logits = h2 @ params.wa + params.ba
    values = h2 @ params.wv[:, 0] + params.bv[0]
    return h1, h2, logits, values


def policy_forward(params: PolicyParams, obs: np.ndarray):
    """Action probabilities and value estimate for one obs or a batch."""
    obs = np.asarray(obs, dtype=np.float64)
    single = obs.ndim == 1
    x = obs[None, :] if single else obs
    if x.shape[-1] != params.obs_dim:
        raise ShapeMismatch(f"obs dim {x.shape[-1]} != policy obs_dim {params.obs_dim}")
    _, _, logits, values = _forward_trunk(params, x)
    m = logits.max(axis=1, keepdims=True)
    z = np.exp(logits - m)
    probs = z / z.sum(axis=1, keepdims=True)
    if single:
        return probs[0], float(values[0])
    return probs, values


@dataclass
class EpisodeEnd:
    ret: float
    length: int


@dataclass
class Rollout:
    obs: np.ndarray          # (T, obs_dim)
    actions: np.ndarray      # (T,) int64
    logp: np.ndarray         # (T,)
    values: np.ndarray       # (T,)
    rext: np.ndarray         # (T,)
    rint: np.ndarray         # (T,)
    rint_per_goal: np.ndarray  # (T, m)
    dones: np.ndarray        # (T,) uint8
    bootstrap_value: float
    episodes: list[EpisodeEnd] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.actions)


def collect_rollout(env, goals: Optional[GoalSequence],
                    progress: Optional[GoalProgress],
                    params: PolicyParams, t_roll: int,
                    rng: SplitMix64) -> Rollout:
    """Sample exactly t_roll on-policy steps, resetting between episodes.

    ``env`` is normally a GridEnv (driven by the compiled kernels); any object
    with the same reset/step/encode_obs surface works through a generic path.
    """
    if goals is not None and progress is None:
        raise ValueError("goals given without progress")
    m = len(goals) if goals is not None else 0
    obs_dim = params.obs_dim
    obs = np.zeros((t_roll, obs_dim), dtype=np.float64)
    actions = np.zeros(t_roll, dtype=np.int64)
    logp = np.zeros(t_roll, dtype=np.float64)
    values = np.zeros(t_roll, dtype=np.float64)
    rext = np.zeros(t_roll, dtype=np.float64)
    rint = np.zeros(t_roll, dtype=np.float64)
    rintg = np.zeros((t_roll, m), dtype=np.float64)
    dones = np.zeros(t_roll, dtype=np.uint8)
    episodes: list[EpisodeEnd] = []

    if isinstance(env, GridEnv):
        if env.spec.obs_len != obs_dim:
            raise ShapeMismatch(
                f"env obs len {env.spec.obs_len} != policy obs_dim {obs_dim}")
        if goals is not None:
            gfn, gcolor, grew = goals.to_arrays()
            gachv = progress.achieved
        else:
            gfn, gcolor, grew = empty_goal_arrays()
            gachv = np.zeros(0, dtype=np.uint8)
        ow, oh = env.spec.obs_shape
        t = 0
        ep_start = 0
        while t < t_roll:
            t = K.impl.run_segment(
                env.kind, env.color, env.door, env.astate, rng.state,
                env.spec.max_steps, env.goal_x, env.goal_y, ow, oh,
                params.w1, params.b1, params.w2, params.b2,
                params.wa, params.ba, params.wv, params.bv,
                gfn, gcolor, grew, gachv, env.door_xy,
                obs, actions, logp, values, rext, rint, rintg, dones, t)
            if dones[t - 1]:
                episodes.append(EpisodeEnd(float(rext[ep_start:t].sum()),
                                           env.step_count))
                if progress is not None:
                    progress.end_episode()
                env.reset(env.next_episode_seed())
                ep_start = t
        _, bootstrap = policy_forward(params, env.encode_obs())
    else:
        bootstrap = _generic_rollout(env, goals, progress, params, rng,
                                     obs, actions, logp, values, rext, rint,
                                     rintg, dones, episodes)
    return Rollout(obs, actions, logp, values, rext, rint, rintg, dones,
                   float(bootstrap), episodes)


def _generic_rollout(env, goals, progress, params, rng,
                     obs, actions, logp, values, rext, rint, rintg, dones,
                     episodes) -> float:
    from .goals import goal_step_rewards, total_intrinsic

    t_roll = len(actions)
    ep_ret = 0.0
    for t in range(t_roll):
        o = env.encode_obs()
        probs, v = policy_forward(params, o)
        u = rng.uniform()
        acc = 0.0
        a = len(probs) - 1
        for i, p in enumerate(probs):
            acc += p
            if u < acc:
                a = i
                break
        _, r, done, _ = env.step(a)
        obs[t] = o
        actions[t] = a
        logp[t] = np.log(probs[a])
        values[t] = v
        rext[t] = r
        if goals is not None:
            per_goal = goal_step_rewards(goals, progress, env)
            rintg[t] = per_goal
            rint[t] = total_intrinsic(per_goal)
        dones[t] = 1 if done else 0
        ep_ret += r
        if done:
            episodes.append(EpisodeEnd(ep_ret, env.step_count))
            if progress is not None:
                progress.end_episode()
            env.reset(env.next_episode_seed())
            ep_ret = 0.0
    _, bootstrap = policy_forward(params, env.encode_obs())
    return float(bootstrap)


def compute_gae(rollout: Rollout, gamma: float, lam: float,
                bootstrap_value: Optional[float] = None):
    """Standard GAE recursion over r_t + r'_t with done masking."""
    if bootstrap_value is None:
        bootstrap_value = rollout.bootstrap_value
    rewards = rollout.rext + rollout.rint
    values = rollout.values
    dones = rollout.dones
    T = len(rewards)
    adv = np.zeros(T, dtype=np.float64)
    lastgaelam = 0.0
    for t in range(T - 1, -1, -1):
        nonterminal = 1.0 - float(dones[t])
        next_value = values[t + 1] if t + 1 < T else bootstrap_value
        delta = rewards[t] + gamma * next_value * nonterminal - values[t]
        lastgaelam = delta + gamma * lam * nonterminal * lastgaelam
        adv[t] = lastgaelam
    returns = adv + values
    return adv, returns


def ppo_loss_and_grads(params: PolicyParams, batch: dict, cfg: PpoConfig,
                       anchor: Optional[dict] = None, anchor_lambda: float = 0.0):
    """PPO loss on one minibatch and its analytic gradients.

    batch keys: obs (B,d), actions (B,), logp_old (B,), advantages (B,),
    returns (B,). Advantages are consumed as given (normalize upstream).
    """
    x = batch["obs"]
    act = batch["actions"]
    logp_old = batch["logp_old"]
    adv = batch["advantages"]
    ret = batch["returns"]
    B = len(act)
    eps = cfg.clip_eps
    cv = cfg.value_weight
    ce = cfg.entropy_weight

    h1, h2, logits, v = _forward_trunk(params, x)
    m = logits.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
    logp = logits[np.arange(B), act] - lse
    ratio = np.exp(logp - logp_old)
    s1 = ratio * adv
    s2 = np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv
    pol_loss = -np.minimum(s1, s2).mean()
    v_err = v - ret
    v_loss = np.mean(v_err ** 2)
    log_probs = logits - lse[:, None]
    probs = np.exp(log_probs)
    ent = -(probs * log_probs).sum(axis=1)
    loss = pol_loss + cv * v_loss - ce * ent.mean()

    # Backward pass.
    dlogp = -(adv * ratio * (s1 <= s2)) / B
    g_lg = -dlogp[:, None] * probs
    g_lg[np.arange(B), act] += dlogp
    g_lg += (ce / B) * probs * (log_probs + ent[:, None])
    g_v = (2.0 * cv / B) * v_err
    grads = {
        "wa": h2.T @ g_lg,
        "ba": g_lg.sum(axis=0),
        "wv": (h2.T @ g_v)[:, None],
        "bv": np.array([g_v.sum()]),
    }
    g_h2 = g_lg @ params.wa.T + g_v[:, None] * params.wv[:, 0][None, :]
    g_z2 = g_h2 * (1.0 - h2 ** 2)
    grads["w2"] = h1.T @ g_z2
    grads["b2"] = g_z2.sum(axis=0)
    g_h1 = g_z2 @ params.w2.T
    g_z1 = g_h1 * (1.0 - h1 ** 2)
    grads["w1"] = x.T @ g_z1
    grads["b1"] = g_z1.sum(axis=0)

    if anchor is not None and anchor_lambda > 0.0:
        penalty, a_grads = l2_anchor_grad(params, anchor, anchor_lambda)
        loss = loss + penalty
        for n in grads:
            grads[n] = grads[n] + a_grads[n]

    stats = {
        "loss": float(loss),
        "policy_loss": float(pol_loss),
        "value_loss": float(v_loss),
        "entropy": float(ent.mean()),
        "approx_kl": float(np.mean(logp_old - logp)),
        "clip_frac": float(np.mean(np.abs(ratio - 1.0) > eps)),
    }
    return stats, grads


def _adam_step(params: PolicyParams, grads: dict, lr: float,
               mask: Optional[dict] = None) -> None:
    params.adam_t += 1
    t = params.adam_t
    bc1 = 1.0 - _ADAM_B1 ** t
    bc2 = 1.0 - _ADAM_B2 ** t
    for name, theta in params.tensors():
        g = grads[name]
        if mask is not None:
            g = g * mask[name]
        m = params.adam_m[name]
        v = params.adam_v[name]
        m *= _ADAM_B1
        m += (1.0 - _ADAM_B1) * g
        v *= _ADAM_B2
        v += (1.0 - _ADAM_B2) * g * g
        delta = lr * (m / bc1) / (np.sqrt(v / bc2) + _ADAM_EPS)
        if mask is not None:
            delta = delta * mask[name]
        theta -= delta


def ppo_update(params: PolicyParams, rollouts, cfg: PpoConfig,
               shuffle_rng: np.random.Generator,
               strategy: Optional["StrategyState"] = None):
    """Run epochs x minibatches of clipped PPO over the given rollout(s).

    Mutates params in place and returns (params, mean training stats).
    """
    if isinstance(rollouts, Rollout):
        rollouts = [rollouts]
    advs, rets = [], []
    for r in rollouts:
        a, g = compute_gae(r, cfg.gamma, cfg.lam)
        advs.append(a)
        rets.append(g)
    obs = np.concatenate([r.obs for r in rollouts])
    actions = np.concatenate([r.actions for r in rollouts])
    logp_old = np.concatenate([r.logp for r in rollouts])
    adv = np.concatenate(advs)
    ret = np.concatenate(rets)
    adv = (adv - adv.mean()) / max(float(adv.std()), 1e-8)

    mask = strategy.trainable_mask(params) if strategy is not None else None
    anchor = anchor_lambda = None
    if strategy is not None and strategy.kind == "ft_l2" and strategy.anchor is not None:
        anchor, anchor_lambda = strategy.anchor, strategy.anchor_lambda

    n = len(actions)
    agg: dict[str, float] = {}
    count = 0
    for _ in range(cfg.epochs):
        perm = shuffle_rng.permutation(n)
        for start in range(0, n, cfg.minibatch):
            idx = perm[start:start + cfg.minibatch]
            batch = {
                "obs": obs[idx],
                "actions": actions[idx],
                "logp_old": logp_old[idx],
                "advantages": adv[idx],
                "returns": ret[idx],
            }
            stats, grads = ppo_loss_and_grads(
                params, batch, cfg,
                anchor=anchor, anchor_lambda=anchor_lambda or 0.0)
            if not np.isfinite(stats["loss"]):
                raise NonFiniteLoss(f"update diverged: {stats}")
            _adam_step(params, grads, cfg.lr, mask)
            for k, val in stats.items():
                agg[k] = agg.get(k, 0.0) + val
            count += 1
    return params, {k: val / count for k, val in agg.items()}


def l2_anchor_grad(params: PolicyParams, anchor: dict, lambda_reg: float):
    """Quadratic pull toward anchor weights: penalty and its gradient."""
    penalty = 0.0
    grads = {}
    for name, theta in params.tensors():
        a = anchor[name]
        if a.shape != theta.shape:
            raise ShapeMismatch(f"anchor shape mismatch on {name}")
        diff = theta - a
        penalty += 0.5 * lambda_reg * float(np.sum(diff * diff))
        grads[name] = lambda_reg * diff
    return penalty, grads


def packnet_prune(params: PolicyParams, existing_masks: list[dict],
                  keep_fraction: float) -> dict:
    """Claim the top keep_fraction of still-free weights (per tensor) by
    absolute magnitude; ties go to the lower flat index."""
    if not 0.0 < keep_fraction < 1.0:
        raise ValueError("keep_fraction must be in (0, 1)")
    new_mask = {}
    total_free = 0
    for name, theta in params.tensors():
        flat = theta.ravel()
        claimed = np.zeros(flat.size, dtype=bool)
        for mask in existing_masks:
            claimed |= mask[name].ravel().astype(bool)
        free_idx = np.flatnonzero(~claimed)
        total_free += free_idx.size
        chosen = np.zeros(flat.size, dtype=np.uint8)
        if free_idx.size:
            k = max(1, int(np.floor(keep_fraction * free_idx.size)))
            order = np.lexsort((free_idx, -np.abs(flat[free_idx])))
            chosen[free_idx[order[:k]]] = 1
        new_mask[name] = chosen.reshape(theta.shape)
    if total_free == 0:
        raise NoFreeCapacity("all weights already claimed by earlier masks")
    return new_mask


@dataclass
class StrategyState:
    """Task-boundary behavior for one run."""

    kind: str  # sg | ft | ft_l2 | packnet | hicore
    fine_tune: bool = False          # hicore variant that warm-starts the policy
    anchor: Optional[dict] = None
    anchor_lambda: float = 0.01
    masks: list = field(default_factory=list)
    pending_mask: Optional[dict] = None
    total_tasks: int = 1
    hidden: tuple[int, int] = (64, 64)

    def carries_params(self) -> bool:
        return self.kind in ("ft", "ft_l2", "packnet") or (
            self.kind == "hicore" and self.fine_tune)

    def trainable_mask(self, params: PolicyParams) -> Optional[dict]:
        if self.kind != "packnet":
            return None
        if self.pending_mask is not None:
            return {n: self.pending_mask[n].astype(np.float64) for n, _ in params.tensors()}
        if not self.masks:
            return None
        out = {}
        for name, theta in params.tensors():
            claimed = np.zeros(theta.shape, dtype=bool)
            for mask in self.masks:
                claimed |= mask[name].astype(bool)
            out[name] = (~claimed).astype(np.float64)
        return out


def task_boundary(strategy: StrategyState, params: Optional[PolicyParams],
                  task_index: int, obs_dim: int, act_dim: int,
                  seed: int) -> PolicyParams:
    """Produce the parameters that start task ``task_index``."""
    fresh_seed = derive_seed(seed, "policy", task_index)
    if params is None:
        return init_policy(obs_dim, act_dim, fresh_seed, strategy.hidden)
    if not strategy.carries_params():
        return init_policy(obs_dim, act_dim, fresh_seed, strategy.hidden)
    if params.obs_dim != obs_dim:
        raise ShapeMismatch(
            f"task {task_index}: cannot carry policy across observation sizes "
            f"({params.obs_dim} -> {obs_dim})")
    if strategy.kind == "ft_l2":
        strategy.anchor = {n: t.copy() for n, t in params.tensors()}
    if strategy.kind == "packnet" and strategy.pending_mask is not None:
        strategy.masks.append(strategy.pending_mask)
        strategy.pending_mask = None
    return params


# -- parameter snapshots ------------------------------------------------------

def serialize_params(params: PolicyParams) -> dict:
    """Manifest plus little-endian float32 blobs, base64-encoded."""
    return {
        "obs_dim": params.obs_dim,
        "act_dim": params.act_dim,
        "hidden": list(params.hidden),
        "tensors": {
            name: {
                "shape": list(t.shape),
                "data": base64.b64encode(
                    t.astype("<f4").tobytes()).decode("ascii"),
            }
            for name, t in params.tensors()
        },
    }


def deserialize_params(blob: dict) -> PolicyParams:
    tensors = {}
    for name, entry in blob["tensors"].items():
        raw = base64.b64decode(entry["data"])
        arr = np.frombuffer(raw, dtype="<f4").astype(np.float64)
        tensors[name] = arr.reshape(entry["shape"])
    return PolicyParams(blob["obs_dim"], blob["act_dim"],
                        tuple(blob["hidden"]), tensors)
