import numpy as np
import pytest

from hicore.errors import NoFreeCapacity, NonFiniteLoss, ShapeMismatch
from hicore.goals import Goal, GoalProgress, GoalSequence, VerifierCall
from hicore.gridworld import Action, Color, TaskSpec, make_task
from hicore.learner import (
    EpisodeEnd,
    PolicyParams,
    PpoConfig,
    Rollout,
    StrategyState,
    collect_rollout,
    compute_gae,
    deserialize_params,
    init_policy,
    l2_anchor_grad,
    packnet_prune,
    policy_forward,
    ppo_loss_and_grads,
    ppo_update,
    serialize_params,
    task_boundary,
)
from hicore.rng import SplitMix64

from helpers import forward_only_params

TASK1 = TaskSpec("t1", 8, 8, 1, (Color.YELLOW,), 640)


def make_rollout(rewards, values, dones, rint=None):
    T = len(rewards)
    return Rollout(
        obs=np.zeros((T, 4)),
        actions=np.zeros(T, dtype=np.int64),
        logp=np.full(T, -1.0),
        values=np.array(values, dtype=float),
        rext=np.array(rewards, dtype=float),
        rint=np.array(rint if rint is not None else np.zeros(T), dtype=float),
        rint_per_goal=np.zeros((T, 0)),
        dones=np.array(dones, dtype=np.uint8),
        bootstrap_value=0.0,
    )


# -- init_policy ---------------------------------------------------------------

def test_init_deterministic_per_seed():
    a = init_policy(10, 6, seed=3)
    b = init_policy(10, 6, seed=3)
    for (_, ta), (_, tb) in zip(a.tensors(), b.tensors()):
        assert np.array_equal(ta, tb)


def test_init_seeds_differ():
    a = init_policy(10, 6, seed=3)
    b = init_policy(10, 6, seed=4)
    assert any(not np.array_equal(ta, tb)
               for (_, ta), (_, tb) in zip(a.tensors(), b.tensors()))


def test_init_shapes():
    p = init_policy(198, 6, seed=0)
    assert p.wa.shape == (64, 6)
    assert p.w1.shape == (198, 64)
    probs, value = policy_forward(p, np.zeros(198))
    assert probs.shape == (6,)


def test_init_rejects_bad_dims():
    with pytest.raises(ValueError):
        init_policy(0, 6, seed=0)


# -- policy_forward -------------------------------------------------------------

def test_zero_weights_uniform_probs():
    p = init_policy(5, 6, seed=0)
    for _, t in p.tensors():
        t[:] = 0.0
    probs, value = policy_forward(p, np.ones(5))
    assert np.allclose(probs, 1.0 / 6.0)
    assert value == 0.0


def test_probs_sum_to_one():
    p = init_policy(12, 4, seed=1)
    rng = np.random.default_rng(0)
    for _ in range(20):
        probs, _ = policy_forward(p, rng.normal(size=12))
        assert abs(probs.sum() - 1.0) < 1e-9


def test_value_head_matches_hand_forward_two_unit_net():
    p = init_policy(2, 2, seed=5, hidden=(2, 2))
    obs = np.array([0.3, -0.7])
    h1 = np.tanh(obs @ p.w1 + p.b1)
    h2 = np.tanh(h1 @ p.w2 + p.b2)
    want = float(h2 @ p.wv[:, 0] + p.bv[0])
    _, got = policy_forward(p, obs)
    assert got == pytest.approx(want, abs=1e-12)


def test_forward_shape_mismatch():
    p = init_policy(5, 3, seed=0)
    with pytest.raises(ShapeMismatch):
        policy_forward(p, np.zeros(7))


# -- compute_gae -------------------------------------------------------------------

def hand_gae(rewards, values, dones, gamma, lam, bootstrap):
    # independent forward-sum construction of GAE
    T = len(rewards)
    deltas = []
    for t in range(T):
        nxt = 0.0 if dones[t] else (values[t + 1] if t + 1 < T else bootstrap)
        deltas.append(rewards[t] + gamma * nxt - values[t])
    adv = []
    for t in range(T):
        acc = 0.0
        w = 1.0
        for k in range(t, T):
            acc += w * deltas[k]
            if dones[k]:
                break
            w *= gamma * lam
        adv.append(acc)
    return np.array(adv)


def test_gae_simple_terminal_episode():
    ro = make_rollout([1, 1, 1], [0, 0, 0], [0, 0, 1])
    adv, ret = compute_gae(ro, gamma=1.0, lam=1.0)
    assert np.allclose(adv, [3, 2, 1], atol=1e-9)
    assert np.allclose(ret, adv)


def test_gae_gamma_zero_degenerate():
    ro = make_rollout([0.5, 0.2, 0.9], [0.1, 0.4, 0.3], [0, 0, 0])
    adv, _ = compute_gae(ro, gamma=0.0, lam=0.9)
    assert np.allclose(adv, [0.4, -0.2, 0.6], atol=1e-12)


def test_gae_all_zero():
    ro = make_rollout([0, 0, 0], [0, 0, 0], [0, 0, 0])
    adv, ret = compute_gae(ro, 0.99, 0.95)
    assert not adv.any() and not ret.any()


def test_gae_matches_forward_sum_oracle():
    rng = np.random.default_rng(7)
    for _ in range(10):
        T = 12
        rewards = rng.normal(size=T)
        values = rng.normal(size=T)
        dones = (rng.random(T) < 0.2).astype(np.uint8)
        bootstrap = float(rng.normal())
        ro = make_rollout(rewards, values, dones)
        ro.bootstrap_value = bootstrap
        adv, ret = compute_gae(ro, 0.99, 0.95)
        want = hand_gae(rewards, values, dones, 0.99, 0.95, bootstrap)
        assert np.allclose(adv, want, atol=1e-9)
        assert np.allclose(ret, want + values, atol=1e-9)


def test_gae_uses_intrinsic_plus_extrinsic():
    ro = make_rollout([1.0, 0.0], [0.0, 0.0], [0, 1], rint=[0.25, 0.5])
    adv, _ = compute_gae(ro, gamma=0.0, lam=1.0)
    assert np.allclose(adv, [1.25, 0.5])


# -- collect_rollout ------------------------------------------------------------------

def test_rollout_lengths_and_logp():
    env = make_task(TASK1, seed=0)
    params = init_policy(TASK1.obs_len, 6, seed=0)
    ro = collect_rollout(env, None, None, params, 128, SplitMix64(1))
    assert len(ro) == 128
    for arr in (ro.obs, ro.actions, ro.logp, ro.values, ro.rext, ro.rint,
                ro.dones):
        assert len(arr) == 128
    assert (ro.logp <= 0).all() and np.isfinite(ro.logp).all()


def test_rollout_forward_stub_matches_hand_simulation():
    # agent in an open corridor: forward until the border wall blocks it
    env = make_task(TASK1, seed=0)
    params = forward_only_params(TASK1.obs_len)
    seq = GoalSequence((Goal("g", VerifierCall("at_goal"), 0.4),))
    progress = GoalProgress(seq)
    ro = collect_rollout(env, seq, progress, params, 10, SplitMix64(2))
    assert (ro.actions == int(Action.FORWARD)).all()
    # hand simulation of the same 10 steps
    env2 = make_task(TASK1, seed=0)
    want_rext, want_rint = [], []
    for _ in range(10):
        if env2.done:
            env2.reset(env2.next_episode_seed())
        _, r, d, _ = env2.step(Action.FORWARD)
        want_rext.append(r)
        at_goal = env2.agent_pos == (env2.goal_x, env2.goal_y)
        want_rint.append(0.4 if at_goal and 0.4 not in want_rint else 0.0)
    assert np.allclose(ro.rext, want_rext)
    assert np.allclose(ro.rint, want_rint)


def test_rollout_without_goals_zero_intrinsic():
    env = make_task(TASK1, seed=3)
    params = init_policy(TASK1.obs_len, 6, seed=0)
    ro = collect_rollout(env, None, None, params, 700, SplitMix64(3))
    assert not ro.rint.any()
    assert ro.rint_per_goal.shape == (700, 0)


def test_rollout_episode_accounting():
    env = make_task(TASK1, seed=3)
    params = init_policy(TASK1.obs_len, 6, seed=0)
    ro = collect_rollout(env, None, None, params, 1500, SplitMix64(4))
    # 640-step cap means at least two episodes completed in 1500 steps
    assert len(ro.episodes) >= 2
    assert int(ro.dones.sum()) == len(ro.episodes)
    for ep in ro.episodes:
        assert ep.length <= TASK1.max_steps


def test_rollout_shape_mismatch():
    env = make_task(TASK1, seed=0)
    params = init_policy(10, 6, seed=0)
    with pytest.raises(ShapeMismatch):
        collect_rollout(env, None, None, params, 16, SplitMix64(0))


# -- ppo_update -----------------------------------------------------------------------

def _random_batchlike_rollout(params, T=96, seed=0):
    env = make_task(TASK1, seed=seed)
    return collect_rollout(env, None, None, params, T, SplitMix64(seed))


def test_lr_zero_keeps_params_bit_exact():
    params = init_policy(TASK1.obs_len, 6, seed=1)
    before = {n: t.copy() for n, t in params.tensors()}
    ro = _random_batchlike_rollout(params)
    cfg = PpoConfig(lr=0.0, minibatch=32)
    ppo_update(params, ro, cfg, np.random.default_rng(0))
    for n, t in params.tensors():
        assert np.array_equal(t, before[n])


def test_ratio_identity_on_first_minibatch():
    params = init_policy(TASK1.obs_len, 6, seed=1)
    ro = _random_batchlike_rollout(params)
    adv, ret = compute_gae(ro, 0.99, 0.95)
    batch = {
        "obs": ro.obs, "actions": ro.actions, "logp_old": ro.logp,
        "advantages": adv, "returns": ret,
    }
    stats, _ = ppo_loss_and_grads(params, batch, PpoConfig())
    assert stats["clip_frac"] == 0.0
    assert abs(stats["approx_kl"]) < 1e-9


def test_gradient_matches_finite_differences_tiny_net():
    rng = np.random.default_rng(42)
    params = init_policy(4, 3, seed=1, hidden=(8, 8))
    B = 8
    batch = {
        "obs": rng.normal(size=(B, 4)),
        "actions": rng.integers(0, 3, size=B),
        "logp_old": -np.abs(rng.normal(size=B)) - 0.3,
        "advantages": rng.normal(size=B),
        "returns": rng.normal(size=B),
    }
    cfg = PpoConfig()
    _, grads = ppo_loss_and_grads(params, batch, cfg)
    h = 1e-5
    worst = 0.0
    for name, theta in params.tensors():
        it = np.nditer(theta, flags=["multi_index"])
        for _ in it:
            ix = it.multi_index
            old = theta[ix]
            theta[ix] = old + h
            lp, _ = ppo_loss_and_grads(params, batch, cfg)
            theta[ix] = old - h
            lm, _ = ppo_loss_and_grads(params, batch, cfg)
            theta[ix] = old
            fd = (lp["loss"] - lm["loss"]) / (2 * h)
            g = grads[name][ix]
            rel = abs(g - fd) / max(abs(g), abs(fd), 1e-6)
            worst = max(worst, rel)
    assert worst < 1e-4


def test_nonfinite_loss_raises():
    params = init_policy(TASK1.obs_len, 6, seed=1)
    ro = _random_batchlike_rollout(params)
    ro.values[:] = np.inf
    with pytest.raises(NonFiniteLoss):
        ppo_update(params, ro, PpoConfig(minibatch=32),
                   np.random.default_rng(0))


def test_update_deterministic():
    outs = []
    for _ in range(2):
        params = init_policy(TASK1.obs_len, 6, seed=1)
        ro = _random_batchlike_rollout(params, seed=5)
        ppo_update(params, ro, PpoConfig(minibatch=32),
                   np.random.default_rng(7))
        outs.append({n: t.copy() for n, t in params.tensors()})
    for n in outs[0]:
        assert np.array_equal(outs[0][n], outs[1][n])


# -- l2 anchor ---------------------------------------------------------------------

def test_l2_anchor_zero_at_anchor():
    params = init_policy(6, 3, seed=2, hidden=(4, 4))
    anchor = {n: t.copy() for n, t in params.tensors()}
    penalty, grads = l2_anchor_grad(params, anchor, 2.0)
    assert penalty == 0.0
    assert all(not g.any() for g in grads.values())


def test_l2_anchor_gradient_is_scaled_difference():
    params = init_policy(6, 3, seed=2, hidden=(4, 4))
    anchor = {n: t.copy() for n, t in params.tensors()}
    params.w1 += 0.25
    penalty, grads = l2_anchor_grad(params, anchor, 2.0)
    assert np.allclose(grads["w1"], 2.0 * (params.w1 - anchor["w1"]))
    assert penalty == pytest.approx(
        0.5 * 2.0 * float(np.sum((params.w1 - anchor["w1"]) ** 2)))


def test_l2_anchor_matches_finite_differences():
    params = init_policy(3, 2, seed=3, hidden=(3, 3))
    rng = np.random.default_rng(1)
    anchor = {n: t + rng.normal(size=t.shape) * 0.1
              for n, t in params.tensors()}
    lam = 0.7
    _, grads = l2_anchor_grad(params, anchor, lam)
    h = 1e-6
    for name, theta in params.tensors():
        it = np.nditer(theta, flags=["multi_index"])
        for _ in it:
            ix = it.multi_index
            old = theta[ix]
            theta[ix] = old + h
            pp, _ = l2_anchor_grad(params, anchor, lam)
            theta[ix] = old - h
            pm, _ = l2_anchor_grad(params, anchor, lam)
            theta[ix] = old
            fd = (pp - pm) / (2 * h)
            assert abs(grads[name][ix] - fd) <= 1e-8 * max(1.0, abs(fd))


def test_l2_anchor_shape_mismatch():
    params = init_policy(6, 3, seed=2, hidden=(4, 4))
    anchor = {n: np.zeros((2, 2)) for n, _ in params.tensors()}
    with pytest.raises(ShapeMismatch):
        l2_anchor_grad(params, anchor, 1.0)


# -- packnet ----------------------------------------------------------------------

def test_prune_keeps_top_magnitudes():
    params = init_policy(2, 2, seed=0, hidden=(2, 2))
    params.w1[:] = np.array([[0.1, -0.9], [0.5, -0.2]])
    mask = packnet_prune(params, [], keep_fraction=0.5)
    assert mask["w1"].tolist() == [[0, 1], [1, 0]]


def test_prune_masks_disjoint_across_tasks():
    params = init_policy(6, 3, seed=4)
    m1 = packnet_prune(params, [], 0.25)
    m2 = packnet_prune(params, [m1], 0.25)
    for n in m1:
        assert not (m1[n].astype(bool) & m2[n].astype(bool)).any()


def test_prune_tie_break_lower_flat_index():
    params = init_policy(2, 2, seed=0, hidden=(2, 2))
    params.w1[:] = np.array([[0.5, 0.5], [0.5, 0.5]])
    mask = packnet_prune(params, [], keep_fraction=0.5)
    assert mask["w1"].ravel().tolist() == [1, 1, 0, 0]


def test_prune_no_free_capacity():
    params = init_policy(2, 2, seed=0, hidden=(2, 2))
    full = {n: np.ones_like(t, dtype=np.uint8) for n, t in params.tensors()}
    with pytest.raises(NoFreeCapacity):
        packnet_prune(params, [full], 0.5)


def test_frozen_weights_unchanged_by_later_training():
    params = init_policy(TASK1.obs_len, 6, seed=1)
    strategy = StrategyState(kind="packnet", total_tasks=2)
    strategy.pending_mask = packnet_prune(params, [], 0.5)
    params = task_boundary(strategy, params, 1, TASK1.obs_len, 6, seed=1)
    frozen = {n: t[strategy.masks[0][n].astype(bool)].copy()
              for n, t in params.tensors()}
    ro = _random_batchlike_rollout(params, T=256, seed=9)
    ppo_update(params, ro, PpoConfig(minibatch=64),
               np.random.default_rng(0), strategy)
    for n, t in params.tensors():
        assert np.array_equal(t[strategy.masks[0][n].astype(bool)], frozen[n])


# -- task_boundary -------------------------------------------------------------------

def test_boundary_fresh_policy_for_default_method():
    strategy = StrategyState(kind="hicore")
    p0 = task_boundary(strategy, None, 0, 100, 6, seed=1)
    p1 = task_boundary(strategy, p0, 1, 100, 6, seed=1)
    assert any(not np.array_equal(t0, t1) for (_, t0), (_, t1)
               in zip(p0.tensors(), p1.tensors()))


def test_boundary_ft_carries_params_bit_exact():
    strategy = StrategyState(kind="ft")
    p0 = task_boundary(strategy, None, 0, 100, 6, seed=1)
    snapshot = {n: t.copy() for n, t in p0.tensors()}
    p1 = task_boundary(strategy, p0, 1, 100, 6, seed=1)
    assert p1 is p0
    for n, t in p1.tensors():
        assert np.array_equal(t, snapshot[n])


def test_boundary_ft_l2_sets_anchor():
    strategy = StrategyState(kind="ft_l2")
    p0 = task_boundary(strategy, None, 0, 100, 6, seed=1)
    task_boundary(strategy, p0, 1, 100, 6, seed=1)
    assert strategy.anchor is not None
    for n, t in p0.tensors():
        assert np.array_equal(strategy.anchor[n], t)


def test_boundary_ft_across_obs_dims_raises():
    strategy = StrategyState(kind="ft")
    p0 = task_boundary(strategy, None, 0, 198, 6, seed=1)
    with pytest.raises(ShapeMismatch) as err:
        task_boundary(strategy, p0, 1, 774, 6, seed=1)
    assert "1" in str(err.value)


def test_boundary_hicore_fine_tune_carries():
    strategy = StrategyState(kind="hicore", fine_tune=True)
    p0 = task_boundary(strategy, None, 0, 100, 6, seed=1)
    assert task_boundary(strategy, p0, 1, 100, 6, seed=1) is p0


# -- serialization ---------------------------------------------------------------------

def test_serialize_round_trip_blob_stable():
    params = init_policy(9, 4, seed=6, hidden=(8, 8))
    blob = serialize_params(params)
    back = deserialize_params(blob)
    assert serialize_params(back) == blob
    assert back.obs_dim == 9 and back.act_dim == 4


def test_serialized_tensors_are_float32_le():
    import base64

    params = init_policy(3, 2, seed=0, hidden=(2, 2))
    blob = serialize_params(params)
    raw = base64.b64decode(blob["tensors"]["w1"]["data"])
    arr = np.frombuffer(raw, dtype="<f4").reshape(3, 2)
    assert np.allclose(arr, params.w1.astype(np.float32))
