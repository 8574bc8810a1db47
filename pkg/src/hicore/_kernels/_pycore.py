"""Pure-Python/numpy kernel backend.

Reference implementation of the hot-path semantics: environment transition,
observation encoding, policy forward pass and the fused rollout/episode
drivers. The compiled backend in ``_core.pyx`` mirrors these functions
one-for-one; tests assert the two agree.
"""
from __future__ import annotations

import numpy as np

BACKEND = "python"

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15

# Cell kinds / door states (must stay in sync with gridworld enums).
_EMPTY, _WALL, _DOOR, _KEY, _GOAL = 0, 1, 2, 3, 4
_OPEN, _CLOSED, _LOCKED = 0, 1, 2
_AX, _AY, _AHEAD, _ACK, _ACC, _ASTEP, _ADONE = range(7)
_HEAD_VEC = ((0, -1), (1, 0), (0, 1), (-1, 0))


def _rng_next(state: np.ndarray) -> int:
    s = (int(state[0]) + _GAMMA) & _MASK
    state[0] = s
    z = ((s ^ (s >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def _rng_uniform(state: np.ndarray) -> float:
    return (_rng_next(state) >> 11) * (2.0 ** -53)


def env_step(kind, color, door, astate, max_steps, goal_x, goal_y, action):
    """Advance one MiniGrid-style transition; returns (reward, done)."""
    h, w = kind.shape
    hd = int(astate[_AHEAD])
    astate[_ASTEP] += 1
    reward = 0.0
    done = False
    if action == 0:
        astate[_AHEAD] = (hd + 3) % 4
    elif action == 1:
        astate[_AHEAD] = (hd + 1) % 4
    else:
        dx, dy = _HEAD_VEC[hd]
        fx = int(astate[_AX]) + dx
        fy = int(astate[_AY]) + dy
        inside = 0 <= fx < w and 0 <= fy < h
        if action == 2 and inside:
            k = kind[fy, fx]
            if k == _EMPTY or k == _GOAL or (k == _DOOR and door[fy, fx] == _OPEN):
                astate[_AX] = fx
                astate[_AY] = fy
                if k == _GOAL:
                    reward = 1.0 - 0.9 * (int(astate[_ASTEP]) / max_steps)
                    done = True
        elif action == 3 and inside:
            if kind[fy, fx] == _KEY and astate[_ACK] < 0:
                astate[_ACK] = _KEY
                astate[_ACC] = color[fy, fx]
                kind[fy, fx] = _EMPTY
                color[fy, fx] = 0
        elif action == 4 and inside:
            if kind[fy, fx] == _EMPTY and astate[_ACK] >= 0:
                kind[fy, fx] = astate[_ACK]
                color[fy, fx] = astate[_ACC]
                astate[_ACK] = -1
                astate[_ACC] = 0
        elif action == 5 and inside:
            if kind[fy, fx] == _DOOR:
                ds = door[fy, fx]
                if ds == _LOCKED:
                    if astate[_ACK] == _KEY and astate[_ACC] == color[fy, fx]:
                        door[fy, fx] = _OPEN
                elif ds == _CLOSED:
                    door[fy, fx] = _OPEN
                else:
                    door[fy, fx] = _CLOSED
    if not done and astate[_ASTEP] >= max_steps:
        done = True
    astate[_ADONE] = 1 if done else 0
    return reward, done


def encode_obs(kind, color, door, astate, obs_w, obs_h, out):
    """Write the flat observation into ``out`` (length obs_w*obs_h*3 + 6)."""
    h, w = kind.shape
    out[:] = 0.0
    grid = out[: obs_w * obs_h * 3].reshape(obs_h, obs_w, 3)
    grid[:h, :w, 0] = kind / 5.0
    grid[:h, :w, 1] = color / 5.0
    grid[:h, :w, 2] = door / 2.0
    grid[int(astate[_AY]), int(astate[_AX]), 0] = 1.0
    base = obs_w * obs_h * 3
    out[base + int(astate[_AHEAD])] = 1.0
    if astate[_ACK] >= 0:
        out[base + 4] = int(astate[_ACK]) / 5.0
        out[base + 5] = int(astate[_ACC]) / 5.0


def policy_forward(obs, w1, b1, w2, b2, wa, ba, wv, bv, probs_out):
    """Two tanh layers, softmax actor head, scalar critic head."""
    h1 = np.tanh(obs @ w1 + b1)
    h2 = np.tanh(h1 @ w2 + b2)
    logits = h2 @ wa + ba
    m = logits.max()
    z = np.exp(logits - m)
    s = z.sum()
    probs_out[:] = z / s
    value = float(h2 @ wv[:, 0] + bv[0])
    return value, float(m + np.log(s))


def _sample(probs, u):
    acc = 0.0
    for a in range(len(probs)):
        acc += probs[a]
        if u < acc:
            return a
    return len(probs) - 1


def _goal_rewards(kind, door, astate, goal_x, goal_y, door_xy,
                  gfn, gcolor, grew, gachv, rintg_row):
    total = 0.0
    for l in range(len(gfn)):
        r = 0.0
        if not gachv[l]:
            fn = gfn[l]
            if fn == 0:
                ok = astate[_ACK] == _KEY and astate[_ACC] == gcolor[l]
            elif fn == 1:
                dx, dy = door_xy[gcolor[l]]
                ok = dx >= 0 and door[dy, dx] == _OPEN and kind[dy, dx] == _DOOR
            else:
                ok = astate[_AX] == goal_x and astate[_AY] == goal_y
            if ok:
                gachv[l] = 1
                r = grew[l]
        rintg_row[l] = r
        total += r
    return total


def run_segment(kind, color, door, astate, act_rng, max_steps, goal_x, goal_y,
                obs_w, obs_h, w1, b1, w2, b2, wa, ba, wv, bv,
                gfn, gcolor, grew, gachv, door_xy,
                obs_out, act_out, logp_out, val_out,
                rext_out, rint_out, rintg_out, done_out, t0):
    """Roll the policy forward from step t0, stopping after a done step or
    when the output buffers are full. Returns the next free index."""
    T = act_out.shape[0]
    probs = np.empty(wa.shape[1], dtype=np.float64)
    t = t0
    while t < T:
        row = obs_out[t]
        encode_obs(kind, color, door, astate, obs_w, obs_h, row)
        value, lse = policy_forward(row, w1, b1, w2, b2, wa, ba, wv, bv, probs)
        a = _sample(probs, _rng_uniform(act_rng))
        reward, done = env_step(kind, color, door, astate,
                                max_steps, goal_x, goal_y, a)
        act_out[t] = a
        logp_out[t] = np.log(probs[a])
        val_out[t] = value
        rext_out[t] = reward
        rint_out[t] = _goal_rewards(kind, door, astate, goal_x, goal_y, door_xy,
                                    gfn, gcolor, grew, gachv, rintg_out[t])
        done_out[t] = 1 if done else 0
        t += 1
        if done:
            break
    return t


def run_episode(kind, color, door, astate, act_rng, max_steps,
                goal_x, goal_y, obs_w, obs_h,
                w1, b1, w2, b2, wa, ba, wv, bv):
    """Play one full episode by sampling the policy; returns (return, steps)."""
    obs = np.zeros(obs_w * obs_h * 3 + 6, dtype=np.float64)
    probs = np.empty(wa.shape[1], dtype=np.float64)
    total = 0.0
    steps = 0
    while True:
        encode_obs(kind, color, door, astate, obs_w, obs_h, obs)
        policy_forward(obs, w1, b1, w2, b2, wa, ba, wv, bv, probs)
        a = _sample(probs, _rng_uniform(act_rng))
        reward, done = env_step(kind, color, door, astate,
                                max_steps, goal_x, goal_y, a)
        total += reward
        steps += 1
        if done:
            return total, steps
