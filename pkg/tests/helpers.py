"""Shared test utilities: a staged breadth-first solver used as the
reachability oracle, and small builders."""
from __future__ import annotations

import copy
from collections import deque

import numpy as np

from hicore.gridworld import (
    Action,
    Color,
    DoorState,
    GridEnv,
    HEAD_VEC,
    Kind,
)


def _traversable(env: GridEnv, x: int, y: int) -> bool:
    k = env.kind[y, x]
    if k == Kind.EMPTY or k == Kind.GOAL:
        return True
    return k == Kind.DOOR and env.door[y, x] == DoorState.OPEN


def _bfs(env: GridEnv, accept) -> list[int] | None:
    """BFS over (x, y, heading) with turn/turn/forward; returns the action
    list reaching the first accepted state, or None."""
    h, w = env.kind.shape
    start = (*env.agent_pos, int(env.heading))
    if accept(*start):
        return []
    seen = {start}
    parent: dict = {}
    queue = deque([start])
    while queue:
        x, y, hd = queue.popleft()
        moves = [
            (Action.TURN_LEFT, (x, y, (hd + 3) % 4)),
            (Action.TURN_RIGHT, (x, y, (hd + 1) % 4)),
        ]
        dx, dy = HEAD_VEC[hd]
        fx, fy = x + dx, y + dy
        if 0 <= fx < w and 0 <= fy < h and _traversable(env, fx, fy):
            moves.append((Action.FORWARD, (fx, fy, hd)))
        for action, nxt in moves:
            if nxt in seen:
                continue
            seen.add(nxt)
            parent[nxt] = ((x, y, hd), action)
            if accept(*nxt):
                actions = []
                cur = nxt
                while cur != start:
                    cur, a = parent[cur]
                    actions.append(a)
                return actions[::-1]
            queue.append(nxt)
    return None


def _facing(tx: int, ty: int):
    def accept(x, y, hd):
        dx, dy = HEAD_VEC[hd]
        return (x + dx, y + dy) == (tx, ty)
    return accept


def _component(env: GridEnv, sx: int, sy: int,
               all_doors_passable: bool = False) -> set[tuple[int, int]]:
    seen = {(sx, sy)}
    queue = deque([(sx, sy)])
    h, w = env.kind.shape
    while queue:
        x, y = queue.popleft()
        for dx, dy in HEAD_VEC:
            nx, ny = x + dx, y + dy
            if (nx, ny) in seen or not (0 <= nx < w and 0 <= ny < h):
                continue
            ok = _traversable(env, nx, ny) or (
                all_doors_passable and env.kind[ny, nx] == Kind.DOOR)
            if ok:
                seen.add((nx, ny))
                queue.append((nx, ny))
    return seen


def _find(env: GridEnv, kind: Kind, color: Color | None = None):
    h, w = env.kind.shape
    for y in range(h):
        for x in range(w):
            if env.kind[y, x] == kind and (
                    color is None or env.color[y, x] == color):
                return x, y
    return None


def _run(env: GridEnv, actions: list[int], trace: list[int]) -> None:
    for a in actions:
        env.step(a)
        trace.append(int(a))


def _adjacent_or_in(pos, comp) -> bool:
    tx, ty = pos
    return (tx, ty) in comp or any(
        (tx + dx, ty + dy) in comp for dx, dy in HEAD_VEC)


def _drop_somewhere(env: GridEnv, trace: list[int], next_key,
                    later: list[tuple[int, int]]) -> bool:
    """Walk to some cell and drop the carried key on an empty neighbor,
    verifying staged reachability afterwards: the next key through doors
    already open, everything later through doors still to be opened."""
    h, w = env.kind.shape
    goal = (env.goal_x, env.goal_y)
    for sy in range(1, h - 1):
        for sx in range(1, w - 1):
            if (sx, sy) == goal or not _traversable(env, sx, sy):
                continue
            for hd in range(4):
                dx, dy = HEAD_VEC[hd]
                fx, fy = sx + dx, sy + dy
                if not (0 <= fx < w and 0 <= fy < h):
                    continue
                if env.kind[fy, fx] != Kind.EMPTY:
                    continue
                path = _bfs(env, lambda x, y, head, s=(sx, sy, hd):
                            (x, y, head) == s)
                if path is None:
                    continue
                if goal in _cells_on(env, path):
                    continue
                probe = copy.deepcopy(env)
                for a in path:
                    probe.step(a)
                probe.step(Action.DROP)
                real = _component(probe, *probe.agent_pos)
                opt = _component(probe, *probe.agent_pos,
                                 all_doors_passable=True)
                ok = (next_key is None or _adjacent_or_in(next_key, real)) \
                    and all(_adjacent_or_in(t, opt) for t in later)
                if ok:
                    _run(env, path, trace)
                    env.step(Action.DROP)
                    trace.append(int(Action.DROP))
                    return True
    return False


def _cells_on(env: GridEnv, path: list[int]) -> set[tuple[int, int]]:
    """Cells visited while executing turn/forward actions from the current state."""
    x, y = env.agent_pos
    hd = int(env.heading)
    cells = {(x, y)}
    for a in path:
        if a == Action.TURN_LEFT:
            hd = (hd + 3) % 4
        elif a == Action.TURN_RIGHT:
            hd = (hd + 1) % 4
        elif a == Action.FORWARD:
            dx, dy = HEAD_VEC[hd]
            x, y = x + dx, y + dy
            cells.add((x, y))
    return cells


def solve_env(env: GridEnv) -> list[int] | None:
    """Construct an action sequence that solves the episode: per door, fetch
    its key, open it, drop the key safely; finally walk onto the goal.
    Operates on a deep copy; returns None when any stage fails."""
    sim = copy.deepcopy(env)
    trace: list[int] = []
    colors = sim.spec.door_colors
    for j, c in enumerate(colors):
        key_pos = _find(sim, Kind.KEY, c)
        if key_pos is None:
            return None
        path = _bfs(sim, _facing(*key_pos))
        if path is None:
            return None
        _run(sim, path, trace)
        sim.step(Action.PICKUP)
        trace.append(int(Action.PICKUP))
        door_pos = tuple(int(v) for v in sim.door_xy[c])
        path = _bfs(sim, _facing(*door_pos))
        if path is None:
            return None
        _run(sim, path, trace)
        sim.step(Action.TOGGLE)
        trace.append(int(Action.TOGGLE))
        if sim.door[door_pos[1], door_pos[0]] != DoorState.OPEN:
            return None
        if j + 1 == len(colors):
            break  # carry the last key along; no more pickups needed
        next_key = _find(sim, Kind.KEY, colors[j + 1])
        later = [(sim.goal_x, sim.goal_y)]
        for cc in colors[j + 1:]:
            later.append(tuple(int(v) for v in sim.door_xy[cc]))
        for cc in colors[j + 2:]:
            kp = _find(sim, Kind.KEY, cc)
            if kp is not None:
                later.append(kp)
        if not _drop_somewhere(sim, trace, next_key, later):
            return None
    path = _bfs(sim, lambda x, y, hd: (x, y) == (sim.goal_x, sim.goal_y))
    if path is None:
        return None
    _run(sim, path, trace)
    if not sim.done:
        return None
    return trace


def forward_only_params(obs_dim: int):
    """Policy params whose actor all but surely samples FORWARD."""
    from hicore.learner import init_policy

    params = init_policy(obs_dim, 6, seed=0)
    params.wa[:] = 0.0
    params.ba[:] = 0.0
    params.ba[int(Action.FORWARD)] = 50.0
    return params
