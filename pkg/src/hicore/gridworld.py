"""Key-door gridworld: seedable layouts, MiniGrid-style dynamics, text reporter.

A task grid is split into vertical sections by full-height walls, one locked
door per wall. The key for door j is always placed in a section at or before
wall j, the agent starts in section 0 and the goal sits in the last section,
so every layout is solvable by unlocking the doors left to right.

Hot-path dynamics (step, observation encoding) are delegated to the selected
kernel backend; layout generation and the reporter live here.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional

import numpy as np

from . import _kernels as K
from .errors import EpisodeFinished, InfeasibleLayout
from .rng import SplitMix64, derive_seed


class Kind(IntEnum):
    EMPTY = 0
    WALL = 1
    DOOR = 2
    KEY = 3
    GOAL = 4


# Observation-only marker written into the kind channel at the agent's cell.
AGENT_KIND_ID = 5


class Color(IntEnum):
    YELLOW = 0
    BLUE = 1
    RED = 2
    GREEN = 3
    PURPLE = 4
    GREY = 5


class DoorState(IntEnum):
    OPEN = 0
    CLOSED = 1
    LOCKED = 2


class Heading(IntEnum):
    N = 0
    E = 1
    S = 2
    W = 3


class Action(IntEnum):
    TURN_LEFT = 0
    TURN_RIGHT = 1
    FORWARD = 2
    PICKUP = 3
    DROP = 4
    TOGGLE = 5


N_ACTIONS = 6

# (dx, dy) per heading; row 0 is the top of the grid, so north decreases y.
HEAD_VEC = ((0, -1), (1, 0), (0, 1), (-1, 0))
HEADING_NAMES = ("north", "east", "south", "west")

# Indices into the agent-state array shared with the kernels.
AX, AY, AHEAD, ACK, ACC, ASTEP, ADONE = range(7)


@dataclass(frozen=True)
class TaskSpec:
    """Static description of one key-door task (one MDP of the sequence)."""

    task_id: str
    width: int
    height: int
    n_doors: int
    door_colors: tuple[Color, ...]
    max_steps: int
    seed_policy: bool = True
    # Optional observation canvas. Tasks that declare a canvas larger than
    # their grid are zero-padded up to it, which is how suite tasks of
    # different grid sizes share one observation space.
    obs_width: Optional[int] = None
    obs_height: Optional[int] = None

    def __post_init__(self):
        if self.n_doors != len(self.door_colors):
            raise ValueError("n_doors must equal len(door_colors)")
        if len(set(self.door_colors)) != len(self.door_colors):
            raise ValueError("door colors must be distinct")
        if self.width < 2 * (self.n_doors + 1) + 1:
            raise ValueError("width too small for non-degenerate sections")
        if self.height < 4:
            raise ValueError("height must be at least 4")
        if self.max_steps <= 0:
            raise ValueError("max_steps must be positive")
        ow, oh = self.obs_shape
        if ow < self.width or oh < self.height:
            raise ValueError("observation canvas smaller than the grid")

    @property
    def obs_shape(self) -> tuple[int, int]:
        return (self.obs_width or self.width, self.obs_height or self.height)

    @property
    def obs_len(self) -> int:
        ow, oh = self.obs_shape
        return ow * oh * 3 + 6

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "width": self.width,
            "height": self.height,
            "n_doors": self.n_doors,
            "door_colors": [c.name.lower() for c in self.door_colors],
            "max_steps": self.max_steps,
            "seed_policy": self.seed_policy,
            "obs_width": self.obs_width,
            "obs_height": self.obs_height,
        }

    @staticmethod
    def from_dict(d: dict) -> "TaskSpec":
        return TaskSpec(
            task_id=d["task_id"],
            width=d["width"],
            height=d["height"],
            n_doors=d["n_doors"],
            door_colors=tuple(Color[c.upper()] for c in d["door_colors"]),
            max_steps=d["max_steps"],
            seed_policy=d.get("seed_policy", True),
            obs_width=d.get("obs_width"),
            obs_height=d.get("obs_height"),
        )


@dataclass(frozen=True)
class EnvDescription:
    """Deterministic reporter output for one episode layout."""

    text: str


_PLACEMENT_RETRIES = 1000


class GridEnv:
    """One key-door gridworld instance; single-owner, no global state."""

    def __init__(self, spec: TaskSpec, seed: int):
        self.spec = spec
        self.base_seed = seed
        w, h = spec.width, spec.height
        self.kind = np.zeros((h, w), dtype=np.int8)
        self.color = np.zeros((h, w), dtype=np.int8)
        self.door = np.zeros((h, w), dtype=np.int8)
        self.astate = np.zeros(7, dtype=np.int64)
        # Per-color door position, -1 where the color has no door.
        self.door_xy = np.full((len(Color), 2), -1, dtype=np.int64)
        self.goal_x = -1
        self.goal_y = -1
        self.episode_index = 0
        self._build_structure()
        self.reset(0)

    # -- structure ------------------------------------------------------

    def _build_structure(self) -> None:
        spec = self.spec
        rng = SplitMix64(derive_seed(self.base_seed, "structure"))
        w, n = spec.width, spec.n_doors
        lo, hi = 2, w - 3
        for _ in range(_PLACEMENT_RETRIES):
            xs = sorted(rng.randrange(hi - lo + 1) + lo for _ in range(n))
            if len(set(xs)) == n and all(b - a >= 2 for a, b in zip(xs, xs[1:])):
                break
        else:
            raise InfeasibleLayout(
                f"no wall placement for {spec.task_id} after {_PLACEMENT_RETRIES} tries"
            )
        self.wall_xs = tuple(xs)
        self.door_ys = tuple(1 + rng.randrange(spec.height - 2) for _ in range(n))
        # Section i spans interior columns (left, right) inclusive.
        bounds = [0, *self.wall_xs, w - 1]
        self.sections = tuple(
            (bounds[i] + 1, bounds[i + 1] - 1) for i in range(n + 1)
        )

    # -- episode lifecycle ----------------------------------------------

    def reset(self, seed: int) -> np.ndarray:
        """Rebuild the episode layout and return the initial observation."""
        spec = self.spec
        ep_seed = seed if spec.seed_policy else 0
        rng = SplitMix64(derive_seed(self.base_seed, "episode", ep_seed))
        for _ in range(_PLACEMENT_RETRIES):
            self._place_objects(rng)
            if self._episode_layout_ok():
                return self.encode_obs()
        raise InfeasibleLayout(
            f"no solvable object placement after {_PLACEMENT_RETRIES} tries")

    def _place_objects(self, rng: SplitMix64) -> None:
        spec = self.spec
        w, h = spec.width, spec.height
        self.kind[:] = Kind.EMPTY
        self.color[:] = 0
        self.door[:] = 0
        self.kind[0, :] = Kind.WALL
        self.kind[h - 1, :] = Kind.WALL
        self.kind[:, 0] = Kind.WALL
        self.kind[:, w - 1] = Kind.WALL
        self.color[self.kind == Kind.WALL] = Color.GREY
        self.door_xy[:] = -1

        for j, wx in enumerate(self.wall_xs):
            self.kind[1:h - 1, wx] = Kind.WALL
            self.color[1:h - 1, wx] = Color.GREY
            dy = self.door_ys[j]
            c = spec.door_colors[j]
            self.kind[dy, wx] = Kind.DOOR
            self.color[dy, wx] = c
            self.door[dy, wx] = DoorState.LOCKED
            self.door_xy[c] = (wx, dy)

        def empty_cells(first_sec: int, last_sec: int) -> list[tuple[int, int]]:
            cells = []
            for s in range(first_sec, last_sec + 1):
                x0, x1 = self.sections[s]
                for y in range(1, h - 1):
                    for x in range(x0, x1 + 1):
                        if self.kind[y, x] == Kind.EMPTY:
                            cells.append((x, y))
            return cells

        def place(first_sec: int, last_sec: int) -> tuple[int, int]:
            cells = empty_cells(first_sec, last_sec)
            if not cells:
                raise InfeasibleLayout(
                    f"no free cell in sections {first_sec}..{last_sec}")
            return cells[rng.randrange(len(cells))]

        gx, gy = place(spec.n_doors, spec.n_doors)
        self.kind[gy, gx] = Kind.GOAL
        self.color[gy, gx] = Color.GREEN
        self.goal_x, self.goal_y = gx, gy

        for j in range(spec.n_doors):
            kx, ky = place(0, j)
            self.kind[ky, kx] = Kind.KEY
            self.color[ky, kx] = spec.door_colors[j]

        ax, ay = place(0, 0)
        self.astate[:] = 0
        self.astate[AX] = ax
        self.astate[AY] = ay
        self.astate[AHEAD] = rng.randrange(4)
        self.astate[ACK] = -1

    def _episode_layout_ok(self) -> bool:
        """Staged reachability: with uncollected keys as obstacles, each key
        must be adjacent-reachable in door order (earlier keys removed once
        used), and finally the goal. Rejects placements that wall off a
        later key or corridor."""
        spec = self.spec
        h, w = spec.height, spec.width
        keys = {}
        for y in range(1, h - 1):
            for x in range(1, w - 1):
                if self.kind[y, x] == Kind.KEY:
                    keys[int(self.color[y, x])] = (x, y)
        blocked = set(keys.values())
        open_colors: set[int] = set()

        def flood(start: tuple[int, int]) -> set[tuple[int, int]]:
            seen = {start}
            stack = [start]
            while stack:
                x, y = stack.pop()
                for dx, dy in HEAD_VEC:
                    nx, ny = x + dx, y + dy
                    if (nx, ny) in seen or not (0 <= nx < w and 0 <= ny < h):
                        continue
                    k = self.kind[ny, nx]
                    passable = (
                        (k == Kind.EMPTY and (nx, ny) not in blocked)
                        or k == Kind.GOAL
                        or (k == Kind.DOOR and int(self.color[ny, nx]) in open_colors)
                    )
                    if passable:
                        seen.add((nx, ny))
                        stack.append((nx, ny))
            return seen

        def adjacent(pos, comp) -> bool:
            x, y = pos
            return any((x + dx, y + dy) in comp for dx, dy in HEAD_VEC)

        start = (int(self.astate[AX]), int(self.astate[AY]))
        for c in spec.door_colors:
            comp = flood(start)
            if not adjacent(keys[c], comp):
                return False
            dx, dy = (int(v) for v in self.door_xy[c])
            if not adjacent((dx, dy), comp):
                return False
            blocked.discard(keys[c])
            open_colors.add(int(c))
        return (self.goal_x, self.goal_y) in flood(start)

    def next_episode_seed(self) -> int:
        self.episode_index += 1
        return self.episode_index

    # -- dynamics ---------------------------------------------------------

    @property
    def done(self) -> bool:
        return bool(self.astate[ADONE])

    @property
    def step_count(self) -> int:
        return int(self.astate[ASTEP])

    @property
    def agent_pos(self) -> tuple[int, int]:
        return int(self.astate[AX]), int(self.astate[AY])

    @property
    def heading(self) -> Heading:
        return Heading(int(self.astate[AHEAD]))

    @property
    def carrying(self) -> Optional[tuple[Kind, Color]]:
        if self.astate[ACK] < 0:
            return None
        return Kind(int(self.astate[ACK])), Color(int(self.astate[ACC]))

    def step(self, action: int) -> tuple[np.ndarray, float, bool, dict]:
        if self.done:
            raise EpisodeFinished(f"episode over after {self.step_count} steps")
        if not 0 <= int(action) < N_ACTIONS:
            raise ValueError(f"action index out of range: {action}")
        reward, done = K.impl.env_step(
            self.kind, self.color, self.door, self.astate,
            self.spec.max_steps, self.goal_x, self.goal_y, int(action),
        )
        info = {"step_count": self.step_count,
                "goal_reached": bool(done and reward > 0.0)}
        return self.encode_obs(), reward, bool(done), info

    def encode_obs(self) -> np.ndarray:
        ow, oh = self.spec.obs_shape
        out = np.zeros(self.spec.obs_len, dtype=np.float64)
        K.impl.encode_obs(self.kind, self.color, self.door, self.astate, ow, oh, out)
        return out

    # -- reporter ----------------------------------------------------------

    def describe(self) -> EnvDescription:
        spec = self.spec
        lines = [f"Grid size: {spec.width} by {spec.height}.",
                 "Objects, listed top to bottom:"]
        objects = []
        for y in range(spec.height):
            for x in range(spec.width):
                k = self.kind[y, x]
                if k == Kind.DOOR:
                    state = DoorState(int(self.door[y, x])).name.lower()
                    cname = Color(int(self.color[y, x])).name.lower()
                    objects.append(f"- {state} {cname} door at ({x}, {y})")
                elif k == Kind.KEY:
                    cname = Color(int(self.color[y, x])).name.lower()
                    objects.append(f"- {cname} key at ({x}, {y})")
                elif k == Kind.GOAL:
                    objects.append(f"- green goal at ({x}, {y})")
        lines.extend(objects)
        ax, ay = self.agent_pos
        held = self.carrying
        held_txt = (
            "nothing" if held is None
            else f"a {held[1].name.lower()} {held[0].name.lower()}"
        )
        lines.append(
            f"Agent at ({ax}, {ay}) facing {HEADING_NAMES[self.heading]}, "
            f"carrying {held_txt}."
        )
        lines.append("Mission: reach the green goal square.")
        return EnvDescription("\n".join(lines))


# -- module-level operation surface -----------------------------------------

def make_task(spec: TaskSpec, seed: int) -> GridEnv:
    return GridEnv(spec, seed)


def reset(env: GridEnv, seed: int) -> np.ndarray:
    return env.reset(seed)


def step(env: GridEnv, action: int) -> tuple[np.ndarray, float, bool, dict]:
    return env.step(action)


def encode_obs(env: GridEnv) -> np.ndarray:
    return env.encode_obs()


def describe(env: GridEnv) -> EnvDescription:
    return env.describe()


_SUITE_COLORS = (Color.YELLOW, Color.BLUE, Color.RED, Color.GREEN)


def task_suite() -> list[TaskSpec]:
    """The 8-task catalog: tasks 1-4 plus their doubled-size variants.

    Tasks 1-4 share one observation canvas (the largest grid of the four) so a
    single policy can run on all of them; each large variant keeps its own
    canvas, which is what makes the L-sequence heterogeneous.
    """
    suite = []
    base = [(8, 1), (10, 2), (12, 3), (14, 4)]
    canvas = max(w for w, _ in base)
    for i, (w, n) in enumerate(base, start=1):
        suite.append(TaskSpec(
            task_id=f"task{i}", width=w, height=w, n_doors=n,
            door_colors=_SUITE_COLORS[:n], max_steps=10 * w * w,
            obs_width=canvas, obs_height=canvas,
        ))
    for i, (w, n) in enumerate(base, start=1):
        suite.append(TaskSpec(
            task_id=f"taskL{i}", width=2 * w, height=2 * w, n_doors=n,
            door_colors=_SUITE_COLORS[:n], max_steps=10 * (2 * w) * (2 * w),
        ))
    return suite


def suite_by_id() -> dict[str, TaskSpec]:
    return {s.task_id: s for s in task_suite()}
