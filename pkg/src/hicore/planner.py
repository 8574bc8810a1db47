"""High-level policy formulation: prompt assembly, plan parsing, feedback
composition, and the planner clients (HTTP chat endpoint, scripted, replay).

A plan travels as a fenced code block holding one JSON mapping:

    ```json
    {"goals": [{"description": "...",
                "check": {"fn": "carrying_key", "args": ["yellow"]},
                "reward": 0.3}]}
    ```

The last fenced block in a completion is authoritative, so chain-of-thought
text may precede it. The scripted client derives the same block format
deterministically from the environment description, which keeps every other
stage of the pipeline identical whether or not a language model is involved.
"""
from __future__ import annotations

import json
import os
import re
import time
from dataclasses import dataclass
from typing import Callable, Optional

from .errors import (
    BadArity,
    EmptyPlan,
    MalformedPlan,
    PlanningFailed,
    RewardBudgetExceeded,
    TransportError,
    UnknownVerifier,
    UnrecognizedDescription,
)
from .goals import (
    MAX_GOALS,
    REWARD_BUDGET,
    VERIFIER_CATALOG,
    AchievementStats,
    Goal,
    GoalSequence,
    VerifierCall,
)

API_KEY_ENV_VAR = "HICORE_LLM_API_KEY"

_FENCE_RE = re.compile(r"```[a-zA-Z0-9_-]*\n(.*?)```", re.DOTALL)
_DOOR_RE = re.compile(r"- (?:locked|closed|open) (\w+) door at \((\d+), (\d+)\)")

_CATALOG_TEXT = (
    "Available verifiers:\n"
    "- carrying_key(color): true while the agent holds the key of that color\n"
    "- door_open(color): true once the door of that color is open\n"
    "- at_goal(): true when the agent stands on the goal square\n"
    "Colors: yellow, blue, red, green, purple, grey.\n"
)

_SCHEMA_TEXT = (
    "Answer with your reasoning first, then a single fenced code block "
    "containing exactly one JSON object of the form:\n"
    "```json\n"
    '{"goals": [{"description": "<short text>", '
    '"check": {"fn": "<verifier>", "args": ["<color>", ...]}, '
    '"reward": <positive number>}]}\n'
    "```\n"
    f"Use at most {MAX_GOALS} goals and keep the sum of rewards at or below "
    f"{REWARD_BUDGET}. Order goals in the order they must be achieved.\n"
)

_FEW_SHOT = (
    "Example (a small room, not one of your tasks):\n"
    "Environment:\n"
    "Grid size: 6 by 6.\n"
    "Objects, listed top to bottom:\n"
    "- locked purple door at (3, 2)\n"
    "- purple key at (1, 3)\n"
    "- green goal at (4, 4)\n"
    "Agent at (1, 1) facing south, carrying nothing.\n"
    "Mission: reach the green goal square.\n"
    "Answer:\n"
    "The goal lies behind the purple door, so the agent must first take the "
    "purple key, then open the door, then walk to the goal.\n"
    "```json\n"
    '{"goals": [{"description": "pick up the purple key", "check": {"fn": '
    '"carrying_key", "args": ["purple"]}, "reward": 0.3}, {"description": '
    '"open the purple door", "check": {"fn": "door_open", "args": '
    '["purple"]}, "reward": 0.3}, {"description": "reach the goal", '
    '"check": {"fn": "at_goal", "args": []}, "reward": 0.3}]}\n'
    "```\n"
)

SYSTEM_PROMPT = (
    "You plan subgoals for a reinforcement-learning agent in a key-door "
    "gridworld. Given a textual description of the environment, produce an "
    "ordered sequence of goals; each goal carries a verifier call and an "
    "intrinsic reward granted when the verifier first becomes true in an "
    "episode. Think step by step about which doors block the route to the "
    "goal before answering.\n\n" + _CATALOG_TEXT + "\n" + _SCHEMA_TEXT + "\n"
    + _FEW_SHOT
)


@dataclass(frozen=True)
class Prompt:
    system_text: str
    experience_text: str
    user_text: str

    def messages(self) -> list[dict]:
        user = self.user_text
        if self.experience_text:
            user = self.experience_text + "\n" + user
        return [
            {"role": "system", "content": self.system_text},
            {"role": "user", "content": user},
        ]


@dataclass(frozen=True)
class FeedbackText:
    text: str


def build_prompt(env_desc, experiences: list, feedback=None) -> Prompt:
    """Assemble system + retrieved-experience + current-task text."""
    blocks = []
    for rec in experiences:
        blocks.append(
            "### Past environment:\n" + rec.env_description + "\n"
            "### Plan used:\n" + rec.plan_text + "\n"
            "### Outcome:\n" + rec.feedback + "\n"
        )
    experience_text = ""
    if blocks:
        experience_text = (
            "Experience from earlier tasks, most similar first:\n\n"
            + "\n".join(blocks)
        )
    user = "### Current environment:\n" + _desc_text(env_desc) + "\n"
    if feedback is not None:
        user += (
            "\n### Feedback from the last attempt:\n" + _fb_text(feedback)
            + "\nThe previous plan fell short; adjust the goals to address "
            "the weakest steps.\n"
        )
    user += "\nProduce the plan block now.\n"
    return Prompt(SYSTEM_PROMPT, experience_text, user)


def _desc_text(env_desc) -> str:
    return env_desc.text if hasattr(env_desc, "text") else str(env_desc)


def _fb_text(feedback) -> str:
    return feedback.text if hasattr(feedback, "text") else str(feedback)


def parse_plan(text: str) -> GoalSequence:
    """Parse the last fenced plan block of a completion into a GoalSequence."""
    blocks = _FENCE_RE.findall(text)
    if not blocks:
        raise MalformedPlan("no fenced plan block in completion")
    try:
        doc = json.loads(blocks[-1])
    except json.JSONDecodeError as e:
        raise MalformedPlan(f"plan block is not valid JSON: {e}") from None
    if not isinstance(doc, dict) or "goals" not in doc:
        raise MalformedPlan('plan block must be a mapping with a "goals" key')
    raw_goals = doc["goals"]
    if not isinstance(raw_goals, list):
        raise MalformedPlan('"goals" must be a list')
    if len(raw_goals) == 0:
        raise EmptyPlan("plan contains no goals")
    if len(raw_goals) > MAX_GOALS:
        raise MalformedPlan(f"plan has {len(raw_goals)} goals; max is {MAX_GOALS}")
    goals = []
    total = 0.0
    for i, g in enumerate(raw_goals):
        if not isinstance(g, dict):
            raise MalformedPlan(f"goal {i} is not a mapping")
        try:
            desc = g["description"]
            check = g["check"]
            reward = g["reward"]
        except (KeyError, TypeError):
            raise MalformedPlan(f"goal {i} missing description/check/reward") from None
        if not isinstance(desc, str) or not isinstance(check, dict):
            raise MalformedPlan(f"goal {i} has wrong field types")
        fn = check.get("fn")
        args = check.get("args", [])
        if not isinstance(fn, str) or not isinstance(args, list):
            raise MalformedPlan(f"goal {i} check must have fn (str) and args (list)")
        if fn not in VERIFIER_CATALOG:
            raise UnknownVerifier(f"goal {i}: unknown verifier {fn!r}")
        try:
            call = VerifierCall(fn, tuple(str(a) for a in args))
        except BadArity:
            raise
        if not isinstance(reward, (int, float)) or isinstance(reward, bool):
            raise MalformedPlan(f"goal {i} reward must be a number")
        if reward <= 0:
            raise MalformedPlan(f"goal {i} reward must be positive")
        total += float(reward)
        goals.append(Goal(desc, call, float(reward)))
    if total > REWARD_BUDGET:
        raise RewardBudgetExceeded(
            f"sum of rewards {total} exceeds budget {REWARD_BUDGET}")
    return GoalSequence(tuple(goals))


def render_plan(seq: GoalSequence) -> str:
    """Canonical fenced-block serialization; parse_plan(render_plan(s)) == s."""
    doc = {"goals": [
        {
            "description": g.description,
            "check": {"fn": g.check.fn, "args": list(g.check.args)},
            "reward": g.reward,
        }
        for g in seq.goals
    ]}
    return "```json\n" + json.dumps(doc) + "\n```"


def compose_feedback(stats: AchievementStats, mean_extrinsic: float,
                     steps: int) -> FeedbackText:
    lines = []
    for check, count in zip(stats.checks, stats.achieved_counts):
        lines.append(f"{check}: {count}/{stats.episodes} episodes achieved")
    lines.append(f"mean extrinsic return: {mean_extrinsic:.4f}")
    lines.append(f"steps used: {steps}")
    return FeedbackText("\n".join(lines))


def scripted_plan(env_desc) -> GoalSequence:
    """Deterministic stand-in for the language model.

    Reads door colors in left-to-right wall order from the reporter text and
    emits equal-reward subgoals summing to 0.9: key+door pairs per door plus a
    final at_goal when that fits the goal-count cap, door-only subgoals
    otherwise.
    """
    text = _desc_text(env_desc)
    if "Grid size:" not in text:
        raise UnrecognizedDescription("text is not a reporter description")
    doors = [(int(m.group(2)), m.group(1)) for m in _DOOR_RE.finditer(text)]
    doors.sort(key=lambda d: d[0])
    colors = [c for _, c in doors]
    n = len(colors)
    goals: list[tuple[str, VerifierCall]] = []
    if 2 * n + 1 <= MAX_GOALS:
        for c in colors:
            goals.append((f"pick up the {c} key", VerifierCall("carrying_key", (c,))))
            goals.append((f"open the {c} door", VerifierCall("door_open", (c,))))
    else:
        for c in colors:
            goals.append((f"open the {c} door", VerifierCall("door_open", (c,))))
    goals.append(("reach the goal", VerifierCall("at_goal")))
    reward = 0.9 / len(goals)
    return GoalSequence(tuple(Goal(d, call, reward) for d, call in goals))


class PlannerClient:
    """One of three completion sources: llm endpoint, scripted rule, replay file.

    ``transport`` may inject a callable (messages, model, temperature) -> str
    for tests; the default posts to an OpenAI-style chat-completions endpoint.
    """

    def __init__(self, kind: str, endpoint: str = "", model: str = "",
                 temperature: float = 0.0,
                 replay: Optional[list[str]] = None,
                 replay_path: Optional[str] = None,
                 transport: Optional[Callable] = None,
                 max_transport_retries: int = 4,
                 backoff_base: float = 0.5):
        if kind not in ("llm", "scripted", "replay"):
            raise ValueError(f"unknown planner kind: {kind}")
        self.kind = kind
        self.endpoint = endpoint
        self.model = model
        self.temperature = temperature
        self.transport = transport
        self.max_transport_retries = max_transport_retries
        self.backoff_base = backoff_base
        self.queue: list[str] = list(replay or [])
        if replay_path:
            self.queue.extend(load_replay_file(replay_path))

    def complete(self, prompt: Prompt, env_desc=None) -> str:
        if self.kind == "scripted":
            return render_plan(scripted_plan(env_desc))
        if self.kind == "replay":
            if not self.queue:
                raise PlanningFailed("replay queue exhausted")
            return self.queue.pop(0)
        return self._complete_http(prompt)

    def _complete_http(self, prompt: Prompt) -> str:
        transport = self.transport or _http_transport(self.endpoint)
        last_err: Optional[Exception] = None
        for attempt in range(self.max_transport_retries):
            try:
                return transport(prompt.messages(), self.model, self.temperature)
            except TransportError as e:
                last_err = e
                if attempt + 1 < self.max_transport_retries:
                    time.sleep(self.backoff_base * (2 ** attempt))
        raise TransportError(f"endpoint unreachable after "
                             f"{self.max_transport_retries} attempts: {last_err}")


def _http_transport(endpoint: str) -> Callable:
    import requests

    def call(messages, model, temperature):
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(API_KEY_ENV_VAR, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        body = {"model": model, "messages": messages, "temperature": temperature}
        try:
            resp = requests.post(endpoint.rstrip("/") + "/chat/completions",
                                 json=body, headers=headers, timeout=120)
        except requests.RequestException as e:
            raise TransportError(str(e)) from None
        if resp.status_code in (429,) or resp.status_code >= 500:
            raise TransportError(f"HTTP {resp.status_code}")
        if resp.status_code != 200:
            raise PlanningFailed(f"HTTP {resp.status_code}: {resp.text[:200]}")
        return resp.json()["choices"][0]["message"]["content"]

    return call


def load_replay_file(path: str) -> list[str]:
    """Newline-delimited records, each a JSON object {"content": "..."}."""
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                out.append(json.loads(line)["content"])
    return out


def formulate(client: PlannerClient, env_desc, experiences: list,
              feedback=None, max_parse_retries: int = 1):
    """Obtain one valid plan; re-prompts with the parse error on failure.

    Returns (GoalSequence, plan_text).
    """
    prompt = build_prompt(env_desc, experiences, feedback)
    last_err: Optional[Exception] = None
    for attempt in range(max_parse_retries + 1):
        completion = client.complete(prompt, env_desc=env_desc)
        try:
            return parse_plan(completion), completion
        except (MalformedPlan, EmptyPlan, UnknownVerifier, BadArity,
                RewardBudgetExceeded) as e:
            last_err = e
            prompt = Prompt(
                prompt.system_text, prompt.experience_text,
                prompt.user_text
                + f"\nYour previous answer was rejected: {e}. "
                "Emit a corrected plan block.\n")
    raise PlanningFailed(
        f"no valid plan after {max_parse_retries} retries: {last_err}")
