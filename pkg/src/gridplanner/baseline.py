"""Prompted language-model planner: prompt builder, answer parser, clients and
the evaluation harness."""
from __future__ import annotations

import json
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, Protocol, Sequence

import httpx

from .encoders import ExternalServiceError
from .evaluation import MetricsReport, _with_tasks, stage_rows, subtask_metrics
from .graphs import ACTIONS, ROBOT_ID, Action, RobotGraph, SceneGraph, Subtask, Trace, graph_to_text

ACTION_MEANINGS = {
    Action.MOVE: "drive the robot next to the object",
    Action.PICK: "grasp the object with the gripper",
    Action.PLACE_TO: "put the held object on or into the object",
    Action.REVOLUTE_OPEN: "open a hinged door of the object",
    Action.REVOLUTE_CLOSE: "shut a hinged door of the object",
    Action.LONGITUDINAL_OPEN: "pull out a drawer of the object",
    Action.LONGITUDINAL_CLOSE: "push in a drawer of the object",
    Action.FINISH: "the instruction is done, answer with robot 0",
}

_EXAMPLES = (
    (
        "#Scene: Objects in the scene, with ids: floor 0, living room 1, purple display shelves 2, "
        "brown coffee table 3, black teacup 4. Relations in the scene: living room 1 is on floor 0, "
        "display shelves 2 is in living room 1, coffee table 3 is in living room 1, teacup 4 is on coffee table 3.\n"
        "#Robot: Objects near the robot, with ids: robot 0, black teacup 4. "
        "Relations near the robot: teacup 4 is grasped by robot 0.\n"
        "#Instruction: Put the cup you are holding on the display shelves.",
        "#Think: The teacup is already in the gripper. The shelves are not near the robot, "
        "so the robot has to drive there first. Answer: move purple display shelves 2",
    ),
    (
        "#Scene: Objects in the scene, with ids: floor 0, kitchen 1, closed white fridge 2, green apple 3. "
        "Relations in the scene: kitchen 1 is on floor 0, fridge 2 is in kitchen 1, apple 3 is in fridge 2.\n"
        "#Robot: Objects near the robot, with ids: robot 0, closed white fridge 2, green apple 3. "
        "Relations near the robot: fridge 2 is near robot 0, apple 3 is near robot 0.\n"
        "#Instruction: Bring me the apple from the fridge.",
        "#Think: The robot stands at the fridge but its door is closed, and the apple is inside. "
        "The door must be opened before grasping. Answer: revolute open closed white fridge 2",
    ),
)


@dataclass(frozen=True)
class PromptConfig:
    n_shots: int = 2
    timeout: float = 30.0
    concurrency: int = 4

    def __post_init__(self):
        if not 0 <= self.n_shots <= len(_EXAMPLES):
            raise ValueError(f"n_shots must be in 0..{len(_EXAMPLES)}")
        if self.timeout <= 0 or self.concurrency < 1:
            raise ValueError("timeout must be > 0 and concurrency >= 1")


def _graph_lines(g, where: str, who: str) -> str:
    nodes, edges = graph_to_text(g)
    return f"#{who}: Objects {where}, with ids: {', '.join(nodes)}. Relations {where}: {', '.join(edges) or 'none'}."


def build_prompt(instruction: str, robot: RobotGraph, scene: SceneGraph, n_shots: int = 2) -> str:
    actions = ", ".join(repr(a.text) for a in ACTIONS)
    meanings = " ".join(f"{a.text}: {ACTION_MEANINGS[a]}." for a in ACTIONS)
    parts = [
        "#Role: You plan for a mobile manipulator. Split the user's instruction into single steps the robot can run.",
        "#Output Restriction: Reply with one step as <action> <object name> <object id>, where <action> is one of "
        f"[{actions}]. {meanings} Names and ids must come from the #Scene section.",
        _graph_lines(scene, "in the scene", "Scene"),
        _graph_lines(robot, "near the robot", "Robot"),
        f"#Instruction: {instruction}",
        "#Task: Give the single next step for the robot given the scene and robot state. "
        "Explain your reasoning, then end with a line 'Answer: <action> <object name> <object id>'.",
    ]
    for i, (inp, out) in enumerate(_EXAMPLES[:n_shots], start=1):
        parts.append(f"#Example{i}:\ninput:\n{inp}\noutput:\n{out}")
    return "\n".join(parts) + "\n"


# ---------------------------------------------------------------------------
# parsing


@dataclass(frozen=True)
class ParseFailure:
    reason: str
    text: str = ""

    def __bool__(self) -> bool:
        return False


_ACTION_WORDS = sorted(((a, a.value.split("_")) for a in ACTIONS), key=lambda t: -len(t[1]))
_ACTION_RE = re.compile(r"\b(" + "|".join(r"[ _]+".join(w) for _, w in _ACTION_WORDS) + r")\b", re.IGNORECASE)
_STEP_RE = re.compile(r"^\s*([a-z_]+(?:\s+[a-z_]+)*?)\s+(?:[^\d\n]*?\s+)?(-?\d+)\s*[.!]?\s*$", re.IGNORECASE)
_CUE_RE = re.compile(r"(?:answer|output)\s*:", re.IGNORECASE)


def _action_of(word: str) -> Action:
    return Action("_".join(word.lower().replace("_", " ").split()))


def _parse_line(line: str) -> tuple[Action, int] | str | None:
    cues = list(_CUE_RE.finditer(line))
    seg = line[cues[-1].end():] if cues else line
    for m in _ACTION_RE.finditer(seg):
        tail = re.fullmatch(r"\s+(?:[^\d\n]*?\s+)?(-?\d+)\s*[.!]?\s*", seg[m.end():])
        if tail:
            return _action_of(m.group(1)), int(tail.group(1))
    if cues and _STEP_RE.match(seg):
        return "unknown action"
    return None


def parse_planner_response(text: str, s: SceneGraph) -> Subtask | ParseFailure:
    """The last line of ``text`` that reads as ``<action> <name words> <id>``."""
    fallback = "no step found"
    for line in reversed(text.strip().splitlines()):
        got = _parse_line(line)
        if got is None:
            if _STEP_RE.match(line) and fallback == "no step found":
                fallback = "unknown action"
            continue
        if isinstance(got, str):
            return ParseFailure(got, text)
        action, oid = got
        if action is Action.FINISH:
            return Subtask(Action.FINISH, ROBOT_ID)
        if oid not in s:
            return ParseFailure("unknown id", text)
        return Subtask(action, oid)
    return ParseFailure(fallback, text)


def format_subtask(st: Subtask, s: SceneGraph) -> str:
    if st.action is Action.FINISH:
        return f"finish robot {ROBOT_ID}"
    return f"{st.action.text} {s.node(st.object_id).label} {st.object_id}"


# ---------------------------------------------------------------------------
# clients


class PlannerClient(Protocol):
    def complete(self, prompt: str, timeout: float) -> str: ...


class ScriptedClient:
    """Replays fixed responses in order (cycling), or calls ``fn(prompt)``."""

    def __init__(self, responses: Sequence[str] | Callable[[str], str], delay: float = 0.0):
        self._responses = responses
        self._i = 0
        self._lock = threading.Lock()
        self.delay = delay
        self.prompts: list[str] = []

    def complete(self, prompt: str, timeout: float) -> str:
        with self._lock:
            self.prompts.append(prompt)
            i = self._i
            self._i += 1
        if self.delay:
            time.sleep(self.delay)
        if callable(self._responses):
            return self._responses(prompt)
        return self._responses[i % len(self._responses)]


class EchoOracleClient:
    """Looks the prompt up among the dataset's stages and answers with ground truth."""

    def __init__(self, dataset: Sequence[Trace], n_shots: int = 2):
        self._answers = {}
        for t in dataset:
            for (s, r), st in zip(t.stages, t.subtasks):
                self._answers[build_prompt(t.instruction, r, s, n_shots)] = f"Answer: {format_subtask(st, s)}"

    def complete(self, prompt: str, timeout: float) -> str:
        return self._answers.get(prompt, "I do not know.")


class HTTPChatClient:
    """Chat-completion style JSON endpoint.

    Reads ``GRID_LLM_URL``, ``GRID_LLM_KEY`` and ``GRID_LLM_MODEL`` unless given.
    """

    def __init__(self, url: str | None = None, key: str | None = None, model: str | None = None, transport=None, retries: int = 0):
        self.url = url or os.environ.get("GRID_LLM_URL")
        if not self.url:
            raise ExternalServiceError("GRID_LLM_URL is not set", attempts=0)
        self.key = key if key is not None else os.environ.get("GRID_LLM_KEY", "")
        self.model = model or os.environ.get("GRID_LLM_MODEL", "")
        self.retries = retries
        self._transport = transport

    def complete(self, prompt: str, timeout: float) -> str:
        headers = {"Authorization": f"Bearer {self.key}"} if self.key else {}
        body = {"model": self.model, "temperature": 0, "messages": [{"role": "user", "content": prompt}]}
        last = None
        for attempt in range(1, self.retries + 2):
            try:
                with httpx.Client(transport=self._transport, timeout=timeout) as client:
                    resp = client.post(self.url, json=body, headers=headers)
                if resp.status_code >= 400:
                    last = ExternalServiceError(f"HTTP {resp.status_code}", attempts=attempt, status=resp.status_code)
                    if resp.status_code < 500:
                        raise last
                    continue
                return resp.json()["choices"][0]["message"]["content"]
            except (httpx.HTTPError, KeyError, IndexError, TypeError, json.JSONDecodeError) as exc:
                last = ExternalServiceError(f"{type(exc).__name__}: {exc}", attempts=attempt)
        raise last


def call_with_timeout(client: PlannerClient, prompt: str, timeout: float) -> str:
    """Run ``client.complete`` in a daemon thread; give up after ``timeout`` seconds."""
    box: dict = {}

    def run():
        try:
            box["out"] = client.complete(prompt, timeout)
        except BaseException as exc:  # reported to the caller
            box["err"] = exc

    th = threading.Thread(target=run, daemon=True)
    th.start()
    th.join(timeout)
    if th.is_alive():
        raise TimeoutError(f"no response within {timeout}s")
    if "err" in box:
        raise box["err"]
    return box["out"]


@dataclass
class BaselineResult:
    report: MetricsReport
    predictions: list
    errors: list
    latencies: list

    def rows(self, dataset: Sequence[Trace]) -> list[dict]:
        return stage_rows(dataset, self.predictions, self.latencies, self.errors)


def baseline_eval(client: PlannerClient, dataset: Sequence[Trace], prompt_cfg: PromptConfig = PromptConfig()) -> BaselineResult:
    """Prompt, query, parse and score every stage. Client errors, timeouts and
    unparseable answers are recorded and scored as wrong."""
    jobs = [(t.instruction, s, r) for t in dataset for s, r in t.stages]

    def one(job):
        instruction, s, r = job
        prompt = build_prompt(instruction, r, s, prompt_cfg.n_shots)
        t0 = time.perf_counter()
        try:
            text = call_with_timeout(client, prompt, prompt_cfg.timeout)
        except Exception as exc:
            return None, f"{type(exc).__name__}: {exc}", time.perf_counter() - t0
        dt = time.perf_counter() - t0
        got = parse_planner_response(text, s)
        if isinstance(got, ParseFailure):
            return None, f"parse: {got.reason}", dt
        return got, None, dt

    with ThreadPoolExecutor(max_workers=prompt_cfg.concurrency) as pool:
        results = list(pool.map(one, jobs))
    preds = [p for p, _, _ in results]
    errors = [e for _, e, _ in results]
    lat = [dt for _, _, dt in results]
    report = subtask_metrics(preds, [st for t in dataset for st in t.subtasks])
    k = 0
    hits = []
    for t in dataset:
        hits.append(all(p == g for p, g in zip(preds[k : k + len(t)], t.subtasks)))
        k += len(t)
    report = _with_tasks(report, hits)
    report.latencies = lat
    report.n_failures = sum(e is not None for e in errors)
    report.check()
    return BaselineResult(report, preds, errors, lat)


def prompt_config_dict(cfg: PromptConfig) -> dict:
    return asdict(cfg)
