"""Accuracy metrics and stage-by-stage evaluation of planners."""
from __future__ import annotations

import csv
import json
import os
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Protocol, Sequence

import numpy as np

from .graphs import (
    ACTIONS,
    N_ACTIONS,
    Action,
    PreconditionViolated,
    RobotGraph,
    SceneGraph,
    Subtask,
    Trace,
    apply_subtask,
    graph_to_dict,
)


class LengthMismatch(ValueError):
    pass


class Planner(Protocol):
    def plan(self, instruction: str, robot: RobotGraph, scene: SceneGraph) -> Subtask: ...


@dataclass
class MetricsReport:
    act_acc: float
    obj_acc: float
    sub_acc: float
    task_acc: float | None = None
    n_stages: int = 0
    n_tasks: int = 0
    n_failures: int = 0
    confusion: np.ndarray = field(default_factory=lambda: np.zeros((N_ACTIONS, N_ACTIONS), dtype=int))
    latencies: list[float] = field(default_factory=list)

    def check(self) -> None:
        """Raise if the ordering task <= subtask <= min(action, object) is broken."""
        eps = 1e-12
        if self.sub_acc > min(self.act_acc, self.obj_acc) + eps:
            raise AssertionError(f"sub_acc {self.sub_acc} exceeds min(act, obj)")
        if self.task_acc is not None and self.task_acc > self.sub_acc + eps:
            raise AssertionError(f"task_acc {self.task_acc} exceeds sub_acc {self.sub_acc}")

    def as_dict(self) -> dict:
        d = {
            "act_acc": self.act_acc,
            "obj_acc": self.obj_acc,
            "sub_acc": self.sub_acc,
            "task_acc": self.task_acc,
            "n_stages": self.n_stages,
            "n_tasks": self.n_tasks,
            "n_failures": self.n_failures,
            "confusion": {
                a.value: {b.value: int(self.confusion[i, j]) for j, b in enumerate(ACTIONS)} for i, a in enumerate(ACTIONS)
            },
        }
        if self.latencies:
            d["latency_mean_s"] = float(np.mean(self.latencies))
            d["latency_max_s"] = float(np.max(self.latencies))
        return d

    def summary(self) -> str:
        task = "n/a" if self.task_acc is None else f"{self.task_acc:.4f}"
        return (
            f"act_acc {self.act_acc:.4f}  obj_acc {self.obj_acc:.4f}  "
            f"sub_acc {self.sub_acc:.4f}  task_acc {task}  "
            f"({self.n_stages} stages, {self.n_tasks} tasks)"
        )


def subtask_metrics(predictions: Sequence[Subtask | None], ground_truth: Sequence[Subtask]) -> MetricsReport:
    """Action/object/subtask accuracy; ``None`` predictions count as wrong on both."""
    if len(predictions) != len(ground_truth):
        raise LengthMismatch(f"{len(predictions)} predictions for {len(ground_truth)} ground-truth subtasks")
    n = len(ground_truth)
    conf = np.zeros((N_ACTIONS, N_ACTIONS), dtype=int)
    act = obj = both = failures = 0
    for p, g in zip(predictions, ground_truth):
        if p is None:
            failures += 1
            continue
        conf[g.action.index, p.action.index] += 1
        a_ok = p.action is g.action
        o_ok = p.object_id == g.object_id
        act += a_ok
        obj += o_ok
        both += a_ok and o_ok
    frac = (lambda k: k / n) if n else (lambda k: 0.0)
    return MetricsReport(frac(act), frac(obj), frac(both), None, n, 0, failures, conf)


def _with_tasks(stage_report: MetricsReport, task_hits: Sequence[bool]) -> MetricsReport:
    stage_report.n_tasks = len(task_hits)
    stage_report.task_acc = sum(task_hits) / len(task_hits) if task_hits else 0.0
    return stage_report


def evaluate(planner, dataset: Sequence[Trace], mode: str = "teacher_forced") -> MetricsReport:
    """All four metrics for ``planner`` over ``dataset``.

    ``teacher_forced`` feeds every stage its stored graphs. ``closed_loop``
    starts from stage 0 and applies the planner's own predictions; after the
    first miss, or an infeasible prediction, the remaining stages of that task
    count as wrong.
    """
    if mode not in ("teacher_forced", "closed_loop"):
        raise ValueError(f"unknown mode {mode!r}")
    preds: list[Subtask | None] = []
    gts: list[Subtask] = []
    hits = []
    for trace in dataset:
        if mode == "teacher_forced":
            ps = [planner.plan(trace.instruction, r, s) for s, r in trace.stages]
        else:
            ps = closed_loop_predictions(planner, trace)
        preds.extend(ps)
        gts.extend(trace.subtasks)
        hits.append(all(p == g for p, g in zip(ps, trace.subtasks)))
    report = _with_tasks(subtask_metrics(preds, gts), hits)
    report.check()
    return report


def task_accuracy(planner, dataset: Sequence[Trace], mode: str = "teacher_forced") -> float:
    """Fraction of tasks whose every stage is predicted correctly, in order."""
    return evaluate(planner, dataset, mode).task_acc


def closed_loop_predictions(planner, trace: Trace) -> list[Subtask | None]:
    s, r = trace.stages[0]
    out: list[Subtask | None] = []
    for gt in trace.subtasks:
        p = planner.plan(trace.instruction, r, s)
        out.append(p)
        if p != gt:
            break
        s, r = apply_subtask(s, r, p)
    out += [None] * (len(trace.subtasks) - len(out))
    return out


@dataclass
class EpisodeStep:
    stage: int
    prediction: Subtask
    applied: bool
    reason: str = ""


def run_episode(planner, instruction: str, scene: SceneGraph, robot: RobotGraph, max_steps: int) -> tuple[list[EpisodeStep], bool]:
    """Closed-loop rollout until finish or ``max_steps``; returns (log, finished)."""
    log = []
    s, r = scene, robot
    for t in range(max_steps):
        p = planner.plan(instruction, r, s)
        try:
            s, r = apply_subtask(s, r, p)
            log.append(EpisodeStep(t, p, True))
        except PreconditionViolated as exc:
            log.append(EpisodeStep(t, p, False, exc.reason))
        if p.action is Action.FINISH and log[-1].applied:
            return log, True
    return log, False


# ---------------------------------------------------------------------------
# reference planners


def _stage_key(instruction: str, robot: RobotGraph, scene: SceneGraph) -> str:
    return json.dumps([instruction, graph_to_dict(robot), graph_to_dict(scene)], sort_keys=True)


class OraclePlanner:
    """Answers from stored ground truth; unknown states get ``finish``."""

    def __init__(self, dataset: Iterable[Trace]):
        self._table = {}
        for t in dataset:
            for (s, r), st in zip(t.stages, t.subtasks):
                self._table[_stage_key(t.instruction, r, s)] = st

    def plan(self, instruction, robot, scene) -> Subtask:
        return self._table.get(_stage_key(instruction, robot, scene), Subtask(Action.FINISH, 0))


class FunctionPlanner:
    def __init__(self, fn: Callable[[str, RobotGraph, SceneGraph], Subtask]):
        self.fn = fn

    def plan(self, instruction, robot, scene) -> Subtask:
        return self.fn(instruction, robot, scene)


def object_roles(trace: Trace) -> dict[int, str]:
    """Role of each referenced object: ``obj``, ``src``, ``dst``, ``box`` or ``robot``."""
    s0 = trace.scene_0
    roles: dict[int, str] = {}
    for st in trace.subtasks:
        x = st.object_id
        if st.action is Action.FINISH:
            roles.setdefault(x, "robot")
        elif st.action is Action.PICK:
            roles[x] = "obj"
            parent = s0.parent(x)
            if parent is not None and s0.node(parent).articulation == "none":
                roles[parent] = "src"
        elif st.action in (Action.MOVE, Action.PLACE_TO):
            pass
        else:
            roles[x] = "box"
    for st in trace.subtasks:
        if st.action is Action.PLACE_TO and st.object_id not in roles:
            roles[st.object_id] = "dst"
    for st in trace.subtasks:
        roles.setdefault(st.object_id, "other")
    return roles


class MajorityPlanner:
    """Most frequent action, applied to the object playing the most frequent role.

    With ``joint=True`` the most frequent (action, role) pair is used instead.
    """

    def __init__(self, train: Sequence[Trace], joint: bool = False):
        pairs = Counter()
        for t in train:
            roles = object_roles(t)
            pairs.update((st.action, roles[st.object_id]) for st in t.subtasks)
        if joint:
            self.action, self.role = max(sorted(pairs, key=lambda p: (p[0].index, p[1])), key=lambda p: pairs[p])
        else:
            actions, role_counts = Counter(), Counter()
            for (a, role), c in pairs.items():
                actions[a] += c
                role_counts[role] += c
            self.action = max(ACTIONS, key=lambda a: (actions[a], -a.index))
            self.role = max(sorted(role_counts), key=lambda k: role_counts[k])

    def predict_trace(self, trace: Trace) -> list[Subtask]:
        inv = {role: x for x, role in object_roles(trace).items()}
        obj = inv.get(self.role, 0)
        return [Subtask(self.action, obj) for _ in trace.subtasks]

    def evaluate(self, dataset: Sequence[Trace]) -> MetricsReport:
        preds, gts, hits = [], [], []
        for t in dataset:
            ps = self.predict_trace(t)
            preds += ps
            gts += t.subtasks
            hits.append(all(p == g for p, g in zip(ps, t.subtasks)))
        return _with_tasks(subtask_metrics(preds, gts), hits)


# ---------------------------------------------------------------------------
# reports


def write_report(out_dir, name: str, report: MetricsReport, config: dict, digest: str, rows: Sequence[dict] = ()) -> dict[str, str]:
    """``<name>.json`` (metrics + config + digest) and ``<name>.csv`` (per-stage rows)."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {"json": os.path.join(out_dir, f"{name}.json"), "csv": os.path.join(out_dir, f"{name}.csv")}
    with open(paths["json"], "w", encoding="utf-8") as fh:
        json.dump({"metrics": report.as_dict(), "config": config, "config_digest": digest}, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    fields = ["config_digest", "task_id", "stage", "gt_action", "gt_object", "pred_action", "pred_object", "correct", "latency_s", "error"]
    with open(paths["csv"], "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow({"config_digest": digest, **row})
    return paths


def stage_rows(dataset: Sequence[Trace], predictions: Sequence[Subtask | None], latencies=None, errors=None) -> list[dict]:
    rows = []
    k = 0
    for t in dataset:
        for i, gt in enumerate(t.subtasks):
            p = predictions[k]
            rows.append(
                {
                    "task_id": t.task_id,
                    "stage": i,
                    "gt_action": gt.action.value,
                    "gt_object": gt.object_id,
                    "pred_action": "" if p is None else p.action.value,
                    "pred_object": "" if p is None else p.object_id,
                    "correct": int(p == gt),
                    "latency_s": "" if latencies is None else f"{latencies[k]:.6f}",
                    "error": "" if errors is None or errors[k] is None else errors[k],
                }
            )
            k += 1
    return rows


__all__ = [
    "LengthMismatch",
    "MajorityPlanner",
    "MetricsReport",
    "OraclePlanner",
    "asdict",
    "closed_loop_predictions",
    "evaluate",
    "run_episode",
    "subtask_metrics",
    "task_accuracy",
]
