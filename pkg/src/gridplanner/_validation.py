"""Input checks shared by the estimator and the CLI."""
from __future__ import annotations

from typing import Sequence

from .graphs import RobotGraph, SceneGraph, Subtask, Trace, check_graph

Stage = tuple[str, RobotGraph, SceneGraph]


def check_stages(X, y=None) -> tuple[list[Stage], list[Subtask] | None]:
    """Normalize ``X`` to a list of ``(instruction, robot, scene)`` stages.

    ``X`` may hold traces (every stage is used and, when ``y`` is None, the
    stored subtasks become the targets) or stage triples.
    """
    if isinstance(X, (str, bytes)) or not hasattr(X, "__len__"):
        raise TypeError("X must be a sequence of traces or (instruction, robot, scene) triples")
    if len(X) == 0:
        raise ValueError("X is empty")
    stages: list[Stage] = []
    targets: list[Subtask] = []
    for i, item in enumerate(X):
        if isinstance(item, Trace):
            for s, r in item.stages:
                stages.append((item.instruction, r, s))
            targets.extend(item.subtasks)
            continue
        if not (isinstance(item, tuple) and len(item) == 3):
            raise TypeError(f"X[{i}] is neither a Trace nor an (instruction, robot, scene) triple")
        instruction, r, s = item
        if not isinstance(instruction, str) or not isinstance(r, RobotGraph) or not isinstance(s, SceneGraph):
            raise TypeError(f"X[{i}] must be (str, RobotGraph, SceneGraph)")
        check_graph(r)
        check_graph(s)
        stages.append(item)
    if y is None:
        return stages, (targets if len(targets) == len(stages) else None)
    y = check_targets(y)
    if len(y) != len(stages):
        raise ValueError(f"X has {len(stages)} stages but y has {len(y)} targets")
    for (_, _, s), st in zip(stages, y):
        if st.object_id not in s:
            raise ValueError(f"target {st} refers to an object missing from its scene")
    return stages, y


def check_targets(y: Sequence) -> list[Subtask]:
    out = []
    for i, st in enumerate(y):
        if not isinstance(st, Subtask):
            raise TypeError(f"y[{i}] is not a Subtask")
        out.append(st)
    return out


def check_positive(name: str, value, integer: bool = False) -> None:
    if integer and (not isinstance(value, int) or isinstance(value, bool)):
        raise TypeError(f"{name} must be an int, got {type(value).__name__}")
    if not value > 0:
        raise ValueError(f"{name} must be > 0, got {value}")
