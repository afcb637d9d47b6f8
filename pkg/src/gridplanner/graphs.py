"""Scene and robot graphs, the eight-action transition model, and trace files.

Graph values are immutable. Transitions (:func:`apply_subtask`) build fresh
graphs and never touch their inputs, so evaluators can branch states freely.

Scene graphs are forests hanging off a floor node: rooms sit ``on`` the floor,
furniture is ``in`` a room, small objects are ``on`` a surface or ``in`` a
container. The robot graph holds the robot (local id 0) plus the scene nodes
it is near or holding; every non-robot node carries ``ref``, the id of the
scene node it mirrors.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence, Union


class Action(enum.Enum):
    MOVE = "move"
    PICK = "pick"
    PLACE_TO = "place_to"
    REVOLUTE_OPEN = "revolute_open"
    REVOLUTE_CLOSE = "revolute_close"
    LONGITUDINAL_OPEN = "longitudinal_open"
    LONGITUDINAL_CLOSE = "longitudinal_close"
    FINISH = "finish"

    @property
    def index(self) -> int:
        return ACTIONS.index(self)

    @property
    def text(self) -> str:
        """Surface form used in prompts, e.g. ``"place to"``."""
        return self.value.replace("_", " ")

    @classmethod
    def from_index(cls, i: int) -> "Action":
        return ACTIONS[i]


ACTIONS: tuple[Action, ...] = tuple(Action)
N_ACTIONS = len(ACTIONS)

# (articulation kind, target state) for the four open/close actions
ARTICULATION_ACTIONS = {
    Action.REVOLUTE_OPEN: ("revolute", "open"),
    Action.REVOLUTE_CLOSE: ("revolute", "closed"),
    Action.LONGITUDINAL_OPEN: ("longitudinal", "open"),
    Action.LONGITUDINAL_CLOSE: ("longitudinal", "closed"),
}

ROBOT_ID = 0
PARENT_RELATIONS = ("on", "in")
RELATIONS = ("on", "in", "grasped_by", "near")
RELATION_PHRASES = {
    "on": "is on",
    "in": "is in",
    "grasped_by": "is grasped by",
    "near": "is near",
}


class InvalidGraph(ValueError):
    def __init__(self, report: "ValidationReport"):
        super().__init__("; ".join(report.violations))
        self.report = report


class PreconditionViolated(ValueError):
    def __init__(self, action: Action, reason: str):
        super().__init__(f"{action.value}: {reason}")
        self.action = action
        self.reason = reason


class ParseError(ValueError):
    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)
        self.line = line
        self.field = field


@dataclass(frozen=True)
class Node:
    id: int
    category: str
    attributes: dict = field(default_factory=dict)
    position: tuple[float, float, float] | None = None
    ref: int | None = None

    @property
    def articulation(self) -> str:
        return self.attributes.get("articulation", "none")

    @property
    def state(self) -> str | None:
        return self.attributes.get("state")

    @property
    def pickable(self) -> bool:
        return self.attributes.get("pickable") == "true"

    @property
    def surface(self) -> bool:
        return self.attributes.get("surface") == "true"

    @property
    def label(self) -> str:
        """Attribute words plus category, without the id: ``"closed red fridge"``."""
        words = []
        if self.articulation != "none" and self.state:
            words.append(self.state)
        if self.attributes.get("color"):
            words.append(self.attributes["color"])
        words.append(self.category)
        return " ".join(words)

    def with_attribute(self, key: str, value: str) -> "Node":
        attrs = dict(self.attributes)
        attrs[key] = value
        return Node(self.id, self.category, attrs, self.position, self.ref)


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    relation: str


def _sorted_edges(edges: Iterable[Edge]) -> tuple[Edge, ...]:
    return tuple(sorted(edges, key=lambda e: (e.src, e.dst, RELATIONS.index(e.relation))))


@dataclass(frozen=True)
class _Graph:
    nodes: tuple[Node, ...]
    edges: tuple[Edge, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(sorted(self.nodes, key=lambda n: n.id)))
        object.__setattr__(self, "edges", _sorted_edges(self.edges))

    @cached_property
    def _by_id(self) -> dict[int, Node]:
        return {n.id: n for n in self.nodes}

    def __contains__(self, node_id: int) -> bool:
        return node_id in self._by_id

    def node(self, node_id: int) -> Node:
        return self._by_id[node_id]

    @property
    def ids(self) -> list[int]:
        return [n.id for n in self.nodes]

    def __len__(self) -> int:
        return len(self.nodes)


@dataclass(frozen=True)
class SceneGraph(_Graph):
    @cached_property
    def _parents(self) -> dict[int, Edge]:
        return {e.src: e for e in self.edges if e.relation in PARENT_RELATIONS}

    def parent(self, node_id: int) -> int | None:
        e = self._parents.get(node_id)
        return None if e is None else e.dst

    def parent_edge(self, node_id: int) -> Edge | None:
        return self._parents.get(node_id)

    def children(self, node_id: int) -> list[int]:
        return [e.src for e in self.edges if e.relation in PARENT_RELATIONS and e.dst == node_id]

    @property
    def root(self) -> int:
        return self.nodes[0].id


@dataclass(frozen=True)
class RobotGraph(_Graph):
    """Robot-centric graph. Node order is canonical, not by scene id."""

    def __post_init__(self):
        # keep the caller's node order: robot, grasped, move target, others
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", _sorted_edges(self.edges))

    @property
    def robot(self) -> Node:
        return self._by_id[ROBOT_ID]

    @property
    def near_refs(self) -> list[int]:
        return [self.node(e.dst).ref for e in self.edges if e.relation == "near" and e.src == ROBOT_ID]

    @property
    def held_ref(self) -> int | None:
        for e in self.edges:
            if e.relation == "grasped_by":
                return self.node(e.src).ref
        return None

    @property
    def move_target(self) -> int | None:
        t = self.robot.attributes.get("target")
        return None if t is None else int(t)


Graph = Union[SceneGraph, RobotGraph]


@dataclass(frozen=True)
class Subtask:
    action: Action
    object_id: int

    def __str__(self) -> str:
        return f"{self.action.value}-{self.object_id}"


@dataclass(frozen=True)
class Trace:
    task_id: int
    instruction: str
    subtasks: tuple[Subtask, ...]
    stages: tuple[tuple[SceneGraph, RobotGraph], ...]

    @property
    def scene_0(self) -> SceneGraph:
        return self.stages[0][0]

    @property
    def robot_0(self) -> RobotGraph:
        return self.stages[0][1]

    def __len__(self) -> int:
        return len(self.subtasks)


# ---------------------------------------------------------------------------
# validation


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    def __bool__(self) -> bool:
        return not self.violations

    def add(self, msg: str) -> None:
        self.violations.append(msg)


def validate_graph(g: Graph) -> ValidationReport:
    """List every broken invariant of ``g``; an empty report means well-formed."""
    report = ValidationReport()
    seen = set()
    for n in g.nodes:
        if not isinstance(n.id, int) or n.id < 0:
            report.add(f"invalid id {n.id!r}")
        if n.id in seen:
            report.add(f"duplicate id {n.id}")
        seen.add(n.id)
        art = n.attributes.get("articulation", "none")
        if art not in ("none", "revolute", "longitudinal"):
            report.add(f"node {n.id}: unknown articulation kind {art!r}")
        elif (art != "none") != ("state" in n.attributes):
            report.add(f"node {n.id}: articulation state must be present iff articulated")
        elif art != "none" and n.attributes["state"] not in ("open", "closed"):
            report.add(f"node {n.id}: bad articulation state {n.attributes['state']!r}")
    for e in g.edges:
        if e.relation not in RELATIONS:
            report.add(f"unknown relation {e.relation!r}")
        if e.src == e.dst:
            report.add(f"self edge on {e.src}")
        for end in (e.src, e.dst):
            if end not in seen:
                report.add(f"dangling edge {e.src}->{e.dst} references {end}")
    if not g.nodes:
        report.add("empty graph")
        return report
    if isinstance(g, RobotGraph):
        _validate_robot(g, report)
    else:
        _validate_scene(g, report)
    return report


def _validate_scene(g: SceneGraph, report: ValidationReport) -> None:
    parents: dict[int, int] = {}
    for e in g.edges:
        if e.relation in ("grasped_by", "near"):
            report.add(f"robot relation {e.relation!r} in scene graph")
        elif e.relation in PARENT_RELATIONS:
            if e.src in parents:
                report.add(f"node {e.src} has more than one parent")
            parents[e.src] = e.dst
    root = g.nodes[0].id
    if root in parents:
        report.add(f"root {root} has a parent")
    # besides the floor, only a single held (pickable) object may float free
    loose = [n.id for n in g.nodes[1:] if n.id not in parents]
    for nid in loose:
        if not g.node(nid).pickable:
            report.add(f"node {nid} has no parent edge")
    if len(loose) > 1:
        report.add(f"more than one detached object: {loose}")
    for n in g.nodes:
        cur, hops = n.id, 0
        while cur in parents and hops <= len(g.nodes):
            cur, hops = parents[cur], hops + 1
        if hops > len(g.nodes):
            report.add(f"cycle through node {n.id}")
            break


def _validate_robot(g: RobotGraph, report: ValidationReport) -> None:
    robots = [n for n in g.nodes if n.category == "robot"]
    if len(robots) != 1 or robots[0].id != ROBOT_ID:
        report.add("robot graph needs exactly one robot node with id 0")
    grasps = [e for e in g.edges if e.relation == "grasped_by"]
    if len(grasps) > 1:
        report.add("more than one grasped_by edge")
    for e in g.edges:
        if e.relation in PARENT_RELATIONS:
            report.add(f"scene relation {e.relation!r} in robot graph")
        elif e.relation == "near" and e.src != ROBOT_ID:
            report.add(f"near edge must start at the robot: {e.src}->{e.dst}")
        elif e.relation == "grasped_by" and e.dst != ROBOT_ID:
            report.add(f"grasped_by edge must end at the robot: {e.src}->{e.dst}")
    for n in g.nodes:
        if n.id != ROBOT_ID and n.ref is None:
            report.add(f"node {n.id} does not mirror a scene node")


def check_graph(g: Graph) -> None:
    report = validate_graph(g)
    if not report:
        raise InvalidGraph(report)


def _check_pair(s: SceneGraph, r: RobotGraph) -> None:
    check_graph(s)
    check_graph(r)
    for n in r.nodes:
        if n.id != ROBOT_ID and n.ref not in s:
            raise InvalidGraph(ValidationReport([f"robot node {n.id} mirrors missing scene node {n.ref}"]))


# ---------------------------------------------------------------------------
# transitions


def _precondition_failure(s: SceneGraph, r: RobotGraph, st: Subtask) -> str | None:
    a, x = st.action, st.object_id
    if a is Action.FINISH:
        return None
    if x not in s:
        return f"object {x} not in scene"
    node = s.node(x)
    held = r.held_ref
    near = set(r.near_refs)
    if a is Action.MOVE:
        if x == s.root:
            return "cannot move to the root"
        if x == held:
            return "cannot move to the held object"
        return None
    if x not in near:
        return f"robot is not near {x}"
    if a is Action.PICK:
        if not node.pickable:
            return f"{x} is not pickable"
        if held is not None:
            return "gripper is not empty"
        container = s.parent(x)
        if container is not None and s.node(container).articulation != "none" and s.node(container).state != "open":
            return f"container {container} is closed"
        return None
    if a is Action.PLACE_TO:
        if held is None:
            return "nothing is grasped"
        if not node.surface:
            return f"{x} has no surface"
        if node.articulation != "none" and node.state != "open":
            return f"container {x} is closed"
        return None
    kind, goal = ARTICULATION_ACTIONS[a]
    if node.articulation != kind:
        return f"{x} is not {kind}"
    if node.state == goal:
        return f"already {goal}"
    return None


def feasible_subtasks(s: SceneGraph, r: RobotGraph) -> set[Subtask]:
    """Every subtask whose preconditions hold in ``(s, r)``; finish is always in."""
    _check_pair(s, r)
    out = {Subtask(Action.FINISH, ROBOT_ID)}
    for n in s.nodes:
        for a in ACTIONS[:-1]:
            st = Subtask(a, n.id)
            if _precondition_failure(s, r, st) is None:
                out.add(st)
    return out


def near_set(s: SceneGraph, target: int) -> list[int]:
    """Scene nodes the robot is near after moving to ``target``.

    The target, the things on/in it, and its siblings under the same parent
    (unless that parent is the floor root).
    """
    out = [target] + s.children(target)
    parent = s.parent(target)
    if parent is not None and parent != s.root:
        out += [c for c in s.children(parent) if c != target]
    return out


def build_robot_graph(s: SceneGraph, near: Sequence[int], held: int | None, target: int | None) -> RobotGraph:
    """Assemble a robot graph in canonical order: robot, held, target, rest by label."""
    attrs = {} if target is None else {"target": str(target)}
    robot = Node(ROBOT_ID, "robot", attrs)
    order: list[int] = []
    if held is not None:
        order.append(held)
    rest = [x for x in dict.fromkeys(near) if x != held]
    if target is not None and target in rest:
        rest.remove(target)
        order.append(target)
    rest.sort(key=lambda x: (s.node(x).label, x))
    order += rest
    nodes = [robot]
    edges = []
    for local, ref in enumerate(order, start=1):
        src = s.node(ref)
        nodes.append(Node(local, src.category, dict(src.attributes), src.position, ref=ref))
        if ref == held:
            edges.append(Edge(local, ROBOT_ID, "grasped_by"))
        else:
            edges.append(Edge(ROBOT_ID, local, "near"))
    return RobotGraph(tuple(nodes), tuple(edges))


def initial_robot_graph() -> RobotGraph:
    return RobotGraph((Node(ROBOT_ID, "robot", {}),), ())


def apply_subtask(s: SceneGraph, r: RobotGraph, st: Subtask) -> tuple[SceneGraph, RobotGraph]:
    """Return the graphs after executing ``st``; inputs are left untouched."""
    reason = _precondition_failure(s, r, st)
    if reason is not None:
        raise PreconditionViolated(st.action, reason)
    a, x = st.action, st.object_id
    held, near, target = r.held_ref, r.near_refs, r.move_target
    if a is Action.FINISH:
        return s, r
    if a is Action.MOVE:
        return s, build_robot_graph(s, near_set(s, x), held, x)
    if a is Action.PICK:
        edges = [e for e in s.edges if not (e.src == x and e.relation in PARENT_RELATIONS)]
        s2 = SceneGraph(s.nodes, tuple(edges))
        return s2, build_robot_graph(s2, near, x, target)
    if a is Action.PLACE_TO:
        relation = "in" if s.node(x).articulation != "none" else "on"
        s2 = SceneGraph(s.nodes, s.edges + (Edge(held, x, relation),))
        return s2, build_robot_graph(s2, list(near) + [held], None, target)
    _, goal = ARTICULATION_ACTIONS[a]
    nodes = tuple(n.with_attribute("state", goal) if n.id == x else n for n in s.nodes)
    s2 = SceneGraph(nodes, s.edges)
    return s2, build_robot_graph(s2, near, held, target)


def replay(s0: SceneGraph, r0: RobotGraph, subtasks: Iterable[Subtask]) -> list[tuple[SceneGraph, RobotGraph]]:
    """Graphs before each subtask, obtained by folding :func:`apply_subtask`."""
    stages = []
    s, r = s0, r0
    for st in subtasks:
        stages.append((s, r))
        s, r = apply_subtask(s, r, st)
    return stages


# ---------------------------------------------------------------------------
# text


def node_sentence(n: Node) -> str:
    shown = ROBOT_ID if n.category == "robot" else (n.ref if n.ref is not None else n.id)
    return f"{n.label} {shown}"


def _short(g: Graph, node_id: int) -> str:
    n = g.node(node_id)
    shown = ROBOT_ID if n.category == "robot" else (n.ref if n.ref is not None else n.id)
    return f"{n.category} {shown}"


def graph_to_text(g: Graph, kind: str | None = None) -> tuple[list[str], list[str]]:
    """One sentence per node (``"purple display shelves 3"``) and per edge
    (``"pen 2 is grasped by robot 0"``).

    Robot-graph nodes are shown with the id of the scene node they mirror.
    """
    check_graph(g)
    if kind is not None and kind not in ("scene", "robot"):
        raise ValueError(f"kind must be 'scene' or 'robot', got {kind!r}")
    nodes = g.nodes if isinstance(g, SceneGraph) else sorted(g.nodes, key=lambda n: n.id)
    node_sents = [node_sentence(n) for n in nodes]
    edge_sents = [f"{_short(g, e.src)} {RELATION_PHRASES[e.relation]} {_short(g, e.dst)}" for e in g.edges]
    return node_sents, edge_sents


# ---------------------------------------------------------------------------
# serialization


def graph_to_dict(g: Graph) -> dict:
    nodes = []
    for n in g.nodes:
        d = {
            "id": n.id,
            "category": n.category,
            "attributes": dict(n.attributes),
            "position": None if n.position is None else list(n.position),
        }
        if isinstance(g, RobotGraph) and n.ref is not None:
            d["ref"] = n.ref
        nodes.append(d)
    return {
        "nodes": nodes,
        "edges": [{"src": e.src, "dst": e.dst, "relation": e.relation} for e in g.edges],
    }


def _require(d: dict, key: str, where: str, line: int | None):
    if not isinstance(d, dict) or key not in d:
        raise ParseError(f"missing field {key!r}", line=line, field=f"{where}.{key}" if where else key)
    return d[key]


def _as_int(v, where: str, line: int | None) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ParseError(f"expected integer, got {v!r}", line=line, field=where)
    return v


def graph_from_dict(d: dict, cls: type, where: str = "", line: int | None = None) -> Graph:
    nodes = []
    for i, nd in enumerate(_require(d, "nodes", where, line)):
        f = f"{where}.nodes[{i}]"
        attrs = _require(nd, "attributes", f, line)
        if not isinstance(attrs, dict):
            raise ParseError("attributes must be an object", line=line, field=f + ".attributes")
        pos = nd.get("position")
        ref = nd.get("ref")
        nodes.append(
            Node(
                _as_int(_require(nd, "id", f, line), f + ".id", line),
                str(_require(nd, "category", f, line)),
                {str(k): str(v) for k, v in attrs.items()},
                None if pos is None else tuple(float(p) for p in pos),
                None if ref is None else _as_int(ref, f + ".ref", line),
            )
        )
    edges = []
    for i, ed in enumerate(_require(d, "edges", where, line)):
        f = f"{where}.edges[{i}]"
        rel = _require(ed, "relation", f, line)
        if rel not in RELATIONS:
            raise ParseError(f"unknown relation {rel!r}", line=line, field=f + ".relation")
        edges.append(
            Edge(_as_int(_require(ed, "src", f, line), f + ".src", line), _as_int(_require(ed, "dst", f, line), f + ".dst", line), rel)
        )
    return cls(tuple(nodes), tuple(edges))


def subtask_from_dict(d: dict, where: str = "", line: int | None = None) -> Subtask:
    name = _require(d, "action", where, line)
    try:
        action = Action(name)
    except ValueError:
        raise ParseError(f"unknown action {name!r}", line=line, field=f"{where}.action") from None
    return Subtask(action, _as_int(_require(d, "object_id", where, line), f"{where}.object_id", line))


def trace_to_dict(t: Trace) -> dict:
    return {
        "task_id": t.task_id,
        "instruction": t.instruction,
        "scene_0": graph_to_dict(t.scene_0),
        "robot_0": graph_to_dict(t.robot_0),
        "subtasks": [{"action": st.action.value, "object_id": st.object_id} for st in t.subtasks],
        "stages": [{"scene": graph_to_dict(s), "robot": graph_to_dict(r)} for s, r in t.stages],
    }


def serialize_trace(t: Trace) -> str:
    """One JSON line (no trailing newline)."""
    return json.dumps(trace_to_dict(t), separators=(",", ":"), ensure_ascii=False)


def deserialize_trace(text: str, line: int | None = None) -> Trace:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON: {exc.msg} at column {exc.colno}", line=line) from None
    if not isinstance(d, dict):
        raise ParseError("record must be a JSON object", line=line)
    task_id = _as_int(_require(d, "task_id", "", line), "task_id", line)
    instruction = _require(d, "instruction", "", line)
    if not isinstance(instruction, str):
        raise ParseError("instruction must be a string", line=line, field="instruction")
    subtasks = tuple(subtask_from_dict(sd, f"subtasks[{i}]", line) for i, sd in enumerate(_require(d, "subtasks", "", line)))
    stages = tuple(
        (
            graph_from_dict(_require(sd, "scene", f"stages[{i}]", line), SceneGraph, f"stages[{i}].scene", line),
            graph_from_dict(_require(sd, "robot", f"stages[{i}]", line), RobotGraph, f"stages[{i}].robot", line),
        )
        for i, sd in enumerate(_require(d, "stages", "", line))
    )
    if len(stages) != len(subtasks):
        raise ParseError(f"{len(stages)} stages for {len(subtasks)} subtasks", line=line, field="stages")
    if not stages:
        raise ParseError("trace has no stages", line=line, field="stages")
    s0 = graph_from_dict(_require(d, "scene_0", "", line), SceneGraph, "scene_0", line)
    r0 = graph_from_dict(_require(d, "robot_0", "", line), RobotGraph, "robot_0", line)
    if (s0, r0) != stages[0]:
        raise ParseError("scene_0/robot_0 differ from stage 0", line=line, field="scene_0")
    return Trace(task_id, instruction, subtasks, stages)


def write_traces(path, traces: Iterable[Trace]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t in traces:
            fh.write(serialize_trace(t))
            fh.write("\n")


def read_traces(path) -> list[Trace]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for i, raw in enumerate(fh, start=1):
            if raw.strip():
                out.append(deserialize_trace(raw, line=i))
    return out
