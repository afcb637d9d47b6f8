"""Synthetic household scenes, feasible task sampling, instruction grammar and
trace rollout."""
from __future__ import annotations

import hashlib
import json
import os
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .graphs import (
    ACTIONS,
    ROBOT_ID,
    Action,
    Edge,
    Node,
    PreconditionViolated,
    RobotGraph,
    SceneGraph,
    Subtask,
    Trace,
    apply_subtask,
    initial_robot_graph,
    write_traces,
)

ROOMS = (
    "living room", "dining room", "kitchen", "bedroom", "bathroom", "study",
    "office", "hallway", "laundry room", "garage", "playroom", "guest room",
)
SURFACES = (
    "dining table", "kitchen table", "coffee table", "desk", "display shelves", "bookshelf",
    "counter", "nightstand", "side table", "tv stand", "workbench", "sofa", "bed", "bench",
)
DECOR = ("floor lamp", "potted plant", "television", "radiator", "mirror", "clock")
REVOLUTE = ("fridge", "wardrobe", "cabinet", "microwave", "oven", "dishwasher", "cupboard", "safe")
LONGITUDINAL = ("drawer cabinet", "dresser", "filing cabinet", "chest of drawers", "tool drawer", "nightstand drawer")
ITEMS = (
    "teacup", "pen", "apple", "book", "remote", "mug", "bottle", "plate", "bowl", "phone",
    "keys", "toy car", "towel", "glasses", "spoon", "vase", "candle", "banana", "notebook",
    "scissors", "cup", "orange", "wallet", "hat",
)
COLORS = ("red", "blue", "green", "yellow", "black", "white", "brown", "purple", "orange", "pink", "gray", "silver")

TEMPLATES = ("relocate", "fetch_from_container", "stow_into_container", "go_and_open", "go_and_close")

# target action counts for a 70-object corpus of 19981 tasks
TARGET_COUNTS = {
    Action.MOVE: 18347,
    Action.PICK: 11811,
    Action.PLACE_TO: 17924,
    Action.REVOLUTE_OPEN: 3456,
    Action.REVOLUTE_CLOSE: 3456,
    Action.LONGITUDINAL_OPEN: 3503,
    Action.LONGITUDINAL_CLOSE: 3503,
    Action.FINISH: 19981,
}

# output of fit_template_weights(), frozen
DEFAULT_TEMPLATE_WEIGHTS = {
    "relocate": 0.515,
    "fetch_from_container": 0.1058,
    "stow_into_container": 0.1058,
    "go_and_open": 0.1367,
    "go_and_close": 0.1367,
}
DEFAULT_NEAR_PROB = 0.83

OPEN_ACTION = {"revolute": Action.REVOLUTE_OPEN, "longitudinal": Action.LONGITUDINAL_OPEN}
CLOSE_ACTION = {"revolute": Action.REVOLUTE_CLOSE, "longitudinal": Action.LONGITUDINAL_CLOSE}


class ConfigInfeasible(ValueError):
    pass


class SlotUnsatisfiable(ValueError):
    pass


@dataclass(frozen=True)
class SceneConfig:
    objects_per_scene: int = 70
    rooms: tuple[int, int] = (3, 6)
    articulated_fraction: float = 0.3
    furniture_fraction: float = 0.45
    max_furniture_per_room: int = 7
    max_items_per_holder: int = 5
    combo_split: str = "all"  # "all" | "train" | "unseen"
    seed: int = 0

    def check(self) -> None:
        lo, hi = self.rooms
        if not 30 <= self.objects_per_scene <= 70:
            raise ConfigInfeasible(f"objects_per_scene must be in 30..70, got {self.objects_per_scene}")
        if not 1 <= lo <= hi <= len(ROOMS):
            raise ConfigInfeasible(f"bad room range {self.rooms}")
        if self.objects_per_scene < hi + 1:
            raise ConfigInfeasible("objects_per_scene must be >= rooms + 1")
        if not 0.0 <= self.articulated_fraction <= 1.0:
            raise ConfigInfeasible("articulated_fraction must be in [0, 1]")
        if not 0.0 < self.furniture_fraction < 1.0:
            raise ConfigInfeasible("furniture_fraction must be in (0, 1)")
        if self.combo_split not in ("all", "train", "unseen"):
            raise ConfigInfeasible(f"unknown combo_split {self.combo_split!r}")


def _combo_allowed(color: str, category: str, split: str) -> bool:
    if split == "all":
        return True
    h = hashlib.blake2b(f"{color}|{category}".encode(), digest_size=2).digest()[0] & 1
    return (h == 1) == (split == "unseen")


def _pick_combos(rng, categories: Sequence[str], n: int, split: str, taken: set) -> list[tuple[str, str]]:
    pool = [(c, cat) for cat in categories for c in COLORS if _combo_allowed(c, cat, split) and (c, cat) not in taken]
    if len(pool) < n:
        raise ConfigInfeasible(f"not enough distinct color/category combinations for {n} objects")
    chosen = [pool[i] for i in rng.choice(len(pool), size=n, replace=False)]
    taken.update(chosen)
    return chosen


def sample_scene(cfg: SceneConfig, rng: np.random.Generator) -> tuple[SceneGraph, RobotGraph]:
    """Random floor -> rooms -> furniture -> items forest plus the idle robot."""
    cfg.check()
    n_obj = cfg.objects_per_scene
    n_rooms = int(rng.integers(cfg.rooms[0], cfg.rooms[1] + 1))
    n_furn = int(np.clip(round(n_obj * cfg.furniture_fraction), n_rooms, n_rooms * cfg.max_furniture_per_room))
    n_items = n_obj - n_furn
    n_art = int(round(n_furn * cfg.articulated_fraction))
    n_decor = min(int(rng.integers(0, max(1, n_furn // 8) + 1)), n_furn - n_art)
    n_surf = n_furn - n_art - n_decor
    holders = n_surf + n_art
    if holders * cfg.max_items_per_holder < n_items or (n_items and not holders):
        raise ConfigInfeasible(f"{n_items} items do not fit on {holders} surfaces/containers")

    taken: set = set()
    kinds = ["surface"] * n_surf + ["decor"] * n_decor
    if n_art:
        n_rev = int(rng.binomial(n_art, 0.5))
        kinds += ["revolute"] * n_rev + ["longitudinal"] * (n_art - n_rev)
    pools = {"surface": SURFACES, "decor": DECOR, "revolute": REVOLUTE, "longitudinal": LONGITUDINAL}
    furniture = []
    for kind in pools:
        count = kinds.count(kind)
        if count:
            furniture += [(kind, c) for c in _pick_combos(rng, pools[kind], count, cfg.combo_split, taken)]
    items = _pick_combos(rng, ITEMS, n_items, cfg.combo_split, taken) if n_items else []

    room_names = [ROOMS[i] for i in rng.choice(len(ROOMS), size=n_rooms, replace=False)]
    # every room gets one piece, the rest spread under the per-room cap
    room_of = list(range(n_rooms))
    load = [1] * n_rooms
    for _ in range(n_furn - n_rooms):
        open_rooms = [i for i in range(n_rooms) if load[i] < cfg.max_furniture_per_room]
        j = int(rng.choice(open_rooms))
        room_of.append(j)
        load[j] += 1
    order = rng.permutation(n_furn)
    furniture = [furniture[i] for i in order]

    ids = rng.permutation(n_obj) + n_rooms + 1
    nodes = [Node(0, "floor", {})]
    edges = []
    for i, name in enumerate(room_names, start=1):
        nodes.append(Node(i, name, {}))
        edges.append(Edge(i, 0, "on"))
    holder_ids = []
    for f, ((kind, (color, cat)), room) in enumerate(zip(furniture, room_of)):
        nid = int(ids[f])
        attrs = {"color": color, "articulation": "none", "pickable": "false", "surface": "false"}
        if kind == "surface":
            attrs["surface"] = "true"
        elif kind in ("revolute", "longitudinal"):
            attrs.update(articulation=kind, surface="true", state="open" if rng.random() < 0.5 else "closed")
        nodes.append(Node(nid, cat, attrs))
        edges.append(Edge(nid, room + 1, "in"))
        if kind != "decor":
            holder_ids.append((nid, kind))
    fill = Counter()
    for k, (color, cat) in enumerate(items):
        nid = int(ids[n_furn + k])
        free = [h for h in holder_ids if fill[h[0]] < cfg.max_items_per_holder]
        hid, kind = free[int(rng.integers(len(free)))]
        fill[hid] += 1
        nodes.append(Node(nid, cat, {"color": color, "articulation": "none", "pickable": "true", "surface": "false"}))
        edges.append(Edge(nid, hid, "on" if kind == "surface" else "in"))
    return SceneGraph(tuple(nodes), tuple(edges)), initial_robot_graph()


# ---------------------------------------------------------------------------
# tasks


@dataclass(frozen=True)
class TaskTemplate:
    name: str
    skeleton: tuple[str, ...]

    def __post_init__(self):
        if self.name not in TEMPLATES:
            raise ValueError(f"unknown template {self.name!r}")


TASK_TEMPLATES = {
    "relocate": TaskTemplate("relocate", ("move src", "pick obj", "[move dst]", "place_to dst", "finish")),
    "fetch_from_container": TaskTemplate(
        "fetch_from_container", ("move box", "open box", "pick obj", "close box", "[move dst]", "place_to dst", "finish")
    ),
    "stow_into_container": TaskTemplate(
        "stow_into_container", ("move src", "pick obj", "[move box]", "open box", "place_to box", "close box", "finish")
    ),
    "go_and_open": TaskTemplate("go_and_open", ("move box", "open box", "finish")),
    "go_and_close": TaskTemplate("go_and_close", ("move box", "close box", "finish")),
}


@dataclass(frozen=True)
class Task:
    """A template instance: the subtask sequence plus the scene ids bound to its slots."""

    template: str
    subtasks: tuple[Subtask, ...]
    slots: dict = field(default_factory=dict)

    def __iter__(self) -> Iterator[Subtask]:
        return iter(self.subtasks)

    def __len__(self) -> int:
        return len(self.subtasks)

    def __getitem__(self, i):
        return self.subtasks[i]


def _pickable_on(s: SceneGraph, container: bool | None) -> list[int]:
    out = []
    for n in s.nodes:
        if not n.pickable:
            continue
        p = s.parent(n.id)
        if p is None:
            continue
        art = s.node(p).articulation != "none"
        if container is None or art == container:
            out.append(n.id)
    return out


def _plain_surfaces(s: SceneGraph) -> list[int]:
    return [n.id for n in s.nodes if n.surface and n.articulation == "none"]


def _containers(s: SceneGraph, state: str, room_for: int | None = None) -> list[int]:
    out = [n.id for n in s.nodes if n.articulation != "none" and n.state == state]
    if room_for is not None:
        out = [c for c in out if len(s.children(c)) < room_for]
    return out


def _choose(rng, options: Sequence[int]) -> int:
    if not options:
        raise SlotUnsatisfiable("no candidate for slot")
    return int(options[int(rng.integers(len(options)))])


def _prefer_near(rng, s: SceneGraph, anchor: int, options: Sequence[int], near_prob: float) -> int:
    room = s.parent(anchor)
    close = [o for o in options if o != anchor and s.parent(o) == room]
    if close and rng.random() < near_prob:
        return _choose(rng, close)
    return _choose(rng, [o for o in options if o != anchor])


class _Rollout:
    def __init__(self, s, r):
        self.s, self.r, self.steps = s, r, []

    def do(self, action: Action, x: int):
        st = Subtask(action, x)
        self.s, self.r = apply_subtask(self.s, self.r, st)
        self.steps.append(st)

    def go(self, x: int):
        # skip the move when the target is already within reach
        if x not in self.r.near_refs:
            self.do(Action.MOVE, x)


def sample_task(s: SceneGraph, r: RobotGraph, template: str | TaskTemplate, rng: np.random.Generator, near_prob: float = DEFAULT_NEAR_PROB, max_items: int = 5) -> Task:
    """Bind the template's slots in ``s`` and roll out an executable subtask list."""
    name = template.name if isinstance(template, TaskTemplate) else template
    if name not in TASK_TEMPLATES:
        raise ValueError(f"unknown template {name!r}")
    ro = _Rollout(s, r)
    slots: dict[str, int] = {}
    if name == "relocate":
        obj = _choose(rng, [o for o in _pickable_on(s, False) if s.node(s.parent(o)).surface])
        src = s.parent(obj)
        dst = _prefer_near(rng, s, src, _plain_surfaces(s), near_prob)
        slots = {"obj": obj, "src": src, "dst": dst}
        ro.go(src)
        ro.do(Action.PICK, obj)
        ro.go(dst)
        ro.do(Action.PLACE_TO, dst)
    elif name == "fetch_from_container":
        obj = _choose(rng, [o for o in _pickable_on(s, True) if s.node(s.parent(o)).state == "closed"])
        box = s.parent(obj)
        kind = s.node(box).articulation
        dst = _prefer_near(rng, s, box, _plain_surfaces(s), near_prob)
        slots = {"obj": obj, "box": box, "dst": dst}
        ro.go(box)
        ro.do(OPEN_ACTION[kind], box)
        ro.do(Action.PICK, obj)
        ro.do(CLOSE_ACTION[kind], box)
        ro.go(dst)
        ro.do(Action.PLACE_TO, dst)
    elif name == "stow_into_container":
        obj = _choose(rng, [o for o in _pickable_on(s, False) if s.node(s.parent(o)).surface])
        src = s.parent(obj)
        box = _prefer_near(rng, s, src, _containers(s, "closed", room_for=max_items), near_prob)
        kind = s.node(box).articulation
        slots = {"obj": obj, "src": src, "box": box}
        ro.go(src)
        ro.do(Action.PICK, obj)
        ro.go(box)
        ro.do(OPEN_ACTION[kind], box)
        ro.do(Action.PLACE_TO, box)
        ro.do(CLOSE_ACTION[kind], box)
    elif name == "go_and_open":
        box = _choose(rng, _containers(s, "closed"))
        slots = {"box": box}
        ro.go(box)
        ro.do(OPEN_ACTION[s.node(box).articulation], box)
    else:
        box = _choose(rng, _containers(s, "open"))
        slots = {"box": box}
        ro.go(box)
        ro.do(CLOSE_ACTION[s.node(box).articulation], box)
    ro.do(Action.FINISH, ROBOT_ID)
    return Task(name, tuple(ro.steps), slots)


# ---------------------------------------------------------------------------
# instructions

_GRAMMAR = {
    "relocate": (
        "Please help me take the {obj} from the {src} to the {dst}.",
        "Could you move the {obj} from the {src} to the {dst}?",
        "Bring the {obj} on the {src} over to the {dst}.",
        "I want the {obj} that is on the {src} put on the {dst}.",
        "Put the {obj} from the {src} onto the {dst}, please.",
        "Take the {obj} off the {src} and place it on the {dst}.",
        "Carry the {obj} from the {src} to the {dst}.",
        "Can you relocate the {obj} from the {src} to the {dst}?",
        "Get the {obj} from the {src} and put it on the {dst}.",
    ),
    "fetch_from_container": (
        "Get the {obj} out of the {box} and put it on the {dst}.",
        "Please take the {obj} from the {box} to the {dst}.",
        "Could you fetch the {obj} in the {box} and leave it on the {dst}?",
        "I need the {obj} from the {box} on the {dst}.",
        "Retrieve the {obj} from the {box} and place it on the {dst}.",
        "Bring the {obj} stored in the {box} to the {dst}.",
        "Take the {obj} out of the {box}, then put it on the {dst}.",
        "Move the {obj} inside the {box} onto the {dst}, please.",
    ),
    "stow_into_container": (
        "Put the {obj} from the {src} into the {box}.",
        "Please store the {obj} on the {src} in the {box}.",
        "Could you put away the {obj} from the {src} in the {box}?",
        "Stow the {obj} that is on the {src} inside the {box}.",
        "Take the {obj} off the {src} and keep it in the {box}.",
        "I want the {obj} on the {src} moved into the {box}.",
        "Move the {obj} from the {src} into the {box}, please.",
        "Pack the {obj} from the {src} into the {box}.",
    ),
    "go_and_open": (
        "Open the {box}.",
        "Please go and open the {box}.",
        "Could you open the {box}?",
        "Go to the {box} and open it.",
        "I need the {box} opened.",
        "Can you open up the {box} for me?",
        "Head over to the {box} and open it, please.",
        "Make sure the {box} is open.",
    ),
    "go_and_close": (
        "Close the {box}.",
        "Please go and close the {box}.",
        "Could you close the {box}?",
        "Go to the {box} and close it.",
        "I need the {box} closed.",
        "Can you shut the {box} for me?",
        "Head over to the {box} and close it, please.",
        "Make sure the {box} is closed.",
    ),
}


def referent(s: SceneGraph, node_id: int) -> str:
    n = s.node(node_id)
    color = n.attributes.get("color")
    return f"{color} {n.category}" if color else n.category


def synthesize_instruction(task: Task, s: SceneGraph, rng: np.random.Generator, variant: int | None = None) -> str:
    """Render the task through its template grammar; objects are named, never numbered."""
    forms = _GRAMMAR[task.template]
    if variant is None:
        variant = int(rng.integers(len(forms)))
    return forms[variant].format(**{k: referent(s, v) for k, v in task.slots.items()})


def roll_trace(s0: SceneGraph, r0: RobotGraph, subtasks: Sequence[Subtask], instruction: str = "", task_id: int = 0) -> Trace:
    stages = []
    s, r = s0, r0
    for st in subtasks:
        stages.append((s, r))
        s, r = apply_subtask(s, r, st)
    if not subtasks or subtasks[-1].action is not Action.FINISH:
        raise PreconditionViolated(Action.FINISH, "task must end with finish")
    return Trace(task_id, instruction, tuple(subtasks), tuple(stages))


# ---------------------------------------------------------------------------
# template mix fitted to the target counts


def _template_counts(near_prob: float) -> np.ndarray:
    """Expected action counts per template (rows follow ACTIONS[:-1])."""
    m = 2.0 - near_prob
    half = 0.5
    return np.array(
        [
            # relocate, fetch, stow, open, close
            [m, m, m, 1, 1],
            [1, 1, 1, 0, 0],
            [1, 1, 1, 0, 0],
            [0, half, half, half, 0],
            [0, half, half, 0, half],
            [0, half, half, half, 0],
            [0, half, half, 0, half],
        ]
    )


def fit_template_weights(ratio_weight: float = 10.0) -> tuple[dict[str, float], float]:
    """Non-negative template weights matching the target per-task action rates.

    Fetch and stow have identical marginals, so their combined mass is split
    evenly. ``near_prob`` (chance the destination shares the source's room)
    is scanned on a grid; the move:pick ratio enters as an extra residual.
    """
    from scipy.optimize import nnls

    n_tasks = TARGET_COUNTS[Action.FINISH]
    target = np.array([TARGET_COUNTS[a] / n_tasks for a in ACTIONS[:-1]])
    ratio = TARGET_COUNTS[Action.MOVE] / TARGET_COUNTS[Action.PICK]
    best = None
    for q in np.round(np.linspace(0.0, 1.0, 101), 2):
        counts = _template_counts(q)
        merged = np.column_stack([counts[:, 0], counts[:, 1], counts[:, 3], counts[:, 4]])
        a = np.vstack([merged, 100.0 * np.ones(4)])
        b = np.concatenate([target, [100.0]])
        w, res = nnls(a, b)
        full = np.array([w[0], w[1] / 2, w[1] / 2, w[2], w[3]])
        c = counts @ full
        score = res**2 + ratio_weight * (c[0] / c[1] - ratio) ** 2
        if best is None or score < best[0]:
            best = (score, full / full.sum(), float(q))
    _, w, q = best
    return {name: float(round(x, 4)) for name, x in zip(TEMPLATES, w)}, q


# ---------------------------------------------------------------------------
# dataset


@dataclass
class DatasetStats:
    counts: dict[Action, int]
    n_tasks: int
    templates: dict[str, int]

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def move_pick_ratio(self) -> float:
        return self.counts[Action.MOVE] / max(1, self.counts[Action.PICK])

    def table(self) -> str:
        rows = [("Subtask Type", "Count")]
        rows += [(f"<{a.text}> - <object>", str(self.counts.get(a, 0))) for a in ACTIONS]
        rows.append(("Total", str(self.total)))
        width = max(len(r[0]) for r in rows)
        lines = [f"{a:<{width}}  {b:>7}" for a, b in rows]
        rule = "-" * len(lines[0])
        return "\n".join([rule, lines[0], rule, *lines[1:-1], rule, lines[-1], rule])


def dataset_stats(traces: Sequence[Trace], templates: Sequence[str] = ()) -> DatasetStats:
    counts = Counter(st.action for t in traces for st in t.subtasks)
    return DatasetStats({a: counts.get(a, 0) for a in ACTIONS}, len(traces), dict(Counter(templates)))


@dataclass
class GeneratedDataset:
    traces: list[Trace]
    templates: list[str]
    stats: DatasetStats
    config: dict

    def split(self, train_frac: float = 0.8) -> tuple[list[Trace], list[Trace]]:
        """Deterministic 80/20 split by task id."""
        order = np.random.default_rng([self.config["seed"], 0x5EED]).permutation(len(self.traces))
        cut = int(round(train_frac * len(self.traces)))
        train = sorted((self.traces[i] for i in order[:cut]), key=lambda t: t.task_id)
        evals = sorted((self.traces[i] for i in order[cut:]), key=lambda t: t.task_id)
        return train, evals

    def digest(self) -> str:
        return config_digest(self.config)


def config_digest(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode()).hexdigest()[:16]


def generate_task(cfg: SceneConfig, task_id: int, weights: dict[str, float] | None = None, near_prob: float = DEFAULT_NEAR_PROB, max_tries: int = 50) -> tuple[Trace, str]:
    """One task drawn from its own RNG stream, derived from ``(seed, task_id)``."""
    weights = weights or DEFAULT_TEMPLATE_WEIGHTS
    names = list(weights)
    p = np.array([weights[n] for n in names], dtype=float)
    p = p / p.sum()
    rng = np.random.default_rng([cfg.seed, task_id])
    s0 = r0 = None
    for _ in range(max_tries):
        if s0 is None:
            s0, r0 = sample_scene(cfg, rng)
        name = names[int(rng.choice(len(names), p=p))]
        try:
            task = sample_task(s0, r0, name, rng, near_prob=near_prob, max_items=cfg.max_items_per_holder)
        except SlotUnsatisfiable:
            if rng.random() < 0.2:
                s0 = None
            continue
        instruction = synthesize_instruction(task, s0, rng)
        return roll_trace(s0, r0, task.subtasks, instruction, task_id), name
    raise ConfigInfeasible(f"no template satisfiable for task {task_id} after {max_tries} tries")


def generate_dataset(
    cfg: SceneConfig,
    n_tasks: int,
    weights: dict[str, float] | None = None,
    near_prob: float = DEFAULT_NEAR_PROB,
    first_task_id: int = 0,
) -> GeneratedDataset:
    if n_tasks < 1:
        raise ConfigInfeasible("n_tasks must be >= 1")
    cfg.check()
    traces, names = [], []
    for tid in range(first_task_id, first_task_id + n_tasks):
        t, name = generate_task(cfg, tid, weights, near_prob)
        traces.append(t)
        names.append(name)
    config = {
        "scene": asdict(cfg),
        "n_tasks": n_tasks,
        "weights": weights or DEFAULT_TEMPLATE_WEIGHTS,
        "near_prob": near_prob,
        "first_task_id": first_task_id,
        "seed": cfg.seed,
    }
    return GeneratedDataset(traces, names, dataset_stats(traces, names), config)


def write_dataset(out_dir, data: GeneratedDataset, split: bool = True) -> dict[str, str]:
    """Write ``train.jsonl``/``eval.jsonl`` (or ``all.jsonl``), ``stats.txt`` and ``meta.json``."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    if split:
        train, evals = data.split()
        for name, part in (("train", train), ("eval", evals)):
            paths[name] = os.path.join(out_dir, f"{name}.jsonl")
            write_traces(paths[name], part)
    else:
        paths["all"] = os.path.join(out_dir, "all.jsonl")
        write_traces(paths["all"], data.traces)
    digest = data.digest()
    paths["stats"] = os.path.join(out_dir, "stats.txt")
    with open(paths["stats"], "w", encoding="utf-8") as fh:
        fh.write(f"# config digest {digest}, seed {data.config['seed']}, tasks {data.stats.n_tasks}\n")
        fh.write(data.stats.table() + "\n")
    paths["meta"] = os.path.join(out_dir, "meta.json")
    with open(paths["meta"], "w", encoding="utf-8") as fh:
        meta = {"config": data.config, "config_digest": digest, "templates": data.stats.templates,
                "counts": {a.value: c for a, c in data.stats.counts.items()}}
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths
