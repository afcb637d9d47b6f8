from contextlib import contextmanager
from unittest import mock

import numpy as np
import torch
from torch.nn import functional as F

from gridplanner.graphs import Edge, Node, RobotGraph, SceneGraph, Subtask


def relabel(s: SceneGraph, r: RobotGraph, mapping: dict[int, int]):
    """Rename scene ids through ``mapping`` and keep the robot graph's refs in sync."""
    nodes = tuple(Node(mapping[n.id], n.category, dict(n.attributes), n.position, n.ref) for n in s.nodes)
    edges = tuple(Edge(mapping[e.src], mapping[e.dst], e.relation) for e in s.edges)
    rnodes = []
    for n in r.nodes:
        attrs = dict(n.attributes)
        if "target" in attrs:
            attrs["target"] = str(mapping[int(attrs["target"])])
        rnodes.append(Node(n.id, n.category, attrs, n.position, None if n.ref is None else mapping[n.ref]))
    return SceneGraph(nodes, edges), RobotGraph(tuple(rnodes), r.edges)


def random_relabeling(s: SceneGraph, rng: np.random.Generator) -> dict[int, int]:
    """Shuffle every id except the floor root, which must stay smallest."""
    ids = [n.id for n in s.nodes if n.id != s.root]
    shuffled = rng.permutation(ids)
    mapping = {s.root: s.root}
    mapping.update({a: int(b) for a, b in zip(ids, shuffled)})
    return mapping


def remap_subtask(st: Subtask, mapping) -> Subtask:
    return Subtask(st.action, mapping.get(st.object_id, st.object_id))


@contextmanager
def leaky_inputs():
    """Record every tensor passed through ``F.leaky_relu`` while active."""
    seen = []
    orig = F.leaky_relu

    def wrapped(x, *args, **kwargs):
        seen.append(x.detach().clone())
        return orig(x, *args, **kwargs)

    with mock.patch.object(F, "leaky_relu", wrapped):
        yield seen


def _crosses_kink(a, b) -> bool:
    return any(bool(((x > 0) != (y > 0)).any()) for x, y in zip(a, b))


def finite_difference_check(model, loss_fn, grads, rng, per_tensor=2, h=1e-5, floor=1e-4):
    """Compare ``grads`` with central differences of ``loss_fn`` on sampled coordinates.

    A coordinate is skipped when the +-h probe moves a LeakyReLU input or an
    L1-penalized weight across zero, since the loss has no derivative there.
    Returns ``(worst relative error, checked, skipped)``.
    """
    worst, checked, skipped = 0.0, 0, 0
    for name, p in model.named_parameters():
        for f in rng.choice(p.numel(), size=min(per_tensor, p.numel()), replace=False):
            idx = np.unravel_index(int(f), p.shape)
            with torch.no_grad():
                orig = p[idx].item()
                p[idx] = orig + h
                with leaky_inputs() as up_in:
                    up = loss_fn()
                p[idx] = orig - h
                with leaky_inputs() as down_in:
                    down = loss_fn()
                p[idx] = orig
            if _crosses_kink(up_in, down_in) or (p.ndim >= 2 and abs(orig) < h):
                skipped += 1
                continue
            num = (up - down) / (2 * h)
            ana = grads[name][idx].item()
            worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), floor))
            checked += 1
    return worst, checked, skipped
