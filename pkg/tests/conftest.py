import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from gridplanner.dataset import SceneConfig, generate_dataset  # noqa: E402
from gridplanner.encoders import EncoderConfig, ToyEncoder  # noqa: E402
from gridplanner.graphs import Edge, Node, SceneGraph, initial_robot_graph  # noqa: E402

torch.set_num_threads(1)


def pytest_terminal_summary(terminalreporter):
    import acceptance_log

    if acceptance_log.LINES:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_log.LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_data():
    return generate_dataset(SceneConfig(objects_per_scene=40, seed=3), 12)


@pytest.fixture(scope="session")
def toy8():
    return ToyEncoder(EncoderConfig(dim=8))


@pytest.fixture(scope="session")
def toy16():
    return ToyEncoder(EncoderConfig(dim=16))


def item(i, cat, color=None, **extra):
    attrs = {"pickable": "true"}
    if color:
        attrs["color"] = color
    attrs.update(extra)
    return Node(i, cat, attrs)


@pytest.fixture
def kitchen():
    """floor 0 / kitchen 1 / table 2 (surface) / teacup 3 on table / fridge 4 (closed) / apple 5 in fridge."""
    nodes = (
        Node(0, "floor", {}),
        Node(1, "kitchen", {}),
        Node(2, "table", {"color": "brown", "surface": "true"}),
        item(3, "teacup", "black"),
        Node(4, "fridge", {"color": "white", "articulation": "revolute", "state": "closed", "surface": "true"}),
        item(5, "apple", "green"),
    )
    edges = (Edge(1, 0, "on"), Edge(2, 1, "in"), Edge(3, 2, "on"), Edge(4, 1, "in"), Edge(5, 4, "in"))
    return SceneGraph(nodes, edges), initial_robot_graph()
