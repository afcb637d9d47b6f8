"""Turn (instruction, robot graph, scene graph) into padded tensors."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .encoders import encode_nodes
from .graphs import RobotGraph, SceneGraph, Subtask


@dataclass(frozen=True)
class StageFeatures:
    words: np.ndarray  # m x d instruction word tokens
    instruction: np.ndarray  # d instruction sentence embedding
    robot: np.ndarray  # K x d robot node tokens
    robot_edges: tuple[tuple[int, int], ...]  # row indices
    scene: np.ndarray  # M x d scene node tokens
    scene_edges: tuple[tuple[int, int], ...]
    scene_ids: tuple[int, ...]
    action: int = -1
    object_row: int = -1


def _edge_rows(g) -> tuple[tuple[int, int], ...]:
    row = {n.id: i for i, n in enumerate(g.nodes)}
    return tuple((row[e.src], row[e.dst]) for e in g.edges)


def featurize(instruction: str, robot: RobotGraph, scene: SceneGraph, encoder, target: Subtask | None = None) -> StageFeatures:
    bundle = encoder.encode_sentence(instruction)
    ids = tuple(n.id for n in scene.nodes)
    action = object_row = -1
    if target is not None:
        action = target.action.index
        object_row = ids.index(target.object_id)
    return StageFeatures(
        words=np.asarray(bundle.word_tokens),
        instruction=np.asarray(bundle.sentence_embedding),
        robot=encode_nodes(robot, encoder),
        robot_edges=_edge_rows(robot),
        scene=encode_nodes(scene, encoder),
        scene_edges=_edge_rows(scene),
        scene_ids=ids,
        action=action,
        object_row=object_row,
    )


def edge_index(n: int, edges, offset: int = 0) -> np.ndarray:
    """``2 x E`` message list (src row, dst row): self-loops plus both directions
    of every edge, shifted by ``offset``."""
    pairs = {(i, i) for i in range(n)}
    for s, d in edges:
        pairs.add((s, d))
        pairs.add((d, s))
    arr = np.array(sorted(pairs), dtype=np.int64).T
    return arr + offset


@dataclass
class Batch:
    words: torch.Tensor
    word_mask: torch.Tensor
    instruction: torch.Tensor
    robot: torch.Tensor
    robot_mask: torch.Tensor
    robot_edges: torch.Tensor
    scene: torch.Tensor
    scene_mask: torch.Tensor
    scene_edges: torch.Tensor
    action: torch.Tensor
    object_row: torch.Tensor

    def __len__(self) -> int:
        return self.words.shape[0]


def _pad(arrs: Sequence[np.ndarray], n: int, dtype) -> tuple[torch.Tensor, torch.Tensor]:
    d = arrs[0].shape[1]
    out = np.zeros((len(arrs), n, d))
    mask = np.zeros((len(arrs), n), dtype=bool)
    for i, a in enumerate(arrs):
        out[i, : len(a)] = a
        mask[i, : len(a)] = True
    return torch.as_tensor(out, dtype=dtype), torch.as_tensor(mask)


def collate(items: Sequence[StageFeatures], dtype=torch.float32) -> Batch:
    m = max(len(f.words) for f in items)
    k = max(len(f.robot) for f in items)
    n = max(len(f.scene) for f in items)
    words, word_mask = _pad([f.words for f in items], m, dtype)
    robot, robot_mask = _pad([f.robot for f in items], k, dtype)
    scene, scene_mask = _pad([f.scene for f in items], n, dtype)
    # padded rows only get their self-loop
    robot_edges = np.concatenate([edge_index(k, f.robot_edges, i * k) for i, f in enumerate(items)], axis=1)
    scene_edges = np.concatenate([edge_index(n, f.scene_edges, i * n) for i, f in enumerate(items)], axis=1)
    return Batch(
        words=words,
        word_mask=word_mask,
        instruction=torch.as_tensor(np.stack([f.instruction for f in items]), dtype=dtype),
        robot=robot,
        robot_mask=robot_mask,
        robot_edges=torch.as_tensor(robot_edges),
        scene=scene,
        scene_mask=scene_mask,
        scene_edges=torch.as_tensor(scene_edges),
        action=torch.as_tensor([f.action for f in items], dtype=torch.long),
        object_row=torch.as_tensor([f.object_row for f in items], dtype=torch.long),
    )
