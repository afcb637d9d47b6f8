"""The planner network: graph attention extractor, parallel cross-attention
enhancer, and a transformer task decoder with decoupled action/object heads.

All modules work on padded batches; boolean masks mark real rows. The
unbatched helpers :meth:`GridNetwork.gat_extract`, :meth:`GridNetwork.enhance`
and :meth:`GridNetwork.decode` wrap the batched paths for single samples.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .features import Batch, StageFeatures, collate, edge_index, featurize
from .graphs import N_ACTIONS, Action, RobotGraph, SceneGraph, Subtask

CHECKPOINT_VERSION = 1


class ShapeMismatch(ValueError):
    pass


class TooManyRobotNodes(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 64
    n_heads: int = 4
    gat_layers: int = 2
    enhancer_layers: int = 3
    decoder_layers: int = 2
    max_robot_nodes: int = 16
    hidden: int = 128
    ffn_dim: int = 128
    dropout: float = 0.0
    use_gat: bool = True
    use_enhancer: bool = True

    def __post_init__(self):
        if self.dim % self.n_heads:
            raise ValueError(f"dim {self.dim} is not divisible by n_heads {self.n_heads}")
        for name in ("gat_layers", "enhancer_layers", "decoder_layers", "max_robot_nodes", "hidden", "ffn_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    @property
    def n_actions(self) -> int:
        return N_ACTIONS

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class ForwardOutput:
    action_logits: torch.Tensor
    object_logits: torch.Tensor
    scene_ids: tuple[int, ...] | None = None
    cache: dict = field(default_factory=dict)

    def action_probs(self) -> np.ndarray:
        return torch.softmax(self.action_logits.detach().double(), -1).numpy()

    def object_probs(self) -> np.ndarray:
        return torch.softmax(self.object_logits.detach().double(), -1).numpy()


class GATLayer(nn.Module):
    """Multi-head graph attention; heads are concatenated back to ``out_dim``."""

    def __init__(self, in_dim: int, out_dim: int, n_heads: int, activate: bool):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = out_dim // n_heads
        self.lin = nn.Linear(in_dim, out_dim, bias=False)
        self.att_src = nn.Parameter(torch.empty(n_heads, self.head_dim))
        self.att_dst = nn.Parameter(torch.empty(n_heads, self.head_dim))
        self.bias = nn.Parameter(torch.zeros(out_dim))
        self.activate = activate
        nn.init.xavier_uniform_(self.lin.weight)
        nn.init.xavier_uniform_(self.att_src)
        nn.init.xavier_uniform_(self.att_dst)

    def forward(self, x: torch.Tensor, src: torch.Tensor, dst: torch.Tensor) -> torch.Tensor:
        """``x`` is ``(nodes, in_dim)`` over a disjoint union of graphs; the
        edge list ``src -> dst`` already contains self-loops and both directions."""
        n = x.shape[0]
        z = self.lin(x).view(n, self.n_heads, self.head_dim)
        s_src = (z * self.att_src).sum(-1)
        s_dst = (z * self.att_dst).sum(-1)
        e = F.leaky_relu(s_src[src] + s_dst[dst], 0.2)
        # softmax over each node's incoming edges
        idx = dst[:, None].expand_as(e)
        peak = torch.full_like(s_src, float("-inf")).scatter_reduce(0, idx, e, "amax", include_self=True)
        w = torch.exp(e - peak[dst])
        denom = torch.zeros_like(s_src).index_add(0, dst, w)
        alpha = w / denom[dst]
        out = torch.zeros_like(z).index_add(0, dst, alpha[..., None] * z[src])
        out = out.reshape(n, -1) + self.bias
        return F.elu(out) if self.activate else out


class GAT(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        dims = [2 * cfg.dim] + [cfg.dim] * cfg.gat_layers
        self.layers = nn.ModuleList(
            GATLayer(dims[i], dims[i + 1], cfg.n_heads, activate=i < cfg.gat_layers - 1) for i in range(cfg.gat_layers)
        )

    def forward(self, x, src, dst):
        for layer in self.layers:
            x = layer(x, src, dst)
        return x


class MultiHeadAttention(nn.Module):
    def __init__(self, dim: int, n_heads: int, dropout: float = 0.0):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = dim // n_heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)
        self.dropout = dropout

    def forward(self, query, kv, key_mask):
        b, nq, d = query.shape
        nk = kv.shape[1]
        h, dh = self.n_heads, self.head_dim
        q = self.q(query).view(b, nq, h, dh).transpose(1, 2)
        k = self.k(kv).view(b, nk, h, dh).transpose(1, 2)
        v = self.v(kv).view(b, nk, h, dh).transpose(1, 2)
        att = F.scaled_dot_product_attention(
            q, k, v, attn_mask=key_mask[:, None, None, :], dropout_p=self.dropout if self.training else 0.0
        )
        return self.out(att.transpose(1, 2).reshape(b, nq, d))


class FeedForward(nn.Sequential):
    def __init__(self, dim: int, ffn_dim: int, dropout: float):
        super().__init__(nn.Linear(dim, ffn_dim), nn.GELU(), nn.Linear(ffn_dim, dim), nn.Dropout(dropout))


class EnhancerLayer(nn.Module):
    """Both directions read the previous layer's streams (parallel update)."""

    def __init__(self, dim: int, n_heads: int, dropout: float):
        super().__init__()
        self.norm_words = nn.LayerNorm(dim)
        self.norm_graph = nn.LayerNorm(dim)
        self.words_from_graph = MultiHeadAttention(dim, n_heads, dropout)
        self.graph_from_words = MultiHeadAttention(dim, n_heads, dropout)

    def forward(self, words, graph, word_mask, graph_mask):
        w, g = self.norm_words(words), self.norm_graph(graph)
        return (
            words + self.words_from_graph(w, g, graph_mask),
            graph + self.graph_from_words(g, w, word_mask),
        )


class EncoderLayer(nn.Module):
    def __init__(self, dim, n_heads, ffn_dim, dropout):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, n_heads, dropout)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = FeedForward(dim, ffn_dim, dropout)

    def forward(self, x, mask):
        h = self.norm1(x)
        x = x + self.attn(h, h, mask)
        return x + self.ffn(self.norm2(x))


class DecoderLayer(nn.Module):
    def __init__(self, dim, n_heads, ffn_dim, dropout):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.self_attn = MultiHeadAttention(dim, n_heads, dropout)
        self.norm2 = nn.LayerNorm(dim)
        self.cross_attn = MultiHeadAttention(dim, n_heads, dropout)
        self.norm3 = nn.LayerNorm(dim)
        self.ffn = FeedForward(dim, ffn_dim, dropout)

    def forward(self, x, x_mask, memory, memory_mask):
        h = self.norm1(x)
        x = x + self.self_attn(h, h, x_mask)
        x = x + self.cross_attn(self.norm2(x), memory, memory_mask)
        return x + self.ffn(self.norm3(x))


def sinusoidal_positions(n: int, dim: int, dtype=torch.float32) -> torch.Tensor:
    pos = torch.arange(n, dtype=torch.float64)[:, None]
    freq = torch.exp(torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim))
    pe = torch.zeros(n, dim, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(pos * freq)
    pe[:, 1::2] = torch.cos(pos * freq)[:, : dim // 2]
    return pe.to(dtype)


class GridNetwork(nn.Module):
    def __init__(self, cfg: ModelConfig | None = None):
        super().__init__()
        cfg = cfg or ModelConfig()
        self.cfg = cfg
        d = cfg.dim
        if cfg.use_gat:
            self.gat_robot = GAT(cfg)
            self.gat_scene = GAT(cfg)
        else:
            self.proj_robot = nn.Linear(2 * d, d)
            self.proj_scene = nn.Linear(2 * d, d)
        self.enhancer = nn.ModuleList(
            EnhancerLayer(d, cfg.n_heads, cfg.dropout) for _ in range(cfg.enhancer_layers if cfg.use_enhancer else 0)
        )
        self.encoder = nn.ModuleList(EncoderLayer(d, cfg.n_heads, cfg.ffn_dim, cfg.dropout) for _ in range(cfg.decoder_layers))
        self.encoder_norm = nn.LayerNorm(d)
        self.decoder = nn.ModuleList(DecoderLayer(d, cfg.n_heads, cfg.ffn_dim, cfg.dropout) for _ in range(cfg.decoder_layers))
        self.decoder_norm = nn.LayerNorm(d)
        self.action_head = nn.Sequential(nn.Linear(cfg.max_robot_nodes * d, cfg.hidden), nn.GELU(), nn.Linear(cfg.hidden, N_ACTIONS))
        self.object_head = nn.Sequential(nn.Linear(d, cfg.hidden), nn.GELU(), nn.Linear(cfg.hidden, 1))

    # -- batched stages -----------------------------------------------------

    def _extract(self, tokens, instruction, edges, which: str):
        b, n, _ = tokens.shape
        x = torch.cat([tokens, instruction[:, None, :].expand(-1, n, -1)], dim=-1)
        if self.cfg.use_gat:
            return getattr(self, f"gat_{which}")(x.reshape(b * n, -1), edges[0], edges[1]).view(b, n, -1)
        return getattr(self, f"proj_{which}")(x)

    def _enhance(self, words, graph, word_mask, graph_mask):
        for layer in self.enhancer:
            words, graph = layer(words, graph, word_mask, graph_mask)
        return words, graph

    def _decode(self, fusion, word_mask, q_robot, robot_mask, q_scene, scene_mask):
        b, k, d = q_robot.shape
        if k > self.cfg.max_robot_nodes:
            raise TooManyRobotNodes(f"{k} robot nodes > max_robot_nodes={self.cfg.max_robot_nodes}")
        memory = fusion + sinusoidal_positions(fusion.shape[1], d, fusion.dtype)
        for layer in self.encoder:
            memory = layer(memory, word_mask)
        memory = self.encoder_norm(memory)
        x = torch.cat([q_robot, q_scene], dim=1)
        x_mask = torch.cat([robot_mask, scene_mask], dim=1)
        for layer in self.decoder:
            x = layer(x, x_mask, memory, word_mask)
        x = self.decoder_norm(x)
        f_robot, f_scene = x[:, :k], x[:, k:]
        f_robot = f_robot * robot_mask[..., None].to(f_robot.dtype)
        f_robot = F.pad(f_robot, (0, 0, 0, self.cfg.max_robot_nodes - k))
        action_logits = self.action_head(f_robot.reshape(b, -1))
        object_logits = self.object_head(f_scene).squeeze(-1).masked_fill(~scene_mask, float("-inf"))
        return action_logits, object_logits

    def forward(self, batch: Batch) -> tuple[torch.Tensor, torch.Tensor]:
        y_robot = self._extract(batch.robot, batch.instruction, batch.robot_edges, "robot")
        y_scene = self._extract(batch.scene, batch.instruction, batch.scene_edges, "scene")
        k = y_robot.shape[1]
        graph = torch.cat([y_robot, y_scene], dim=1)
        graph_mask = torch.cat([batch.robot_mask, batch.scene_mask], dim=1)
        fusion, graph = self._enhance(batch.words, graph, batch.word_mask, graph_mask)
        return self._decode(fusion, batch.word_mask, graph[:, :k], batch.robot_mask, graph[:, k:], batch.scene_mask)

    # -- single-sample views -------------------------------------------------

    def _param_dtype(self):
        return next(self.parameters()).dtype

    def _t(self, a):
        return torch.as_tensor(np.asarray(a), dtype=self._param_dtype())

    def gat_extract(self, node_tokens, instruction, edges, graph: str = "scene") -> torch.Tensor:
        """``M x d`` structural features for one graph (``graph`` picks the module)."""
        x = self._t(node_tokens)
        y = self._t(instruction)
        if x.ndim != 2 or x.shape[1] != self.cfg.dim or y.shape != (self.cfg.dim,):
            raise ShapeMismatch(f"node tokens {tuple(x.shape)} / instruction {tuple(y.shape)} vs dim {self.cfg.dim}")
        m = x.shape[0]
        for s, d in edges:
            if not (0 <= s < m and 0 <= d < m):
                raise ShapeMismatch(f"edge ({s}, {d}) outside {m} rows")
        ei = torch.as_tensor(edge_index(m, edges))
        return self._extract(x[None], y[None], ei, graph)[0]

    def enhance(self, words, y_robot, y_scene):
        w, r, s = self._t(words), self._t(y_robot), self._t(y_scene)
        if not (w.shape[-1] == r.shape[-1] == s.shape[-1] == self.cfg.dim):
            raise ShapeMismatch("inconsistent feature width")
        k = r.shape[0]
        graph = torch.cat([r, s])[None]
        ones = lambda n: torch.ones(1, n, dtype=torch.bool)
        fusion, graph = self._enhance(w[None], graph, ones(w.shape[0]), ones(graph.shape[1]))
        return fusion[0], graph[0, :k], graph[0, k:]

    def decode(self, fusion, q_robot, q_scene, scene_ids=None) -> ForwardOutput:
        f, r, s = self._t(fusion), self._t(q_robot), self._t(q_scene)
        ones = lambda n: torch.ones(1, n, dtype=torch.bool)
        act, obj = self._decode(f[None], ones(f.shape[0]), r[None], ones(r.shape[0]), s[None], ones(s.shape[0]))
        return ForwardOutput(act[0], obj[0], scene_ids)

    def forward_features(self, feats: StageFeatures) -> ForwardOutput:
        batch = collate([feats], dtype=self._param_dtype())
        act, obj = self(batch)
        return ForwardOutput(act[0], obj[0], feats.scene_ids)


def forward(instruction: str, robot: RobotGraph, scene: SceneGraph, model: GridNetwork, encoder) -> ForwardOutput:
    """Encode, extract, enhance and decode one planning query."""
    if len(scene) < 1:
        raise ShapeMismatch("scene graph needs at least one node")
    return model.forward_features(featurize(instruction, robot, scene, encoder))


def predict(out: ForwardOutput) -> Subtask:
    """Independent argmax of both heads; ties go to the lowest index."""
    act = np.asarray(out.action_logits.detach().cpu().double())
    obj = np.asarray(out.object_logits.detach().cpu().double())
    if not (np.isfinite(act).all() and np.isfinite(obj).all()):
        raise ValueError("non-finite logits")
    row = int(np.argmax(obj))
    object_id = out.scene_ids[row] if out.scene_ids is not None else row
    return Subtask(Action.from_index(int(np.argmax(act))), object_id)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, model: GridNetwork, encoder_digest: str = "", extra: dict | None = None, meta: dict | None = None) -> None:
    """Write parameters (and optional extra arrays) to a named-array archive.

    The archive carries a JSON header under ``__header__`` with the format
    version, model config and encoder digest.
    """
    header = {
        "format": "gridplanner-checkpoint",
        "version": CHECKPOINT_VERSION,
        "model_config": asdict(model.cfg),
        "encoder_digest": encoder_digest,
        "meta": meta or {},
    }
    arrays = {f"param/{k}": v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    for k, v in (extra or {}).items():
        arrays[f"extra/{k}"] = np.asarray(v)
    arrays["__header__"] = np.array(json.dumps(header, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path, dtype=torch.float32) -> tuple[GridNetwork, dict, dict]:
    """Return ``(model, header, extra_arrays)``."""
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["__header__"]))
        if header.get("format") != "gridplanner-checkpoint":
            raise ValueError(f"{path} is not a planner checkpoint")
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        model = GridNetwork(ModelConfig(**header["model_config"])).to(dtype)
        state = {k[len("param/"):]: torch.as_tensor(z[k]) for k in z.files if k.startswith("param/")}
        model.load_state_dict(state)
        extra = {k[len("extra/"):]: z[k] for k in z.files if k.startswith("extra/")}
    model.eval()
    return model, header, extra
