"""scikit-learn style wrapper around the network and its training loop."""
from __future__ import annotations

from dataclasses import asdict

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_positive, check_stages
from .encoders import EncoderConfig, make_encoder
from .features import collate, featurize
from .graphs import Action, Subtask
from .network import ForwardOutput, ModelConfig, load_checkpoint, predict, save_checkpoint
from .training import LossConfig, TrainConfig, train

_DTYPES = {"float32": torch.float32, "float64": torch.float64}


class GridPlanner(BaseEstimator):
    """Predicts the next ``<action, object>`` subtask for an instruction and a
    pair of robot/scene graphs.

    ``fit`` accepts traces (targets are read from them) or
    ``(instruction, robot, scene)`` triples with a list of :class:`Subtask`
    targets. ``predict`` returns one :class:`Subtask` per stage.
    """

    def __init__(
        self,
        dim=64,
        n_heads=4,
        gat_layers=2,
        enhancer_layers=3,
        decoder_layers=2,
        max_robot_nodes=16,
        hidden=128,
        ffn_dim=128,
        dropout=0.0,
        use_gat=True,
        use_enhancer=True,
        lr=1e-4,
        iterations=500,
        batch_size=240,
        alpha=5.0,
        beta=25.0,
        gamma=0.2,
        delta=0.8,
        seed=0,
        encoder="toy",
        dtype="float32",
        predict_batch_size=64,
    ):
        self.dim = dim
        self.n_heads = n_heads
        self.gat_layers = gat_layers
        self.enhancer_layers = enhancer_layers
        self.decoder_layers = decoder_layers
        self.max_robot_nodes = max_robot_nodes
        self.hidden = hidden
        self.ffn_dim = ffn_dim
        self.dropout = dropout
        self.use_gat = use_gat
        self.use_enhancer = use_enhancer
        self.lr = lr
        self.iterations = iterations
        self.batch_size = batch_size
        self.alpha = alpha
        self.beta = beta
        self.gamma = gamma
        self.delta = delta
        self.seed = seed
        self.encoder = encoder
        self.dtype = dtype
        self.predict_batch_size = predict_batch_size

    # -- config views ----------------------------------------------------------

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            dim=self.dim,
            n_heads=self.n_heads,
            gat_layers=self.gat_layers,
            enhancer_layers=self.enhancer_layers,
            decoder_layers=self.decoder_layers,
            max_robot_nodes=self.max_robot_nodes,
            hidden=self.hidden,
            ffn_dim=self.ffn_dim,
            dropout=self.dropout,
            use_gat=self.use_gat,
            use_enhancer=self.use_enhancer,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(lr=self.lr, iterations=self.iterations, batch_size=self.batch_size, seed=self.seed)

    def loss_config(self) -> LossConfig:
        return LossConfig(self.alpha, self.beta, self.gamma, self.delta)

    def _encoder_config(self) -> EncoderConfig:
        if isinstance(self.encoder, EncoderConfig):
            return self.encoder
        return EncoderConfig(dim=self.dim, backend=self.encoder)

    def _torch_dtype(self):
        if self.dtype not in _DTYPES:
            raise ValueError(f"dtype must be one of {sorted(_DTYPES)}, got {self.dtype!r}")
        return _DTYPES[self.dtype]

    # -- estimator API -----------------------------------------------------------

    def fit(self, X, y=None, checkpoint=None, resume=False, metrics_csv=None):
        stages, targets = check_stages(X, y)
        if targets is None:
            raise ValueError("targets are required: pass traces or y")
        for name in ("iterations", "batch_size"):
            check_positive(name, getattr(self, name), integer=True)
        enc_cfg = self._encoder_config()
        if enc_cfg.dim != self.dim:
            raise ValueError(f"encoder dim {enc_cfg.dim} != model dim {self.dim}")
        self.encoder_ = make_encoder(enc_cfg)
        feats = [featurize(i, r, s, self.encoder_, t) for (i, r, s), t in zip(stages, targets)]
        result = train(
            feats,
            self.model_config(),
            self.train_config(),
            self.loss_config(),
            self.encoder_,
            checkpoint=checkpoint,
            resume=resume,
            metrics_csv=metrics_csv,
            dtype=self._torch_dtype(),
        )
        self.model_ = result.model
        self.history_ = result.history
        self.n_iter_ = result.iterations
        return self

    def _outputs(self, X) -> list[ForwardOutput]:
        check_is_fitted(self, "model_")
        stages, _ = check_stages(X)
        feats = [featurize(i, r, s, self.encoder_) for i, r, s in stages]
        dtype = next(self.model_.parameters()).dtype
        outs = []
        self.model_.eval()
        with torch.no_grad():
            for k in range(0, len(feats), self.predict_batch_size):
                chunk = feats[k : k + self.predict_batch_size]
                act, obj = self.model_(collate(chunk, dtype=dtype))
                for j, f in enumerate(chunk):
                    outs.append(ForwardOutput(act[j], obj[j, : len(f.scene_ids)], f.scene_ids))
        return outs

    def predict(self, X) -> list[Subtask]:
        return [predict(o) for o in self._outputs(X)]

    def decision_function(self, X) -> list[tuple[np.ndarray, np.ndarray]]:
        """Per stage, ``(action_logits, object_logits)`` as float64 arrays."""
        return [(o.action_logits.double().numpy(), o.object_logits.double().numpy()) for o in self._outputs(X)]

    def predict_proba(self, X) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(o.action_probs(), o.object_probs()) for o in self._outputs(X)]

    def score(self, X, y=None) -> float:
        """Subtask accuracy: both action and object right."""
        stages, targets = check_stages(X, y)
        if targets is None:
            raise ValueError("targets are required: pass traces or y")
        preds = self.predict([(i, r, s) for i, r, s in stages])
        return float(np.mean([p == t for p, t in zip(preds, targets)]))

    def plan(self, instruction, robot, scene) -> Subtask:
        """Single-stage prediction, so the estimator can be used as a planner."""
        return self.predict([(instruction, robot, scene)])[0]

    # -- persistence ---------------------------------------------------------------

    def save(self, path) -> None:
        check_is_fitted(self, "model_")
        save_checkpoint(
            path,
            self.model_,
            self.encoder_.config.digest(),
            meta={"estimator_params": _jsonable(self.get_params()), "encoder_config": asdict(self.encoder_.config), "iteration": self.n_iter_},
        )

    @classmethod
    def load(cls, path) -> "GridPlanner":
        model, header, _ = load_checkpoint(path)
        meta = header.get("meta", {})
        params = meta.get("estimator_params")
        if params is None:
            # plain training checkpoint: rebuild from the stored model config
            cfg = header["model_config"]
            params = {k: cfg[k] for k in cfg if k in cls._get_param_names()}
        est = cls(**{k: v for k, v in params.items() if k != "encoder"})
        enc_cfg = EncoderConfig(**meta["encoder_config"]) if "encoder_config" in meta else EncoderConfig(dim=model.cfg.dim)
        if header.get("encoder_digest") and header["encoder_digest"] != enc_cfg.digest():
            raise ValueError("checkpoint was trained with a different encoder configuration")
        est.encoder = enc_cfg.backend
        est.encoder_ = make_encoder(enc_cfg)
        est.model_ = model.to(est._torch_dtype())
        est.n_iter_ = int(meta.get("iteration", 0))
        est.history_ = []
        return est


def _jsonable(params: dict) -> dict:
    out = {}
    for k, v in params.items():
        out[k] = v if isinstance(v, (int, float, str, bool)) or v is None else str(v)
    return out


__all__ = ["Action", "GridPlanner"]
