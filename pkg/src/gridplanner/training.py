"""Weighted cross-entropy + L1/L2 loss, the one-cycle schedule and the
training loop."""
from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np
import torch
from torch.nn import functional as F

from .features import StageFeatures, collate, featurize
from .graphs import Trace
from .network import GridNetwork, ModelConfig, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

METRIC_FIELDS = ("iteration", "lr", "loss", "loss_act", "loss_obj", "batch_sub_acc")


class EmptyDataset(ValueError):
    pass


class NonFiniteLoss(FloatingPointError):
    pass


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 5.0
    beta: float = 25.0
    gamma: float = 0.2
    delta: float = 0.8

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not v > 0:
                raise ValueError(f"{k} must be > 0, got {v}")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    div_factor: float = 10.0
    final_div_factor: float = 1e-4
    warmup_frac: float = 0.3
    iterations: int = 500
    batch_size: int = 240
    seed: int = 0
    log_every: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 < self.warmup_frac < 1.0:
            raise ValueError("warmup_frac must be in (0, 1)")


def regularized(model: torch.nn.Module):
    """Trainable weight matrices; biases, norm gains and attention vectors are excluded."""
    return [(n, p) for n, p in model.named_parameters() if p.requires_grad and p.ndim >= 2]


def loss_terms(action_logits, object_logits, action, object_row, model, cfg: LossConfig) -> dict:
    """Per-batch mean cross-entropy terms plus the regularizer over weight matrices.

    Returns a dict with ``loss``, ``loss_act``, ``loss_obj`` and ``reg`` tensors.
    """
    n_obj = object_logits.shape[-1]
    if (object_row < 0).any() or (object_row >= n_obj).any():
        raise IndexError(f"object target outside [0, {n_obj})")
    loss_act = F.cross_entropy(action_logits, action)
    loss_obj = F.cross_entropy(object_logits, object_row)
    weights = [p for _, p in regularized(model)] if model is not None else []
    if weights:
        l1 = sum(p.abs().sum() for p in weights)
        l2 = sum((p * p).sum() for p in weights)
        reg = cfg.gamma * l1 + 0.5 * cfg.delta * l2
    else:
        reg = action_logits.new_zeros(())
    data = cfg.alpha * loss_act + cfg.beta * loss_obj
    return {"loss": data + reg, "data": data, "loss_act": loss_act, "loss_obj": loss_obj, "reg": reg}


def grid_loss(out, gt, model, cfg: LossConfig | None = None) -> torch.Tensor:
    """Total loss for one :class:`ForwardOutput` against a ground-truth subtask."""
    cfg = cfg or LossConfig()
    ids = out.scene_ids
    row = ids.index(gt.object_id) if ids is not None else gt.object_id
    if row >= out.object_logits.shape[-1]:
        raise IndexError(f"object {gt.object_id} outside {out.object_logits.shape[-1]} scene nodes")
    return loss_terms(
        out.action_logits[None], out.object_logits[None],
        torch.tensor([gt.action.index]), torch.tensor([row]), model, cfg,
    )["loss"]


def loss_and_grad(out, gt, model, cfg: LossConfig | None = None) -> tuple[float, dict[str, torch.Tensor]]:
    model.zero_grad()
    loss = grid_loss(out, gt, model, cfg)
    loss.backward()
    grads = {n: p.grad.detach().clone() for n, p in model.named_parameters() if p.grad is not None}
    return loss.item(), grads


def one_cycle_lr(step: int, total: int, peak: float = 1e-4, div: float = 10.0, final_div: float = 1e-4, warmup_frac: float = 0.3) -> float:
    """Cosine one-cycle schedule.

    Rises from ``peak / div`` to ``peak`` over the first ``warmup_frac`` of the
    steps, then anneals to ``peak * final_div`` at ``step == total``.
    """
    if not 0 <= step <= total:
        raise ValueError(f"step {step} outside [0, {total}]")
    start, end = peak / div, peak * final_div
    warm = warmup_frac * total
    if step <= warm:
        if warm == 0:
            return peak
        frac = step / warm
        return start + (peak - start) * (1 - math.cos(math.pi * frac)) / 2
    frac = (step - warm) / (total - warm)
    return peak + (end - peak) * (1 - math.cos(math.pi * frac)) / 2


def stage_features(traces: Sequence[Trace], encoder) -> list[StageFeatures]:
    """One training example per stage."""
    out = []
    for t in traces:
        for (s, r), st in zip(t.stages, t.subtasks):
            out.append(featurize(t.instruction, r, s, encoder, target=st))
    return out


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def batch_indices(n: int, batch_size: int, seed: int, iteration: int) -> np.ndarray:
    """Indices for ``iteration`` (0-based) under shuffled without-replacement epochs."""
    start = iteration * batch_size
    out = []
    while len(out) < batch_size:
        epoch, offset = divmod(start + len(out), n)
        order = epoch_order(n, seed, epoch)
        take = min(batch_size - len(out), n - offset)
        out.extend(order[offset: offset + take])
    return np.asarray(out)


def _optimizer(model, loss_cfg: LossConfig, lr: float):
    decay = [p for _, p in regularized(model)]
    ids = {id(p) for p in decay}
    rest = [p for p in model.parameters() if id(p) not in ids]
    # the (delta/2)*w^2 term becomes decoupled weight decay
    return torch.optim.AdamW(
        [{"params": decay, "weight_decay": loss_cfg.delta}, {"params": rest, "weight_decay": 0.0}], lr=lr
    )


def _optimizer_arrays(opt) -> dict:
    arrays = {}
    for i, p in enumerate(opt.param_groups[0]["params"] + opt.param_groups[1]["params"]):
        st = opt.state.get(p)
        if st:
            arrays[f"opt/{i}/step"] = np.asarray(float(st["step"]))
            arrays[f"opt/{i}/exp_avg"] = st["exp_avg"].detach().cpu().numpy()
            arrays[f"opt/{i}/exp_avg_sq"] = st["exp_avg_sq"].detach().cpu().numpy()
    return arrays


def _restore_optimizer(opt, extra: dict, dtype) -> None:
    params = opt.param_groups[0]["params"] + opt.param_groups[1]["params"]
    for i, p in enumerate(params):
        key = f"opt/{i}/step"
        if key in extra:
            opt.state[p] = {
                "step": torch.tensor(float(extra[key])),
                "exp_avg": torch.as_tensor(extra[f"opt/{i}/exp_avg"], dtype=dtype).clone(),
                "exp_avg_sq": torch.as_tensor(extra[f"opt/{i}/exp_avg_sq"], dtype=dtype).clone(),
            }


@dataclass
class TrainResult:
    model: GridNetwork
    history: list[dict]
    iterations: int


def train(
    dataset: Sequence[Trace] | Sequence[StageFeatures],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    loss_cfg: LossConfig,
    encoder,
    checkpoint: str | os.PathLike | None = None,
    resume: bool = False,
    metrics_csv: str | os.PathLike | None = None,
    dtype=torch.float32,
    stop_after: int | None = None,
    callback: Callable[[dict], None] | None = None,
    run_meta: dict | None = None,
) -> TrainResult:
    """Train a fresh network (or resume one from ``checkpoint``).

    Samples are individual stages. Batches are drawn from seeded, shuffled,
    without-replacement epochs, so a resumed run sees exactly the batches the
    uninterrupted run would have. ``stop_after`` ends the run early at that
    iteration count (used to simulate interruption). ``run_meta`` is stored
    in every checkpoint header.
    """
    if len(dataset) == 0:
        raise EmptyDataset("training set is empty")
    feats = list(dataset) if isinstance(dataset[0], StageFeatures) else stage_features(dataset, encoder)
    if not feats:
        raise EmptyDataset("training set has no stages")

    torch.manual_seed(train_cfg.seed)
    model = GridNetwork(model_cfg).to(dtype)
    opt = _optimizer(model, loss_cfg, train_cfg.lr)
    history: list[dict] = []
    start = 0
    if resume and checkpoint is not None and os.path.exists(checkpoint):
        loaded, header, extra = load_checkpoint(checkpoint, dtype=dtype)
        model.load_state_dict(loaded.state_dict())
        _restore_optimizer(opt, extra, dtype)
        start = int(header["meta"]["iteration"])
        if "torch_rng" in extra:
            torch.set_rng_state(torch.as_tensor(extra["torch_rng"], dtype=torch.uint8))
        if metrics_csv is not None and os.path.exists(metrics_csv):
            with open(metrics_csv, newline="") as fh:
                history = [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)][:start]
        log.info("resumed from %s at iteration %d", checkpoint, start)

    weights = [p for _, p in regularized(model)]
    end = train_cfg.iterations if stop_after is None else min(stop_after, train_cfg.iterations)
    model.train()
    for it in range(start, end):
        lr = one_cycle_lr(it, train_cfg.iterations, train_cfg.lr, train_cfg.div_factor, train_cfg.final_div_factor, train_cfg.warmup_frac)
        for g in opt.param_groups:
            g["lr"] = lr
        idx = batch_indices(len(feats), train_cfg.batch_size, train_cfg.seed, it)
        batch = collate([feats[i] for i in idx], dtype=dtype)
        act, obj = model(batch)
        terms = loss_terms(act, obj, batch.action, batch.object_row, None, loss_cfg)
        data_loss = terms["data"]
        if not torch.isfinite(data_loss):
            raise NonFiniteLoss(f"loss became {data_loss.item()} at iteration {it}")
        opt.zero_grad()
        data_loss.backward()
        with torch.no_grad():
            for p in weights:
                # L1 subgradient, taken as 0 at w == 0
                p.grad.add_(torch.sign(p), alpha=loss_cfg.gamma)
            l1 = sum(p.abs().sum() for p in weights).item()
            l2 = sum((p * p).sum() for p in weights).item()
            hit = (act.argmax(-1) == batch.action) & (obj.argmax(-1) == batch.object_row)
        opt.step()
        row = {
            "iteration": it + 1,
            "lr": lr,
            "loss": data_loss.item() + loss_cfg.gamma * l1 + 0.5 * loss_cfg.delta * l2,
            "loss_act": terms["loss_act"].item(),
            "loss_obj": terms["loss_obj"].item(),
            "batch_sub_acc": float(hit.double().mean()),
        }
        history.append(row)
        if callback is not None:
            callback(row)
        if train_cfg.log_every and (it + 1) % train_cfg.log_every == 0:
            log.info("iter %d lr %.3g loss %.4f act %.4f obj %.4f acc %.3f", it + 1, lr, row["loss"], row["loss_act"], row["loss_obj"], row["batch_sub_acc"])
        if checkpoint is not None and train_cfg.checkpoint_every and (it + 1) % train_cfg.checkpoint_every == 0:
            _save(checkpoint, model, opt, it + 1, encoder, train_cfg, run_meta)
    model.eval()
    if checkpoint is not None:
        _save(checkpoint, model, opt, end, encoder, train_cfg, run_meta)
    if metrics_csv is not None:
        write_metrics(metrics_csv, history)
    return TrainResult(model, history, end)


def _save(path, model, opt, iteration, encoder, train_cfg, run_meta=None):
    extra = _optimizer_arrays(opt)
    extra["torch_rng"] = torch.get_rng_state().numpy()
    meta = {**(run_meta or {}), "iteration": iteration, "train_config": asdict(train_cfg)}
    digest = ""
    if hasattr(encoder, "config"):
        digest = encoder.config.digest()
        meta["encoder_config"] = asdict(encoder.config)
    save_checkpoint(path, model, digest, extra, meta=meta)


def write_metrics(path, history: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in history:
            w.writerow({k: (int(row[k]) if k == "iteration" else repr(float(row[k]))) for k in METRIC_FIELDS})
