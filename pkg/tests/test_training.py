import csv
import math

import numpy as np
import pytest
import torch

from gridplanner.encoders import EncoderConfig, ToyEncoder
from gridplanner.features import collate
from gridplanner.graphs import Action, Subtask
from gridplanner.network import GridNetwork, ModelConfig, forward, load_checkpoint, predict
from gridplanner.training import (
    EmptyDataset,
    LossConfig,
    TrainConfig,
    batch_indices,
    grid_loss,
    loss_and_grad,
    loss_terms,
    one_cycle_lr,
    regularized,
    stage_features,
    train,
)
from helpers import finite_difference_check

SMALL = ModelConfig(dim=8, n_heads=2, gat_layers=1, enhancer_layers=1, decoder_layers=1, hidden=8, ffn_dim=16)


# -- loss arithmetic -----------------------------------------------------------------


def test_uniform_logits_loss():
    terms = loss_terms(torch.zeros(1, 8, dtype=torch.float64), torch.zeros(1, 70, dtype=torch.float64), torch.tensor([3]), torch.tensor([12]), None, LossConfig())
    assert terms["loss"].item() == pytest.approx(5 * math.log(8) + 25 * math.log(70), rel=1e-12)


def test_regularizer_only():
    lin = torch.nn.Linear(1, 1, bias=False)
    with torch.no_grad():
        lin.weight.fill_(2.0)
    act = torch.full((1, 8), -1e4, dtype=torch.float64)
    act[0, 2] = 1e4
    obj = torch.tensor([[1e4, -1e4]], dtype=torch.float64)
    terms = loss_terms(act, obj, torch.tensor([2]), torch.tensor([0]), lin, LossConfig())
    # 0.2 * |2| + 0.5 * 0.8 * 2^2
    assert terms["loss"].item() == pytest.approx(2.0, abs=1e-12)
    assert terms["data"].item() == 0.0


def test_regularizer_skips_vectors():
    m = GridNetwork(SMALL)
    names = [n for n, _ in regularized(m)]
    assert names and all(p.ndim >= 2 for _, p in regularized(m))
    assert not any(n.endswith(".bias") for n in names)


def test_loss_rejects_bad_target():
    with pytest.raises(IndexError):
        loss_terms(torch.zeros(1, 8), torch.zeros(1, 5), torch.tensor([0]), torch.tensor([5]), None, LossConfig())


def test_loss_config_positive():
    with pytest.raises(ValueError):
        LossConfig(gamma=0)


def test_grid_loss_uses_scene_id(small_data, toy8):
    torch.manual_seed(0)
    m = GridNetwork(SMALL).double().eval()
    t = small_data.traces[0]
    s, r = t.stages[0]
    out = forward(t.instruction, r, s, m, toy8)
    gt = t.subtasks[0]
    row = out.scene_ids.index(gt.object_id)
    terms = loss_terms(out.action_logits[None], out.object_logits[None], torch.tensor([gt.action.index]), torch.tensor([row]), m, LossConfig())
    assert grid_loss(out, gt, m).item() == pytest.approx(terms["loss"].item(), rel=1e-12)
    with pytest.raises(ValueError):
        grid_loss(out, Subtask(Action.MOVE, 10_000), m)


# -- schedule --------------------------------------------------------------------------


def test_schedule_endpoints():
    assert one_cycle_lr(0, 1000) == pytest.approx(1e-5)
    assert one_cycle_lr(300, 1000) == pytest.approx(1e-4)
    assert one_cycle_lr(1000, 1000) == pytest.approx(1e-8)
    lrs = [one_cycle_lr(i, 1000) for i in range(1001)]
    assert max(lrs) == pytest.approx(1e-4)
    assert all(a <= b for a, b in zip(lrs[:300], lrs[1:301]))
    assert all(a >= b for a, b in zip(lrs[300:], lrs[301:]))
    with pytest.raises(ValueError):
        one_cycle_lr(1001, 1000)


# -- gradients -------------------------------------------------------------------------


def test_gradient_matches_central_differences(small_data, toy8):
    torch.manual_seed(1)
    m = GridNetwork(SMALL).double().eval()
    rng = np.random.default_rng(0)
    worst, checked = 0.0, 0
    for t in small_data.traces[:5]:
        s, r = t.stages[0]
        gt = t.subtasks[0]
        _, grads = loss_and_grad(forward(t.instruction, r, s, m, toy8), gt, m)
        w, n, _ = finite_difference_check(m, lambda: grid_loss(forward(t.instruction, r, s, m, toy8), gt, m).item(), grads, rng)
        worst, checked = max(worst, w), checked + n
    # key biases have an exactly zero gradient; the 1e-4 floor keeps
    # round-off in the numeric side from dominating the ratio there
    assert checked > 100 and worst < 1e-4


def test_kink_detection_skips_leaky_crossings():
    lin = torch.nn.Linear(1, 1, bias=False).double()
    with torch.no_grad():
        lin.weight.fill_(1e-6)
    x = torch.ones(1, 1, dtype=torch.float64)

    def loss():
        return torch.nn.functional.leaky_relu(lin(x), 0.2).sum().item()

    grads = {"weight": torch.ones(1, 1, dtype=torch.float64)}
    _, checked, skipped = finite_difference_check(lin, loss, grads, np.random.default_rng(0))
    assert (checked, skipped) == (0, 1)


# -- batching ----------------------------------------------------------------------------


def test_padding_does_not_change_logits(small_data, toy8):
    torch.manual_seed(2)
    m = GridNetwork(SMALL).double().eval()
    feats = stage_features(small_data.traces[:3], toy8)
    act, obj = m(collate(feats, dtype=torch.float64))
    for i, f in enumerate(feats):
        single = m.forward_features(f)
        np.testing.assert_allclose(act[i].detach().numpy(), single.action_logits.detach().numpy(), atol=1e-10)
        n = f.scene.shape[0]
        np.testing.assert_allclose(obj[i, :n].detach().numpy(), single.object_logits.detach().numpy(), atol=1e-10)


def test_batch_indices_cover_each_epoch():
    seen = np.concatenate([batch_indices(10, 4, 7, i) for i in range(5)])
    assert sorted(seen[:10]) == list(range(10)) and sorted(seen[10:20]) == list(range(10))
    assert np.array_equal(batch_indices(10, 4, 7, 3), batch_indices(10, 4, 7, 3))


# -- training loop -----------------------------------------------------------------------


def _cfg(**kw):
    base = dict(lr=1e-3, iterations=12, batch_size=8, seed=4)
    base.update(kw)
    return TrainConfig(**base)


def test_training_is_deterministic(small_data, toy8):
    a = train(small_data.traces[:4], SMALL, _cfg(), LossConfig(), toy8)
    b = train(small_data.traces[:4], SMALL, _cfg(), LossConfig(), toy8)
    assert a.history == b.history
    for x, y in zip(a.model.state_dict().values(), b.model.state_dict().values()):
        assert torch.equal(x, y)


def test_resume_matches_uninterrupted(small_data, toy8, tmp_path):
    ckpt, csv_path = tmp_path / "c.npz", tmp_path / "m.csv"
    full = train(small_data.traces[:4], SMALL, _cfg(), LossConfig(), toy8)
    part = train(small_data.traces[:4], SMALL, _cfg(), LossConfig(), toy8, checkpoint=ckpt, metrics_csv=csv_path, stop_after=5)
    assert part.iterations == 5
    rest = train(small_data.traces[:4], SMALL, _cfg(), LossConfig(), toy8, checkpoint=ckpt, metrics_csv=csv_path, resume=True)
    assert rest.iterations == 12
    for x, y in zip(full.model.state_dict().values(), rest.model.state_dict().values()):
        torch.testing.assert_close(x, y, rtol=0, atol=1e-6)
    with open(csv_path) as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["iteration"]) for r in rows] == list(range(1, 13))


def test_loss_drops(small_data, toy8):
    res = train(small_data.traces[:2], SMALL, _cfg(iterations=60), LossConfig(gamma=1e-6, delta=1e-4), toy8)
    first = np.mean([h["loss_obj"] for h in res.history[:5]])
    last = np.mean([h["loss_obj"] for h in res.history[-5:]])
    assert last < first


def test_metrics_csv_columns(small_data, toy8, tmp_path):
    path = tmp_path / "m.csv"
    train(small_data.traces[:2], SMALL, _cfg(iterations=3), LossConfig(), toy8, metrics_csv=path)
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["iteration", "lr", "loss", "loss_act", "loss_obj", "batch_sub_acc"]
    assert len(rows) == 3 and all(math.isfinite(float(r["loss"])) for r in rows)


def test_checkpoint_header(small_data, toy8, tmp_path):
    path = tmp_path / "c.npz"
    train(small_data.traces[:2], SMALL, _cfg(iterations=2), LossConfig(), toy8, checkpoint=path, run_meta={"config_digest": "d"})
    _, header, _ = load_checkpoint(path)
    assert header["meta"]["iteration"] == 2 and header["meta"]["config_digest"] == "d"
    assert header["encoder_digest"] == toy8.config.digest()


def test_empty_dataset(toy8):
    with pytest.raises(EmptyDataset):
        train([], SMALL, _cfg(), LossConfig(), toy8)


def test_train_config_checks():
    with pytest.raises(ValueError):
        TrainConfig(iterations=0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)


def test_single_task_overfit_smoke(small_data):
    task = small_data.traces[0]
    enc = ToyEncoder(EncoderConfig())
    cfg = TrainConfig(lr=1e-3, iterations=200, batch_size=len(task), seed=0)
    res = train([task], ModelConfig(), cfg, LossConfig(gamma=1e-2, delta=1e-1), enc)
    losses = [h["loss"] for h in res.history]
    assert min(losses) >= 0
    assert sum(b > a for a, b in zip(losses[:49], losses[1:50])) <= 5
    assert res.history[-1]["batch_sub_acc"] == 1.0
    out = forward(task.instruction, task.robot_0, task.scene_0, res.model, enc)
    assert predict(out) == task.subtasks[0]
