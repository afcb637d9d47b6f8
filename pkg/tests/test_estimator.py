import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from gridplanner.estimator import GridPlanner
from gridplanner.graphs import Action, Subtask

FAST = dict(dim=16, n_heads=2, gat_layers=1, enhancer_layers=1, decoder_layers=1, hidden=16, ffn_dim=32, iterations=6, batch_size=8, lr=1e-3)


@pytest.fixture(scope="module")
def fitted(small_data):
    return GridPlanner(**FAST).fit(small_data.traces[:3])


def test_params_round_trip():
    est = GridPlanner(**FAST)
    params = est.get_params()
    assert params["dim"] == 16 and params["encoder"] == "toy"
    twin = clone(est)
    assert twin.get_params() == params and twin is not est
    est.set_params(lr=5e-4)
    assert est.lr == 5e-4


def test_unfitted_raises(small_data):
    with pytest.raises(NotFittedError):
        GridPlanner().predict(small_data.traces[:1])


def test_fit_sets_attributes(fitted):
    assert fitted.n_iter_ == 6 and len(fitted.history_) == 6


def test_predict_shapes(fitted, small_data):
    traces = small_data.traces[:2]
    n = sum(len(t) for t in traces)
    preds = fitted.predict(traces)
    assert len(preds) == n and all(isinstance(p, Subtask) for p in preds)
    probs = fitted.predict_proba(traces)
    for (pa, po), (s, _) in zip(probs, (st for t in traces for st in t.stages)):
        assert pa.shape == (8,) and po.shape == (len(s),)
        assert abs(pa.sum() - 1) < 1e-5 and abs(po.sum() - 1) < 1e-5
    logits = fitted.decision_function(traces)
    assert all(np.argmax(a) == p.action.index for (a, _), p in zip(logits, preds))


def test_predict_accepts_triples(fitted, small_data):
    t = small_data.traces[0]
    s, r = t.stages[0]
    assert fitted.predict([(t.instruction, r, s)]) == fitted.predict(small_data.traces[:1])[:1]
    assert fitted.plan(t.instruction, r, s) == fitted.predict([(t.instruction, r, s)])[0]


def test_batched_predict_matches_unbatched(fitted, small_data):
    a = fitted.predict(small_data.traces[:3])
    fitted.set_params(predict_batch_size=1)
    try:
        assert fitted.predict(small_data.traces[:3]) == a
    finally:
        fitted.set_params(predict_batch_size=64)


def test_score_range(fitted, small_data):
    assert 0.0 <= fitted.score(small_data.traces[:3]) <= 1.0


def test_save_load(fitted, small_data, tmp_path):
    path = tmp_path / "est.npz"
    fitted.save(path)
    back = GridPlanner.load(path)
    assert back.get_params() == fitted.get_params()
    assert back.predict(small_data.traces[:2]) == fitted.predict(small_data.traces[:2])


def test_input_validation(small_data):
    est = GridPlanner(**FAST)
    with pytest.raises(TypeError):
        est.fit("not data")
    with pytest.raises(ValueError):
        est.fit([])
    t = small_data.traces[0]
    s, r = t.stages[0]
    with pytest.raises(ValueError):
        est.fit([(t.instruction, r, s)])  # no targets
    with pytest.raises(ValueError):
        est.fit([(t.instruction, r, s)], [Subtask(Action.MOVE, 10_000)])
    with pytest.raises(ValueError):
        GridPlanner(**{**FAST, "iterations": 0}).fit(small_data.traces[:1])


def test_explicit_targets(small_data):
    t = small_data.traces[0]
    X = [(t.instruction, r, s) for s, r in t.stages]
    est = GridPlanner(**{**FAST, "iterations": 2}).fit(X, list(t.subtasks))
    assert est.n_iter_ == 2
