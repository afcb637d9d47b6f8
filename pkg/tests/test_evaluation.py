import csv
import json

import pytest

from gridplanner.evaluation import (
    FunctionPlanner,
    LengthMismatch,
    MajorityPlanner,
    MetricsReport,
    OraclePlanner,
    evaluate,
    object_roles,
    run_episode,
    stage_rows,
    subtask_metrics,
    task_accuracy,
    write_report,
)
from gridplanner.graphs import Action, Subtask

M, P, F = Action.MOVE, Action.PICK, Action.FINISH


def st(a, x):
    return Subtask(a, x)


def test_all_correct():
    gt = [st(M, 3), st(P, 4), st(F, 0)]
    r = subtask_metrics(list(gt), gt)
    assert (r.act_acc, r.obj_acc, r.sub_acc) == (1.0, 1.0, 1.0)


def test_hand_count():
    r = subtask_metrics([st(P, 2), st(M, 3)], [st(P, 2), st(M, 5)])
    assert (r.act_acc, r.obj_acc, r.sub_acc) == (1.0, 0.5, 0.5)


def test_wrong_actions_right_objects():
    r = subtask_metrics([st(M, 2), st(P, 3)], [st(P, 2), st(M, 3)])
    assert r.sub_acc == 0.0 and r.obj_acc == 1.0


def test_length_mismatch():
    with pytest.raises(LengthMismatch):
        subtask_metrics([st(M, 1)], [])


def test_none_counts_as_wrong():
    r = subtask_metrics([None, st(M, 1)], [st(M, 1), st(M, 1)])
    assert r.act_acc == 0.5 and r.n_failures == 1


def test_confusion_counts():
    r = subtask_metrics([st(P, 2), st(M, 3), st(M, 1)], [st(P, 2), st(F, 0), st(M, 1)])
    assert r.confusion[F.index, M.index] == 1 and r.confusion.sum() == 3


def test_check_catches_bad_ordering():
    with pytest.raises(AssertionError):
        MetricsReport(0.5, 0.5, 0.6).check()
    with pytest.raises(AssertionError):
        MetricsReport(0.5, 0.5, 0.4, task_acc=0.45).check()


def test_oracle_is_perfect(small_data):
    r = evaluate(OraclePlanner(small_data.traces), small_data.traces)
    assert (r.act_acc, r.obj_acc, r.sub_acc, r.task_acc) == (1.0, 1.0, 1.0, 1.0)
    assert task_accuracy(OraclePlanner(small_data.traces), small_data.traces, mode="closed_loop") == 1.0


def _five_stage(small_data):
    return [t for t in small_data.traces if len(t) == 5][:2]


def test_one_miss_halves_task_accuracy(small_data):
    traces = _five_stage(small_data)
    assert len(traces) == 2
    oracle = OraclePlanner(traces)
    bad_state = traces[0].stages[3]

    def fn(instruction, robot, scene):
        p = oracle.plan(instruction, robot, scene)
        if instruction == traces[0].instruction and (scene, robot) == bad_state:
            return st(F, 0) if p.action is not F else st(M, 1)
        return p

    r = evaluate(FunctionPlanner(fn), traces)
    assert r.task_acc == 0.5
    assert r.sub_acc == pytest.approx(9 / 10)


def test_closed_loop_stops_after_miss(small_data):
    t = small_data.traces[0]
    r = evaluate(FunctionPlanner(lambda *a: st(F, 0)), [t], mode="closed_loop")
    assert r.sub_acc == 0.0 and r.n_failures == len(t) - 1


def test_unknown_mode(small_data):
    with pytest.raises(ValueError):
        evaluate(OraclePlanner([]), small_data.traces, mode="sideways")


def test_invariants_on_random_planner(small_data):
    r = evaluate(FunctionPlanner(lambda i, robot, scene: st(M, scene.nodes[-1].id)), small_data.traces)
    r.check()
    assert r.task_acc <= r.sub_acc <= min(r.act_acc, r.obj_acc)


def test_episode_finishes_with_oracle(small_data):
    t = small_data.traces[0]
    log, done = run_episode(OraclePlanner([t]), t.instruction, t.scene_0, t.robot_0, max_steps=20)
    assert done and [e.prediction for e in log] == list(t.subtasks)


def test_episode_cap(small_data):
    t = small_data.traces[0]
    log, done = run_episode(FunctionPlanner(lambda *a: st(P, 0)), t.instruction, t.scene_0, t.robot_0, max_steps=3)
    assert not done and len(log) == 3 and not any(e.applied for e in log)


def test_object_roles(kitchen):
    from gridplanner.dataset import roll_trace

    s, r = kitchen
    t = roll_trace(s, r, [st(M, 2), st(P, 3), st(M, 4), st(Action.REVOLUTE_OPEN, 4), st(Action.PLACE_TO, 4), st(F, 0)])
    assert object_roles(t) == {2: "src", 3: "obj", 4: "box", 0: "robot"}


def test_majority_planner(small_data):
    mp = MajorityPlanner(small_data.traces)
    r = mp.evaluate(small_data.traces)
    r.check()
    counts = {a: sum(s.action is a for t in small_data.traces for s in t.subtasks) for a in Action}
    assert mp.action is max(counts, key=counts.get)
    assert r.act_acc == pytest.approx(counts[mp.action] / r.n_stages)


def test_report_files(tmp_path, small_data):
    preds = [s for t in small_data.traces for s in t.subtasks]
    r = subtask_metrics(preds, preds)
    paths = write_report(tmp_path, "eval", r, {"seed": 1}, "abc123", stage_rows(small_data.traces, preds))
    data = json.loads(open(paths["json"]).read())
    assert data["config_digest"] == "abc123" and data["metrics"]["sub_acc"] == 1.0
    with open(paths["csv"]) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == len(preds) and all(row["config_digest"] == "abc123" for row in rows)
