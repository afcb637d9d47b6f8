import json

import httpx
import pytest

from gridplanner.baseline import (
    EchoOracleClient,
    HTTPChatClient,
    ParseFailure,
    PromptConfig,
    ScriptedClient,
    baseline_eval,
    build_prompt,
    call_with_timeout,
    format_subtask,
    parse_planner_response,
)
from gridplanner.encoders import ExternalServiceError
from gridplanner.evaluation import subtask_metrics
from gridplanner.graphs import ACTIONS, Action, Edge, Node, SceneGraph, Subtask, apply_subtask


def shelf_scene():
    nodes = (Node(0, "floor"), Node(1, "living room"), Node(3, "display shelves", {"color": "purple", "surface": "true"}))
    return SceneGraph(nodes, (Edge(1, 0, "on"), Edge(3, 1, "in")))


# -- prompt ---------------------------------------------------------------------------------


def test_prompt_mentions_grasp(kitchen):
    s, r = kitchen
    s, r = apply_subtask(s, r, Subtask(Action.MOVE, 2))
    s, r = apply_subtask(s, r, Subtask(Action.PICK, 3))
    p = build_prompt("put it back", r, s)
    assert "teacup 3 is grasped by robot 0" in p
    for head in ("#Role:", "#Output Restriction:", "#Scene:", "#Robot:", "#Instruction:", "#Task:"):
        assert head in p


def test_zero_shots_has_no_examples(kitchen):
    s, r = kitchen
    assert "#Example" not in build_prompt("x", r, s, n_shots=0)
    assert "#Example1" in build_prompt("x", r, s, n_shots=1)


def test_prompt_is_stable(kitchen):
    s, r = kitchen
    assert build_prompt("open the fridge", r, s) == build_prompt("open the fridge", r, s)


# -- parser ---------------------------------------------------------------------------------------


def test_parse_quoted_output():
    assert parse_planner_response("So output: move purple display shelves 3", shelf_scene()) == Subtask(Action.MOVE, 3)


def test_parse_unknown_action():
    got = parse_planner_response("fly to moon 3", shelf_scene())
    assert isinstance(got, ParseFailure) and got.reason == "unknown action" and not got


def test_parse_unknown_id(small_data):
    s = small_data.traces[0].scene_0
    got = parse_planner_response("pick teacup 999", s)
    assert isinstance(got, ParseFailure) and got.reason == "unknown id"


def test_parse_prefers_last_answer():
    text = "#Think: first move 1 then place.\nAnswer: move purple display shelves 3"
    assert parse_planner_response(text, shelf_scene()) == Subtask(Action.MOVE, 3)


def test_parse_multiword_and_case():
    s = shelf_scene()
    assert parse_planner_response("Answer: Place To display shelves 3", s) == Subtask(Action.PLACE_TO, 3)
    assert parse_planner_response("answer: revolute_open display shelves 3", s) == Subtask(Action.REVOLUTE_OPEN, 3)


def test_parse_empty():
    got = parse_planner_response("", shelf_scene())
    assert isinstance(got, ParseFailure)


def test_format_parse_round_trip(small_data):
    for t in small_data.traces:
        for (s, _), st in zip(t.stages, t.subtasks):
            assert parse_planner_response(format_subtask(st, s), s) == st
    s = shelf_scene()
    for a in ACTIONS:
        st = Subtask(a, 0 if a is Action.FINISH else 3)
        assert parse_planner_response("Answer: " + format_subtask(st, s), s) == st


# -- clients ------------------------------------------------------------------------------------------


def test_echo_oracle_is_lossless(small_data):
    res = baseline_eval(EchoOracleClient(small_data.traces), small_data.traces)
    gts = [st for t in small_data.traces for st in t.subtasks]
    perfect = subtask_metrics(gts, gts)
    r = res.report
    assert (r.act_acc, r.obj_acc, r.sub_acc, r.task_acc) == (perfect.act_acc, perfect.obj_acc, perfect.sub_acc, 1.0)
    assert r.n_failures == 0 and len(res.latencies) == len(gts)


def test_finish_client_scores_finish_fraction(small_data):
    res = baseline_eval(ScriptedClient(lambda p: "finish robot 0"), small_data.traces)
    n_finish = sum(st.action is Action.FINISH for t in small_data.traces for st in t.subtasks)
    assert res.report.act_acc == pytest.approx(n_finish / res.report.n_stages)


def test_timeouts_score_zero(small_data):
    traces = small_data.traces[:2]
    res = baseline_eval(ScriptedClient(lambda p: "finish robot 0", delay=1.0), traces, PromptConfig(timeout=0.01, concurrency=8))
    r = res.report
    assert (r.act_acc, r.obj_acc, r.sub_acc, r.task_acc) == (0.0, 0.0, 0.0, 0.0)
    assert all(e.startswith("TimeoutError") for e in res.errors)


def test_client_errors_recorded(small_data):
    def boom(prompt):
        raise RuntimeError("down")

    res = baseline_eval(ScriptedClient(boom), small_data.traces[:1])
    assert res.report.n_failures == len(small_data.traces[0])
    assert "down" in res.errors[0]


def test_scripted_sequence_and_prompt_log():
    c = ScriptedClient(["a", "b"])
    assert c.complete("p1", 1) == "a" and c.complete("p2", 1) == "b"
    assert c.prompts == ["p1", "p2"]


def test_call_with_timeout():
    with pytest.raises(TimeoutError):
        call_with_timeout(ScriptedClient(["x"], delay=0.5), "p", 0.01)


def test_http_client(monkeypatch):
    seen = []

    def handler(request):
        seen.append(request)
        if len(seen) == 1:
            return httpx.Response(502)
        return httpx.Response(200, json={"choices": [{"message": {"content": "Answer: finish robot 0"}}]})

    monkeypatch.setenv("GRID_LLM_URL", "http://llm.test/chat")
    monkeypatch.setenv("GRID_LLM_MODEL", "m1")
    c = HTTPChatClient(transport=httpx.MockTransport(handler), retries=1, key="k")
    assert c.complete("hello", 5) == "Answer: finish robot 0"
    body = json.loads(seen[-1].content)
    assert body["model"] == "m1" and body["messages"][0]["content"] == "hello"
    assert seen[-1].headers["authorization"] == "Bearer k"


def test_http_client_needs_url(monkeypatch):
    monkeypatch.delenv("GRID_LLM_URL", raising=False)
    with pytest.raises(ExternalServiceError):
        HTTPChatClient()
