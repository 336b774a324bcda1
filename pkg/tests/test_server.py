import json

import pytest
import torch
from fastapi.testclient import TestClient

from ctskit.policy import QNetwork
from ctskit.server import GOAL_CATEGORIES, create_app
from ctskit.simulator import SimulatorConfig


@pytest.fixture()
def app_env(trips_graph, encoder, tmp_path):
    torch.manual_seed(0)
    net = QNetwork(encoder.dim, (16,), 8)
    log_path = tmp_path / "events.jsonl"
    app = create_app(
        trips_graph,
        net,
        encoder,
        sim_config=SimulatorConfig(max_turns=20),
        salt="test-salt",
        log_path=log_path,
    )
    return TestClient(app), log_path


def read_events(log_path):
    if not log_path.exists():
        return []
    return [json.loads(line) for line in log_path.read_text().splitlines()]


def complete_dialog(client, sid):
    client.post(f"/api/sessions/{sid}/message", json={"text": "hello there"})
    response = client.post(f"/api/sessions/{sid}/found-answer")
    assert response.status_code == 200
    survey = client.post(
        f"/api/sessions/{sid}/survey",
        json={"kind": "post_dialog", "perceived_length": 3, "answer_satisfaction": 4},
    )
    assert survey.status_code == 200
    return survey.json()


def test_create_session_and_goal_visible(app_env):
    client, _ = app_env
    response = client.post("/api/sessions", json={"username": "alice"})
    assert response.status_code == 200
    body = response.json()
    assert body["goal"]["category"] in GOAL_CATEGORIES
    assert body["goal"]["text"]
    assert body["dialog_index"] == 0
    assert body["transcript"] == []
    assert "alice" not in json.dumps(body)  # only the anonymous hash appears


def test_same_username_resumes_session(app_env):
    client, _ = app_env
    first = client.post("/api/sessions", json={"username": "bob"}).json()
    client.post(f"/api/sessions/{first['session_id']}/message", json={"text": "hi"})
    second = client.post("/api/sessions", json={"username": "bob"}).json()
    assert second["session_id"] == first["session_id"]
    assert any(t["speaker"] == "user" for t in second["transcript"])


def test_three_dialogs_cover_all_categories(app_env):
    client, _ = app_env
    body = client.post("/api/sessions", json={"username": "carol"}).json()
    sid = body["session_id"]
    seen = [body["goal"]["category"]]
    for _ in range(3):
        state = complete_dialog(client, sid)
        if state["goal"] is not None:
            seen.append(state["goal"]["category"])
    assert sorted(seen) == sorted(GOAL_CATEGORIES)
    assert state["stage"] == "post_interaction_survey"


def test_message_returns_agent_turns(app_env):
    client, _ = app_env
    sid = client.post("/api/sessions", json={"username": "dan"}).json()["session_id"]
    response = client.post(f"/api/sessions/{sid}/message", json={"text": "I need trip help"})
    assert response.status_code == 200
    body = response.json()
    assert isinstance(body["turns"], list)
    for turn in body["turns"]:
        assert turn["speaker"] == "agent"
        assert turn["text"]


def test_survey_range_validation(app_env):
    client, _ = app_env
    sid = client.post("/api/sessions", json={"username": "erin"}).json()["session_id"]
    client.post(f"/api/sessions/{sid}/found-answer")
    too_long = client.post(
        f"/api/sessions/{sid}/survey",
        json={"kind": "post_dialog", "perceived_length": 6, "answer_satisfaction": 2},
    )
    assert too_long.status_code == 422
    bad_satisfaction = client.post(
        f"/api/sessions/{sid}/survey",
        json={"kind": "post_dialog", "perceived_length": 3, "answer_satisfaction": 5},
    )
    assert bad_satisfaction.status_code == 422


def test_survey_before_completion_rejected(app_env):
    client, _ = app_env
    sid = client.post("/api/sessions", json={"username": "frank"}).json()["session_id"]
    response = client.post(
        f"/api/sessions/{sid}/survey",
        json={"kind": "post_dialog", "perceived_length": 3, "answer_satisfaction": 2},
    )
    assert response.status_code == 409


def test_unknown_session_404(app_env):
    client, _ = app_env
    assert client.get("/api/sessions/deadbeef").status_code == 404
    assert client.post("/api/sessions/deadbeef/message", json={"text": "x"}).status_code == 404


def test_malformed_bodies_rejected(app_env):
    client, _ = app_env
    assert client.post("/api/sessions", json={}).status_code == 422
    assert client.post("/api/sessions", json={"username": "  "}).status_code == 422
    sid = client.post("/api/sessions", json={"username": "gina"}).json()["session_id"]
    assert client.post(f"/api/sessions/{sid}/message", json={}).status_code == 422


def test_full_study_flow_and_event_log_audit(app_env):
    client, log_path = app_env
    sid = client.post("/api/sessions", json={"username": "henry"}).json()["session_id"]
    for _ in range(3):
        complete_dialog(client, sid)
    final = client.post(
        f"/api/sessions/{sid}/survey",
        json={"kind": "post_interaction", "usability": [5, 6, 4, 7], "trust": [4, 4, 5]},
    )
    assert final.status_code == 200
    assert final.json()["stage"] == "done"

    events = read_events(log_path)
    by_kind = {}
    for event in events:
        by_kind.setdefault(event["event"], []).append(event)
    assert len(by_kind["session_created"]) == 1
    assert len(by_kind["dialog_started"]) == 3
    assert len(by_kind["user_message"]) == 3
    assert len(by_kind["dialog_completed"]) == 3
    assert len(by_kind["survey_submitted"]) == 4  # 3 post-dialog + 1 final
    assert len(by_kind["session_completed"]) == 1
    # strictly once: no duplicated records at all
    seen = [json.dumps(e, sort_keys=True) for e in events]
    assert len(seen) == len(set(seen))

    transcript = client.get(f"/api/sessions/{sid}/transcript").json()
    assert transcript["stage"] == "done"
    assert len(transcript["surveys"]) == 4


def test_post_interaction_requires_item_arrays(app_env):
    client, _ = app_env
    sid = client.post("/api/sessions", json={"username": "ida"}).json()["session_id"]
    for _ in range(3):
        complete_dialog(client, sid)
    missing = client.post(
        f"/api/sessions/{sid}/survey", json={"kind": "post_interaction", "usability": [5]}
    )
    assert missing.status_code == 422


def test_category_rotation_across_sessions(app_env):
    client, _ = app_env
    first_categories = []
    for name in ("u1", "u2", "u3"):
        body = client.post("/api/sessions", json={"username": name}).json()
        first_categories.append(body["goal"]["category"])
    assert sorted(first_categories) == sorted(GOAL_CATEGORIES)
