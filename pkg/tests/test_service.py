"""Console service endpoints: feedback lifecycle, SSE stream, one live run."""

import dataclasses
import json
import time

import numpy as np
from fastapi.testclient import TestClient

from driftguard.gmm import fit_gmm, merge_models, model_from_dict
from driftguard.lifelong import FeedbackRequest
from driftguard.metrics import rank_classes
from driftguard.scenarios import OPERATOR_HUMAN, ScenarioSpec
from driftguard.service import (
    STATUS_COMPLETED,
    OperatorService,
    create_app,
)


def _quiet_app():
    return create_app(ScenarioSpec(), auto_start=False)


def _fake_request(request_id=7):
    """A genuine proposal: one known class at (20, 20), one new at (70, 60)."""
    rng = np.random.default_rng(5)
    base_pts = rng.normal([20.0, 20.0], 1.0, (40, 2))
    new_pts = rng.normal([70.0, 60.0], 1.5, (30, 2))
    base = fit_gmm(base_pts, 1, seed=0)
    fresh = fit_gmm(new_pts, 1, seed=0)
    fresh = dataclasses.replace(fresh, components=[
        dataclasses.replace(c, class_id=1) for c in fresh.components])
    proposal = merge_models(base, fresh)
    return FeedbackRequest(
        request_id=request_id,
        proposal=proposal,
        window=(),
        new_class_ids=(1,),
        new_class_points=new_pts,
    )


def _inject(app, request):
    svc: OperatorService = app.state.service
    with svc._lock:
        svc._pending = request
        svc._boxes = []
        svc._refined = request.proposal
    return svc


def test_state_is_404_before_any_record():
    client = TestClient(_quiet_app())
    response = client.get("/api/run/state")
    assert response.status_code == 404


def test_pending_is_204_when_nothing_waits():
    client = TestClient(_quiet_app())
    assert client.get("/api/feedback/pending").status_code == 204


def test_pending_payload_carries_model_and_window():
    app = _quiet_app()
    _inject(app, _fake_request())
    payload = TestClient(app).get("/api/feedback/pending").json()
    assert payload["request_id"] == 7
    assert payload["new_class_ids"] == [1]
    assert len(payload["model"]["components"]) == 2
    assert payload["refined_class_ids"] == [0, 1]
    assert payload["boxes"] == []
    for component in payload["model"]["components"]:
        assert len(component["mean"]) == 2
        assert len(component["cov"]) == 2


def test_box_refines_the_new_components():
    app = _quiet_app()
    _inject(app, _fake_request())
    client = TestClient(app)
    box = {"x_min": 60.0, "x_max": 80.0, "y_min": 50.0, "y_max": 70.0}
    response = client.post("/api/feedback/7/box", json=box)
    assert response.status_code == 200
    body = response.json()
    assert body["boxes"] == 1
    # the refit replaces new class 1 under a fresh id; class 0 stays
    assert body["class_ids"] == [0, 2]
    pending = client.get("/api/feedback/pending").json()
    assert pending["boxes"] == [box]
    assert pending["refined_class_ids"] == [0, 2]


def test_box_rejections():
    app = _quiet_app()
    _inject(app, _fake_request())
    client = TestClient(app)
    degenerate = {"x_min": 5.0, "x_max": 1.0, "y_min": 0.0, "y_max": 2.0}
    assert client.post("/api/feedback/7/box", json=degenerate).status_code == 422
    empty = {"x_min": 0.0, "x_max": 1.0, "y_min": 0.0, "y_max": 1.0}
    assert client.post("/api/feedback/7/box", json=empty).status_code == 422
    stale = {"x_min": 60.0, "x_max": 80.0, "y_min": 50.0, "y_max": 70.0}
    assert client.post("/api/feedback/99/box", json=stale).status_code == 409


def test_box_without_any_pending_request_is_409():
    client = TestClient(_quiet_app())
    box = {"x_min": 0.0, "x_max": 1.0, "y_min": 0.0, "y_max": 1.0}
    assert client.post("/api/feedback/7/box", json=box).status_code == 409


def test_ranking_validation_and_idempotent_replay():
    app = _quiet_app()
    svc = _inject(app, _fake_request())
    client = TestClient(app)
    assert client.post("/api/feedback/9/ranking",
                       json={"ranking": [1, 0]}).status_code == 409
    assert client.post("/api/feedback/7/ranking",
                       json={"ranking": [0, 5]}).status_code == 422
    assert client.post("/api/feedback/7/ranking",
                       json={"ranking": "zero"}).status_code == 422
    accepted = client.post("/api/feedback/7/ranking", json={"ranking": [1, 0]})
    assert accepted.status_code == 200
    assert accepted.json()["applied"] is True
    with svc._lock:
        assert svc._answer is not None
        assert svc._answer.ranking == (1, 0)
    replay = client.post("/api/feedback/7/ranking", json={"ranking": [1, 0]})
    assert replay.status_code == 200
    assert replay.json() == accepted.json()
    changed = client.post("/api/feedback/7/ranking", json={"ranking": [0, 1]})
    assert changed.status_code == 409


def _frames(text):
    frames = []
    for chunk in text.strip().split("\n\n"):
        frame = {}
        for line in chunk.split("\n"):
            key, _, value = line.partition(": ")
            frame[key] = value
        frame["data"] = json.loads(frame["data"])
        frames.append(frame)
    return frames


def test_events_replay_honors_last_event_id():
    app = _quiet_app()
    svc: OperatorService = app.state.service
    with svc._lock:
        for cycle in range(1, 6):
            svc._emit_locked("cycle_completed", {"cycle": cycle})
        svc._status = STATUS_COMPLETED
    client = TestClient(app)
    full = _frames(client.get("/api/events").text)
    assert [f["data"]["seq"] for f in full] == [1, 2, 3, 4, 5]
    tail = _frames(client.get(
        "/api/events", headers={"Last-Event-ID": "2"}).text)
    assert [int(f["id"]) for f in tail] == [3, 4, 5]
    assert all(f["event"] == "cycle_completed" for f in tail)


def test_console_workflow_end_to_end():
    """Drive a live human-mode run purely through the HTTP surface."""
    spec = ScenarioSpec(operator_mode=OPERATOR_HUMAN, cycles=290)
    app = create_app(spec)
    client = TestClient(app)
    answered = {}
    paused_cycle = None
    deadline = time.time() + 240
    while time.time() < deadline:
        state = client.get("/api/run/state")
        if state.status_code == 200 and state.json()["status"] in (
                "completed", "failed"):
            break
        pending = client.get("/api/feedback/pending")
        if pending.status_code == 200:
            payload = pending.json()
            rid = payload["request_id"]
            if rid in answered:
                continue
            if not answered:
                # the run must hold still while the request is open
                before = client.get("/api/run/state").json()["cycle"]
                time.sleep(0.3)
                paused_cycle = client.get("/api/run/state").json()["cycle"]
                assert paused_cycle == before
                pts = np.array([p for w in payload["window"]
                                for p in w["points"]])
                box = {
                    "x_min": max(0.0, float(pts[:, 0].min()) - 1.0),
                    "x_max": min(100.0, float(pts[:, 0].max()) + 1.0),
                    "y_min": max(0.0, float(pts[:, 1].min()) - 1.0),
                    "y_max": float(pts[:, 1].max()) + 1.0,
                }
                boxed = client.post(f"/api/feedback/{rid}/box", json=box)
                assert boxed.status_code == 200
                model = model_from_dict(boxed.json()["model"])
            else:
                model = model_from_dict(payload["refined"])
            ranking = rank_classes(model, spec.preference)
            posted = client.post(f"/api/feedback/{rid}/ranking",
                                 json={"ranking": list(ranking)})
            assert posted.status_code == 200
            answered[rid] = list(ranking)
        time.sleep(0.05)

    state = client.get("/api/run/state").json()
    assert state["status"] == "completed"
    assert answered and paused_cycle is not None
    svc: OperatorService = app.state.service
    assert svc.report is not None
    assert len(svc.report.records) == 290
    applied = [e for e in svc.report.events if e["kind"] == "feedback_applied"]
    assert [e["request_id"] for e in applied] == sorted(answered)
    assert applied[0]["boxes"] == 1

    frames = _frames(client.get("/api/events").text)
    seqs = [int(f["id"]) for f in frames]
    assert seqs == sorted(seqs) and len(set(seqs)) == len(seqs)
    kinds = {f["event"] for f in frames}
    assert {"cycle_completed", "new_class_detected",
            "feedback_applied"} <= kinds
    completed = [f for f in frames if f["event"] == "cycle_completed"]
    assert completed[-1]["data"]["data"]["cycle"] == 290
