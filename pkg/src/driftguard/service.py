"""Operator console service.

One FastAPI app wraps one run in human-operator mode.  The run executes
on a background thread and pauses inside the feedback provider whenever
the lifelong loop opens a request; the console answers through the
feedback endpoints, which wakes the run back up.  Progress streams to
the console over server-sent events with a bounded replay ring, so a
reconnecting client can resume from its last seen sequence number.
"""

from __future__ import annotations

import json
import queue
import threading
from collections import deque
from pathlib import Path

from fastapi import FastAPI, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, StreamingResponse
from fastapi.staticfiles import StaticFiles

from . import runner
from .errors import DriftguardError, InvalidFeedbackError, InvalidStateError
from .gmm import GmmModel, model_to_dict
from .lifelong import (
    Box,
    FeedbackRequest,
    OperatorFeedback,
    apply_box_feedback,
    apply_ranking,
)
from .scenarios import ScenarioSpec

EVENT_RING = 1000

STATUS_IDLE = "idle"
STATUS_PREPARING = "preparing"
STATUS_RUNNING = "running"
STATUS_COMPLETED = "completed"
STATUS_FAILED = "failed"


def _record_payload(record: runner.CycleRecord) -> dict:
    return {
        "cycle": record.cycle,
        "approach": record.approach,
        "option_id": record.option_id,
        "pl": record.packet_loss,
        "ec": record.energy,
        "utility": record.utility,
        "rank": record.selected_rank,
        "ideal_rank": record.ideal_rank,
        "fallback": record.fallback,
    }


def _sse_frame(event: dict) -> str:
    return (f"id: {event['seq']}\nevent: {event['kind']}\n"
            f"data: {json.dumps(event, sort_keys=True)}\n\n")


class OperatorService:
    """Owns the run thread, the event ring, and the pending request.

    All mutable state sits behind one lock; the condition variable on it
    is how a posted ranking wakes the paused run thread.
    """

    def __init__(self, spec: ScenarioSpec,
                 approach: str = runner.APPROACH_LSA_FEEDBACK) -> None:
        self.spec = spec
        self.approach = approach
        self.report: runner.RunReport | None = None
        self._lock = threading.Lock()
        self._cond = threading.Condition(self._lock)
        self._ring: deque[dict] = deque(maxlen=EVENT_RING)
        self._subscribers: list[queue.SimpleQueue] = []
        self._seq = 0
        self._last_record: runner.CycleRecord | None = None
        self._pending: FeedbackRequest | None = None
        self._boxes: list[Box] = []
        self._refined: GmmModel | None = None
        self._answer: OperatorFeedback | None = None
        self._completed: dict[int, dict] = {}
        self._status = STATUS_IDLE
        self._error: str | None = None
        self._thread: threading.Thread | None = None

    # -- run thread

    def start(self) -> None:
        if self._thread is not None:
            raise InvalidStateError("run already started")
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def _run(self) -> None:
        with self._lock:
            self._status = STATUS_PREPARING
        try:
            ctx = runner.prepare_run(self.spec)
            with self._lock:
                self._status = STATUS_RUNNING
            self.report = runner.run(
                self.spec, self.approach, context=ctx,
                feedback_provider=self._await_feedback,
                on_record=self._on_record, on_event=self._on_event)
        except DriftguardError as exc:
            with self._lock:
                self._status = STATUS_FAILED
                self._error = str(exc)
        else:
            with self._lock:
                self._status = STATUS_COMPLETED
        finally:
            self._close_streams()

    def _on_record(self, record: runner.CycleRecord) -> None:
        with self._lock:
            self._last_record = record
            self._emit_locked("cycle_completed", _record_payload(record))

    def _on_event(self, event: dict) -> None:
        with self._lock:
            self._emit_locked(event["kind"], event)

    def _await_feedback(self, request: FeedbackRequest) -> OperatorFeedback:
        with self._cond:
            self._pending = request
            self._boxes = []
            self._refined = request.proposal
            self._answer = None
            while self._answer is None:
                self._cond.wait()
            feedback = self._answer
            self._pending = None
            self._boxes = []
            self._refined = None
            self._answer = None
            return feedback

    # -- events

    def _emit_locked(self, kind: str, data: dict) -> None:
        self._seq += 1
        event = {"seq": self._seq, "kind": kind, "data": data}
        self._ring.append(event)
        for sub in self._subscribers:
            sub.put(event)

    def _close_streams(self) -> None:
        with self._lock:
            for sub in self._subscribers:
                sub.put(None)
            self._subscribers.clear()

    def event_stream(self, last_seen: int):
        """Frames after last_seen from the ring, then live until the run ends."""
        sub: queue.SimpleQueue = queue.SimpleQueue()
        with self._lock:
            backlog = [e for e in self._ring if e["seq"] > last_seen]
            done = self._status in (STATUS_COMPLETED, STATUS_FAILED)
            if not done:
                self._subscribers.append(sub)
        try:
            for event in backlog:
                yield _sse_frame(event)
            if done:
                return
            while True:
                event = sub.get()
                if event is None:
                    return
                yield _sse_frame(event)
        finally:
            with self._lock:
                if sub in self._subscribers:
                    self._subscribers.remove(sub)

    # -- endpoint bodies

    def state(self) -> dict | None:
        with self._lock:
            if self._last_record is None and self._status not in (
                    STATUS_COMPLETED, STATUS_FAILED):
                return None
            state = {
                "status": self._status,
                "approach": self.approach,
                "cell": self.spec.cell_name,
                "error": self._error,
                "pending_request_id": (
                    self._pending.request_id if self._pending else None),
                "events": self._seq,
            }
            if self._last_record is not None:
                state["cycle"] = self._last_record.cycle
                state["record"] = _record_payload(self._last_record)
            return state

    def pending_payload(self) -> dict | None:
        with self._lock:
            if self._pending is None:
                return None
            payload = self._pending.to_dict()
            payload["boxes"] = [b.to_dict() for b in self._boxes]
            payload["refined"] = model_to_dict(self._refined)
            payload["refined_class_ids"] = sorted(
                int(c) for c in self._refined.class_ids())
            return payload

    def add_box(self, request_id: int, body: dict) -> tuple[int, dict]:
        with self._cond:
            if self._pending is None or request_id != self._pending.request_id:
                return 409, {"detail": f"request {request_id} is not pending"}
            try:
                box = Box.from_dict(body)
                candidate = [*self._boxes, box]
                refined = apply_box_feedback(self._pending, candidate, seed=0)
            except InvalidFeedbackError as exc:
                return 422, {"detail": str(exc)}
            self._boxes = candidate
            self._refined = refined
            return 200, {
                "request_id": request_id,
                "boxes": len(candidate),
                "model": model_to_dict(refined),
                "class_ids": sorted(int(c) for c in refined.class_ids()),
            }

    def post_ranking(self, request_id: int, body: dict) -> tuple[int, dict]:
        try:
            ranking = [int(c) for c in body["ranking"]]
        except (KeyError, TypeError, ValueError):
            return 422, {"detail": "body must carry an integer ranking list"}
        with self._cond:
            if request_id in self._completed:
                # replays of the accepted answer are idempotent
                stored = self._completed[request_id]
                if ranking == stored["ranking"]:
                    return 200, stored
                return 409, {"detail": f"request {request_id} already answered"}
            if self._pending is None or request_id != self._pending.request_id:
                return 409, {"detail": f"request {request_id} is not pending"}
            try:
                apply_ranking(self._refined, ranking)
            except InvalidFeedbackError as exc:
                return 422, {"detail": str(exc)}
            response = {
                "request_id": request_id,
                "boxes": len(self._boxes),
                "ranking": ranking,
                "applied": True,
            }
            self._completed[request_id] = response
            self._answer = OperatorFeedback(
                boxes=tuple(self._boxes), ranking=tuple(ranking))
            self._cond.notify_all()
            return 200, response


def create_app(
    spec: ScenarioSpec,
    approach: str = runner.APPROACH_LSA_FEEDBACK,
    auto_start: bool = True,
    static_dir: str | Path | None = None,
) -> FastAPI:
    """Build the console app around one service instance.

    auto_start launches the run thread immediately; tests pass False and
    drive the service object at app.state.service directly.
    """
    svc = OperatorService(spec, approach)
    app = FastAPI(title="driftguard operator console")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
        allow_headers=["*"])
    app.state.service = svc

    @app.get("/api/run/state")
    def run_state():
        state = svc.state()
        if state is None:
            return JSONResponse({"detail": "no run yet"}, status_code=404)
        return state

    @app.get("/api/feedback/pending")
    def feedback_pending():
        payload = svc.pending_payload()
        if payload is None:
            return Response(status_code=204)
        return payload

    @app.post("/api/feedback/{request_id}/box")
    def feedback_box(request_id: int, body: dict):
        status, payload = svc.add_box(request_id, body)
        return JSONResponse(payload, status_code=status)

    @app.post("/api/feedback/{request_id}/ranking")
    def feedback_ranking(request_id: int, body: dict):
        status, payload = svc.post_ranking(request_id, body)
        return JSONResponse(payload, status_code=status)

    @app.get("/api/events")
    def events(request: Request):
        raw = request.headers.get("last-event-id", "")
        try:
            last_seen = int(raw)
        except ValueError:
            last_seen = 0
        return StreamingResponse(
            svc.event_stream(last_seen),
            media_type="text/event-stream",
            headers={"cache-control": "no-cache"})

    target = Path(static_dir) if static_dir is not None else (
        Path(__file__).resolve().parents[2] / "frontend" / "dist")
    if target.is_dir():
        app.mount("/", StaticFiles(directory=target, html=True), name="console")

    if auto_start:
        svc.start()
    return app


def serve(spec: ScenarioSpec, port: int, host: str = "127.0.0.1") -> None:
    """Blocking entry point: start the run and serve the console API."""
    import uvicorn

    app = create_app(spec)
    uvicorn.run(app, host=host, port=port, log_level="warning")
