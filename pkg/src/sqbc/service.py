"""HTTP session service: a human expert drives live clustering sessions.

Wraps ``ClusteringSession`` behind five JSON endpoints:

    POST /sessions                     create a session on a registered dataset
    GET  /sessions/{id}/query          the pending snapshot (idempotent)
    POST /sessions/{id}/feedback       accept, or correct one pair atom
    GET  /sessions/{id}/trace          the session trace as JSON Lines
    GET  /sessions/{id}/state          current clustering estimate + diagnostics

Feedback is step-indexed: a stale step returns a conflict and is never
applied twice. After feedback is acknowledged the next query (Gibbs sweeps
plus selection) is computed on a background thread; until it finishes,
query fetches report a "computing" status. Errors share one envelope:
{"code", "message", "detail"}.
"""

from __future__ import annotations

import threading
import uuid
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, PlainTextResponse
from pydantic import BaseModel

from .query_engine import ClusteringSession, ClusterSessionConfig
from .structures import PairAtom

__all__ = ["DatasetBundle", "create_app"]


@dataclass
class DatasetBundle:
    """A registered dataset: standardized features and optional ground truth."""

    name: str
    features: np.ndarray
    truth: np.ndarray | None = None


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str, detail=None):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.detail = detail


class SessionCreate(BaseModel):
    dataset: str
    config: dict = {}


class FeedbackBody(BaseModel):
    step: int
    accept: bool = False
    atom: list[int] | None = None
    same: bool | None = None


@dataclass
class LiveSession:
    session_id: str
    dataset: DatasetBundle
    engine: ClusteringSession
    lock: threading.Lock = field(default_factory=threading.Lock)
    computing: bool = False
    closed: bool = False

    @property
    def lifecycle(self) -> str:
        if self.closed:
            return "closed"
        if self.computing:
            return "selecting"
        if self.engine.converged:
            return "converged"
        return "awaiting_feedback"


def _snapshot_groups(query_items, snapshot) -> list[list[int]]:
    """Connected components of the snapshot's same-pair answers."""
    parent = {i: i for i in query_items}

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for atom, same in snapshot.items():
        if same:
            ra, rb = find(atom.i), find(atom.j)
            if ra != rb:
                parent[rb] = ra
    groups: dict[int, list[int]] = {}
    for i in query_items:
        groups.setdefault(find(i), []).append(i)
    return sorted((sorted(g) for g in groups.values()), key=lambda g: g[0])


def create_app(datasets: dict[str, DatasetBundle]) -> FastAPI:
    app = FastAPI(title="interactive clustering sessions")
    sessions: dict[str, LiveSession] = {}

    @app.exception_handler(ApiError)
    async def api_error_handler(request: Request, exc: ApiError):
        return JSONResponse(
            status_code=exc.status,
            content={"code": exc.code, "message": exc.message, "detail": exc.detail},
        )

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=422,
            content={
                "code": "validation_error",
                "message": "request body failed validation",
                "detail": exc.errors(),
            },
        )

    def get_session(session_id: str) -> LiveSession:
        if session_id not in sessions:
            raise ApiError(404, "unknown_session", f"no session {session_id}")
        return sessions[session_id]

    @app.post("/sessions", status_code=201)
    def create_session(body: SessionCreate):
        if body.dataset not in datasets:
            raise ApiError(404, "unknown_dataset", f"no dataset {body.dataset!r}")
        bundle = datasets[body.dataset]
        try:
            config = ClusterSessionConfig(**body.config)
            engine = ClusteringSession(
                bundle.features, config, ground_truth=bundle.truth
            )
        except (TypeError, ValueError) as exc:
            raise ApiError(400, "bad_config", str(exc)) from None
        engine.advance()  # first query is ready before the create returns
        session_id = uuid.uuid4().hex[:12]
        sessions[session_id] = LiveSession(session_id, bundle, engine)
        return {"session_id": session_id, "state": sessions[session_id].lifecycle}

    @app.get("/sessions/{session_id}/query")
    def get_query(session_id: str):
        live = get_session(session_id)
        with live.lock:
            if live.computing:
                return {"status": "computing", "step": len(live.engine.trace)}
            pending = live.engine.pending
            if pending is None and live.engine.converged:
                return {"status": "converged", "step": len(live.engine.trace)}
            if pending is None:
                pending = live.engine.advance()
                if pending is None:
                    return {"status": "converged", "step": len(live.engine.trace)}
            query, snapshot = pending
            feats = live.dataset.features
            items = [
                {
                    "id": int(i),
                    "x": float(feats[i, 0]),
                    "y": float(feats[i, 1]) if feats.shape[1] > 1 else 0.0,
                }
                for i in query.items
            ]
            return {
                "status": "ready",
                "step": len(live.engine.trace),
                "items": items,
                "groups": _snapshot_groups(query.items, snapshot),
                "snapshot": [
                    {"items": [a.i, a.j], "same": bool(v)}
                    for a, v in sorted(snapshot.items(), key=lambda kv: kv[0].items)
                ],
            }

    @app.post("/sessions/{session_id}/feedback")
    def post_feedback(session_id: str, body: FeedbackBody):
        live = get_session(session_id)
        with live.lock:
            if live.computing:
                raise ApiError(
                    409, "computing", "next query is being computed; retry shortly"
                )
            engine = live.engine
            if body.step != len(engine.trace):
                raise ApiError(
                    409,
                    "stale_step",
                    f"feedback for step {body.step} but session is at "
                    f"{len(engine.trace)}",
                    detail={"current_step": len(engine.trace)},
                )
            if engine.pending is None:
                raise ApiError(409, "no_pending_query", "session has no open query")
            query, snapshot = engine.pending
            if body.accept:
                atoms = sorted(snapshot.keys(), key=lambda a: a.items)
                atom = atoms[engine.rng.integers(len(atoms))]
                answer = snapshot[atom]
                accept = True
            else:
                if body.atom is None or body.same is None or len(body.atom) != 2:
                    raise ApiError(
                        400, "bad_feedback", "correction needs atom=[i, j] and same"
                    )
                try:
                    atom = PairAtom(int(body.atom[0]), int(body.atom[1]))
                except ValueError as exc:
                    raise ApiError(400, "bad_feedback", str(exc)) from None
                if atom not in snapshot:
                    raise ApiError(
                        400,
                        "atom_not_in_query",
                        f"{list(atom.items)} is not an atom of the pending query",
                        detail={"query": list(query.items)},
                    )
                answer = bool(body.same)
                accept = snapshot[atom] == answer
            event = engine.apply_feedback(atom, answer, accept)
            diag = engine.trace.diagnostics[-1]
            live.computing = True

        def advance_in_background():
            try:
                live.engine.advance()
            finally:
                with live.lock:
                    live.computing = False

        threading.Thread(target=advance_in_background, daemon=True).start()
        return {
            "state": "selecting",
            "step": len(live.engine.trace),
            "accepted": event.accept,
            "diagnostics": {
                k: v for k, v in diag.items() if k != "wall_ms"
            },
        }

    @app.get("/sessions/{session_id}/trace")
    def get_trace(session_id: str):
        live = get_session(session_id)
        with live.lock:
            return PlainTextResponse(
                live.engine.trace.to_jsonl(), media_type="application/jsonl"
            )

    @app.get("/sessions/{session_id}/state")
    def get_state(session_id: str):
        live = get_session(session_id)
        with live.lock:
            engine = live.engine
            mode = engine.mode_clustering()
            payload = {
                "lifecycle": live.lifecycle,
                "step": len(engine.trace),
                "clustering": list(mode.assignment),
                "diagnostics": {
                    "constraints": len(engine.constraints),
                    "confirmations": engine.n_confirmations,
                    "sweeps": len(engine.sweep_log),
                },
            }
            if engine.sweep_log:
                last = engine.sweep_log[-1]
                payload["diagnostics"]["log_joint"] = last["log_joint"]
                if "distance" in last:
                    payload["diagnostics"]["distance"] = last["distance"]
            series = [
                {
                    "step": i,
                    "constraints": d.get("constraints"),
                    "distance": d.get("distance"),
                    "uncertainty": d.get("query_uncertainty"),
                }
                for i, d in enumerate(engine.trace.diagnostics)
            ]
            payload["series"] = series
            return payload

    return app
