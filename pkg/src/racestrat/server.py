"""JSON-over-HTTP session service for the race console.

Every response body is a versioned envelope:

    {"protocol_version": 1, "type": "<MessageType>",
     "session_id": "...", "lap": <int>, "payload": {...}}

Errors use type "Error" with a reason in the payload; stale-lap commands come
back 409, unknown sessions 404, other rejected commands 400. Commands for one
session are serialized behind a per-session lock.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from . import session as sess
from .baselines import StrategyPlan, load_strategy_pool, scale_plan
from .network import QNetwork
from .state import ScalingProfile, calibrate_scaling
from .track import TrackConfig, load_track
from .xai.cart import DecisionTreePolicy


@dataclass
class ServerContext:
    """Model snapshot plus per-track assets shared by all sessions."""

    net: QNetwork
    profile: ScalingProfile
    tree: DecisionTreePolicy | None = None
    configs: dict[str, TrackConfig] = field(default_factory=dict)
    pools: dict[str, list[StrategyPlan]] = field(default_factory=dict)

    def track_assets(self, track_id: str, total_laps: int | None = None):
        if track_id not in self.configs:
            config = load_track(track_id)
            pool = load_strategy_pool(track_id)
            if total_laps is not None and total_laps != config.total_laps:
                pool = [scale_plan(p, config.total_laps, total_laps) for p in pool]
                config = config.replace(total_laps=total_laps)
            self.configs[track_id] = config
            self.pools[track_id] = pool
        return self.configs[track_id], self.pools[track_id]


class CreateSessionBody(BaseModel):
    track: str = "BHR"
    seed: int = 0
    total_laps: int | None = None
    n_cars: int = 10
    controlled_delta: float = 0.0
    mode: str = "step"


class AdvanceBody(BaseModel):
    lap: int
    override: str | None = None


class InjectBody(BaseModel):
    lap: int
    kind: str
    duration: int = 3


class WhatifBody(BaseModel):
    lap: int
    action: str
    n: int = 20
    seed: int = 0


class ExplainBody(BaseModel):
    lap: int
    method: str
    target: str | None = None
    budget: int = 2000


def _envelope(msg_type: str, session_id: str | None, lap: int | None, payload: dict,
              status: int = 200) -> JSONResponse:
    return JSONResponse(status_code=status, content={
        "protocol_version": sess.PROTOCOL_VERSION,
        "type": msg_type,
        "session_id": session_id,
        "lap": lap,
        "payload": payload,
    })


def create_app(context: ServerContext) -> FastAPI:
    app = FastAPI(title="race strategy session service")
    sessions: dict[str, sess.Session] = {}
    locks: dict[str, threading.Lock] = {}
    registry_lock = threading.Lock()

    def get(session_id: str) -> tuple[sess.Session, threading.Lock]:
        with registry_lock:
            if session_id not in sessions:
                raise sess.SessionError(f"unknown session {session_id!r}")
            return sessions[session_id], locks[session_id]

    @app.exception_handler(sess.SessionError)
    async def on_session_error(request: Request, exc: sess.SessionError):
        status = 409 if exc.stale else (404 if "unknown session" in exc.reason else 400)
        return _envelope("Error", None, None, {"reason": exc.reason}, status)

    @app.post("/session")
    def create_session(body: CreateSessionBody):
        config, pool = context.track_assets(body.track, body.total_laps)
        s = sess.create_session(
            context.net, context.profile, config, pool,
            seed=body.seed, tree=context.tree, mode=body.mode,
            n_cars=body.n_cars, controlled_delta=body.controlled_delta,
        )
        with registry_lock:
            sessions[s.session_id] = s
            locks[s.session_id] = threading.Lock()
        return _envelope("SessionState", s.session_id, s.lap,
                         sess.session_state_payload(s))

    @app.get("/session/{session_id}/state")
    def state(session_id: str):
        s, lock = get(session_id)
        with lock:
            return _envelope("SessionState", s.session_id, s.lap,
                             sess.session_state_payload(s))

    @app.get("/session/{session_id}/recommendation")
    def recommendation(session_id: str):
        s, lock = get(session_id)
        with lock:
            return _envelope("Recommendation", s.session_id, s.lap,
                             sess.recommendation_payload(s))

    @app.post("/session/{session_id}/advance")
    def advance(session_id: str, body: AdvanceBody):
        s, lock = get(session_id)
        with lock:
            result = sess.advance(s, body.lap, body.override)
            payload = sess.session_state_payload(s)
            payload["last_advance"] = result
            return _envelope("SessionState", s.session_id, s.lap, payload)

    @app.post("/session/{session_id}/inject")
    def inject(session_id: str, body: InjectBody):
        s, lock = get(session_id)
        with lock:
            sess.inject_event(s, body.lap, body.kind, body.duration)
            return _envelope("SessionState", s.session_id, s.lap,
                             sess.session_state_payload(s))

    @app.post("/session/{session_id}/whatif")
    def whatif(session_id: str, body: WhatifBody):
        s, lock = get(session_id)
        with lock:
            return _envelope("Whatif", s.session_id, s.lap,
                             sess.whatif(s, body.lap, body.action, body.n, body.seed))

    @app.post("/session/{session_id}/explain")
    def explain(session_id: str, body: ExplainBody):
        s, lock = get(session_id)
        with lock:
            return _envelope("Explanation", s.session_id, s.lap,
                             sess.explain(s, body.lap, body.method, body.target,
                                          body.budget))

    @app.delete("/session/{session_id}")
    def end(session_id: str):
        s, lock = get(session_id)
        with lock:
            payload = sess.end_session(s)
        with registry_lock:
            sessions.pop(session_id, None)
            locks.pop(session_id, None)
        return _envelope("EndSession", session_id, payload["lap"], payload)

    return app


def default_context(
    checkpoint: str | None = None,
    tree_path: str | None = None,
    track: str = "BHR",
    total_laps: int = 20,
) -> ServerContext:
    """Context from a checkpoint, or an untrained network for protocol demos."""
    from .track import desk_track

    if checkpoint is not None:
        from .agent import load_checkpoint
        net, _, profile, _ = load_checkpoint(checkpoint)
    else:
        from .state import FEATURE_NAMES
        config = desk_track(track, total_laps)
        profile = calibrate_scaling(config, n_sims=200, seed=0)
        net = QNetwork.init(len(FEATURE_NAMES), 64, seed=0, output_scale=1000.0)
    tree = None
    if tree_path is not None:
        from .xai.cart import load_tree
        tree = load_tree(tree_path)
    context = ServerContext(net=net, profile=profile, tree=tree)
    context.track_assets(track, total_laps)
    return context
