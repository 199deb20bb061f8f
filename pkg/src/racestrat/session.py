"""Live race sessions: one controlled race, lap-at-a-time, with explanations.

Framework-free core used by both the HTTP server and the CLI. A session owns a
RaceEnv plus the agent's recurrent hidden state; the hidden state advances
exactly once per completed lap. Every mutation is appended to an event log
that replays to an identical final classification.
"""

from __future__ import annotations

import copy
import json
import secrets
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .basetypes import ACTIONS, Action, Compound, SafetyCarStatus
from .baselines import StrategyPlan
from .agent import greedy_action
from .env import RaceEnv
from .network import QNetwork
from .sim import gaps as sim_gaps
from .state import COARSE_GROUPS, FEATURE_NAMES, ScalingProfile
from .track import TrackConfig
from .xai.cart import DecisionTreePolicy, decision_path
from .xai.counterfactual import counterfactual
from .xai.shapley import attribute

PROTOCOL_VERSION = 1

INJECT_KINDS = ("full", "virtual", "clear")

_INJECT_STATUS = {
    "full": SafetyCarStatus.FULL,
    "virtual": SafetyCarStatus.VIRTUAL,
    "clear": SafetyCarStatus.NONE,
}


class SessionError(Exception):
    """Rejected command; the session state is unchanged."""

    def __init__(self, reason: str, stale: bool = False):
        super().__init__(reason)
        self.reason = reason
        self.stale = stale


@dataclass
class Session:
    session_id: str
    env: RaceEnv
    net: QNetwork
    hidden: np.ndarray
    profile: ScalingProfile
    tree: DecisionTreePolicy | None = None
    mode: str = "step"                       # "step" or "auto"
    features: list[np.ndarray] = field(default_factory=list)
    event_log: list[dict] = field(default_factory=list)
    ended: bool = False

    @property
    def lap(self) -> int:
        return self.env.sim.lap

    @property
    def terminal(self) -> bool:
        return self.ended or self.env.sim.terminal or self.env.prev_state.terminal


def create_session(
    net: QNetwork,
    profile: ScalingProfile,
    config: TrackConfig,
    pool: list[StrategyPlan],
    seed: int,
    tree: DecisionTreePolicy | None = None,
    mode: str = "step",
    n_cars: int = 10,
    controlled_delta: float = 0.0,
    session_id: str | None = None,
) -> Session:
    if mode not in ("step", "auto"):
        raise SessionError(f"unknown session mode {mode!r}")
    env = RaceEnv(config, profile, seed, opponent_pool=pool, n_cars=n_cars,
                  controlled_delta=controlled_delta, model_key="session")
    x = env.reset()
    session = Session(
        session_id=session_id or secrets.token_hex(8),
        env=env,
        net=net,
        hidden=net.zero_hidden(),
        profile=profile,
        tree=tree,
        mode=mode,
        features=[x],
    )
    session.event_log.append({
        "event": "create",
        "seed": seed,
        "track": config.track_id,
        "n_cars": n_cars,
        "controlled_delta": controlled_delta,
    })
    return session


# ---- payload builders ----


def session_state_payload(session: Session) -> dict:
    sim = session.env.sim
    all_gaps = sim_gaps(sim)
    cars = []
    for car_id in sim.classification:
        car = sim.car(car_id)
        ahead, behind, leader = all_gaps[car_id]
        cars.append({
            "car_id": car_id,
            "position": sim.position_of(car_id),
            "compound": car.current_compound.short,
            "tyre_age": car.tyre_age,
            "cumulative_time": round(car.cumulative_time, 3),
            "gap_ahead": round(ahead, 3),
            "gap_behind": round(behind, 3),
            "gap_to_leader": round(leader, 3),
            "pit_count": car.pit_count,
            "controlled": car_id == session.env.controlled_id,
        })
    s = session.env.prev_state
    return {
        "lap": sim.lap,
        "total_laps": sim.total_laps,
        "track": session.env.config.track_id,
        "sc_status": sim.sc_status.value,
        "terminal": session.terminal,
        "mode": session.mode,
        "cars": cars,
        "controlled": {
            "position": s.position,
            "compound": s.current_tyre.short,
            "valid_finish": s.valid_finish,
            "availability": {
                "soft": s.soft_available,
                "medium": s.medium_available,
                "hard": s.hard_available,
            },
        },
    }


def recommendation_payload(session: Session) -> dict:
    """Greedy action + Q-values for the lap about to run (hidden untouched)."""
    if session.terminal:
        raise SessionError("race already finished")
    q, _ = session.net.forward(session.features[-1], session.hidden)
    action = greedy_action(q, session.env.availability())
    return {
        "lap": session.lap,
        "action": action.short,
        "q_values": {a.short: float(q[a]) for a in ACTIONS},
    }


# ---- commands ----


def _check_lap(session: Session, lap: int) -> None:
    if lap != session.lap:
        raise SessionError(f"stale lap {lap}; session is at lap {session.lap}",
                           stale=True)


def inject_event(session: Session, lap: int, kind: str, duration: int = 3) -> dict:
    """Force the safety-car state before the next lap runs."""
    _check_lap(session, lap)
    if session.terminal:
        raise SessionError("race already finished")
    if kind not in INJECT_KINDS:
        raise SessionError(f"unknown injection {kind!r}; expected one of {INJECT_KINDS}")
    sim = session.env.sim
    status = _INJECT_STATUS[kind]
    sim.sc_status = status
    sim.sc_laps_remaining = 0 if status == SafetyCarStatus.NONE else max(1, duration)
    if status == SafetyCarStatus.FULL:
        from .sim import _compress_field
        _compress_field(sim)
    session.event_log.append({"event": "inject", "lap": lap, "kind": kind,
                              "duration": duration})
    # keep the observation consistent with the new safety-car state
    from .state import scale, translate
    session.env.prev_state = translate(sim, session.env.config, session.env.controlled_id)
    session.features[-1] = scale(session.env.prev_state, session.profile)
    return {"lap": session.lap, "sc_status": sim.sc_status.value}


def advance(session: Session, lap: int, override: str | None = None) -> dict:
    """Run one lap with the override (if any) or the agent's greedy action."""
    _check_lap(session, lap)
    if session.terminal:
        raise SessionError("race already finished")
    if override is not None:
        try:
            action = next(a for a in ACTIONS if a.short == override)
        except StopIteration:
            raise SessionError(f"unknown action {override!r}") from None
        if action != Action.NO_PIT and not session.env.prev_state.available(action.compound):
            raise SessionError(
                f"override {override} rejected: no fresh {action.compound.value} set available")
        source = "override"
    else:
        rec = recommendation_payload(session)
        action = next(a for a in ACTIONS if a.short == rec["action"])
        source = "agent"

    _, hidden_next = session.net.forward(session.features[-1], session.hidden)
    x, r, done, info = session.env.step(action)
    session.hidden = hidden_next
    session.features.append(x)
    session.event_log.append({"event": "advance", "lap": lap,
                              "action": action.short, "source": source})
    result = {
        "lap": session.lap,
        "action": action.short,
        "source": source,
        "reward": r,
        "done": done,
    }
    if done:
        result["finish_position"] = info["finish_position"]
        result["strategy"] = info["strategy"]
        result["failed"] = info["failed"]
    return result


def whatif(session: Session, lap: int, action: str, n: int = 20,
           seed: int = 0) -> dict:
    """Projected finish distribution after a hypothetical action; pure."""
    _check_lap(session, lap)
    if session.terminal:
        raise SessionError("race already finished")
    try:
        first = next(a for a in ACTIONS if a.short == action)
    except StopIteration:
        raise SessionError(f"unknown action {action!r}") from None
    finishes = []
    for i in range(n):
        env = copy.deepcopy(session.env)
        # fresh randomness for the remainder of this continuation
        streams = np.random.SeedSequence([session.env.seed, 515151, seed, i]).spawn(2)
        env.sim.rng_env = np.random.default_rng(streams[0])
        env.sim.rng_car = np.random.default_rng(streams[1])
        hidden = session.hidden.copy()
        x = session.features[-1]
        a = first
        done = env.sim.terminal
        info = {}
        while not done:
            _, hidden = session.net.forward(x, hidden)
            x, _, done, info = env.step(a)
            if not done:
                q, _ = session.net.forward(x, hidden)
                a = greedy_action(q, env.availability())
        finishes.append(info.get("finish_position", session.env.prev_state.position))
    dist: dict[int, int] = {}
    for f in finishes:
        dist[f] = dist.get(f, 0) + 1
    return {
        "lap": session.lap,
        "action": action,
        "n": n,
        "finish_distribution": dict(sorted(dist.items())),
        "mean_finish": float(np.mean(finishes)),
    }


def explain(session: Session, lap: int, method: str, target: str | None = None,
            budget: int = 2000) -> dict:
    """Attribution, decision path or counterfactual for the current lap."""
    _check_lap(session, lap)
    if method == "attribution":
        baseline = np.asarray(session.profile.baseline, dtype=float)
        if baseline.shape != (len(FEATURE_NAMES),):
            raise SessionError("scaling profile has no baseline instance")
        att = attribute(session.net, session.features, len(session.features) - 1,
                        baseline, budget=budget, groups=COARSE_GROUPS)
        return {
            "lap": session.lap,
            "method": "attribution",
            "values": {k: float(v) for k, v in att.values.items()},
            "base_value": att.base_value,
            "explained_output": att.explained_output,
            "chosen_action": Action(att.chosen_action).short,
            "mode": att.method,
            "n_samples": att.n_samples,
        }
    if session.tree is None:
        raise SessionError(f"method {method!r} needs a distilled tree; none loaded")
    x = session.features[-1]
    if method == "path":
        preds, action = decision_path(session.tree, x, session.profile)
        return {
            "lap": session.lap,
            "method": "path",
            "action": Action(action).short,
            "predicates": [{"formal": p.formal, "display": p.display} for p in preds],
        }
    if method == "counterfactual":
        if target is None:
            raise SessionError("counterfactual needs a target action")
        try:
            tgt = next(a for a in ACTIONS if a.short == target)
        except StopIteration:
            raise SessionError(f"unknown action {target!r}") from None
        if session.tree.predict(x) == int(tgt):
            raise SessionError("tree already prefers the target action")
        try:
            cf = counterfactual(session.tree, x, tgt,
                                total_laps=session.env.config.total_laps)
        except ValueError as exc:
            raise SessionError(str(exc)) from None
        return {
            "lap": session.lap,
            "method": "counterfactual",
            "target": target,
            "distance": cf.distance,
            "norm": cf.norm,
            "changes": [{"feature": c.name, "before": c.before, "after": c.after,
                         "delta": c.delta} for c in cf.changes],
            "feasibility": cf.feasibility,
        }
    raise SessionError(f"unknown explanation method {method!r}")


def end_session(session: Session) -> dict:
    session.ended = True
    session.event_log.append({"event": "end", "lap": session.lap})
    return {"lap": session.lap, "ended": True}


# ---- event-log replay ----


def replay_event_log(
    log: list[dict],
    net: QNetwork,
    profile: ScalingProfile,
    config: TrackConfig,
    pool: list[StrategyPlan],
    tree: DecisionTreePolicy | None = None,
) -> Session:
    """Rebuild a session from its event log; same inputs give same race."""
    head = log[0]
    if head.get("event") != "create":
        raise ValueError("event log must start with a create event")
    session = create_session(net, profile, config, pool, seed=head["seed"],
                             tree=tree, n_cars=head.get("n_cars", 10),
                             controlled_delta=head.get("controlled_delta", 0.0))
    for entry in log[1:]:
        kind = entry["event"]
        if kind == "inject":
            inject_event(session, entry["lap"], entry["kind"], entry.get("duration", 3))
        elif kind == "advance":
            override = entry["action"] if entry["source"] == "override" else None
            advance(session, entry["lap"], override)
        elif kind == "end":
            end_session(session)
        else:
            raise ValueError(f"unknown event {kind!r}")
    return session


def save_event_log(session: Session, path: str | Path) -> None:
    Path(path).write_text("\n".join(json.dumps(e) for e in session.event_log) + "\n")


def load_event_log(path: str | Path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line]
