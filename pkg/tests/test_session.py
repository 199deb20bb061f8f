import numpy as np
import pytest

from racestrat.basetypes import Action
from racestrat.env import tiny_track, tiny_profile
from racestrat.baselines import parse_strategy
from racestrat.network import QNetwork
from racestrat.session import (
    SessionError, advance, create_session, end_session, explain, inject_event,
    load_event_log, recommendation_payload, replay_event_log, save_event_log,
    session_state_payload, whatif,
)
from racestrat.state import FEATURE_NAMES
from racestrat.xai.cart import DecisionTreePolicy, TreeNode

TINY_POOL = [parse_strategy("S[2]M"), parse_strategy("M[3]S")]


def _net(seed=0):
    return QNetwork.init(len(FEATURE_NAMES), 8, seed=seed, output_scale=100.0)


def _session(seed=5, tree=None, n_cars=3):
    return create_session(_net(), tiny_profile(), tiny_track(), TINY_POOL,
                          seed=seed, tree=tree, n_cars=n_cars,
                          controlled_delta=-0.3)


def test_create_and_state_payload():
    s = _session()
    payload = session_state_payload(s)
    assert payload["lap"] == 0
    assert payload["total_laps"] == 5
    assert len(payload["cars"]) == 3
    assert sum(c["controlled"] for c in payload["cars"]) == 1
    positions = sorted(c["position"] for c in payload["cars"])
    assert positions == [1, 2, 3]


def test_recommendation_has_all_q_values():
    s = _session()
    rec = recommendation_payload(s)
    assert set(rec["q_values"]) == {"np", "ps", "pm", "ph"}
    assert rec["action"] in rec["q_values"]


def test_advance_runs_one_lap_and_hidden_moves_once():
    s = _session()
    h0 = s.hidden.copy()
    out = advance(s, lap=0)
    assert s.lap == 1
    assert out["source"] == "agent"
    assert not np.array_equal(s.hidden, h0)
    assert len(s.features) == 2


def test_advance_rejects_stale_lap():
    s = _session()
    advance(s, lap=0)
    with pytest.raises(SessionError) as exc:
        advance(s, lap=0)
    assert exc.value.stale
    assert s.lap == 1  # unchanged by the rejected command


def test_override_executes_pit():
    s = _session()
    out = advance(s, lap=0, override="pm")
    assert out["action"] == "pm" and out["source"] == "override"
    assert session_state_payload(s)["controlled"]["compound"] == "M"


def test_override_unavailable_compound_rejected_without_advancing():
    s = _session()
    with pytest.raises(SessionError) as exc:
        advance(s, lap=0, override="ph")  # no hard sets on the tiny track
    assert "hard" in exc.value.reason
    assert s.lap == 0
    assert len(s.features) == 1


def test_inject_full_sc_shows_in_state_and_compresses_gaps():
    s = _session()
    advance(s, lap=0)
    inject_event(s, lap=1, kind="full")
    payload = session_state_payload(s)
    assert payload["sc_status"] == "full"
    trailing = [c for c in payload["cars"] if c["position"] > 1]
    assert all(c["gap_to_leader"] <= c["position"] * 1.0 + 1e-9 for c in trailing)


def test_inject_rejects_unknown_kind_and_stale_lap():
    s = _session()
    with pytest.raises(SessionError):
        inject_event(s, lap=0, kind="red-flag")
    with pytest.raises(SessionError):
        inject_event(s, lap=3, kind="full")


def test_whatif_pure_and_deterministic_on_noise_free_track():
    s = _session()
    advance(s, lap=0)
    before = [row for row in s.env.sim.trace]
    hidden_before = s.hidden.copy()
    out = whatif(s, lap=1, action="pm", n=1)
    assert sum(out["finish_distribution"].values()) == 1
    assert s.env.sim.trace == before
    assert np.array_equal(s.hidden, hidden_before)
    assert s.lap == 1
    # noise-free tiny track: a second identical call gives the same projection
    assert whatif(s, lap=1, action="pm", n=1) == out


def test_whatif_distributions_differ_between_actions():
    s = _session()
    a = whatif(s, lap=0, action="np", n=1)
    b = whatif(s, lap=0, action="pm", n=1)
    assert a["finish_distribution"] != b["finish_distribution"] or \
        a["mean_finish"] != b["mean_finish"] or a["action"] != b["action"]


def test_explain_attribution_efficiency():
    s = _session()
    advance(s, lap=0)
    out = explain(s, lap=1, method="attribution")
    total = out["base_value"] + sum(out["values"].values())
    assert total == pytest.approx(out["explained_output"], abs=1e-6)
    assert out["mode"] == "exact"


def _toy_tree():
    n = len(FEATURE_NAMES)
    root = TreeNode(feature=18, threshold=0.5,
                    left=TreeNode(action=0, counts=(5, 0, 0, 0)),
                    right=TreeNode(action=2, counts=(0, 0, 5, 0)))
    return DecisionTreePolicy(root=root, max_depth=1, n_features=n)


def test_explain_path_and_counterfactual():
    s = _session(tree=_toy_tree())
    out = explain(s, lap=0, method="path")
    assert out["action"] in ("np", "pm")
    assert all(p["formal"] for p in out["predicates"])

    cf = explain(s, lap=0, method="counterfactual", target="pm")
    assert cf["target"] == "pm"
    assert cf["distance"] > 0
    assert any("more laps" in note for note in cf["feasibility"])


def test_explain_requires_tree_when_needed():
    s = _session(tree=None)
    with pytest.raises(SessionError):
        explain(s, lap=0, method="path")
    with pytest.raises(SessionError):
        explain(s, lap=0, method="nonsense")


def test_event_log_replays_to_identical_classification(tmp_path):
    s = _session(seed=9)
    advance(s, lap=0)
    inject_event(s, lap=1, kind="full")
    advance(s, lap=1, override="pm")
    while not s.terminal:
        advance(s, lap=s.lap)
    save_event_log(s, tmp_path / "events.jsonl")

    log = load_event_log(tmp_path / "events.jsonl")
    replayed = replay_event_log(log, _net(), tiny_profile(), tiny_track(), TINY_POOL)
    assert replayed.env.sim.classification == s.env.sim.classification
    assert replayed.env.sim.trace == s.env.sim.trace


def test_end_session_blocks_further_commands():
    s = _session()
    end_session(s)
    with pytest.raises(SessionError):
        advance(s, lap=0)
