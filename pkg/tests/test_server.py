import warnings

import pytest

warnings.filterwarnings("ignore", category=DeprecationWarning)

from fastapi.testclient import TestClient

from racestrat.baselines import parse_strategy
from racestrat.env import tiny_profile, tiny_track
from racestrat.network import QNetwork
from racestrat.server import ServerContext, create_app
from racestrat.session import PROTOCOL_VERSION
from racestrat.state import FEATURE_NAMES
from racestrat.xai.cart import DecisionTreePolicy, TreeNode

TINY_POOL = [parse_strategy("S[2]M"), parse_strategy("M[3]S")]


def _toy_tree():
    # splits on race_progress: early race -> no pit, late -> pit medium
    root = TreeNode(feature=FEATURE_NAMES.index("race_progress"), threshold=0.5,
                    left=TreeNode(action=0, counts=(5, 0, 0, 0)),
                    right=TreeNode(action=2, counts=(0, 0, 5, 0)))
    return DecisionTreePolicy(root=root, max_depth=1,
                              n_features=len(FEATURE_NAMES))


@pytest.fixture(scope="module")
def client():
    config = tiny_track()
    context = ServerContext(
        net=QNetwork.init(len(FEATURE_NAMES), 8, seed=0, output_scale=100.0),
        profile=tiny_profile(),
        tree=_toy_tree(),
        configs={"BHR": config},
        pools={"BHR": TINY_POOL},
    )
    return TestClient(create_app(context))


def _create(client, seed=5):
    r = client.post("/session", json={"track": "BHR", "seed": seed, "n_cars": 3})
    assert r.status_code == 200
    return r.json()


def test_create_returns_versioned_envelope(client):
    body = _create(client)
    assert body["protocol_version"] == PROTOCOL_VERSION
    assert body["type"] == "SessionState"
    assert body["lap"] == 0
    assert len(body["payload"]["cars"]) == 3


def test_state_and_recommendation(client):
    sid = _create(client)["session_id"]
    r = client.get(f"/session/{sid}/state")
    assert r.status_code == 200
    assert r.json()["payload"]["total_laps"] == 5
    r = client.get(f"/session/{sid}/recommendation")
    assert r.status_code == 200
    payload = r.json()["payload"]
    assert set(payload["q_values"]) == {"np", "ps", "pm", "ph"}


def test_advance_and_stale_conflict(client):
    sid = _create(client)["session_id"]
    r = client.post(f"/session/{sid}/advance", json={"lap": 0})
    assert r.status_code == 200
    assert r.json()["lap"] == 1
    assert r.json()["payload"]["last_advance"]["source"] == "agent"
    r = client.post(f"/session/{sid}/advance", json={"lap": 0})
    assert r.status_code == 409
    assert r.json()["type"] == "Error"


def test_override_changes_compound(client):
    sid = _create(client)["session_id"]
    r = client.post(f"/session/{sid}/advance", json={"lap": 0, "override": "pm"})
    assert r.status_code == 200
    assert r.json()["payload"]["last_advance"]["action"] == "pm"
    assert r.json()["payload"]["controlled"]["compound"] == "M"


def test_invalid_override_rejected_without_advancing(client):
    sid = _create(client)["session_id"]
    # no hard sets exist on this track; the command must fail without advancing
    r = client.post(f"/session/{sid}/advance", json={"lap": 0, "override": "ph"})
    assert r.status_code == 400
    assert "hard" in r.json()["payload"]["reason"]
    assert client.get(f"/session/{sid}/state").json()["lap"] == 0


def test_inject_full_safety_car(client):
    sid = _create(client)["session_id"]
    r = client.post(f"/session/{sid}/inject", json={"lap": 0, "kind": "full"})
    assert r.status_code == 200
    assert r.json()["payload"]["sc_status"] == "full"


def test_whatif_returns_distributions(client):
    sid = _create(client)["session_id"]
    r = client.post(f"/session/{sid}/whatif",
                    json={"lap": 0, "action": "pm", "n": 3, "seed": 1})
    assert r.status_code == 200
    payload = r.json()["payload"]
    assert payload["n"] == 3
    assert sum(payload["finish_distribution"].values()) == 3
    # the live session is untouched by the what-if
    assert client.get(f"/session/{sid}/state").json()["lap"] == 0


def test_explain_attribution_and_path(client):
    sid = _create(client)["session_id"]
    r = client.post(f"/session/{sid}/explain",
                    json={"lap": 0, "method": "attribution", "budget": 50})
    assert r.status_code == 200
    payload = r.json()["payload"]
    assert payload["method"] == "attribution"
    assert payload["chosen_action"] in {"np", "ps", "pm", "ph"}
    r = client.post(f"/session/{sid}/explain", json={"lap": 0, "method": "path"})
    assert r.status_code == 200
    assert r.json()["payload"]["action"] == "np"


def test_explain_counterfactual(client):
    sid = _create(client)["session_id"]
    r = client.post(f"/session/{sid}/explain",
                    json={"lap": 0, "method": "counterfactual", "target": "pm"})
    assert r.status_code == 200
    payload = r.json()["payload"]
    assert payload["target"] == "pm"
    assert payload["changes"]


def test_unknown_session_404(client):
    assert client.get("/session/nope/state").status_code == 404


def test_delete_ends_session(client):
    sid = _create(client)["session_id"]
    r = client.delete(f"/session/{sid}")
    assert r.status_code == 200
    assert r.json()["payload"]["ended"]
    assert client.get(f"/session/{sid}/state").status_code == 404
