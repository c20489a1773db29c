"""HTTP session service: lifecycle, persistence, and error surface."""

import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from prefcourse.service import build_registry, create_app


@pytest.fixture(scope="module")
def registry():
    return build_registry(seed=0, synthetic_n=400)


@pytest.fixture()
def client(registry, tmp_path):
    app = create_app(tmp_path / "store", registry=registry)
    return TestClient(app)


def _reachable_subject(registry):
    """Test-split index of a negative subject descent can actually move."""
    bundle = registry["synthetic"]
    xt, _ = bundle.dataset.test()
    for idx in bundle.negative_indices:
        if bundle.model.predict_proba(xt[idx][None, :])[0] > 0.05:
            return int(idx)
    raise RuntimeError("no near-boundary negative subject")


def _make_session(client, registry, budget=3, **extra):
    body = {
        "dataset_id": "synthetic",
        "subject_index": _reachable_subject(registry),
        "budget": budget,
        "truth_seed": 5,
        **extra,
    }
    resp = client.post("/sessions", json=body)
    assert resp.status_code == 201, resp.text
    return resp.json()


def _answer(client, sid, token, payload=None):
    return client.post(
        f"/sessions/{sid}/answers",
        json={"token": token, "answer": payload or {"kind": "auto"}},
    )


def test_datasets_listing(client):
    doc = client.get("/datasets").json()
    entry = {d["id"]: d for d in doc["datasets"]}["synthetic"]
    assert entry["dim"] == 2
    assert [f["kind"] for f in entry["features"]] == ["continuous", "continuous"]
    assert entry["pool_size"] >= 10
    assert entry["negative_subjects"]


def test_session_happy_path(client, registry):
    state = _make_session(client, registry, budget=3)
    sid = state["session_id"]
    assert state["status"] == "awaiting_answer"
    assert state["round"] == 0
    assert np.allclose(state["center"], 0.5 * np.eye(2))
    assert state["violated"] == []
    q = state["question"]
    assert q["k"] == 2 and len(q["options"]) == 2
    assert q["indifferent_allowed"] is True
    assert all("pool_index" in o and "changes" in o for o in q["options"])

    for i in range(3):
        resp = _answer(client, sid, f"tok-{i}")
        assert resp.status_code == 200, resp.text
        state = resp.json()
        assert state["round"] == i + 1
    assert state["status"] == "ready"
    assert state["question"] is None
    assert 0.0 < state["radius"] <= 1.0

    plan = client.post(f"/sessions/{sid}/recourse", json={"method": "grad"})
    assert plan.status_code == 200, plan.text
    doc = plan.json()
    assert doc["valid"] is True
    assert doc["method"] == "grad"
    assert doc["worst_case_cost"] >= 0.0
    assert set(doc["terminal"]) == {"x1", "x2"}

    after = client.get(f"/sessions/{sid}").json()
    assert after["status"] == "completed"
    assert after["plans"] == ["grad"]

    graph = client.post(f"/sessions/{sid}/recourse", json={"method": "graph"})
    assert graph.status_code == 200
    gdoc = graph.json()
    assert gdoc["valid"] is True
    assert gdoc["path_cost"] == pytest.approx(sum(gdoc["edge_costs"]))
    assert gdoc["steps"]


def test_exhaustive_small_graph_method(client, registry):
    state = _make_session(client, registry, budget=1)
    sid = state["session_id"]
    _answer(client, sid, "t0")
    resp = client.post(
        f"/sessions/{sid}/recourse", json={"method": "graph-worst-case"}
    )
    assert resp.status_code == 200, resp.text
    assert resp.json()["method"] == "graph-worst-case"


def test_duplicate_token_is_not_reapplied(client, registry):
    state = _make_session(client, registry, budget=2)
    sid = state["session_id"]
    first = _answer(client, sid, "same-token")
    assert first.status_code == 200
    second = _answer(client, sid, "same-token")
    assert second.status_code == 200
    assert second.json()["round"] == first.json()["round"] == 1
    entries = client.get(f"/sessions/{sid}/transcript").json()["entries"]
    assert len(entries) == 1


def test_zero_budget_session_is_ready_immediately(client, registry):
    state = _make_session(client, registry, budget=0)
    assert state["status"] == "ready"
    assert state["question"] is None
    resp = client.post(
        f"/sessions/{state['session_id']}/recourse", json={"method": "grad"}
    )
    assert resp.status_code == 200


def test_manual_answers_accepted(client, registry):
    state = _make_session(client, registry, budget=2)
    sid = state["session_id"]
    win = state["question"]["options"][0]["pool_index"]
    resp = _answer(client, sid, "m1", {"kind": "preferred", "index": win})
    assert resp.status_code == 200
    entry = client.get(f"/sessions/{sid}/transcript").json()["entries"][0]
    assert entry["answer"] == {"kind": "preferred", "index": win}
    resp = _answer(client, sid, "m2", {"kind": "indifferent"})
    assert resp.status_code == 200
    assert resp.json()["status"] == "ready"


def test_contradiction_fails_the_session(client, registry):
    state = _make_session(
        client, registry, budget=4, margin=0.0, tolerant_alpha=0.0
    )
    sid = state["session_id"]
    status = state["status"]
    for i in range(4):
        resp = _answer(client, sid, f"c{i}", {"kind": "indifferent"})
        assert resp.status_code == 200
        status = resp.json()["status"]
        if status == "failed":
            break
    assert status == "failed"
    doc = client.get(f"/sessions/{sid}").json()
    assert doc["failure"]["reason"] == "infeasible"
    resp = client.post(f"/sessions/{sid}/recourse", json={"method": "grad"})
    assert resp.status_code == 409
    assert resp.json()["code"] == "not_ready"


def test_truth_never_appears_in_responses(client, registry):
    state = _make_session(client, registry, budget=1)
    sid = state["session_id"]
    _answer(client, sid, "t")
    session_doc = client.get(f"/sessions/{sid}").json()
    transcript_doc = client.get(f"/sessions/{sid}/transcript").json()
    assert "truth" not in json.dumps(session_doc)
    assert "truth" not in json.dumps(transcript_doc)


def test_session_survives_restart(registry, tmp_path):
    store = tmp_path / "store"
    with TestClient(create_app(store, registry=registry)) as c1:
        state = _make_session(c1, registry, budget=3)
        sid = state["session_id"]
        _answer(c1, sid, "a0")
        _answer(c1, sid, "a1")
        before = c1.get(f"/sessions/{sid}").json()

    with TestClient(create_app(store, registry=registry)) as c2:
        after = c2.get(f"/sessions/{sid}").json()
        assert after["status"] == before["status"] == "awaiting_answer"
        assert after["round"] == 2
        assert np.allclose(after["center"], before["center"], atol=1e-9)
        assert after["question"]["options"] == before["question"]["options"]
        # the replayed session keeps accepting answers
        resp = _answer(c2, sid, "a2")
        assert resp.status_code == 200
        assert resp.json()["status"] == "ready"


def test_failed_session_survives_restart(registry, tmp_path):
    store = tmp_path / "store"
    with TestClient(create_app(store, registry=registry)) as c1:
        state = _make_session(c1, registry, budget=4, margin=0.0, tolerant_alpha=0.0)
        sid = state["session_id"]
        for i in range(4):
            if _answer(c1, sid, f"f{i}", {"kind": "indifferent"}).json()[
                "status"
            ] == "failed":
                break
    with TestClient(create_app(store, registry=registry)) as c2:
        doc = c2.get(f"/sessions/{sid}").json()
        assert doc["status"] == "failed"
        assert doc["failure"]["reason"] == "infeasible"


def test_unknown_dataset_404(client):
    resp = client.post("/sessions", json={"dataset_id": "nope", "subject_index": 0})
    assert resp.status_code == 404
    assert resp.json()["code"] == "unknown_dataset"


def test_unknown_session_404(client):
    assert client.get("/sessions/doesnotexist").status_code == 404


def test_subject_validation(client, registry):
    bundle = registry["synthetic"]
    xt, _ = bundle.dataset.test()
    pos = int(np.flatnonzero(bundle.model.predict(xt) == 1)[0])
    resp = client.post(
        "/sessions", json={"dataset_id": "synthetic", "subject_index": pos}
    )
    assert resp.status_code == 422
    assert resp.json()["code"] == "subject_positive"

    resp = client.post(
        "/sessions", json={"dataset_id": "synthetic", "subject_index": 10**6}
    )
    assert resp.status_code == 422 and resp.json()["code"] == "bad_subject"

    resp = client.post("/sessions", json={"dataset_id": "synthetic"})
    assert resp.status_code == 422 and resp.json()["code"] == "bad_subject"


def test_subject_from_raw_features(client, registry):
    bundle = registry["synthetic"]
    xt, _ = bundle.dataset.test()
    raw = bundle.dataset.unscale(xt[_reachable_subject(registry)])
    resp = client.post(
        "/sessions",
        json={"dataset_id": "synthetic", "features": raw, "budget": 1, "truth_seed": 1},
    )
    assert resp.status_code == 201

    resp = client.post(
        "/sessions", json={"dataset_id": "synthetic", "features": {"x1": 0.2}}
    )
    assert resp.status_code == 422 and resp.json()["code"] == "bad_subject"


def test_budget_validation(client, registry):
    for bad in (-1, 51):
        resp = client.post(
            "/sessions",
            json={"dataset_id": "synthetic", "subject_index": 0, "budget": bad},
        )
        assert resp.status_code == 422
        assert resp.json()["code"] == "bad_budget"


def test_answer_error_surface(client, registry):
    state = _make_session(client, registry, budget=2)
    sid = state["session_id"]
    resp = client.post(f"/sessions/{sid}/answers", json={"answer": {"kind": "auto"}})
    assert resp.status_code == 422 and resp.json()["code"] == "missing_token"

    resp = _answer(client, sid, "x1", {"kind": "preferred"})
    assert resp.status_code == 422 and resp.json()["code"] == "bad_answer"

    resp = client.post(
        f"/sessions/{sid}/answers",
        content="not json",
        headers={"content-type": "application/json"},
    )
    assert resp.status_code == 400 and resp.json()["code"] == "bad_json"


def test_auto_answer_requires_truth(client, registry):
    body = {
        "dataset_id": "synthetic",
        "subject_index": _reachable_subject(registry),
        "budget": 1,
    }
    state = client.post("/sessions", json=body).json()
    resp = _answer(client, state["session_id"], "t0")
    assert resp.status_code == 422
    assert resp.json()["code"] == "bad_answer"


def test_recourse_error_surface(client, registry):
    state = _make_session(client, registry, budget=2)
    sid = state["session_id"]
    resp = client.post(f"/sessions/{sid}/recourse", json={"method": "magic"})
    assert resp.status_code == 422 and resp.json()["code"] == "invalid_method"
    resp = client.post(f"/sessions/{sid}/recourse", json={"method": "grad"})
    assert resp.status_code == 409 and resp.json()["code"] == "not_ready"


def test_api_key_guard(registry, tmp_path):
    app = create_app(tmp_path / "store", registry=registry, api_key="sekrit")
    client = TestClient(app)
    resp = client.get("/datasets")
    assert resp.status_code == 401
    assert resp.json()["code"] == "unauthorized"
    ok = client.get("/datasets", headers={"X-API-Key": "sekrit"})
    assert ok.status_code == 200
    # static UI paths bypass the key check (404 here, never 401)
    assert client.get("/ui/index.html").status_code == 404


def test_static_dir_served_under_ui(registry, tmp_path):
    static = tmp_path / "dist"
    static.mkdir()
    (static / "index.html").write_text("<!doctype html><title>ok</title>")
    app = create_app(tmp_path / "store", registry=registry, static_dir=static)
    client = TestClient(app)
    resp = client.get("/ui/")
    assert resp.status_code == 200
    assert "ok" in resp.text
