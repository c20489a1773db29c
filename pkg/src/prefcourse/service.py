"""HTTP session API: question/answer elicitation over datasets plus recourse
generation, with append-only JSONL persistence per session.

The event log is the source of truth.  Centers are cached in the log for
auditing but are re-derived by replay on load, so a restarted service
reproduces the exact incumbent (selection and re-centering are
deterministic given the logged answers).
"""

from __future__ import annotations

import json
import threading
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .classifiers import MLPClassifier, train_classifier
from .core import CostMatrix
from .datasets import DataError, Dataset, DatasetSchema, gen_synthetic, load_csv
from .elicitation import (
    Answer,
    ElicitationSession,
    PoolExhausted,
    Question,
    apply_answer,
    gen_truth_random,
    respond_simulated,
    select_question,
)
from .gradient_recourse import GradConfig, generate
from .graph_recourse import (
    EnumerationBudget,
    Unreachable,
    assign_worst_case_weights,
    build_graph,
    minmax_flow_exhaustive,
    shortest_sequential_recourse,
)
from .sdp import InfeasibleSet

STATUS_AWAITING = "awaiting_answer"
STATUS_READY = "ready"
STATUS_COMPLETED = "completed"
STATUS_FAILED = "failed"

RECOURSE_METHODS = ("grad", "graph", "graph-worst-case")
MAX_BUDGET = 50
POOL_CAP = 200
GRAPH_CAP = 40  # per class, for the shortest-path method
SMALL_GRAPH_CAP = 8  # per class, for the exhaustive min-max method


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str, detail=None):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.detail = detail

    def body(self) -> dict:
        return {"code": self.code, "message": self.message, "detail": self.detail}


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


# ---------------------------------------------------------------------------
# Dataset registry


@dataclass
class DatasetBundle:
    """A loaded dataset with its classifier and derived candidate sets."""

    dataset: Dataset
    model: MLPClassifier
    pool: np.ndarray  # predicted-positive test rows, capped
    negative_indices: np.ndarray  # test-row indices predicted negative
    graph_points: np.ndarray
    graph_classes: np.ndarray
    small_points: np.ndarray
    small_classes: np.ndarray

    @property
    def dim(self) -> int:
        return self.dataset.dim


def make_bundle(ds: Dataset, seed: int = 0) -> DatasetBundle:
    model = train_classifier(ds, seed=seed)
    xt, _ = ds.test()
    pred = model.predict(xt)
    pos = np.flatnonzero(pred == 1)
    neg = np.flatnonzero(pred == 0)
    if len(pos) < 2 or len(neg) < 1:
        raise DataError(f"{ds.name}: classifier leaves too few candidates")
    rng = np.random.default_rng(seed)

    def cap(idx, limit):
        if len(idx) <= limit:
            return idx
        return np.sort(rng.choice(idx, size=limit, replace=False))

    pool = xt[cap(pos, POOL_CAP)]
    gp, gn = cap(pos, GRAPH_CAP), cap(neg, GRAPH_CAP)
    sp, sn = cap(pos, SMALL_GRAPH_CAP), cap(neg, SMALL_GRAPH_CAP)
    return DatasetBundle(
        dataset=ds,
        model=model,
        pool=pool,
        negative_indices=neg,
        graph_points=np.vstack([xt[gp], xt[gn]]),
        graph_classes=np.concatenate(
            [np.ones(len(gp), dtype=int), np.zeros(len(gn), dtype=int)]
        ),
        small_points=np.vstack([xt[sp], xt[sn]]),
        small_classes=np.concatenate(
            [np.ones(len(sp), dtype=int), np.zeros(len(sn), dtype=int)]
        ),
    )


def build_registry(
    csv_specs: dict[str, tuple[str, str]] | None = None,
    seed: int = 0,
    synthetic_n: int = 2000,
) -> dict[str, DatasetBundle]:
    """Bundled synthetic dataset plus any name -> (csv, schema) pairs."""
    registry = {}
    rng = np.random.default_rng(seed)
    registry["synthetic"] = make_bundle(gen_synthetic(synthetic_n, rng), seed)
    for name, (csv_path, schema_path) in (csv_specs or {}).items():
        schema = DatasetSchema.from_file(schema_path)
        ds = load_csv(csv_path, schema, seed=seed)
        ds.name = name
        registry[name] = make_bundle(ds, seed)
    return registry


# ---------------------------------------------------------------------------
# Session state and persistence


@dataclass
class SessionState:
    session_id: str
    dataset_id: str
    sess: ElicitationSession
    strategy: str
    k: int
    gamma: float | None
    truth: CostMatrix | None
    created_at: str
    updated_at: str
    status: str = STATUS_AWAITING
    pending: Question | None = None
    transcript: list[dict] = field(default_factory=list)
    applied_tokens: dict[str, int] = field(default_factory=dict)
    plans: dict[str, dict] = field(default_factory=dict)
    failure: dict | None = None


class SessionStore:
    """JSONL event log per session; in-memory states rebuilt by replay."""

    def __init__(self, root, registry: dict[str, DatasetBundle]):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.registry = registry
        self._states: dict[str, SessionState] = {}
        self._locks: dict[str, threading.RLock] = {}
        self._mu = threading.Lock()
        for path in sorted(self.root.glob("*.jsonl")):
            sid = path.stem
            try:
                self._states[sid] = self._replay(sid)
            except Exception as exc:  # noqa: BLE001 - a bad log must not kill boot
                self._states[sid] = None  # type: ignore[assignment]
                print(f"warning: session {sid} failed to load: {exc}")

    def lock(self, session_id: str) -> threading.RLock:
        with self._mu:
            if session_id not in self._locks:
                self._locks[session_id] = threading.RLock()
            return self._locks[session_id]

    def _path(self, session_id: str) -> Path:
        return self.root / f"{session_id}.jsonl"

    def append(self, session_id: str, event: dict):
        line = json.dumps(event, separators=(",", ":")) + "\n"
        with open(self._path(session_id), "a", encoding="utf-8") as fh:
            fh.write(line)
            fh.flush()

    def get(self, session_id: str) -> SessionState:
        state = self._states.get(session_id)
        if state is None:
            raise ApiError(404, "unknown_session", f"no session {session_id!r}")
        return state

    def put(self, state: SessionState):
        self._states[state.session_id] = state

    def ids(self) -> list[str]:
        return sorted(k for k, v in self._states.items() if v is not None)

    def _replay(self, session_id: str) -> SessionState:
        """Rebuild a session by re-running selection and re-centering.

        Logged answers are authoritative; questions are re-selected (the
        selectors are deterministic) and checked against the log.
        """
        events = []
        with open(self._path(session_id), encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    events.append(json.loads(line))
        if not events or events[0].get("event") != "created":
            raise DataError("log does not start with a created event")
        head = events[0]
        bundle = self.registry.get(head["dataset_id"])
        if bundle is None:
            raise ApiError(
                404, "unknown_dataset", f"dataset {head['dataset_id']!r} not loaded"
            )
        sess = ElicitationSession(
            x0=np.array(head["subject"], dtype=float),
            pool=bundle.pool,
            budget=head["budget"],
            margin=head["margin"],
            tolerant_alpha=head["tolerant_alpha"],
            rng_seed=head["seed"],
        )
        truth = (
            CostMatrix(np.array(head["truth"], dtype=float))
            if head.get("truth")
            else None
        )
        state = SessionState(
            session_id=session_id,
            dataset_id=head["dataset_id"],
            sess=sess,
            strategy=head["strategy"],
            k=head["k"],
            gamma=head.get("gamma"),
            truth=truth,
            created_at=head["ts"],
            updated_at=head["ts"],
        )
        for ev in events[1:]:
            kind = ev.get("event")
            state.updated_at = ev.get("ts", state.updated_at)
            if kind == "answer":
                question = _next_question(state)
                logged = ev.get("options")
                if logged is not None and tuple(logged) != question.option_indices:
                    raise DataError("replayed question diverges from the log")
                try:
                    _apply(state, question, Answer.from_json(ev["answer"]), ev["token"])
                except InfeasibleSet:
                    state.status = STATUS_FAILED  # failed event follows with details
            elif kind == "failed":
                state.status = STATUS_FAILED
                state.failure = {"reason": ev["reason"], "detail": ev.get("detail")}
            elif kind == "recourse":
                state.plans[ev["method"]] = ev["plan"]
                state.status = STATUS_COMPLETED
        if state.status == STATUS_AWAITING:
            _refresh_question(state)
        return state


def _next_question(state: SessionState) -> Question:
    if state.pending is None:
        state.pending = select_question(
            state.sess, strategy=state.strategy, k=state.k, gamma=state.gamma
        )
    return state.pending


def _refresh_question(state: SessionState):
    """Attach the next question or flip to ready when the budget is spent."""
    if state.sess.round >= state.sess.budget:
        state.status = STATUS_READY
        state.pending = None
        return
    try:
        _next_question(state)
        state.status = STATUS_AWAITING
    except PoolExhausted:
        state.status = STATUS_READY
        state.pending = None


def _apply(state: SessionState, question: Question, answer: Answer, token: str):
    apply_answer(state.sess, question, answer)
    state.pending = None
    state.applied_tokens[token] = state.sess.round
    inc = state.sess.incumbent
    state.transcript.append(
        {
            "round": state.sess.round,
            "option_indices": [int(i) for i in question.option_indices],
            "projection_distance": question.projection_distance,
            "answer": answer.to_json(),
            "center": inc.center.to_lists(),
            "radius": inc.radius,
            "violated": [int(v) for v in getattr(inc, "violated", ())],
        }
    )
    _refresh_question(state)


# ---------------------------------------------------------------------------
# Views


def _changes(ds: Dataset, before: dict, after: dict) -> dict:
    out = {}
    for name, b in before.items():
        a = after[name]
        if isinstance(b, float):
            if abs(a - b) > 1e-9:
                out[name] = {"from": b, "to": a}
        elif a != b:
            out[name] = {"from": b, "to": a}
    return out


def _question_view(state: SessionState, bundle: DatasetBundle) -> dict | None:
    if state.pending is None:
        return None
    ds = bundle.dataset
    subject = ds.unscale(state.sess.x0)
    options = []
    for idx in state.pending.option_indices:
        feats = ds.unscale(bundle.pool[idx])
        options.append(
            {
                "pool_index": int(idx),
                "features": feats,
                "changes": _changes(ds, subject, feats),
            }
        )
    return {
        "round": state.sess.round,
        "k": len(options),
        "options": options,
        "indifferent_allowed": len(options) == 2,
    }


def _record_view(state: SessionState, bundle: DatasetBundle) -> dict:
    inc = state.sess.incumbent
    return {
        "session_id": state.session_id,
        "dataset_id": state.dataset_id,
        "status": state.status,
        "round": state.sess.round,
        "budget": state.sess.budget,
        "strategy": state.strategy,
        "k": state.k,
        "created_at": state.created_at,
        "updated_at": state.updated_at,
        "subject": bundle.dataset.unscale(state.sess.x0),
        "center": inc.center.to_lists(),
        "radius": inc.radius,
        "violated": [int(v) for v in getattr(inc, "violated", ())],
        "question": _question_view(state, bundle),
        "failure": state.failure,
        "plans": sorted(state.plans),
    }


# ---------------------------------------------------------------------------
# Operations


def create_session(store: SessionStore, body: dict) -> SessionState:
    dataset_id = body.get("dataset_id")
    bundle = store.registry.get(dataset_id)
    if bundle is None:
        raise ApiError(404, "unknown_dataset", f"dataset {dataset_id!r} not loaded")
    ds = bundle.dataset
    budget = int(body.get("budget", 5))
    if not 0 <= budget <= MAX_BUDGET:
        raise ApiError(422, "bad_budget", f"budget must be in [0, {MAX_BUDGET}]")
    strategy = body.get("strategy", "exhaustive")
    k = int(body.get("k", 2))
    gamma = body.get("gamma")
    margin = float(body.get("margin", 0.01))
    alpha = float(body.get("tolerant_alpha", 0.5))
    seed = int(body.get("seed", 0))

    if body.get("subject_index") is not None:
        xt, _ = ds.test()
        idx = int(body["subject_index"])
        if not 0 <= idx < len(xt):
            raise ApiError(422, "bad_subject", f"test-row index out of range: {idx}")
        x0 = xt[idx]
    elif body.get("features") is not None:
        try:
            x0 = ds.encode_row(body["features"])
        except DataError as exc:
            raise ApiError(422, "bad_subject", str(exc)) from exc
    else:
        raise ApiError(422, "bad_subject", "need subject_index or features")
    if bundle.model.predict(x0[None, :])[0] == 1:
        raise ApiError(
            422,
            "subject_positive",
            "subject already receives the favorable outcome",
        )

    truth = None
    if body.get("truth_seed") is not None:
        rng = np.random.default_rng(int(body["truth_seed"]))
        truth = gen_truth_random(ds.dim, rng)

    try:
        sess = ElicitationSession(
            x0=x0,
            pool=bundle.pool,
            budget=budget,
            margin=margin,
            tolerant_alpha=alpha,
            rng_seed=seed,
        )
    except ValueError as exc:
        raise ApiError(422, "bad_config", str(exc)) from exc

    state = SessionState(
        session_id=uuid.uuid4().hex[:16],
        dataset_id=dataset_id,
        sess=sess,
        strategy=strategy,
        k=k,
        gamma=gamma,
        truth=truth,
        created_at=_now(),
        updated_at=_now(),
    )
    try:
        _refresh_question(state)
    except ValueError as exc:
        raise ApiError(422, "bad_config", str(exc)) from exc
    store.append(
        state.session_id,
        {
            "event": "created",
            "ts": state.created_at,
            "dataset_id": dataset_id,
            "subject": [float(v) for v in x0],
            "subject_index": body.get("subject_index"),
            "budget": budget,
            "strategy": strategy,
            "k": k,
            "gamma": gamma,
            "margin": margin,
            "tolerant_alpha": alpha,
            "seed": seed,
            "truth": truth.to_lists() if truth is not None else None,
        },
    )
    if state.pending is not None:
        store.append(
            state.session_id,
            {
                "event": "question",
                "ts": _now(),
                "round": state.sess.round,
                "options": [int(i) for i in state.pending.option_indices],
                "projection_distance": state.pending.projection_distance,
            },
        )
    store.put(state)
    return state


def submit_answer(store: SessionStore, session_id: str, body: dict) -> SessionState:
    state = store.get(session_id)
    token = body.get("token")
    if not isinstance(token, str) or not token:
        raise ApiError(422, "missing_token", "idempotency token required")
    if token in state.applied_tokens:
        return state  # safe retry, nothing re-applied
    if state.status != STATUS_AWAITING:
        raise ApiError(
            409,
            "not_awaiting",
            f"session status is {state.status}; answer not accepted",
        )
    raw = body.get("answer")
    if not isinstance(raw, dict):
        raise ApiError(422, "bad_answer", "answer object required")
    question = state.pending
    if raw.get("kind") == "auto":
        if state.truth is None:
            raise ApiError(422, "bad_answer", "auto answers need a simulated truth")
        answer = respond_simulated(state.truth, question, state.sess)
    else:
        try:
            answer = Answer.from_json(raw)
        except (ValueError, KeyError) as exc:
            raise ApiError(422, "bad_answer", str(exc)) from exc
    try:
        _apply(state, question, answer, token)
    except ValueError as exc:
        raise ApiError(422, "bad_answer", str(exc)) from exc
    except InfeasibleSet as exc:
        state.status = STATUS_FAILED
        state.failure = {
            "reason": "infeasible",
            "detail": "preferences admit no cost matrix even after tolerant relaxation",
        }
        store.append(
            session_id,
            {
                "event": "answer",
                "ts": _now(),
                "round": state.sess.round + 1,
                "token": token,
                "options": [int(i) for i in question.option_indices],
                "answer": answer.to_json(),
                "center": None,
                "radius": None,
                "violated": [],
                "status": STATUS_FAILED,
            },
        )
        store.append(
            session_id,
            {
                "event": "failed",
                "ts": _now(),
                "reason": "infeasible",
                "detail": str(exc),
            },
        )
        return state
    state.updated_at = _now()
    entry = state.transcript[-1]
    store.append(
        session_id,
        {
            "event": "answer",
            "ts": state.updated_at,
            "round": entry["round"],
            "token": token,
            "options": entry["option_indices"],
            "answer": entry["answer"],
            "center": entry["center"],
            "radius": entry["radius"],
            "violated": entry["violated"],
            "status": state.status,
        },
    )
    if state.pending is not None:
        store.append(
            session_id,
            {
                "event": "question",
                "ts": _now(),
                "round": state.sess.round,
                "options": [int(i) for i in state.pending.option_indices],
                "projection_distance": state.pending.projection_distance,
            },
        )
    return state


def _grad_plan(state: SessionState, bundle: DatasetBundle) -> dict:
    ds = bundle.dataset
    spec = state.sess.spec()
    plan = generate(
        state.sess.x0,
        bundle.model,
        spec,
        GradConfig(),
        one_hot_blocks=ds.one_hot_blocks(),
    )
    before = ds.unscale(state.sess.x0)
    after = ds.unscale(plan.terminal)
    payload = {
        "method": "grad",
        "valid": bool(plan.valid),
        "iterations_used": int(plan.iterations_used),
        "worst_case_cost": float(plan.worst_case_cost),
        "terminal": after,
        "changes": _changes(ds, before, after),
    }
    if not plan.valid:
        raise ApiError(
            409,
            "invalid_plan",
            "descent exhausted its schedule without crossing the boundary",
            detail=payload,
        )
    return payload


def _graph_plan(state: SessionState, bundle: DatasetBundle, exhaustive: bool) -> dict:
    ds = bundle.dataset
    spec = state.sess.spec()
    if exhaustive:
        # k = 5 keeps the small demo graph connected across the boundary.
        graph = build_graph(
            bundle.small_points, bundle.small_classes, state.sess.x0, k=5
        )
        try:
            plan = minmax_flow_exhaustive(graph, spec)
        except Unreachable as exc:
            raise ApiError(409, "unreachable", str(exc)) from exc
        except EnumerationBudget as exc:
            raise ApiError(409, "too_large", str(exc)) from exc
    else:
        graph = build_graph(
            bundle.graph_points, bundle.graph_classes, state.sess.x0, k=10
        )
        weighted = assign_worst_case_weights(graph, spec)
        try:
            plan = shortest_sequential_recourse(weighted)
        except Unreachable as exc:
            raise ApiError(409, "unreachable", str(exc)) from exc
    steps = []
    prev = ds.unscale(state.sess.x0)
    for node in plan.path[1:]:
        feats = ds.unscale(graph.points[node])
        steps.append(
            {
                "node": int(node),
                "features": feats,
                "changes": _changes(ds, prev, feats),
            }
        )
        prev = feats
    return {
        "method": "graph-worst-case" if exhaustive else "graph",
        "valid": True,
        "path_cost": float(plan.path_cost),
        "edge_costs": [float(c) for c in plan.edge_costs],
        "steps": steps,
    }


def request_recourse(store: SessionStore, session_id: str, body: dict) -> dict:
    state = store.get(session_id)
    method = body.get("method")
    if method not in RECOURSE_METHODS:
        raise ApiError(
            422, "invalid_method", f"method must be one of {RECOURSE_METHODS}"
        )
    if state.status not in (STATUS_READY, STATUS_COMPLETED):
        raise ApiError(
            409, "not_ready", f"session status is {state.status}; finish answering first"
        )
    bundle = store.registry[state.dataset_id]
    if method == "grad":
        payload = _grad_plan(state, bundle)
    else:
        payload = _graph_plan(state, bundle, exhaustive=method == "graph-worst-case")
    state.plans[method] = payload
    state.status = STATUS_COMPLETED
    state.updated_at = _now()
    store.append(
        session_id,
        {"event": "recourse", "ts": state.updated_at, "method": method, "plan": payload},
    )
    return payload


# ---------------------------------------------------------------------------
# FastAPI wiring


def create_app(
    store_dir,
    registry: dict[str, DatasetBundle] | None = None,
    api_key: str | None = None,
    static_dir=None,
):
    if registry is None:
        registry = build_registry()
    store = SessionStore(store_dir, registry)
    app = FastAPI(title="prefcourse", docs_url=None, redoc_url=None)
    app.state.store = store

    @app.exception_handler(ApiError)
    async def _api_error(_req: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status, content=exc.body())

    @app.middleware("http")
    async def _auth(request: Request, call_next):
        if api_key is not None and not request.url.path.startswith("/ui"):
            if request.headers.get("x-api-key") != api_key:
                return JSONResponse(
                    status_code=401,
                    content={
                        "code": "unauthorized",
                        "message": "missing or wrong X-API-Key header",
                        "detail": None,
                    },
                )
        return await call_next(request)

    def _view(state: SessionState) -> dict:
        return _record_view(state, store.registry[state.dataset_id])

    async def _json_body(request: Request) -> dict:
        try:
            body = await request.json()
        except Exception as exc:  # noqa: BLE001
            raise ApiError(400, "bad_json", "request body is not valid JSON") from exc
        if not isinstance(body, dict):
            raise ApiError(400, "bad_json", "request body must be a JSON object")
        return body

    @app.get("/datasets")
    def list_datasets():
        out = []
        for name in sorted(store.registry):
            bundle = store.registry[name]
            ds = bundle.dataset
            out.append(
                {
                    "id": name,
                    "dim": ds.dim,
                    "features": [
                        {
                            "name": b.name,
                            "kind": b.kind,
                            "categories": list(b.categories),
                        }
                        for b in ds.blocks
                    ],
                    "pool_size": int(len(bundle.pool)),
                    "negative_subjects": [
                        int(i) for i in bundle.negative_indices[:25]
                    ],
                }
            )
        return {"datasets": out}

    @app.post("/sessions", status_code=201)
    async def post_session(request: Request):
        body = await _json_body(request)
        state = create_session(store, body)
        return _view(state)

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        with store.lock(session_id):
            return _view(store.get(session_id))

    @app.post("/sessions/{session_id}/answers")
    async def post_answer(session_id: str, request: Request):
        body = await _json_body(request)
        with store.lock(session_id):
            state = submit_answer(store, session_id, body)
            return _view(state)

    @app.post("/sessions/{session_id}/recourse")
    async def post_recourse(session_id: str, request: Request):
        body = await _json_body(request)
        with store.lock(session_id):
            return request_recourse(store, session_id, body)

    @app.get("/sessions/{session_id}/transcript")
    def get_transcript(session_id: str):
        with store.lock(session_id):
            state = store.get(session_id)
            return {
                "session_id": session_id,
                "entries": state.transcript,
                "status": state.status,
            }

    if static_dir is not None and Path(static_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app
