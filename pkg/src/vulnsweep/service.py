"""HTTP review service.

Serves the live review workflow over JSON: create a session, poll the queue,
submit verdicts, watch the estimate and stop status. Every verdict is
appended to a per-session JSONL event log before it is acknowledged; replaying
that log through the normal code path reconstructs the exact session state
(rounds fire deterministically when the queue drains), so a crashed or
restarted service recovers by replay. In-memory queue leases are not logged
and reset on recovery.

Endpoints (all JSON):

- POST /sessions                     {corpus, features, config} -> {session_id}
- GET  /sessions/{id}                status payload
- GET  /sessions/{id}/queue?reviewer=..&limit=..   queue items for a reviewer
- GET  /sessions/{id}/trace          per-round trace for charting
- POST /sessions/{id}/verdicts       {doc_id, reviewer, verdict} -> ack
- GET  /documents/{doc_id}?corpus=.. document body for display

Queue items are leased to the polling reviewer for ``lease_ttl`` seconds so
two reviewers never hold the same item, and a double-check item is never
served to a reviewer who already reviewed that document. Round computation
runs inline on the submit that drains the queue, guarded by a per-session
lock; status and trace reads come from an immutable snapshot and never block
on training. Live sessions default to a batch size of 10.
"""

from __future__ import annotations

import json
import threading
import time
import uuid
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path
from typing import Literal

from fastapi import FastAPI, HTTPException, Query
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

from .corpus import Corpus
from .engine import (
    DOUBLE_CHECK,
    ConfigError,
    ReviewEvent,
    SessionConfig,
    SessionState,
    advance_live_round,
    live_followup_items,
    new_session,
    restore_state,
    snapshot_state,
)
from .features import FeatureMatrix

LIVE_DEFAULT_N1 = 10
DEFAULT_LEASE_TTL = 30 * 60.0
EXCERPT_CHARS = 2000


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat()


class CreateSessionRequest(BaseModel):
    corpus: str = "default"
    features: str = "default"
    config: dict = Field(default_factory=dict)


class VerdictRequest(BaseModel):
    doc_id: int
    reviewer: str = Field(min_length=1)
    verdict: Literal["vulnerable", "non_vulnerable"]


class _Lease:
    __slots__ = ("reviewer", "expires")

    def __init__(self, reviewer: str, expires: float):
        self.reviewer = reviewer
        self.expires = expires


class SessionRuntime:
    """One live session: engine state, leases, event log, read snapshot."""

    def __init__(
        self,
        session_id: str,
        config: SessionConfig,
        corpus_name: str,
        features_name: str,
        corpus: Corpus,
        matrix: FeatureMatrix,
        log_path: Path,
        lease_ttl: float = DEFAULT_LEASE_TTL,
        clock=time.time,
    ):
        self.session_id = session_id
        self.config = config
        self.corpus_name = corpus_name
        self.features_name = features_name
        self.corpus = corpus
        self.matrix = matrix
        self.log_path = log_path
        self.lease_ttl = lease_ttl
        self.clock = clock
        self.lock = threading.RLock()
        self.leases: dict[int, _Lease] = {}
        self.state: SessionState = new_session(config, corpus)
        self._snapshot: dict = {}
        self._trace: dict = {}
        self._refresh_snapshot()

    # -- log --------------------------------------------------------------

    def log_header(self) -> None:
        self.log_path.parent.mkdir(parents=True, exist_ok=True)
        record = {
            "type": "session",
            "session_id": self.session_id,
            "corpus": self.corpus_name,
            "features": self.features_name,
            "config": asdict(self.config),
            "created": _utcnow(),
        }
        with open(self.log_path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(record) + "\n")

    def _log_event(self, event: ReviewEvent) -> None:
        record = {
            "type": "verdict",
            "seq": event.seq,
            "doc_id": event.doc_id,
            "reviewer": event.reviewer,
            "verdict": event.verdict,
            "purpose": event.purpose,
            "round": event.round_index,
            "ts": _utcnow(),
        }
        with open(self.log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record) + "\n")

    # -- reads ------------------------------------------------------------

    def status(self) -> dict:
        return self._snapshot

    def trace(self) -> dict:
        return self._trace

    def _refresh_snapshot(self) -> None:
        state = self.state
        est_recall = state.estimated_recall()
        rounds = [r.to_dict() for r in state.round_trace]
        self._snapshot = {
            "session_id": self.session_id,
            "corpus": self.corpus_name,
            "features": self.features_name,
            "round": state.round_index,
            "pool_size": state.n_docs,
            "labeled": state.labeled_count(),
            "positives": len(state.positives),
            "estimate": state.last_estimate,
            "estimated_recall": 0.0 if est_recall is None else est_recall,
            "no_positives_yet": not state.positives,
            "cost": state.cost(),
            "queued": len(state.queue),
            "stopped": state.stopped,
            "stop_reason": state.stop_reason,
            "rounds": rounds,
        }
        self._trace = {
            "session_id": self.session_id,
            "pool_size": state.n_docs,
            "rounds": rounds,
            "recall_curve": [list(p) for p in state.recall_curve],
            "stopped": state.stopped,
        }

    # -- queue ------------------------------------------------------------

    def queue_items(self, reviewer: str, limit: int) -> dict:
        with self.lock:
            state = self.state
            if state.stopped:
                return {
                    "session_id": self.session_id,
                    "stopped": True,
                    "stop_reason": state.stop_reason,
                    "positives": len(state.positives),
                    "estimate": state.last_estimate,
                    "estimated_recall": self._snapshot["estimated_recall"],
                    "items": [],
                    "retry_after": None,
                }
            now = self.clock()
            self._expire_leases(now)
            items = []
            for item in state.queue:
                if len(items) >= limit:
                    break
                lease = self.leases.get(item.doc_id)
                if lease is not None and lease.reviewer != reviewer:
                    continue
                if item.purpose == DOUBLE_CHECK and self._reviewed_by(
                    item.doc_id, reviewer
                ):
                    continue
                self.leases[item.doc_id] = _Lease(reviewer, now + self.lease_ttl)
                doc = self.corpus.doc(item.doc_id)
                items.append(
                    {
                        "doc_id": item.doc_id,
                        "path": doc.path,
                        "excerpt": doc.body[:EXCERPT_CHARS],
                        "purpose": item.purpose,
                    }
                )
            return {
                "session_id": self.session_id,
                "stopped": False,
                "items": items,
                "retry_after": 1 if not items and state.queue else None,
            }

    def _reviewed_by(self, doc_id: int, reviewer: str) -> bool:
        return any(
            e.reviewer == reviewer for e in self.state.doc_events.get(doc_id, ())
        )

    def _expire_leases(self, now: float) -> None:
        expired = [d for d, lease in self.leases.items() if lease.expires <= now]
        for d in expired:
            del self.leases[d]

    # -- writes -----------------------------------------------------------

    def submit(self, doc_id: int, reviewer: str, verdict: str) -> dict:
        with self.lock:
            state = self.state
            if state.stopped:
                prior = self._duplicate_ack(doc_id, reviewer, verdict)
                if prior is not None:
                    return prior
                raise HTTPException(409, "session is stopped")
            lease = self.leases.get(doc_id)
            leased_here = (
                lease is not None
                and lease.reviewer == reviewer
                and lease.expires > self.clock()
            )
            if not leased_here:
                prior = self._duplicate_ack(doc_id, reviewer, verdict)
                if prior is not None:
                    return prior
                raise HTTPException(
                    409, f"doc {doc_id} is not leased to reviewer {reviewer!r}"
                )
            item = next((q for q in state.queue if q.doc_id == doc_id), None)
            if item is None:
                raise HTTPException(409, f"doc {doc_id} is not in the queue")
            if item.purpose == DOUBLE_CHECK and self._reviewed_by(doc_id, reviewer):
                raise HTTPException(
                    409, "double checks need a reviewer who has not seen the doc"
                )
            event = state.record_event(doc_id, reviewer, verdict, item.purpose)
            self._log_event(event)
            state.queue.remove(item)
            self.leases.pop(doc_id, None)
            state.queue.extend(live_followup_items(state, self.config, event))
            if not state.queue:
                advance_live_round(state, self.config, self.corpus, self.matrix)
                self._write_snapshot()
            self._refresh_snapshot()
            return self._ack(event)

    def _duplicate_ack(self, doc_id: int, reviewer: str, verdict: str) -> dict | None:
        for event in reversed(self.state.doc_events.get(doc_id, ())):
            if event.reviewer == reviewer:
                if event.verdict == verdict:
                    return self._ack(event)
                return None
        return None

    def _ack(self, event: ReviewEvent) -> dict:
        state = self.state
        return {
            "session_id": self.session_id,
            "seq": event.seq,
            "doc_id": event.doc_id,
            "labeled": state.labeled_count(),
            "positives": len(state.positives),
            "estimate": state.last_estimate,
            "stopped": state.stopped,
            "round": state.round_index,
        }

    # -- recovery -----------------------------------------------------------

    def _write_snapshot(self) -> None:
        """Persist the full state at a round boundary to shortcut recovery."""
        wrapper = {"session_id": self.session_id, "state": snapshot_state(self.state)}
        tmp = self.log_path.with_name("snapshot.json.tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(wrapper, fh)
        tmp.replace(self.log_path.with_name("snapshot.json"))

    def restore_from_snapshot(self) -> int:
        """Load the latest snapshot if present; returns events already applied."""
        path = self.log_path.with_name("snapshot.json")
        if not path.exists():
            return 0
        try:
            with open(path, encoding="utf-8") as fh:
                wrapper = json.load(fh)
            if wrapper.get("session_id") != self.session_id:
                return 0
            self.state = restore_state(wrapper["state"])
        except (ValueError, KeyError, TypeError):
            return 0
        self._refresh_snapshot()
        return len(self.state.events)

    def replay_event(self, record: dict) -> None:
        """Apply one logged verdict during recovery, bypassing leases."""
        state = self.state
        doc_id = record["doc_id"]
        item = next((q for q in state.queue if q.doc_id == doc_id), None)
        if item is None or item.purpose != record["purpose"]:
            raise ValueError(
                f"log replay diverged at seq {record['seq']}: "
                f"doc {doc_id} not queued as {record['purpose']!r}"
            )
        event = state.record_event(
            doc_id, record["reviewer"], record["verdict"], item.purpose
        )
        if event.seq != record["seq"]:
            raise ValueError(
                f"log replay diverged: expected seq {record['seq']}, got {event.seq}"
            )
        state.queue.remove(item)
        state.queue.extend(live_followup_items(state, self.config, event))
        if not state.queue and not state.stopped:
            advance_live_round(state, self.config, self.corpus, self.matrix)
        self._refresh_snapshot()


class FeatureSet:
    """A named feature matrix tied to the corpus it was built from."""

    __slots__ = ("corpus_name", "matrix")

    def __init__(self, corpus_name: str, matrix: FeatureMatrix):
        self.corpus_name = corpus_name
        self.matrix = matrix


def load_session_runtime(
    log_path: Path,
    corpora: dict[str, Corpus],
    feature_sets: dict[str, FeatureSet],
    lease_ttl: float = DEFAULT_LEASE_TTL,
) -> SessionRuntime:
    """Rebuild a session runtime by replaying its event log."""
    with open(log_path, encoding="utf-8") as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    if not lines or lines[0].get("type") != "session":
        raise ValueError(f"{log_path} does not start with a session record")
    header = lines[0]
    corpus_name = header["corpus"]
    features_name = header["features"]
    if corpus_name not in corpora:
        raise ValueError(f"corpus {corpus_name!r} not registered")
    if features_name not in feature_sets:
        raise ValueError(f"feature set {features_name!r} not registered")
    runtime = SessionRuntime(
        session_id=header["session_id"],
        config=SessionConfig(**header["config"]),
        corpus_name=corpus_name,
        features_name=features_name,
        corpus=corpora[corpus_name],
        matrix=feature_sets[features_name].matrix,
        log_path=log_path,
        lease_ttl=lease_ttl,
    )
    applied = runtime.restore_from_snapshot()
    for record in lines[1:]:
        if record.get("type") == "verdict" and record["seq"] > applied:
            runtime.replay_event(record)
    return runtime


def create_app(
    corpora: dict[str, Corpus],
    feature_sets: dict[str, FeatureSet],
    data_dir: str | Path,
    lease_ttl: float = DEFAULT_LEASE_TTL,
    recover: bool = True,
) -> FastAPI:
    """Build the service app over pre-ingested corpora and feature sets.

    A feature set references the corpus it was built from; a session names
    one of each. Session logs live under ``data_dir``/sessions and are
    replayed at startup when ``recover`` is set.
    """
    for name, fs in feature_sets.items():
        if fs.corpus_name not in corpora:
            raise ValueError(f"feature set {name!r}: unknown corpus {fs.corpus_name!r}")
        if fs.matrix.rows.shape[0] != len(corpora[fs.corpus_name]):
            raise ValueError(f"feature set {name!r}: matrix/corpus size mismatch")

    data_path = Path(data_dir)
    sessions_dir = data_path / "sessions"
    sessions_dir.mkdir(parents=True, exist_ok=True)

    app = FastAPI(title="vulnsweep review service")
    # browser review clients are served from other origins (file://, a static
    # host); the service carries no credentials, so a blanket allow is safe
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    runtimes: dict[str, SessionRuntime] = {}
    create_lock = threading.Lock()

    if recover:
        for log_path in sorted(sessions_dir.glob("*/events.jsonl")):
            runtime = load_session_runtime(log_path, corpora, feature_sets, lease_ttl)
            runtimes[runtime.session_id] = runtime

    def _runtime(session_id: str) -> SessionRuntime:
        runtime = runtimes.get(session_id)
        if runtime is None:
            raise HTTPException(404, f"unknown session {session_id!r}")
        return runtime

    @app.post("/sessions", status_code=201)
    def create_session(request: CreateSessionRequest) -> dict:
        if request.corpus not in corpora:
            raise HTTPException(404, f"unknown corpus {request.corpus!r}")
        if request.features not in feature_sets:
            raise HTTPException(404, f"unknown feature set {request.features!r}")
        fs = feature_sets[request.features]
        if fs.corpus_name != request.corpus:
            raise HTTPException(
                400,
                f"feature set {request.features!r} was built from corpus "
                f"{fs.corpus_name!r}, not {request.corpus!r}",
            )
        corpus = corpora[request.corpus]
        merged = {"n1": LIVE_DEFAULT_N1, **request.config}
        try:
            config = SessionConfig(**merged)
        except ConfigError as exc:
            raise HTTPException(400, str(exc)) from None
        except TypeError as exc:
            raise HTTPException(400, f"bad config field: {exc}") from None
        if config.estimator == "truth":
            raise HTTPException(400, "estimator 'truth' is simulation-only")
        if config.sampling_mode == "crash" and not any(
            d.crash_count > 0 for d in corpus.documents
        ):
            raise HTTPException(400, "sampling_mode 'crash' requires crash counts")
        session_id = uuid.uuid4().hex
        with create_lock:
            runtime = SessionRuntime(
                session_id=session_id,
                config=config,
                corpus_name=request.corpus,
                features_name=request.features,
                corpus=corpus,
                matrix=fs.matrix,
                log_path=sessions_dir / session_id / "events.jsonl",
                lease_ttl=lease_ttl,
            )
            runtime.log_header()
            runtimes[session_id] = runtime
        return {"session_id": session_id}

    @app.get("/sessions/{session_id}")
    def session_status(session_id: str) -> dict:
        return _runtime(session_id).status()

    @app.get("/sessions/{session_id}/queue")
    def session_queue(
        session_id: str,
        reviewer: str = Query(min_length=1),
        limit: int = Query(default=LIVE_DEFAULT_N1, ge=1, le=1000),
    ) -> dict:
        return _runtime(session_id).queue_items(reviewer, limit)

    @app.get("/sessions/{session_id}/trace")
    def session_trace(session_id: str) -> dict:
        return _runtime(session_id).trace()

    @app.post("/sessions/{session_id}/verdicts")
    def submit_verdict(session_id: str, request: VerdictRequest) -> dict:
        return _runtime(session_id).submit(
            request.doc_id, request.reviewer, request.verdict
        )

    @app.get("/documents/{doc_id}")
    def document(doc_id: int, corpus: str = "default") -> dict:
        if corpus not in corpora:
            if len(corpora) == 1:
                corpus = next(iter(corpora))
            else:
                raise HTTPException(404, f"unknown corpus {corpus!r}")
        pool = corpora[corpus]
        if not 0 <= doc_id < len(pool):
            raise HTTPException(404, f"unknown document {doc_id}")
        doc = pool.doc(doc_id)
        return {
            "doc_id": doc.doc_id,
            "path": doc.path,
            "body": doc.body,
            "crash_count": doc.crash_count,
        }

    app.state.runtimes = runtimes
    app.state.corpora = corpora
    app.state.feature_sets = feature_sets
    return app
