"""HTTP review service: serves note/extraction pairs from the prompt-eval
artifacts, persists annotation verdicts to an append-only checksummed log,
and exposes live metrics.

Session ids derive from (prompt_id, seed, annotator), so re-creating a
session resumes at the first unannotated note: including after a process
restart (the log is replayed). Requests for a session are serialized by a
lock; the log has one writer.
"""

from __future__ import annotations

import hashlib
import json
import random
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import os

from fastapi import FastAPI, HTTPException, Request
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

from .corpus import dumps_record
from .metrics import AnnotationVerdict, annotation_summary, micro_f1
from .switching import Modality

#: when set, every endpoint except /healthz requires this bearer token
STATIC_TOKEN_ENV_VAR = "RXSWITCH_REVIEW_TOKEN"


class CreateSessionRequest(BaseModel):
    prompt_id: int = Field(ge=1, le=6)
    seed: int = 0
    annotator: str = "anonymous"


class VerdictRequest(BaseModel):
    note_id: str
    prompt_id: int = Field(ge=1, le=6)
    started_correct: bool
    stopped_correct: bool
    reason_accurate: bool
    hallucination: bool
    comment: str = ""


def session_id_for(prompt_id: int, seed: int, annotator: str) -> str:
    digest = hashlib.sha256(f"{prompt_id}:{seed}:{annotator}".encode())
    return digest.hexdigest()[:16]


def _verdict_record(v: AnnotationVerdict) -> dict:
    return {
        "note_id": v.note_id,
        "prompt_id": v.prompt_id,
        "started_correct": v.started_correct,
        "stopped_correct": v.stopped_correct,
        "reason_accurate": v.reason_accurate,
        "hallucination": v.hallucination,
        "comment": v.comment,
    }


def verdict_hash(v: AnnotationVerdict) -> str:
    return hashlib.sha256(dumps_record(_verdict_record(v)).encode()).hexdigest()


@dataclass
class ReviewSession:
    session_id: str
    prompt_id: int
    seed: int
    annotator: str
    queue: list[str]
    created_at: str
    verdicts: dict[str, AnnotationVerdict] = field(default_factory=dict)

    @property
    def cursor(self) -> int:
        return len(self.verdicts)

    @property
    def complete(self) -> bool:
        return self.cursor >= len(self.queue)

    def progress(self) -> dict:
        return {"annotated": self.cursor, "total": len(self.queue),
                "complete": self.complete}


class ReviewStore:
    """Artifacts in, sessions and verdict logs out (all line-delimited)."""

    def __init__(self, artifacts_dir: Path, store_dir: Path):
        self.artifacts = Path(artifacts_dir)
        self.store = Path(store_dir)
        self.store.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._sessions: dict[str, ReviewSession] = {}
        self._notes: dict[str, str] | None = None

    # -- artifacts

    def note_texts(self) -> dict[str, str]:
        if self._notes is None:
            path = self.artifacts / "prompts_eval" / "dev_notes.jsonl"
            if not path.exists():
                raise HTTPException(409, detail=f"missing artifact: {path}")
            self._notes = {}
            for line in path.read_text().splitlines():
                if line.strip():
                    rec = json.loads(line)
                    self._notes[rec["note_id"]] = rec["text"]
        return self._notes

    def extractions_for(self, prompt_id: int) -> dict[str, dict]:
        path = (self.artifacts / "prompts_eval" /
                f"dev_extractions_p{prompt_id}.jsonl")
        if not path.exists():
            raise HTTPException(
                409, detail=f"no extraction artifacts for prompt {prompt_id} "
                            f"({path} missing)")
        return {rec["note_id"]: rec
                for rec in (json.loads(l) for l in path.read_text().splitlines()
                            if l.strip())}

    # -- persistence

    def _session_path(self, session_id: str) -> Path:
        return self.store / f"{session_id}.json"

    def _log_path(self, session_id: str) -> Path:
        return self.store / f"{session_id}.log.jsonl"

    def _persist_session(self, s: ReviewSession) -> None:
        self._session_path(s.session_id).write_text(json.dumps({
            "session_id": s.session_id,
            "prompt_id": s.prompt_id,
            "seed": s.seed,
            "annotator": s.annotator,
            "queue": s.queue,
            "created_at": s.created_at,
        }, sort_keys=True, indent=2) + "\n")

    def _replay_log(self, session: ReviewSession) -> None:
        path = self._log_path(session.session_id)
        if not path.exists():
            return
        for line in path.read_text().splitlines():
            if not line.strip():
                continue
            try:
                entry = json.loads(line)
                verdict = AnnotationVerdict(**entry["verdict"])
                if verdict_hash(verdict) != entry["checksum"]:
                    break  # torn tail write; ignore the rest
            except (KeyError, TypeError, ValueError):
                break
            session.verdicts[verdict.note_id] = verdict

    def append_verdict(self, session: ReviewSession,
                       verdict: AnnotationVerdict) -> None:
        entry = {"verdict": _verdict_record(verdict),
                 "checksum": verdict_hash(verdict)}
        with open(self._log_path(session.session_id), "a",
                  encoding="utf-8") as fh:
            fh.write(dumps_record(entry) + "\n")
            fh.flush()
        session.verdicts[verdict.note_id] = verdict

    # -- sessions

    def create_session(self, req: CreateSessionRequest) -> ReviewSession:
        with self._lock:
            sid = session_id_for(req.prompt_id, req.seed, req.annotator)
            existing = self._sessions.get(sid)
            if existing is not None:
                return existing
            self.extractions_for(req.prompt_id)  # 409 when absent
            note_ids = sorted(self.note_texts())
            if self._session_path(sid).exists():
                doc = json.loads(self._session_path(sid).read_text())
                session = ReviewSession(session_id=sid,
                                        prompt_id=doc["prompt_id"],
                                        seed=doc["seed"],
                                        annotator=doc["annotator"],
                                        queue=doc["queue"],
                                        created_at=doc["created_at"])
            else:
                queue = list(note_ids)
                random.Random(req.seed).shuffle(queue)
                session = ReviewSession(
                    session_id=sid, prompt_id=req.prompt_id, seed=req.seed,
                    annotator=req.annotator, queue=queue,
                    created_at=datetime.now(timezone.utc).isoformat())
                self._persist_session(session)
            self._replay_log(session)
            self._sessions[sid] = session
            return session

    def get_session(self, session_id: str) -> ReviewSession:
        with self._lock:
            session = self._sessions.get(session_id)
            if session is None and self._session_path(session_id).exists():
                doc = json.loads(self._session_path(session_id).read_text())
                session = ReviewSession(session_id=session_id,
                                        prompt_id=doc["prompt_id"],
                                        seed=doc["seed"],
                                        annotator=doc["annotator"],
                                        queue=doc["queue"],
                                        created_at=doc["created_at"])
                self._replay_log(session)
                self._sessions[session_id] = session
            if session is None:
                raise HTTPException(404, detail=f"unknown session {session_id}")
            return session


def session_metrics(session: ReviewSession) -> dict:
    """Live metrics over annotated items only.

    Boolean correctness verdicts feed micro_f1 through surrogate pairs: a
    correct field contributes (pred, pred), an incorrect one a disjoint
    (placeholder, pred), so the score degrades to fraction-correct while
    staying on the shared metrics path.
    """
    verdicts = list(session.verdicts.values())
    summary = annotation_summary(verdicts)
    out = {
        "n": summary.n,
        "reason_accuracy": summary.accuracy,
        "hallucination_rate": summary.hallucination_rate,
        "f1_started": None,
        "f1_stopped": None,
    }
    if verdicts:
        for task in ("started", "stopped"):
            pairs = []
            for v in verdicts:
                correct = getattr(v, f"{task}_correct")
                pred = {Modality.ORAL}  # stand-in; only identity matters
                pairs.append((pred, pred) if correct
                             else ({Modality.NONE}, pred))
            f1, _ = micro_f1(pairs)
            out[f"f1_{task}"] = f1
    return out


def create_app(artifacts_dir: Path, store_dir: Path,
               cors_origins: list[str] | None = None) -> FastAPI:
    app = FastAPI(title="rxswitch review service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=cors_origins or ["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    store = ReviewStore(Path(artifacts_dir), Path(store_dir))
    app.state.store = store

    @app.middleware("http")
    async def require_static_token(request: Request, call_next):
        token = os.environ.get(STATIC_TOKEN_ENV_VAR)
        if token and request.url.path != "/healthz" \
                and request.method != "OPTIONS":
            supplied = request.headers.get("authorization", "")
            if supplied != f"Bearer {token}":
                from fastapi.responses import JSONResponse

                return JSONResponse({"detail": "missing or wrong token"},
                                    status_code=401)
        return await call_next(request)

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.post("/sessions")
    def create_session(req: CreateSessionRequest):
        session = store.create_session(req)
        return {"session_id": session.session_id, **session.progress(),
                "prompt_id": session.prompt_id, "annotator": session.annotator}

    @app.get("/sessions/{session_id}/next")
    def next_item(session_id: str):
        session = store.get_session(session_id)
        if session.complete:
            return {"done": True, "progress": session.progress(),
                    "metrics": session_metrics(session)}
        note_id = session.queue[session.cursor]
        extraction = store.extractions_for(session.prompt_id).get(note_id)
        return {
            "done": False,
            "note_id": note_id,
            "note_text": store.note_texts().get(note_id, ""),
            "extraction": extraction,
            "progress": session.progress(),
        }

    @app.post("/sessions/{session_id}/annotations")
    def submit_annotation(session_id: str, req: VerdictRequest):
        session = store.get_session(session_id)
        verdict = AnnotationVerdict(
            note_id=req.note_id, prompt_id=req.prompt_id,
            started_correct=req.started_correct,
            stopped_correct=req.stopped_correct,
            reason_accurate=req.reason_accurate,
            hallucination=req.hallucination, comment=req.comment)
        with store._lock:
            previous = session.verdicts.get(req.note_id)
            if previous is not None:
                if verdict_hash(previous) == verdict_hash(verdict):
                    return {"ok": True, "duplicate": True,
                            "progress": session.progress()}
                raise HTTPException(
                    409, detail={"error": "note already annotated with a "
                                          "different verdict",
                                 "note_id": req.note_id})
            if session.complete:
                raise HTTPException(409, detail={"error": "session complete"})
            expected = session.queue[session.cursor]
            if req.note_id != expected:
                raise HTTPException(
                    409, detail={"error": "out-of-order annotation",
                                 "expected_note_id": expected})
            store.append_verdict(session, verdict)
        return {"ok": True, "duplicate": False, "progress": session.progress()}

    @app.get("/sessions/{session_id}/metrics")
    def metrics(session_id: str):
        session = store.get_session(session_id)
        return {"session_id": session_id, **session_metrics(session),
                "progress": session.progress()}

    return app
