"""Local HTTP service exposing the interactive audit session.

The service carries exactly the per-draw exchanges of the audit room: the
official posts salt reveals, observers post human interpretations, and
everyone can read the evolving state and the transcript.  Every state
change is appended to the session transcript before it is acknowledged, so
a crashed service resumes from the transcript with an identical state.

Binds locally by default; it is a tool for one audit room, not a
multi-tenant deployment.
"""

from __future__ import annotations

import asyncio
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import PlainTextResponse
from pydantic import BaseModel, Field

from .audit import (
    AuditParams,
    AuditSession,
    DrawEvaluation,
    resume_session,
    simple_stop_threshold,
)
from .errors import (
    AuditToolError,
    ConfigurationError,
    MalformedInputError,
    NotFoundError,
    ParseError,
    ProtocolViolationError,
)
from .publish import load_publication
from .transcript import FileTranscript, read_transcript


class CreateSessionRequest(BaseModel):
    seed: str
    risk_limit: float = 0.1
    gamma: float = 1.01
    error_tolerance: float = 0.2
    max_draws: int | None = None
    compliance_ok: bool = True
    transcript_name: str | None = None
    resume: bool = False


class RevealItem(BaseModel):
    contest_id: str
    salt_hex: str


class RevealRequest(BaseModel):
    j: int
    salts: list[RevealItem] = Field(default_factory=list)


class SelectionItem(BaseModel):
    contest_id: str
    chosen: list[str] = Field(default_factory=list)


class InterpretationRequest(BaseModel):
    j: int
    ballot_found: bool
    selections: list[SelectionItem] | None = None


@dataclass
class _Held:
    session: AuditSession
    lock: asyncio.Lock
    transcript_path: Path
    created_at: float = field(default_factory=time.time)
    updated_at: float = field(default_factory=time.time)


def session_state(session: AuditSession) -> dict:
    """Everything a client needs to render the audit; displays must use
    these values verbatim (the UI performs no audit math)."""
    view = session.state()
    derived = session.derived
    pending = session._pending
    state = {
        "status": view.status,
        "terminal": view.status in ("passed", "full-hand-count-required"),
        "draws_completed": view.draws_completed,
        "initial_sample_size": view.initial_sample_size,
        "max_draws": view.max_draws,
        "e_counts": {str(k): v for k, v in sorted(view.e_counts.items())},
        "two_vote_overstatements": view.e_counts.get(2, 0),
        "one_vote_overstatements": view.e_counts.get(1, 0),
        "p_km": view.p_km,
        "log_p_km": view.log_p_km,
        "risk_limit": view.risk_limit,
        "seed": view.seed,
        "stopped_via": view.stopped_via,
        "guidance": view.guidance,
        "checks_pass": session.check_report.overall_pass,
        "compliance_ok": session.compliance_ok,
        "pending_card": None,
        "reveal_recorded": session._pending_reveal is not None,
    }
    if derived is not None:
        threshold = simple_stop_threshold(session.params, derived)
        remaining = int(threshold) - view.e_counts.get(1, 0)
        state["derived"] = {
            "rho": derived.rho,
            "diluted_margin": str(derived.diluted_margin),
            "diluted_margin_value": float(derived.diluted_margin),
            "total_error_bound": derived.total_error_bound,
            "min_margin_votes": derived.min_margin_votes,
            "total_ballots": derived.total_ballots,
        }
        state["threshold_e1"] = float(threshold)
        state["threshold_e1_exact"] = str(threshold)
        state["remaining_e1_allowance"] = max(0, remaining)
    else:
        state["derived"] = None
        state["threshold_e1"] = None
        state["threshold_e1_exact"] = None
        state["remaining_e1_allowance"] = None
    if pending is not None:
        state["pending_card"] = {
            "j": pending.j,
            "r": str(pending.r),
            "index": pending.index,
            "ballot_id": pending.ballot_id,
            "contest_ids": list(pending.contest_ids),
            "locator": pending.locator,
        }
    return state


def evaluation_payload(evaluation: DrawEvaluation) -> dict:
    return {
        "j": evaluation.draw.j,
        "index": evaluation.draw.index,
        "ballot_id": evaluation.ballot_id,
        "ballot_found": evaluation.ballot_found,
        "reused": evaluation.reused,
        "e": evaluation.e,
        "epsilon": str(evaluation.epsilon),
        "taint": evaluation.taint,
        "contests": [
            {
                "contest_id": ce.contest_id,
                "tag": ce.tag,
                "shrouded_id": ce.shrouded_id,
                "entry_found": ce.entry_found,
                "record_side": sorted(ce.record_side),
                "human_side": sorted(ce.human_side),
                "notes": list(ce.notes),
            }
            for ce in evaluation.contests
        ],
    }


def create_app(files_dir: str, transcript_dir: str) -> FastAPI:
    app = FastAPI(title="shroudaudit session service")
    # the companion UI is served from its own local origin
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    sessions: dict[str, _Held] = {}
    active_transcripts: set[str] = set()
    transcripts = Path(transcript_dir)

    def _get(session_id: str) -> _Held:
        held = sessions.get(session_id)
        if held is None:
            raise HTTPException(status_code=404, detail="unknown session")
        return held

    def _error(exc: Exception) -> HTTPException:
        if isinstance(exc, ProtocolViolationError):
            return HTTPException(status_code=409, detail=str(exc))
        if isinstance(exc, NotFoundError):
            return HTTPException(status_code=404, detail=str(exc))
        if isinstance(exc, (MalformedInputError, ParseError, ConfigurationError)):
            return HTTPException(status_code=400, detail=str(exc))
        return HTTPException(status_code=500, detail=str(exc))

    @app.post("/sessions")
    async def create_session(body: CreateSessionRequest):
        session_id = uuid.uuid4().hex[:12]
        name = body.transcript_name or f"session-{session_id}.jsonl"
        path = transcripts / name
        if str(path) in active_transcripts:
            raise HTTPException(
                status_code=409,
                detail=f"transcript {name!r} already has an active session",
            )
        try:
            publication = load_publication(files_dir)
            if body.resume and path.is_file() and path.stat().st_size > 0:
                records = read_transcript(path)
                session = resume_session(publication, records, FileTranscript(path))
            else:
                if path.is_file() and path.stat().st_size > 0:
                    raise ConfigurationError(
                        f"transcript {name!r} already exists; pass resume=true"
                    )
                params = AuditParams(
                    risk_limit=body.risk_limit,
                    gamma=body.gamma,
                    error_tolerance=body.error_tolerance,
                    seed=body.seed,
                    max_draws=body.max_draws,
                )
                session = AuditSession(
                    publication, params,
                    transcript=FileTranscript(path),
                    compliance_ok=body.compliance_ok,
                )
        except AuditToolError as exc:
            raise _error(exc)
        held = _Held(session, asyncio.Lock(), path)
        sessions[session_id] = held
        active_transcripts.add(str(path))
        return {"session_id": session_id, "transcript": str(path),
                "created_at": held.created_at,
                "state": session_state(session)}

    @app.get("/sessions/{session_id}")
    async def get_state(session_id: str):
        held = _get(session_id)
        return {"state": session_state(held.session),
                "created_at": held.created_at, "updated_at": held.updated_at}

    @app.post("/sessions/{session_id}/draws")
    async def next_draw(session_id: str):
        held = _get(session_id)
        async with held.lock:
            try:
                card = held.session.next_draw()
            except AuditToolError as exc:
                raise _error(exc)
            held.updated_at = time.time()
            payload = None
            if card is not None:
                payload = {
                    "j": card.j,
                    "r": str(card.r),
                    "index": card.index,
                    "ballot_id": card.ballot_id,
                    "contest_ids": list(card.contest_ids),
                    "locator": card.locator,
                }
            return {"card": payload, "state": session_state(held.session)}

    @app.post("/sessions/{session_id}/reveals")
    async def post_reveal(session_id: str, body: RevealRequest):
        held = _get(session_id)
        async with held.lock:
            try:
                salts = [(item.contest_id, bytes.fromhex(item.salt_hex))
                         for item in body.salts]
            except ValueError:
                raise HTTPException(status_code=400, detail="salts must be hex")
            try:
                held.session.record_reveal(body.j, salts)
            except AuditToolError as exc:
                raise _error(exc)
            held.updated_at = time.time()
            return {"state": session_state(held.session)}

    @app.post("/sessions/{session_id}/interpretations")
    async def post_interpretation(session_id: str, body: InterpretationRequest):
        held = _get(session_id)
        async with held.lock:
            selections = None
            if body.selections is not None:
                selections = {
                    item.contest_id: frozenset(item.chosen) for item in body.selections
                }
            try:
                evaluation = held.session.record_interpretation(
                    body.j, body.ballot_found, selections
                )
            except AuditToolError as exc:
                raise _error(exc)
            held.updated_at = time.time()
            return {
                "evaluation": evaluation_payload(evaluation),
                "state": session_state(held.session),
            }

    @app.get("/sessions/{session_id}/transcript", response_class=PlainTextResponse)
    async def get_transcript(session_id: str):
        held = _get(session_id)
        if held.transcript_path.is_file():
            return held.transcript_path.read_text("utf-8")
        return ""

    @app.get("/meta")
    async def meta():
        publication = load_publication(files_dir)
        return {
            "total_ballots": len(publication.ballot_style.entries),
            "contests": {
                cid: {
                    "candidates": list(spec.candidates),
                    "winners_allowed": spec.winners_allowed,
                    "reported_ballot_count": spec.reported_ballot_count,
                }
                for cid, spec in publication.manifest.contests.items()
            },
            "file_digests": publication.file_digests,
        }

    return app
