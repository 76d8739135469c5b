"""HTTP chat service for the browser UI.

Endpoints:
  POST /api/chat    {session_id?, message} -> {answer, contexts[], commands_executed[]}
  GET  /api/health  -> {status, corpus_chunks, registry_size}
  GET  /api/config  -> sanitized configuration (never secrets)

Sessions live in memory only: each keeps the last 10 user/assistant turns and
replays them into the prompt. Nothing about a session survives a restart.
"""

from __future__ import annotations

import json
import logging
import threading
import uuid
from collections import deque

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from .appconfig import AppConfig
from .gateway import ScriptMiss, TransportError
from .pipeline import RagEngine

logger = logging.getLogger(__name__)

MAX_SESSION_TURNS = 10  # one turn = one user message + one assistant reply


class _Sessions:
    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._turns: dict[str, deque[tuple[str, str]]] = {}

    def transcript(self, session_id: str) -> list[tuple[str, str]]:
        with self._lock:
            return list(self._turns.get(session_id, ()))

    def record(self, session_id: str, user_text: str, assistant_text: str) -> None:
        with self._lock:
            turns = self._turns.setdefault(
                session_id, deque(maxlen=MAX_SESSION_TURNS * 2)
            )
            turns.append(("user", user_text))
            turns.append(("assistant", assistant_text))


def create_app(engine: RagEngine, config: AppConfig) -> FastAPI:
    app = FastAPI(title="hpcqa", docs_url=None, redoc_url=None)
    # The browser client's base URL is runtime-configurable, so it may be
    # served from a different origin (cluster portal). Auth sits in front of
    # the service (portal/SSH tunnel), not in it, so a wide-open CORS policy
    # does not widen the trust boundary.
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    sessions = _Sessions()

    @app.get("/api/health")
    def health() -> dict:
        return {
            "status": "ok",
            "corpus_chunks": len(engine.chunks),
            "registry_size": len(engine.registry),
        }

    @app.get("/api/config")
    def config_view() -> dict:
        return config.sanitized()

    @app.post("/api/chat")
    async def chat(request: Request):
        try:
            body = json.loads(await request.body())
        except (ValueError, UnicodeDecodeError):
            return JSONResponse({"error": "body is not valid JSON"}, status_code=400)
        if not isinstance(body, dict) or not isinstance(body.get("message", ""), str):
            return JSONResponse({"error": "body must be {session_id?, message}"}, status_code=400)
        message = body.get("message", "")
        if not message.strip():
            return JSONResponse({"error": "message is empty"}, status_code=422)
        session_id = body.get("session_id") or uuid.uuid4().hex

        transcript = sessions.transcript(session_id)
        try:
            bundle = engine.ask(message, transcript=transcript)
        except (TransportError, ScriptMiss) as exc:
            logger.warning("backend unreachable for chat: %s", exc)
            return JSONResponse({"error": "backend unreachable"}, status_code=503)
        sessions.record(session_id, message, bundle.answer)
        return {
            "session_id": session_id,
            "answer": bundle.answer,
            "contexts": [
                {
                    "chunk_id": c.chunk_id,
                    "kind": c.kind,
                    "provenance": c.provenance,
                    # Body of the context block: the chunk text for documents,
                    # the rendered execution block (incl. output) for commands.
                    "text": c.text,
                }
                for c in bundle.contexts
            ],
            "commands_executed": list(bundle.commands_executed),
        }

    return app
