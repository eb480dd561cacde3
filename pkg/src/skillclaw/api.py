"""HTTP surface over the orchestrator.

Four read/write paths for agents plus one admin trigger:

    POST /v1/sessions               upload one structured session
    GET  /v1/pool/version           live pool ordinal
    GET  /v1/skills/manifest        manifest, optionally pinned with ?pool=N
    GET  /v1/skills/{name}          rendered skill file, optionally pinned
    POST /v1/rounds/run             run a nightly round (admin token)

Pinned reads answer 410 once a snapshot falls out of the retention window,
which tells a mid-session agent to refresh rather than silently serving it
a mixed skill set.
"""

from __future__ import annotations

import logging

from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse
from starlette.concurrency import run_in_threadpool

from .errors import (NotFoundError, PoolGoneError, RoundInProgressError,
                     SessionDecodeError)
from .service import Orchestrator

logger = logging.getLogger(__name__)


def create_app(orch: Orchestrator) -> FastAPI:
    app = FastAPI(title="skillclaw", docs_url=None, redoc_url=None)

    @app.exception_handler(NotFoundError)
    async def _not_found(request: Request, exc: NotFoundError):
        return JSONResponse(status_code=404, content={"error": str(exc)})

    @app.exception_handler(PoolGoneError)
    async def _gone(request: Request, exc: PoolGoneError):
        return JSONResponse(status_code=410, content={"error": str(exc)})

    @app.exception_handler(RoundInProgressError)
    async def _busy(request: Request, exc: RoundInProgressError):
        return JSONResponse(status_code=409, content={"error": str(exc)})

    @app.post("/v1/sessions")
    async def upload_session(request: Request):
        payload = await request.body()
        try:
            ack = await run_in_threadpool(orch.upload_session, payload)
        except SessionDecodeError as exc:
            detail = {"error": str(exc)}
            if exc.field is not None:
                detail["field"] = exc.field
            return JSONResponse(status_code=400, content=detail)
        return ack

    @app.get("/v1/pool/version")
    async def pool_version():
        return {"pool_version": orch.get_pool_version()}

    @app.get("/v1/skills/manifest")
    async def manifest(pool: int | None = None):
        body = orch.get_manifest(pool)
        return Response(content=body, media_type="application/json")

    @app.get("/v1/skills/{name}")
    async def skill(name: str, pool: int | None = None):
        body = orch.get_skill(name, pool)
        return Response(content=body, media_type="text/markdown")

    @app.post("/v1/rounds/run")
    async def run_round(request: Request):
        token = orch.config.admin_token
        header = request.headers.get("authorization", "")
        if not header.startswith("Bearer "):
            return JSONResponse(status_code=401,
                                content={"error": "admin token required"})
        if not token or header[len("Bearer "):] != token:
            return JSONResponse(status_code=403,
                                content={"error": "admin token rejected"})
        round_record = await run_in_threadpool(orch.run_night)
        return {
            "day_index": round_record.day_index,
            "session_count": len(round_record.batch),
            "action_count": len(round_record.actions),
            "verdict_count": len(round_record.verdicts),
            "accepted": list(round_record.accepted_skills),
            "pool_before": round_record.pool_before,
            "pool_after": round_record.pool_after,
        }

    return app


def serve(orch: Orchestrator) -> None:
    """Run the app under uvicorn at the configured listen address."""
    import uvicorn

    host, _, port = orch.config.listen.rpartition(":")
    uvicorn.run(create_app(orch), host=host or "127.0.0.1",
                port=int(port or "8420"), log_level="warning")
