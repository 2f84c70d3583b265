"""HTTP surface: log intake plus alert, report, and feedback endpoints.

The app is a thin adapter over an Engine and its AlertingService; it
validates transport concerns (payload size, bearer token, JSON shape)
and translates domain errors to status codes. Detection logic never
lives here.
"""

from __future__ import annotations

import logging
from typing import Any

from fastapi import Body, FastAPI, Header, HTTPException, Query, Request, Response
from fastapi.middleware.cors import CORSMiddleware

from .alerting import FEEDBACK_LABELS, InvalidLabel, UnknownAlert
from .ingest import FilterRuleSet, PayloadTooLarge, ingest_push
from .orchestrator import Engine

logger = logging.getLogger(__name__)


def create_app(engine: Engine) -> FastAPI:
    app = FastAPI(title="opswatch", version="0.1.0")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    rules = FilterRuleSet.from_dict(engine.config.ingest.filters)
    token = engine.config.ingest.auth_token

    def check_auth(authorization: str | None) -> None:
        if token is None:
            return
        if authorization != f"Bearer {token}":
            raise HTTPException(status_code=401, detail="invalid or missing token")

    @app.post("/v1/logs")
    async def post_logs(
        request: Request,
        authorization: str | None = Header(default=None),
        source: str = Query(default="default"),
    ) -> dict[str, int]:
        check_auth(authorization)
        body = await request.body()
        try:
            ack = ingest_push(
                body,
                source_id=source,
                rules=rules,
                sink=lambda source_id, record: engine.submit(source_id, record),
                max_body_bytes=engine.config.ingest.max_body_bytes,
            )
        except PayloadTooLarge as exc:
            raise HTTPException(status_code=413, detail=str(exc))
        return ack.to_dict()

    @app.get("/v1/alerts")
    def get_alerts(
        since: int = Query(default=0),
        authorization: str | None = Header(default=None),
    ) -> list[dict[str, Any]]:
        check_auth(authorization)
        return engine.alerting.list_alerts(since_ms=since)

    @app.get("/v1/reports/{report_id}")
    def get_report(
        report_id: str,
        authorization: str | None = Header(default=None),
    ) -> dict[str, Any]:
        check_auth(authorization)
        report = engine.alerting.get_report(report_id)
        if report is None:
            raise HTTPException(status_code=404, detail=f"no report {report_id!r}")
        return report

    @app.post("/v1/alerts/{alert_id}/feedback")
    def post_feedback(
        alert_id: str,
        body: dict[str, Any] = Body(...),
        authorization: str | None = Header(default=None),
    ) -> dict[str, Any]:
        check_auth(authorization)
        label = body.get("label")
        submitter = body.get("submitter", "anonymous")
        if not isinstance(label, str):
            raise HTTPException(status_code=422, detail="body must carry a label")
        try:
            return engine.alerting.submit_feedback(alert_id, label, str(submitter))
        except InvalidLabel as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        except UnknownAlert as exc:
            raise HTTPException(status_code=404, detail=str(exc))

    @app.get("/v1/status")
    def get_status() -> dict[str, Any]:
        published = engine.published
        return {
            "modelVersion": published.model.model_version if published else None,
            "registryVersion": published.registry.version if published else None,
            "assessedWindows": len(engine.assessments),
            "staleDropped": engine.stale_dropped,
            "feedbackLabels": list(FEEDBACK_LABELS),
        }

    return app
