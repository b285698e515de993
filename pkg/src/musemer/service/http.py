"""FastAPI layer over the annotation service core.

Endpoints mirror the documented API: campaign creation, session creation,
task fetch/submit, range-capable audio streaming, exports, and progress.
"""

from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI, HTTPException, Request, Response
from pydantic import BaseModel, Field

from .. import ranking as rk
from .core import AnnotationService, GoldPair, ServiceError


class CampaignCreate(BaseModel):
    id: str
    dimension: str
    clips: dict[str, str]  # clip id -> wav path
    gold: list[tuple[str, str, str]]  # (left, right, correct)
    seed: int = 0
    quiz_size: int = 5
    quiz_pass_threshold: float = 0.7
    gold_rate: int = 10


class SessionCreate(BaseModel):
    annotator: str = Field(min_length=1)


class SubmitBody(BaseModel):
    choice: str


def _http_error(exc: ServiceError) -> HTTPException:
    status = 404 if str(exc).startswith("unknown") else 400
    return HTTPException(status_code=status, detail=str(exc))


def create_app(service: AnnotationService) -> FastAPI:
    app = FastAPI(title="musemer annotation service")
    app.state.service = service

    @app.post("/campaigns")
    def create_campaign(body: CampaignCreate):
        try:
            dim = rk.Dimension(body.dimension)
            gold = [
                GoldPair(rk.ComparisonKey(a, b, dim), c)
                for a, b, c in body.gold
            ]
            campaign = service.create_campaign(
                body.id, dim, body.clips, gold, body.seed,
                quiz_size=body.quiz_size,
                quiz_pass_threshold=body.quiz_pass_threshold,
                gold_rate=body.gold_rate,
            )
        except (ServiceError, rk.RankingError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return {"campaign": campaign.id, "status": campaign.status.value}

    @app.post("/campaigns/{campaign_id}/sessions")
    def create_session(campaign_id: str, body: SessionCreate):
        try:
            session = service.create_session(campaign_id, body.annotator)
        except ServiceError as exc:
            raise _http_error(exc)
        return {"session": session.id, "phase": session.phase.value}

    @app.get("/sessions/{session_id}/next")
    def next_task(session_id: str):
        try:
            return service.next_task(session_id)
        except ServiceError as exc:
            raise _http_error(exc)

    @app.post("/sessions/{session_id}/submit")
    def submit(session_id: str, body: SubmitBody):
        try:
            return service.submit_task(session_id, body.choice)
        except ServiceError as exc:
            raise _http_error(exc)

    @app.get("/clips/{clip_id}/audio")
    def audio(clip_id: str, request: Request):
        path = None
        for campaign_id in service.campaigns:
            try:
                path = service.audio_path(campaign_id, clip_id)
                break
            except ServiceError:
                continue
        if path is None or not Path(path).exists():
            raise HTTPException(status_code=404, detail=f"unknown clip: {clip_id}")
        data = Path(path).read_bytes()
        range_header = request.headers.get("range")
        if range_header:
            try:
                unit, _, spec = range_header.partition("=")
                if unit.strip() != "bytes":
                    raise ValueError
                start_s, _, end_s = spec.partition("-")
                start = int(start_s) if start_s else 0
                end = int(end_s) if end_s else len(data) - 1
                if start > end or start >= len(data):
                    raise ValueError
            except ValueError:
                raise HTTPException(status_code=416, detail="invalid range")
            end = min(end, len(data) - 1)
            chunk = data[start:end + 1]
            return Response(
                content=chunk, status_code=206, media_type="audio/wav",
                headers={
                    "Content-Range": f"bytes {start}-{end}/{len(data)}",
                    "Accept-Ranges": "bytes",
                },
            )
        return Response(content=data, media_type="audio/wav",
                        headers={"Accept-Ranges": "bytes"})

    @app.get("/campaigns/{campaign_id}/progress")
    def progress(campaign_id: str):
        try:
            return service.progress(campaign_id)
        except ServiceError as exc:
            raise _http_error(exc)

    @app.get("/campaigns/{campaign_id}/export/{what}")
    def export(campaign_id: str, what: str):
        try:
            if what == "rankings":
                return Response(service.export_rankings_csv(campaign_id),
                                media_type="text/csv")
            if what == "ratings":
                return Response(service.export_ratings_csv(campaign_id),
                                media_type="text/csv")
            if what == "reliability":
                report = service.export_reliability(campaign_id)
                return {
                    "unanimous_rate": report.unanimous_rate,
                    "pairwise_rate": report.pairwise_rate,
                    "alpha": report.alpha,
                }
            if what == "judgments":
                return Response(service.export_judgments(campaign_id),
                                media_type="application/x-ndjson")
        except ServiceError as exc:
            raise _http_error(exc)
        raise HTTPException(status_code=404, detail=f"unknown export: {what}")

    return app
