"""HTTP service backing the review workflow.

All responses are JSON except the PNG render endpoints. Errors carry a
machine-readable code: 400 malformed payloads, 404 unknown ids, 409 review
state-machine violations. The retrieval endpoint answers refusals as data,
not errors: a closed-domain system declining to answer is a valid outcome.
"""

from __future__ import annotations

import logging

from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .errors import InsufficientEvidence, MinelensError, StatusTransitionError
from .pipeline import Pipeline

logger = logging.getLogger(__name__)

RENDER_LAYERS = ("rgb", "ndvi", "ndbi", "fmi", "udm")


class ReviewBody(BaseModel):
    decision: str
    note: str = ""
    reviewer: str = "anonymous"


class RagQueryBody(BaseModel):
    query: str
    mode: str = "flat"


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": {"code": code, "message": message}})


def create_app(pipeline: Pipeline) -> FastAPI:
    app = FastAPI(title="minelens", docs_url=None, redoc_url=None)

    @app.exception_handler(MinelensError)
    async def minelens_error(request: Request, exc: MinelensError):
        status = 409 if isinstance(exc, StatusTransitionError) else 400
        return _error(status, exc.code, str(exc))

    @app.exception_handler(KeyError)
    async def missing(request: Request, exc: KeyError):
        return _error(404, "not_found", str(exc))

    @app.exception_handler(ValueError)
    async def malformed(request: Request, exc: ValueError):
        return _error(400, "invalid_request", str(exc))

    @app.exception_handler(PermissionError)
    async def not_reviewable(request: Request, exc: PermissionError):
        return _error(409, "not_reviewable", str(exc))

    @app.exception_handler(FileExistsError)
    async def already_decided(request: Request, exc: FileExistsError):
        return _error(409, "already_reviewed", str(exc))

    @app.get("/sites")
    def list_sites():
        return [s.to_dict() for s in pipeline.registry.list_sites()]

    @app.get("/sites/{site_id}")
    def get_site(site_id: str):
        return pipeline.registry.load_site(site_id).to_dict()

    @app.get("/sites/{site_id}/render/{layer}")
    def render(site_id: str, layer: str):
        if layer not in RENDER_LAYERS:
            return _error(400, "invalid_request", f"layer must be one of {RENDER_LAYERS}")
        pipeline.registry.load_site(site_id)  # 404 on unknown site
        run = pipeline.latest_run(site_id)
        if run is None or not run.run_id:
            return _error(404, "not_found", f"no pipeline run for site {site_id!r}")
        path = pipeline.run_dir(site_id, run.run_id) / f"{layer}.png"
        if not path.exists():
            return _error(404, "not_found", f"layer {layer!r} not rendered for site {site_id!r}")
        return Response(content=path.read_bytes(), media_type="image/png")

    @app.post("/sites/{site_id}/scribbles")
    def post_scribbles(site_id: str, body: dict):
        pipeline.registry.load_site(site_id)
        try:
            scribbles = pipeline.save_scribbles(site_id, body)
        except (TypeError, LookupError) as exc:
            # malformed GeoJSON shapes surface as missing keys / bad types
            if isinstance(exc, KeyError):
                return _error(400, "invalid_geojson", f"missing field {exc}")
            return _error(400, "invalid_geojson", str(exc))
        return {
            "site_id": site_id,
            "strokes": len(scribbles.strokes),
            "status": pipeline.registry.load_site(site_id).status,
        }

    @app.post("/sites/{site_id}/udm/train")
    def udm_train(site_id: str):
        pipeline.registry.load_site(site_id)
        return pipeline.train_udm(site_id)

    @app.post("/sites/{site_id}/udm/classify")
    def udm_classify(site_id: str):
        pipeline.registry.load_site(site_id)
        return pipeline.classify_udm(site_id)

    @app.get("/sites/{site_id}/captions")
    def site_captions(site_id: str):
        pipeline.registry.load_site(site_id)
        return pipeline.captions_for_site(site_id)

    @app.post("/captions/{caption_id}/review")
    def review_caption(caption_id: str, body: ReviewBody):
        return pipeline.review(caption_id, body.decision, body.reviewer, body.note)

    @app.post("/rag/query")
    def rag_query(body: RagQueryBody):
        try:
            answer, trace = pipeline.rag_query(body.query, body.mode)
        except InsufficientEvidence as exc:
            refusal = {"refused": True, "reason": str(exc)}
            if exc.trace is not None:
                refusal["trace"] = exc.trace.to_dict()
            return refusal
        doc = answer.to_dict()
        doc["refused"] = False
        if trace is not None:
            doc["trace"] = trace
        return doc

    return app
