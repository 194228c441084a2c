"""HTTP review API over a curation store.

Endpoints:
    GET  /api/pending?class=&limit=&after=   pending sample summaries
    GET  /api/image/{id}                     PNG bytes
    POST /api/verdict                        {"id","decision","reviewer"}
    GET  /api/stats                          per-class status counts
    GET  /api/plan                           balance plan CSV, when configured

Verdicts serialize through the store's lock; repeated verdicts return 409
so concurrent reviewers cannot double-decide a sample.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional

from fastapi import FastAPI, HTTPException, Query, Response
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel

from .curation import AlreadyDecidedError, CurationStore, UnknownSampleError


class VerdictBody(BaseModel):
    id: str
    decision: str
    reviewer: str = "anonymous"


def create_app(store: CurationStore, plan_csv: Optional[str] = None) -> FastAPI:
    app = FastAPI(title="ganbalance curation service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.get("/api/pending")
    def pending(limit: int = 50, after: Optional[str] = None,
                class_name: Optional[str] = Query(default=None, alias="class")):
        try:
            samples = store.list_pending(label=class_name, limit=limit, after=after)
        except UnknownSampleError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        return [
            {"id": s.id, "class": s.label, "created_at": s.created_at,
             "image_url": f"/api/image/{s.id}"}
            for s in samples
        ]

    @app.get("/api/image/{sample_id}")
    def image(sample_id: str):
        try:
            sample = store.get(sample_id)
        except UnknownSampleError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        path = Path(sample.png_path)
        if not path.exists():
            raise HTTPException(status_code=404, detail=f"missing file {path}")
        return Response(content=path.read_bytes(), media_type="image/png")

    @app.post("/api/verdict")
    def verdict(body: VerdictBody):
        try:
            sample = store.post_verdict(body.id, body.decision, body.reviewer)
        except UnknownSampleError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except AlreadyDecidedError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except Exception as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return {"id": sample.id, "status": sample.status}

    @app.get("/api/stats")
    def stats():
        return store.stats()

    @app.get("/api/plan")
    def plan():
        if plan_csv is None or not Path(plan_csv).exists():
            raise HTTPException(status_code=404, detail="no balance plan configured")
        return Response(content=Path(plan_csv).read_text(encoding="utf-8"),
                        media_type="text/csv")

    return app


def serve(store_path, port: int, plan_csv: Optional[str] = None):
    import uvicorn

    app = create_app(CurationStore(store_path), plan_csv=plan_csv)
    uvicorn.run(app, host="0.0.0.0", port=port, log_level="info")
