"""REST surface (JSON, versioned under /api/v1) over the platform service."""
from __future__ import annotations

from pathlib import Path

from fastapi import Depends, FastAPI, Query, Request, Response
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from ecgdesk.platform.service import (
    AuthError,
    ConflictError,
    ForbiddenError,
    NotFoundError,
    PlatformConfig,
    PlatformService,
    ValidationError,
)

_ERROR_STATUS = {
    AuthError: 401,
    ForbiddenError: 403,
    NotFoundError: 404,
    ConflictError: 409,
    ValidationError: 422,
}


class CaseCreate(BaseModel):
    patient_ref: str
    recording_ref: str
    lead: str = "II"


class EditCreate(BaseModel):
    target: str
    action: str
    new_value: str | None = None
    original_value: str | None = None


class FinalizeRequest(BaseModel):
    narrative: str


def create_app(config: PlatformConfig, ui_dir: Path | None = None) -> FastAPI:
    service = PlatformService(config)
    app = FastAPI(title="ecgdesk platform", version="1.0")
    app.state.service = service

    def principal(request: Request):
        header = request.headers.get("authorization", "")
        token = header.removeprefix("Bearer ").strip() if header.startswith("Bearer ") else None
        return service.principal_for_token(token)

    for exc_type, status in _ERROR_STATUS.items():
        def handler(request, exc, status=status):
            return JSONResponse(status_code=status, content={"detail": str(exc)})
        app.add_exception_handler(exc_type, handler)

    @app.post("/api/v1/recordings", status_code=201)
    async def upload_recording(
        request: Request,
        patient_ref: str = Query(...),
        format: str = Query("binary-v1"),
        p=Depends(principal),
    ):
        data = await request.body()
        rec_id = service.upload_recording(p, data, format, patient_ref)
        return {"id": rec_id}

    @app.post("/api/v1/cases", status_code=201)
    def create_case(body: CaseCreate, p=Depends(principal)):
        return service.create_case(p, body.patient_ref, body.recording_ref, body.lead)

    @app.get("/api/v1/cases")
    def list_cases(status: str | None = None, p=Depends(principal)):
        return {"cases": service.list_cases(p, status)}

    @app.get("/api/v1/cases/{case_id}")
    def get_case(case_id: str, p=Depends(principal)):
        return service.get_case(p, case_id)

    @app.get("/api/v1/cases/{case_id}/result")
    def get_result(case_id: str, p=Depends(principal)):
        return service.get_result(p, case_id)

    @app.post("/api/v1/cases/{case_id}/edits", status_code=201)
    def submit_edit(case_id: str, body: EditCreate, p=Depends(principal)):
        return service.submit_edit(
            p, case_id, body.target, body.action, body.new_value, body.original_value
        )

    @app.post("/api/v1/cases/{case_id}/finalize")
    def finalize(case_id: str, body: FinalizeRequest, p=Depends(principal)):
        return service.finalize_report(p, case_id, body.narrative)

    @app.get("/api/v1/cases/{case_id}/report")
    def get_report(case_id: str, p=Depends(principal)):
        payload = service.get_report_bytes(p, case_id)
        return Response(content=payload, media_type="application/json")

    @app.get("/api/v1/cases/{case_id}/trace")
    def get_trace(
        case_id: str,
        start: int = Query(0, alias="from"),
        to: int = Query(..., alias="to"),
        buckets: int = Query(500),
        lead: str | None = None,
        p=Depends(principal),
    ):
        return service.trace_tiles(p, case_id, start, to, buckets, lead)

    @app.post("/api/v1/cases/{case_id}/reanalyze")
    def reanalyze(case_id: str, p=Depends(principal)):
        return service.reanalyze(p, case_id)

    @app.get("/api/v1/audit")
    def query_audit(
        actor: str | None = None,
        case: str | None = None,
        limit: int = 500,
        offset: int = 0,
        p=Depends(principal),
    ):
        return {"events": service.query_audit(p, actor, case, limit, offset)}

    @app.get("/api/v1/health")
    def health():
        return {"status": "ok"}

    if ui_dir is not None and Path(ui_dir).exists():
        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
