"""HTTP session service.

JSON API (images travel as base64 PNG):

  POST   /sessions                  {"image": b64png} -> {"id", "state"}
  GET    /sessions                  -> {"sessions": [...]}
  GET    /sessions/{id}             -> {"id", "state", "history", ...}
  POST   /sessions/{id}/edits       EditOp fields -> {"history", "preview_png"}
  DELETE /sessions/{id}/edits/{eid} -> {"history", "preview_png"}
  POST   /sessions/{id}/render      -> {"state"}   (starts the adaptation job)
  GET    /sessions/{id}/render      -> {"state", "image"?}
  DELETE /sessions/{id}/render      -> {"state"}   (cancels a running job)
  GET    /catalog                   -> classes, strength presets, grid, styles

The edit region is run-length encoded; its dims may be the latent grid
(used directly) or the image (reduced via the any-overlap stroke rule).
Strength comes either as a number or as a named preset level.
"""

from __future__ import annotations

import base64
import binascii
import os
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .dissection import UnitCatalog
from .editing import (MODES, STRENGTH_PRESETS, decode_mask_rle, stroke_to_region,
                      strength_preset)
from .errors import CatalogError, EditError, LatentPaintError
from .generator import load_checkpoint
from .inversion import Encoder
from .perceptual import PerceptualExtractor
from .sessions import (CapacityError, ServiceProfile, SessionBusyError, SessionStore,
                       UnknownSessionError, Workspace)


class CreateSessionRequest(BaseModel):
    image: str = Field(description="base64-encoded PNG at the model's resolution")


class RleMask(BaseModel):
    height: int
    width: int
    rows: list[list[int]]


class EditRequest(BaseModel):
    mode: str
    class_id: str = Field(alias="class")
    region: RleMask
    strength: float | None = None
    strength_level: str | None = None
    style_source: str | None = None

    model_config = {"populate_by_name": True}


def _env_profile() -> ServiceProfile:
    profile = ServiceProfile()
    mapping = {
        "LATENTPAINT_REFINE_STEPS": ("refine_steps", int),
        "LATENTPAINT_PREVIEW_STEPS": ("preview_steps", int),
        "LATENTPAINT_ADAPT_STEPS": ("adapt_steps", int),
        "LATENTPAINT_REG_WEIGHT": ("reg_weight", float),
        "LATENTPAINT_SEED": ("seed", int),
    }
    for env, (attr, cast) in mapping.items():
        if os.environ.get(env):
            setattr(profile, attr, cast(os.environ[env]))
    return profile


def load_workspace_from_env() -> Workspace:
    checkpoint = os.environ.get("LATENTPAINT_CHECKPOINT")
    encoder = os.environ.get("LATENTPAINT_ENCODER")
    catalog = os.environ.get("LATENTPAINT_CATALOG")
    missing = [n for n, v in [("LATENTPAINT_CHECKPOINT", checkpoint),
                              ("LATENTPAINT_ENCODER", encoder),
                              ("LATENTPAINT_CATALOG", catalog)] if not v]
    if missing:
        raise RuntimeError(f"missing environment variables: {', '.join(missing)}")
    profile = _env_profile()
    return Workspace(
        generator=load_checkpoint(Path(checkpoint)),
        encoder=Encoder.load(Path(encoder)),
        catalog=UnitCatalog.load(Path(catalog)),
        extractor=PerceptualExtractor.fixed_random(profile.extractor_seed),
        profile=profile,
    )


def create_app(workspace: Workspace | None = None, capacity: int | None = None,
               data_dir: str | None = None, run_async: bool = True) -> FastAPI:
    if workspace is None:
        workspace = load_workspace_from_env()
    if capacity is None:
        capacity = int(os.environ.get("LATENTPAINT_SESSION_CAPACITY", "16"))
    if data_dir is None:
        data_dir = os.environ.get("LATENTPAINT_DATA_DIR") or None
    store = SessionStore(workspace, capacity=capacity, data_dir=data_dir, run_async=run_async)

    app = FastAPI(title="latentpaint", version="0.1.0")
    app.state.store = store

    @app.exception_handler(UnknownSessionError)
    async def _unknown(request: Request, exc: UnknownSessionError):
        return JSONResponse(status_code=404, content={"detail": str(exc)})

    @app.exception_handler(SessionBusyError)
    async def _busy(request: Request, exc: SessionBusyError):
        return JSONResponse(status_code=409, content={"detail": str(exc)})

    @app.exception_handler(CapacityError)
    async def _capacity(request: Request, exc: CapacityError):
        return JSONResponse(status_code=503, content={"detail": str(exc)})

    @app.exception_handler(EditError)
    async def _edit_error(request: Request, exc: EditError):
        return JSONResponse(status_code=422, content={"detail": str(exc)})

    @app.exception_handler(CatalogError)
    async def _catalog_error(request: Request, exc: CatalogError):
        return JSONResponse(status_code=422, content={"detail": str(exc)})

    @app.exception_handler(LatentPaintError)
    async def _library_error(request: Request, exc: LatentPaintError):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    def _edit_fields(body: EditRequest) -> dict:
        if body.mode not in MODES:
            raise EditError(f"unknown mode {body.mode!r}")
        region = decode_mask_rle(body.region.model_dump())
        grid = workspace.catalog.grid
        image_hw = workspace.generator.output_shape[:2]
        if region.shape == tuple(image_hw):
            region = stroke_to_region(region, grid)
        elif region.shape != grid:
            raise EditError(
                f"region dims {region.shape} match neither the latent grid {grid} "
                f"nor the image {tuple(image_hw)}")
        if body.mode == "erase":
            strength = 0.0
        elif body.strength is not None:
            strength = float(body.strength)
        elif body.strength_level is not None:
            strength = strength_preset(body.strength_level, body.mode)
        else:
            raise EditError("edit needs either 'strength' or 'strength_level'")
        return {"mode": body.mode, "class_id": body.class_id, "region": region,
                "strength": strength, "style_source": body.style_source}

    def _edit_response(session) -> dict:
        return {
            "history": session.history(),
            "preview_png": base64.b64encode(session.preview_png).decode()
            if session.preview_png else None,
        }

    @app.post("/sessions", status_code=201)
    def create_session(body: CreateSessionRequest):
        try:
            png = base64.b64decode(body.image, validate=True)
        except (binascii.Error, ValueError) as exc:
            raise LatentPaintError(f"image is not valid base64: {exc}") from exc
        session, state = store.create(png)
        return {"id": session.session_id, "state": state}

    @app.get("/sessions")
    def list_sessions():
        return {"sessions": [store.get(sid).snapshot() for sid in store.ids()]}

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        session = store.get(session_id)
        with session.lock:
            payload = session.snapshot()
            payload["preview_png"] = (base64.b64encode(session.preview_png).decode()
                                      if session.preview_png else None)
        return payload

    @app.post("/sessions/{session_id}/edits")
    def post_edit(session_id: str, body: EditRequest):
        session = store.add_edit(session_id, _edit_fields(body))
        return _edit_response(session)

    @app.delete("/sessions/{session_id}/edits/{edit_id}")
    def delete_edit(session_id: str, edit_id: int):
        session = store.delete_edit(session_id, edit_id)
        return _edit_response(session)

    @app.post("/sessions/{session_id}/render", status_code=202)
    def start_render(session_id: str):
        session = store.start_render(session_id)
        return {"state": session.state}

    @app.get("/sessions/{session_id}/render")
    def get_render(session_id: str):
        session = store.get(session_id)
        with session.lock:
            payload = {"state": session.state}
            if session.state == "done" and session.final_png is not None:
                payload["image"] = base64.b64encode(session.final_png).decode()
            if session.state == "error":
                payload["detail"] = session.error
        return payload

    @app.delete("/sessions/{session_id}/render")
    def cancel_render(session_id: str):
        session = store.cancel_render(session_id)
        return {"state": session.state}

    @app.get("/catalog")
    def get_catalog():
        hz, wz = workspace.catalog.grid
        hp, wp, _ = workspace.generator.output_shape
        return {
            "classes": workspace.catalog.class_names(),
            "strengths": STRENGTH_PRESETS,
            "modes": list(MODES),
            "grid": [hz, wz],
            "image_size": [hp, wp],
            "styles": store.ready_style_sources(),
            "checkpoint_id": workspace.generator.checkpoint_id,
        }

    ui_dir = os.environ.get("LATENTPAINT_UI_DIR")
    if ui_dir and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app


def main() -> None:   # pragma: no cover - thin uvicorn wrapper
    import uvicorn

    port = int(os.environ.get("LATENTPAINT_PORT", "8321"))
    uvicorn.run(create_app(), host="127.0.0.1", port=port)


if __name__ == "__main__":   # pragma: no cover
    main()
