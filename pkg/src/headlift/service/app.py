"""HTTP service: segmentation extraction, reconstruction, editing, orbit
rendering.  JSON wire format with base64 PNG images.

Sessions (reconstructed or edited Gaussian clouds) live in a bounded LRU
store; everything else is stateless.  Model weights are read-only after
startup; inference is serialized behind a lock.
"""

import threading
from typing import Literal, Optional

import torch
from fastapi import FastAPI, Query
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from ..data import stub_segmentation
from ..edit_encoder import PALETTE, embed_style
from ..errors import HeadliftError, InvalidArgumentError
from ..geometry import orbit_camera
from ..model import EditModel, LiftModel, load_model
from ..preprocess import prepare
from .codec import b64_to_image, b64_to_mask, b64_to_seg, image_to_b64, seg_to_b64
from .store import DEFAULT_CAPACITY, SessionStore

DEFAULT_DISTANCE = 2.7
MAX_RENDER_SIZE = 1024


class StyleSpec(BaseModel):
    type: Literal["text", "image"]
    value: str


class SegmentRequest(BaseModel):
    image: str


class ReconstructRequest(BaseModel):
    image: str
    mask: Optional[str] = None


class EditRequest(BaseModel):
    seg_map: str
    style: StyleSpec


def _palette_dict():
    return {str(i): {"name": name, "rgb": list(rgb)}
            for i, (name, rgb) in enumerate(PALETTE)}


class StubSegmenter:
    """Heuristic foreground->skin / top-band->hair segmenter; flagged stub."""

    is_stub = True

    def __call__(self, pixels, mask):
        return stub_segmentation(pixels, mask)


def create_app(model=None, edit_model=None, segmenter=None, embedder=None,
               capacity=DEFAULT_CAPACITY, checkpoint_id=None, background=(1.0, 1.0, 1.0)):
    """Build the service; models may be absent (endpoints answer 503)."""
    app = FastAPI(title="headlift service")
    store = SessionStore(capacity)
    segmenter = segmenter if segmenter is not None else StubSegmenter()
    infer_lock = threading.Lock()
    state = {"model": model, "edit_model": edit_model,
             "checkpoint_id": checkpoint_id}
    app.state.sessions = store

    def seg_size():
        m = state["edit_model"] or state["model"]
        return m.config.image_size if m is not None else 64

    @app.exception_handler(RequestValidationError)
    def on_validation_error(request, exc):
        err = exc.errors()[0]
        loc = ".".join(str(p) for p in err["loc"] if p != "body")
        return JSONResponse(status_code=400,
                            content={"detail": f"invalid field {loc}: {err['msg']}"})

    @app.exception_handler(HeadliftError)
    def on_domain_error(request, exc):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    def unavailable(what):
        return JSONResponse(status_code=503,
                            content={"detail": f"{what} not loaded"})

    @app.get("/health")
    def health():
        if state["model"] is None and state["edit_model"] is None:
            return unavailable("model")
        return {"status": "ok", "checkpoint_id": state["checkpoint_id"]}

    @app.post("/segment")
    def segment(req: SegmentRequest):
        image = b64_to_image(req.image, "image")
        aligned = prepare(image, size=seg_size())
        seg = segmenter(aligned.pixels, aligned.mask)
        return {"seg_map": seg_to_b64(seg), "palette": _palette_dict(),
                "stub": bool(getattr(segmenter, "is_stub", False))}

    @app.post("/reconstruct")
    def reconstruct(req: ReconstructRequest):
        if state["model"] is None:
            return unavailable("reconstruction model")
        image = b64_to_image(req.image, "image")
        mask = b64_to_mask(req.mask, "mask") if req.mask is not None else None
        with infer_lock, torch.no_grad():
            cloud = state["model"].reconstruct(image, mask).detach()
        session = store.put(cloud, "reconstruct")
        return {"session_id": session.session_id}

    @app.post("/edit")
    def edit(req: EditRequest):
        if state["edit_model"] is None:
            return unavailable("editing model")
        seg = b64_to_seg(req.seg_map, "seg_map")
        if req.style.type == "image":
            style = embed_style(b64_to_image(req.style.value, "style.value"), embedder)
        else:
            style = embed_style(req.style.value, embedder)
        with infer_lock, torch.no_grad():
            cloud = state["edit_model"].reconstruct(seg, style).detach()
        session = store.put(cloud, "edit")
        return {"session_id": session.session_id}

    @app.get("/render")
    def render(session_id: str,
               yaw: float = Query(default=0.0),
               pitch: float = Query(default=0.0, ge=-89.0, le=89.0),
               distance: float = Query(default=DEFAULT_DISTANCE, gt=0.0),
               size: int = Query(default=256, ge=16, le=MAX_RENDER_SIZE)):
        session = store.get(session_id)
        if session is None:
            return JSONResponse(status_code=404,
                                content={"detail": f"unknown session {session_id}"})
        camera = orbit_camera(yaw, pitch, distance, width=size, height=size)
        owner = state["model"] if session.source == "reconstruct" else state["edit_model"]
        with infer_lock, torch.no_grad():
            if owner is not None:
                out, image = owner.render(session.cloud, camera, background)
            else:
                from ..splat import rasterize
                out = rasterize(session.cloud, camera, background)
                image = out.image
        return {"image": image_to_b64(image.detach().cpu().numpy()),
                "alpha": image_to_b64(out.alpha.detach().cpu().numpy())}

    return app


def app_from_checkpoints(lift_path=None, edit_path=None, **kwargs):
    """Load checkpoints and build the app; checkpoint_id is the lift (or
    else edit) archive's content hash."""
    model = edit_model = None
    checkpoint_id = None
    if lift_path:
        model, ckpt = load_model(lift_path)
        if not isinstance(model, LiftModel):
            raise InvalidArgumentError(f"{lift_path} is not a lift checkpoint")
        checkpoint_id = ckpt.sha256[:16]
    if edit_path:
        edit_model, eckpt = load_model(edit_path)
        if not isinstance(edit_model, EditModel):
            raise InvalidArgumentError(f"{edit_path} is not an edit checkpoint")
        checkpoint_id = checkpoint_id or eckpt.sha256[:16]
    return create_app(model=model, edit_model=edit_model,
                      checkpoint_id=checkpoint_id, **kwargs)
