"""HTTP service for prompt suggestion and inpainting jobs.

JSON over HTTP; images travel as base64 PNG. Inpainting runs through a
single-worker queue per model instance, suggestion requests execute
inline. Every response carries the seed and a config hash so outputs are
reproducible on the toy backbone.
"""

import base64
import hashlib
import io
import logging
import queue
import threading
import uuid
from pathlib import Path

import numpy as np
from fastapi import Depends, FastAPI, Header, HTTPException
from fastapi.responses import Response
from PIL import Image
from pydantic import BaseModel, ConfigDict, Field

from . import __version__
from .codec import build_instruction
from .config import AppConfig, api_key_from_env, config_digest
from .inpaint import InpaintJob, SamplerConfig, resize_and_center_crop, run_job
from .masks import Mask, MaskSet, mask_from_png_bytes, mask_to_png_bytes, render_overlay
from .promptgen import GenerationConfig, generate_prompts

log = logging.getLogger(__name__)

N_MAX = 5


class MaskPayload(BaseModel):
    model_config = ConfigDict(extra="forbid")
    png: str | None = None  # base64 PNG, 0/255
    bbox: tuple[int, int, int, int] | None = None


class SuggestRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    image: str
    masks: list[MaskPayload] = Field(min_length=1, max_length=N_MAX)
    temperature: float = Field(0.5, ge=0.0)
    num_samples: int = Field(4, ge=1, le=16)
    seed: int = 0


class InpaintRequestModel(BaseModel):
    model_config = ConfigDict(extra="forbid")
    image: str
    masks: list[MaskPayload] = Field(min_length=1, max_length=N_MAX)
    prompts: list[str]
    mode: str = "rca"
    steps: int = Field(50, ge=1)
    guidance_weight: float = Field(7.5, ge=0.0)
    seed: int = 0
    composite: bool = True
    request_id: str | None = None


class JobRecord(BaseModel):
    id: str
    kind: str
    status: str  # queued -> running -> done | failed
    manifest: dict = {}
    result_uri: str | None = None
    error: str | None = None


class EchoResponse(BaseModel):
    png: str
    width: int
    height: int
    area_px: int
    sha256: str


def _unprocessable(loc: list, msg: str):
    raise HTTPException(status_code=422, detail=[{"loc": loc, "msg": msg,
                                                  "type": "value_error"}])


def _decode_image(b64: str, loc: list) -> np.ndarray:
    try:
        data = base64.b64decode(b64, validate=True)
        return np.asarray(Image.open(io.BytesIO(data)).convert("RGB"))
    except Exception:
        _unprocessable(loc, "not a decodable base64 PNG image")


def _decode_masks(payloads: list[MaskPayload], image_size: tuple[int, int]) -> MaskSet:
    masks = []
    for i, payload in enumerate(payloads):
        loc = ["body", "masks", i]
        if (payload.png is None) == (payload.bbox is None):
            _unprocessable(loc, "provide exactly one of png or bbox")
        if payload.bbox is not None:
            try:
                masks.append(Mask.from_bbox(payload.bbox, image_size))
            except ValueError as exc:
                _unprocessable(loc + ["bbox"], str(exc))
        else:
            try:
                mask = mask_from_png_bytes(base64.b64decode(payload.png, validate=True))
            except Exception:
                _unprocessable(loc + ["png"], "not a decodable base64 mask PNG")
            if mask.grid.shape != image_size:
                _unprocessable(loc + ["png"],
                               f"mask shape {mask.grid.shape} != image {image_size}")
            if mask.area_px == 0:
                _unprocessable(loc + ["png"], "mask is empty")
            masks.append(mask)
    return MaskSet(masks, image_size)


class ServiceState:
    """Loaded models, job store, and the single-worker job queue."""

    def __init__(self, config: AppConfig, promptgen_backbone=None,
                 inpaint_backbone=None, artifacts_dir: str | Path | None = None):
        self.config = config
        self.config_hash = config_digest(config)
        self.promptgen = promptgen_backbone
        self.inpainter = inpaint_backbone
        self.api_key = api_key_from_env()
        self.artifacts_dir = Path(artifacts_dir or config.service.artifacts_dir)
        self.artifacts_dir.mkdir(parents=True, exist_ok=True)
        self.jobs: dict[str, JobRecord] = {}
        self.results: dict[str, bytes] = {}
        self.request_index: dict[str, str] = {}
        self._queue: queue.Queue = queue.Queue(maxsize=config.service.job_queue_depth)
        self._lock = threading.Lock()
        self._worker = threading.Thread(target=self._drain, daemon=True)
        self._worker.start()

    def submit(self, record: JobRecord, job: InpaintJob) -> None:
        self._queue.put((record.id, job))

    def _drain(self) -> None:
        while True:
            job_id, job = self._queue.get()
            record = self.jobs[job_id]
            record.status = "running"
            try:
                run_job(job, self.inpainter)
                png = _png_bytes(job.result_image)
                with self._lock:
                    self.results[job_id] = png
                out_path = self.artifacts_dir / f"{job_id}.png"
                out_path.write_bytes(png)
                manifest = {**(job.manifest or {}), "service_config_hash": self.config_hash}
                (self.artifacts_dir / f"{job_id}.json").write_text(
                    __import__("json").dumps(manifest, indent=2))
                record.manifest = manifest
                record.result_uri = f"/v1/jobs/{job_id}/result"
                record.status = "done"
            except Exception as exc:
                log.exception("job %s failed", job_id)
                record.error = str(exc)
                record.status = "failed"
            finally:
                self._queue.task_done()


def _png_bytes(array: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(array).save(buf, format="PNG")
    return buf.getvalue()


def create_app(state: ServiceState) -> FastAPI:
    app = FastAPI(title="multimask-inpaint", version=__version__)

    def check_key(x_api_key: str | None = Header(default=None)):
        if state.api_key and x_api_key != state.api_key:
            raise HTTPException(status_code=401, detail="invalid api key")

    auth = Depends(check_key)

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "version": __version__,
                "promptgen_loaded": state.promptgen is not None,
                "inpaint_loaded": state.inpainter is not None}

    @app.post("/v1/masks/echo", response_model=EchoResponse, dependencies=[auth])
    def echo_mask(payload: MaskPayload):
        if payload.png is None:
            _unprocessable(["body", "png"], "mask png required")
        try:
            raw = base64.b64decode(payload.png, validate=True)
            mask = mask_from_png_bytes(raw)
        except Exception:
            _unprocessable(["body", "png"], "not a decodable base64 mask PNG")
        return EchoResponse(png=payload.png, width=mask.grid.shape[1],
                            height=mask.grid.shape[0], area_px=mask.area_px,
                            sha256=hashlib.sha256(raw).hexdigest())

    @app.post("/v1/suggest", dependencies=[auth])
    def suggest(request: SuggestRequest):
        if state.promptgen is None:
            raise HTTPException(status_code=503, detail="prompt generator not loaded")
        image = _decode_image(request.image, ["body", "image"])
        mask_set = _decode_masks(request.masks, image.shape[:2])
        palette = state.config.pipeline.palette
        overlay = render_overlay(image, mask_set, palette=palette, rng_seed=request.seed)
        colors = overlay.colors_in_mask_order()
        bundle = build_instruction(colors, overlay=overlay,
                                   template_version=state.config.promptgen.template_version)
        gen = GenerationConfig(temperature=request.temperature,
                               num_samples=request.num_samples,
                               max_new_tokens=state.config.promptgen.max_new_tokens,
                               seed=request.seed)
        results = generate_prompts(overlay, bundle, gen, state.promptgen)
        from .codec import append_answer_log

        for r in results:
            append_answer_log(state.artifacts_dir / "answers.jsonl", r)
        return {"seed": request.seed, "config_hash": state.config_hash,
                "color_assignment": [{"mask_index": i, "color": c}
                                     for i, c in enumerate(colors)],
                "samples": [[{"color": p.color_name, "mask_index": p.mask_index,
                              "text": p.text, "status": r.statuses[p.color_name]}
                             for p in r.prompts] for r in results]}

    @app.post("/v1/inpaint", response_model=JobRecord, dependencies=[auth])
    def inpaint_endpoint(request: InpaintRequestModel):
        if state.inpainter is None:
            raise HTTPException(status_code=503, detail="inpainting model not loaded")
        if len(request.prompts) != len(request.masks):
            _unprocessable(["body", "prompts"],
                           f"{len(request.prompts)} prompts for {len(request.masks)} masks")
        if request.mode not in ("rca", "concat", "repeated"):
            _unprocessable(["body", "mode"], "mode must be rca, concat, or repeated")
        for i, text in enumerate(request.prompts):
            if not text.strip():
                _unprocessable(["body", "prompts", i], "prompt is empty")
        if request.request_id and request.request_id in state.request_index:
            return state.jobs[state.request_index[request.request_id]]

        image = _decode_image(request.image, ["body", "image"])
        size = state.inpainter.codec.image_size
        if image.shape[:2] != (size, size):
            _unprocessable(["body", "image"],
                           f"image must be {size}x{size} for the loaded model")
        mask_set = _decode_masks(request.masks, image.shape[:2])
        job = InpaintJob(image=image, mask_set=mask_set, prompts=list(request.prompts),
                         sampler=SamplerConfig(steps=request.steps,
                                               guidance_weight=request.guidance_weight,
                                               seed=request.seed,
                                               scheme=state.config.inpaint.scheme),
                         mode=request.mode, composite=request.composite)
        record = JobRecord(id=uuid.uuid4().hex[:12], kind="inpaint", status="queued")
        state.jobs[record.id] = record
        if request.request_id:
            state.request_index[request.request_id] = record.id
        state.submit(record, job)
        return record

    @app.get("/v1/jobs/{job_id}", response_model=JobRecord, dependencies=[auth])
    def get_job(job_id: str):
        record = state.jobs.get(job_id)
        if record is None:
            raise HTTPException(status_code=404, detail="unknown job")
        return record

    @app.get("/v1/jobs/{job_id}/result", dependencies=[auth])
    def get_result(job_id: str):
        record = state.jobs.get(job_id)
        if record is None:
            raise HTTPException(status_code=404, detail="unknown job")
        if record.status != "done":
            raise HTTPException(status_code=409, detail=f"job is {record.status}")
        return Response(content=state.results[job_id], media_type="image/png")

    return app
