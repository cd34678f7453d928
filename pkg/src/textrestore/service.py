"""HTTP inference service: POST /restore, GET /health, GET /tasks.

Images travel as base64 PNG/JPEG in JSON or as multipart uploads; responses
are always base64 PNG. Restorations run on a bounded worker pool; /health
responds without waiting behind inference.
"""
from __future__ import annotations

import asyncio
import base64
import binascii
import time
from concurrent.futures import ThreadPoolExecutor

from fastapi import FastAPI, HTTPException, Request
from pydantic import BaseModel

from .inference import Restorer, decode_image_bytes, restore_image_bytes


class RestoreRequest(BaseModel):
    image_b64: str | None = None
    instruction: str | None = None
    chain: list[str] | None = None
    return_intent: bool = True


class RestoreResponse(BaseModel):
    images: list[str]            # base64 PNG, one per chain step
    predicted_task: list[str]
    confidence: list[float]
    timing_ms: float


def _validate_instructions(instruction: str | None, chain: list[str] | None) -> list[str]:
    if (instruction is None) == (chain is None):
        raise HTTPException(status_code=400,
                            detail="provide exactly one of 'instruction' or 'chain'")
    prompts = chain if chain is not None else [instruction]
    if not prompts or any(p is None or not str(p).strip() for p in prompts):
        raise HTTPException(status_code=422, detail="instruction must be non-empty")
    return [str(p) for p in prompts]


def create_app(restorer: Restorer, max_side: int = 2048, workers: int = 2) -> FastAPI:
    app = FastAPI(title="textrestore service")
    pool = ThreadPoolExecutor(max_workers=max(1, workers))
    app.state.pool = pool
    checkpoint_hash = restorer.checkpoint.weights_hash()

    def _run_chain(data: bytes, prompts: list[str], return_intent: bool) -> RestoreResponse:
        start = time.perf_counter()
        try:
            img = decode_image_bytes(data)
        except Exception as e:
            raise HTTPException(status_code=400, detail=f"cannot decode image: {e}") from e
        if max(img.shape[0], img.shape[1]) > max_side:
            raise HTTPException(
                status_code=413,
                detail=f"image {img.shape[1]}x{img.shape[0]} exceeds max side {max_side}")
        images, tasks, confs = [], [], []
        # step through the PNG byte path so a chained request is byte-identical
        # to replaying its instructions one request at a time
        current = data
        for p in prompts:
            current, task, conf = restore_image_bytes(restorer, current, p)
            images.append(base64.b64encode(current).decode("ascii"))
            tasks.append(task if return_intent else "")
            confs.append(conf if return_intent else 0.0)
        elapsed = (time.perf_counter() - start) * 1000.0
        return RestoreResponse(images=images, predicted_task=tasks,
                               confidence=confs, timing_ms=elapsed)

    @app.post("/restore", response_model=RestoreResponse)
    async def restore(request: Request):
        content_type = request.headers.get("content-type", "")
        if content_type.startswith("multipart/"):
            form = await request.form()
            upload = form.get("image")
            if upload is None or not hasattr(upload, "read"):
                raise HTTPException(status_code=400, detail="multipart needs an 'image' file part")
            instruction = form.get("instruction")
            chain_raw = form.get("chain")
            chain = chain_raw.split("\n") if chain_raw else None
            prompts = _validate_instructions(instruction, chain)
            data = await upload.read()
            return_intent = str(form.get("return_intent", "true")).lower() != "false"
        else:
            try:
                body = RestoreRequest.model_validate(await request.json())
            except Exception as e:
                raise HTTPException(status_code=400, detail=f"malformed request: {e}") from e
            if body.image_b64 is None:
                raise HTTPException(status_code=400, detail="missing 'image_b64'")
            prompts = _validate_instructions(body.instruction, body.chain)
            try:
                data = base64.b64decode(body.image_b64, validate=True)
            except (binascii.Error, ValueError) as e:
                raise HTTPException(status_code=400, detail=f"invalid base64 image: {e}") from e
            return_intent = body.return_intent
        loop = asyncio.get_running_loop()
        return await loop.run_in_executor(
            pool, _run_chain, data, prompts, return_intent)

    @app.get("/health")
    def health():
        return {"status": "ok", "checkpoint_hash": checkpoint_hash}

    @app.get("/tasks")
    def tasks():
        return {"task_set": restorer.task_set.name,
                "tasks": restorer.task_set.names}

    return app
