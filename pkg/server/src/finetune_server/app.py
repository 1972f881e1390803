"""HTTP surface: POST /finetune, GET /status/{job_id}, POST /generate.

JSON bodies match the pipeline client's wire format exactly. Invalid configs
and params answer 400, a second concurrent training job answers 409, and
generation is refused with 409 until a job has finished (or the named
checkpoint exists). Bearer-token auth switches on when the
FINETUNE_SERVER_TOKEN environment variable is set.
"""

from __future__ import annotations

import os

from fastapi import Depends, FastAPI, Header, HTTPException
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .config import DEFAULTS
from .jobs import JobRegistry, start_training
from .modeling import build_model
from .sampling import generate as sample_texts
from .training import load_snapshot, train

AUTH_ENV = "FINETUNE_SERVER_TOKEN"


class WireConfig(BaseModel):
    epochs: int
    learning_rate: float = 5e-5
    mode: str = "full"
    rank_r: int = 16
    alpha: float = 32.0
    base_model_id: str = "distilgpt2"


class FinetuneRequest(BaseModel):
    corpus: list[str]
    config: WireConfig


class WireGenParams(BaseModel):
    seed: int
    max_new_tokens: int
    temperature: float = 0.7
    count: int = 1


class GenerateRequest(BaseModel):
    prompt_prefix: str
    params: WireGenParams
    checkpoint: str | None = None


def _config_error(config):
    if config.epochs < 1:
        return "epochs must be >= 1"
    if config.learning_rate <= 0:
        return "learning_rate must be positive"
    if config.mode not in ("full", "low_rank"):
        return f"unknown mode {config.mode!r}"
    if config.mode == "low_rank" and config.rank_r < 1:
        return "rank_r must be >= 1 in low_rank mode"
    return None


def _params_error(params):
    if params.max_new_tokens < 1:
        return "max_new_tokens must be >= 1"
    if params.temperature < 0:
        return "temperature must be >= 0"
    if params.count < 1:
        return "count must be >= 1"
    return None


def require_auth(authorization: str | None = Header(default=None)):
    token = os.environ.get(AUTH_ENV)
    if token and authorization != f"Bearer {token}":
        raise HTTPException(status_code=401, detail="missing or invalid bearer token")


def create_app(train_fn=train, defaults=DEFAULTS):
    app = FastAPI(title="finetune-server")
    registry = JobRegistry()
    app.state.registry = registry

    @app.exception_handler(RequestValidationError)
    async def malformed(request, exc):
        # the wire contract answers 400, not FastAPI's default 422
        return JSONResponse(status_code=400, content={"error": str(exc)})

    @app.post("/finetune", status_code=202, dependencies=[Depends(require_auth)])
    def finetune(request: FinetuneRequest):
        if not request.corpus:
            raise HTTPException(status_code=400, detail="corpus must be non-empty")
        problem = _config_error(request.config)
        if problem:
            raise HTTPException(status_code=400, detail=problem)
        job = registry.create(request.corpus, request.config)
        if job is None:
            raise HTTPException(status_code=409, detail="a training job is already active")
        start_training(job, train_fn)
        return {"job_id": job.id}

    @app.get("/status/{job_id}", dependencies=[Depends(require_auth)])
    def status(job_id: str):
        job = registry.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail=f"unknown job {job_id!r}")
        return job.summary(defaults)

    @app.post("/generate", dependencies=[Depends(require_auth)])
    def generate(request: GenerateRequest):
        problem = _params_error(request.params)
        if problem:
            raise HTTPException(status_code=400, detail=problem)
        params = request.params.model_dump()
        if request.checkpoint:
            job = registry.any_with_checkpoint(request.checkpoint)
            if job is None:
                raise HTTPException(
                    status_code=409,
                    detail=f"no checkpoint {request.checkpoint!r} is available",
                )
            bundle = build_model(job.corpus, job.config, defaults)
            load_snapshot(bundle, job.checkpoints[request.checkpoint])
        else:
            job = registry.latest_done()
            if job is None:
                raise HTTPException(status_code=409, detail="no finished training job")
            bundle = job.bundle
        texts = sample_texts(bundle, request.prompt_prefix, params, defaults.max_sequence_length)
        return {"texts": texts}

    return app


app = create_app()


def serve():
    import argparse

    import uvicorn

    parser = argparse.ArgumentParser(prog="finetune-server")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8800)
    args = parser.parse_args()
    uvicorn.run(app, host=args.host, port=args.port)
