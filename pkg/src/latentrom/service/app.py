"""FastAPI application wrapping the pipeline commands.

Each command endpoint submits a job (background thread) and either returns the
job record immediately (``wait=false``, poll GET /jobs/{id}) or blocks until
completion. Package errors map to structured 4xx payloads with the same
machine-parsable categories the CLI prints.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse

from .. import __version__, pipeline
from ..errors import ConfigError, DataError, LatentRomError
from .jobs import JobRegistry
from .schemas import (
    EvaluateRequest,
    GenerateRequest,
    HealthInfo,
    IngestRequest,
    JobInfo,
    PredictRequest,
    TrainRequest,
)


def create_app() -> FastAPI:
    app = FastAPI(title="latentrom", version=__version__)
    registry = JobRegistry()
    app.state.jobs = registry

    @app.exception_handler(LatentRomError)
    async def package_error(request, err: LatentRomError):
        status = 400 if isinstance(err, (ConfigError, DataError)) else 500
        return JSONResponse(status_code=status, content={"category": err.category, "message": str(err)})

    @app.get("/health", response_model=HealthInfo)
    def health():
        return HealthInfo(status="ok", version=__version__)

    def _run(command: str, overrides: dict, wait: bool) -> JobInfo:
        job = registry.submit(command, lambda: pipeline.RUNNERS[command](overrides))
        if wait:
            job = registry.wait(job.id)
        return JobInfo(**job.snapshot())

    @app.post("/datasets/generate", response_model=JobInfo)
    def generate(req: GenerateRequest, wait: bool = True):
        return _run("generate", req.overrides(), wait)

    @app.post("/datasets/ingest", response_model=JobInfo)
    def ingest(req: IngestRequest, wait: bool = True):
        overrides = {k: v for k, v in req.model_dump().items() if v is not None}
        return _run("ingest", overrides, wait)

    @app.post("/models/train", response_model=JobInfo)
    def train(req: TrainRequest, wait: bool = True):
        return _run("train", req.overrides(), wait)

    @app.post("/models/predict", response_model=JobInfo)
    def predict(req: PredictRequest, wait: bool = True):
        return _run("predict", req.overrides(), wait)

    @app.post("/models/evaluate", response_model=JobInfo)
    def evaluate(req: EvaluateRequest, wait: bool = True):
        return _run("evaluate", req.overrides(), wait)

    @app.get("/jobs", response_model=list[JobInfo])
    def jobs():
        return [JobInfo(**snap) for snap in registry.list()]

    @app.get("/jobs/{job_id}", response_model=JobInfo)
    def job(job_id: str):
        try:
            return JobInfo(**registry.get(job_id).snapshot())
        except KeyError:
            raise HTTPException(status_code=404, detail=f"no job {job_id!r}")

    return app
