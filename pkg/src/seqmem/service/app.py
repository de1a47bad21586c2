"""HTTP front end: validate configs, queue experiment runs, inspect checkpoints.

Runs execute one at a time on a background thread (an experiment already
fans out over worker processes when ``workers > 1``). Start with::

    uvicorn seqmem.service.app:app
"""
from __future__ import annotations

import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from contextlib import asynccontextmanager

from fastapi import FastAPI, HTTPException

from .. import __version__
from ..checkpoint import CheckpointError
from ..encoder import ConfigurationError
from . import core
from .schemas import (Health, InspectRequest, InspectResponse, Job, RunRequest, ValidateRequest,
                      ValidateResponse)


class JobQueue:
    def __init__(self):
        self._jobs: dict[str, Job] = {}
        self._lock = threading.Lock()
        self._pool = ThreadPoolExecutor(max_workers=1, thread_name_prefix="seqmem-run")

    def submit(self, req: RunRequest) -> Job:
        job = Job(id=uuid.uuid4().hex[:12], state="queued", request=req)
        with self._lock:
            self._jobs[job.id] = job
        self._pool.submit(self._execute, job.id)
        return job

    def _update(self, job_id: str, **changes) -> None:
        with self._lock:
            self._jobs[job_id] = self._jobs[job_id].model_copy(update=changes)

    def _execute(self, job_id: str) -> None:
        self._update(job_id, state="running")
        try:
            res = core.run(self._jobs[job_id].request)
        except Exception as e:
            self._update(job_id, state="failed", error=f"{type(e).__name__}: {e}")
        else:
            self._update(job_id, state="done", result=res)

    def get(self, job_id: str) -> Job | None:
        with self._lock:
            return self._jobs.get(job_id)

    def all(self) -> list[Job]:
        with self._lock:
            return list(self._jobs.values())

    def shutdown(self) -> None:
        self._pool.shutdown(wait=False, cancel_futures=True)


def create_app() -> FastAPI:
    jobs = JobQueue()

    @asynccontextmanager
    async def lifespan(_app):
        yield
        jobs.shutdown()

    app = FastAPI(title="seqmem", version=__version__, lifespan=lifespan)
    app.state.jobs = jobs

    @app.get("/health", response_model=Health)
    def health():
        return Health(version=__version__)

    @app.post("/validate-config", response_model=ValidateResponse)
    def validate_config(req: ValidateRequest):
        return core.validate_config(req)

    @app.post("/runs", response_model=Job, status_code=202)
    def submit_run(req: RunRequest):
        # reject bad configs up front rather than as a failed job
        check = core.validate_config(ValidateRequest(config=req.config))
        if not check.valid:
            raise HTTPException(status_code=422, detail=check.errors)
        return jobs.submit(req)

    @app.get("/runs", response_model=list[Job])
    def list_runs():
        return jobs.all()

    @app.get("/runs/{job_id}", response_model=Job)
    def get_run(job_id: str):
        job = jobs.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail=f"no job {job_id}")
        return job

    @app.post("/inspect", response_model=InspectResponse)
    def inspect(req: InspectRequest):
        try:
            return core.inspect(req)
        except CheckpointError as e:
            raise HTTPException(status_code=400, detail=str(e)) from None
        except ConfigurationError as e:
            raise HTTPException(status_code=422, detail=str(e)) from None

    return app


app = create_app()
