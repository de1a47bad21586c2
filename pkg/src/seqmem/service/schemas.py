"""Request and response bodies shared by the HTTP service and the CLI."""
from __future__ import annotations

from typing import Any, Literal, Optional

from pydantic import BaseModel, Field

JobState = Literal["queued", "running", "done", "failed"]


class ValidateRequest(BaseModel):
    config: dict[str, Any] = Field(default_factory=dict)


class ValidateResponse(BaseModel):
    valid: bool
    errors: list[str] = Field(default_factory=list)
    resolved: Optional[dict[str, Any]] = None


class RunRequest(BaseModel):
    experiment: Literal["E1", "E2", "E3", "E4"]
    out_dir: str
    config: dict[str, Any] = Field(default_factory=dict)
    seeds: Optional[list[int]] = None
    backend: Optional[Literal["discrete", "spiking"]] = None
    arms: Optional[list[str]] = None


class ArmReport(BaseModel):
    arm: str
    seed: int
    file: Optional[str] = None
    seconds: float
    error: Optional[str] = None


class RunResponse(BaseModel):
    experiment: str
    out_dir: str
    partial: bool
    arms: list[ArmReport]
    summary: dict[str, Any]
    files: list[str]


class Job(BaseModel):
    id: str
    state: JobState
    request: RunRequest
    result: Optional[RunResponse] = None
    error: Optional[str] = None


class InspectRequest(BaseModel):
    path: str


class InspectResponse(BaseModel):
    path: str
    summary: dict[str, Any]


class Health(BaseModel):
    status: str = "ok"
    version: str
