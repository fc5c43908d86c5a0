"""Request/response models for the pipeline service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class StageRequest(BaseModel):
    """A flat config document, optionally layered over a server-side file."""

    config: dict = Field(default_factory=dict)
    config_path: str | None = None


class StageResponse(BaseModel):
    stage: str
    out_dir: str
    seed: int
    config_hash: str
    artifacts: list[str]
    detail: dict = Field(default_factory=dict)


class ConfigValidationResponse(BaseModel):
    config: dict
    config_hash: str


class HealthResponse(BaseModel):
    status: str
    version: str
