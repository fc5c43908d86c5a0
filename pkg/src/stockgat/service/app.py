"""HTTP surface for the pipeline: one endpoint per stage plus config
validation and health. Stage work runs in-process and writes artifacts to
the service host's filesystem under the configured output directory."""

from __future__ import annotations

import logging

from fastapi import FastAPI, HTTPException

from .. import __version__
from ..config import PipelineConfig, config_from_dict, validate_config
from ..errors import ConfigError, ParseError, StockgatError
from ..pipeline import STAGES, run_stage
from .schemas import ConfigValidationResponse, HealthResponse, StageRequest, StageResponse

logger = logging.getLogger("stockgat.service")


def _resolve_config(request: StageRequest) -> PipelineConfig:
    if request.config_path:
        return validate_config(request.config_path, overrides=request.config)
    return config_from_dict(request.config)


def create_app() -> FastAPI:
    app = FastAPI(title="stockgat", version=__version__)

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.post("/config/validate", response_model=ConfigValidationResponse)
    def validate(request: StageRequest) -> ConfigValidationResponse:
        try:
            cfg = _resolve_config(request)
        except ConfigError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return ConfigValidationResponse(config=cfg.resolved(), config_hash=cfg.config_hash())

    @app.post("/stages/{stage}", response_model=StageResponse)
    def stage(stage: str, request: StageRequest) -> StageResponse:
        if stage not in STAGES:
            raise HTTPException(status_code=404, detail=f"unknown stage {stage!r}; one of {list(STAGES)}")
        try:
            cfg = _resolve_config(request)
        except ConfigError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        logger.info("stage=%s seed=%s config_hash=%s", stage, cfg.seed, cfg.config_hash())
        try:
            result = run_stage(stage, cfg)
        except (ConfigError, ParseError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        except StockgatError as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from exc
        return StageResponse(**result)

    return app


app = create_app()
