"""Pipeline configuration: a flat key/value document (YAML or JSON) with
validated defaults. CLI flags override file values; an empty file yields the
full default configuration."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from pydantic import ValidationError as PydanticValidationError

from .errors import ConfigError
from .model import ABLATIONS, ModelDims
from .training import TrainConfig


class ClusterSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    members: list[str]
    correlation: float

    @field_validator("correlation")
    @classmethod
    def _corr_range(cls, value: float) -> float:
        if not -1.0 <= value <= 1.0:
            raise ValueError(f"cluster correlation {value} out of range [-1, 1]")
        return value


class PipelineConfig(BaseModel):
    """Every knob of the pipeline; defaults mirror the reference setup
    (20-day windows, 0.6 edge threshold, 128/512-wide encoder, 8+4 heads)."""

    model_config = ConfigDict(extra="forbid")

    # data
    data_source: Literal["synthetic", "planted", "csv"] = "synthetic"
    csv_path: str | None = None
    n_stocks: int = 10
    n_days: int = 120
    clusters: list[ClusterSpec] = Field(default_factory=list)
    planted_clusters: int = 3
    planted_followers: int = 5

    # graph
    lookback: int = 20
    tau: float = 0.6
    hop_bound: int = 1
    time_bound: int = 0

    # model dims
    d_in: int = 128
    d_enc: int = 128
    d_hidden: int = 512
    d_v: int = 128
    h_enc: int = 8
    d_att: int = 256
    h_tga: int = 4
    d_q: int = 256
    leaky_slope: float = 0.2
    encoder_residual_norm: bool = False

    # training
    epochs: int = 20
    batch_days: int = 8
    learning_rate: float = 3e-4
    seed: int = 0
    k: int = 5
    ablation: Literal["full", "noenc", "notemp", "nohete"] = "full"
    train_frac: float = 0.7
    val_frac: float = 0.1
    rolling_retrain: bool = False

    # backtest
    backtest_k: int = 5
    daily_capital: float = 50000.0

    # output
    out_dir: str = "out"

    @field_validator(
        "n_stocks", "n_days", "lookback", "hop_bound",
        "d_in", "d_enc", "d_hidden", "d_v", "h_enc", "d_att", "h_tga", "d_q",
        "epochs", "batch_days", "k",
    )
    @classmethod
    def _positive(cls, value: int, info) -> int:
        if value < 1:
            raise ValueError(f"{info.field_name} must be >= 1, got {value}")
        return value

    @field_validator("time_bound")
    @classmethod
    def _non_negative(cls, value: int) -> int:
        if value < 0:
            raise ValueError(f"time_bound must be >= 0, got {value}")
        return value

    @field_validator("tau")
    @classmethod
    def _tau_range(cls, value: float) -> float:
        if not 0.0 < value < 1.0:
            raise ValueError(f"tau {value} out of range (0, 1)")
        return value

    @field_validator("learning_rate")
    @classmethod
    def _lr_positive(cls, value: float) -> float:
        if value < 0:
            raise ValueError(f"learning_rate must be >= 0, got {value}")
        return value

    @field_validator("daily_capital")
    @classmethod
    def _capital_positive(cls, value: float) -> float:
        if value <= 0:
            raise ValueError(f"daily_capital must be > 0, got {value}")
        return value

    @field_validator("backtest_k")
    @classmethod
    def _backtest_k_range(cls, value: int) -> int:
        if value < 0:
            raise ValueError(f"backtest_k must be >= 0, got {value}")
        return value

    @model_validator(mode="after")
    def _cross_checks(self) -> "PipelineConfig":
        if self.d_in % 2 != 0:
            raise ValueError(
                f"d_in must be even (positional encoding pairs sin/cos columns), got {self.d_in}"
            )
        if self.data_source == "csv" and not self.csv_path:
            raise ValueError("missing required field csv_path for data_source=csv")
        if self.ablation == "noenc" and self.d_enc != self.d_in:
            raise ValueError("ablation=noenc requires d_enc == d_in")
        if self.encoder_residual_norm and self.d_enc != self.d_in:
            raise ValueError("encoder_residual_norm requires d_enc == d_in")
        if not 0.0 < self.train_frac < 1.0 or not 0.0 <= self.val_frac < 1.0:
            raise ValueError("train_frac must be in (0, 1) and val_frac in [0, 1)")
        if self.train_frac + self.val_frac >= 1.0:
            raise ValueError("train_frac + val_frac must leave room for a test segment")
        return self

    # -- derived views ------------------------------------------------------

    def model_dims(self) -> ModelDims:
        return ModelDims(
            lookback=self.lookback,
            d_in=self.d_in,
            d_enc=self.d_enc,
            d_hidden=self.d_hidden,
            d_v=self.d_v,
            h_enc=self.h_enc,
            d_att=self.d_att,
            h_tga=self.h_tga,
            d_q=self.d_q,
            leaky_slope=self.leaky_slope,
            residual_norm=self.encoder_residual_norm,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_days=self.batch_days,
            learning_rate=self.learning_rate,
            seed=self.seed,
            k=self.k,
            ablation=self.ablation,
        )

    def resolved(self) -> dict:
        return self.model_dump(mode="json")

    def config_hash(self) -> str:
        canonical = json.dumps(self.resolved(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _first_error_message(exc: PydanticValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def config_from_dict(doc: dict | None) -> PipelineConfig:
    try:
        return PipelineConfig.model_validate(doc or {})
    except PydanticValidationError as exc:
        raise ConfigError(_first_error_message(exc)) from exc


def validate_config(path: str | Path, overrides: dict | None = None) -> PipelineConfig:
    """Load + default + validate a config document; overrides win over file
    values. An empty file produces the fully-defaulted configuration."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    raw = path.read_text(encoding="utf-8")
    try:
        doc = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: cannot parse config: {exc}") from exc
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a key/value document")
    if overrides:
        doc.update(overrides)
    return config_from_dict(doc)
