"""Semi-supervised training: day-batched Adam over the summed cross-entropy
objective, finite-difference gradient verification, and the versioned binary
checkpoint format (JSON header + little-endian float64 arrays)."""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .autodiff import Tensor
from .errors import ConfigError, CoverageError, DivergenceError, ParseError
from .graphs import RelationSnapshot, TemporalHeteroGraph
from .market_data import FeatureWindow
from .model import (
    ABLATIONS,
    DayLabels,
    ModelDims,
    ModelParams,
    bce_loss_tensor,
    build_model_params,
    forward_day_tensor,
    init_model_params,
)

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_days: int = 8
    learning_rate: float = 3e-4
    seed: int = 0
    k: int = 5
    ablation: str = "full"

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_days < 1:
            raise ConfigError("batch_days must be >= 1")
        if self.learning_rate < 0:
            raise ConfigError("learning rate must be >= 0")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"ablation must be one of {ABLATIONS}")


class Adam:
    """Adam with bias correction (beta1=0.9, beta2=0.999, eps=1e-8)."""

    def __init__(self, tensors: Sequence[Tensor], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.tensors = list(tensors)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.tensors]
        self.v = [np.zeros_like(p.data) for p in self.tensors]

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.tensors, self.m, self.v):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


@dataclass
class TrainResult:
    params: ModelParams
    loss_history: list[float] = field(default_factory=list)


def train(
    days: Sequence[date],
    graph: TemporalHeteroGraph,
    windows: Mapping[date, FeatureWindow],
    labels: Mapping[date, DayLabels],
    config: TrainConfig,
    dims: ModelDims,
    params: ModelParams | None = None,
) -> TrainResult:
    """Day-batched Adam; deterministic for a fixed seed (init and the
    per-epoch day shuffle both derive from it). Returns per-epoch mean loss."""
    days = list(days)
    if not days:
        raise CoverageError("need at least one training day")
    missing = [d for d in days if d not in windows or d not in labels]
    if missing:
        raise CoverageError(f"missing window or labels for days: {missing}")

    if params is None:
        params = init_model_params(dims, config.seed)
    optimizer = Adam(params.tensors(), lr=config.learning_rate)
    shuffle_rng = np.random.default_rng([config.seed, 1])

    history: list[float] = []
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(len(days))
        day_losses: list[float] = []
        for start in range(0, len(order), config.batch_days):
            params.zero_grads()
            for pos in order[start:start + config.batch_days]:
                day = days[pos]
                scores, _ = forward_day_tensor(
                    windows[day], graph.snapshot_for(day), params, dims, config.ablation
                )
                loss = bce_loss_tensor(scores, windows[day].symbols, labels[day])
                value = float(loss.data)
                if not np.isfinite(value):
                    raise DivergenceError(f"non-finite loss in epoch {epoch}")
                loss.backward()
                day_losses.append(value)
            optimizer.step()
        history.append(float(np.mean(day_losses)))
    return TrainResult(params=params, loss_history=history)


# -- gradient verification -------------------------------------------------------


def gradient_check(
    params: ModelParams,
    window: FeatureWindow,
    snapshot: RelationSnapshot,
    labels: DayLabels,
    dims: ModelDims,
    ablation: str = "full",
    eps: float = 1e-5,
) -> float:
    """Worst relative error between tape gradients and central differences,
    taken over every entry of every parameter.

    Relative error is |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    Meant for tiny instances; cost is two forward passes per entry.
    """

    def loss_value() -> float:
        scores, _ = forward_day_tensor(window, snapshot, params, dims, ablation)
        return float(bce_loss_tensor(scores, window.symbols, labels).data)

    params.zero_grads()
    scores, _ = forward_day_tensor(window, snapshot, params, dims, ablation)
    bce_loss_tensor(scores, window.symbols, labels).backward()

    worst = 0.0
    for _, tensor in params.named():
        grad = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        flat = tensor.data.reshape(-1)
        grad_flat = grad.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + eps
            up = loss_value()
            flat[i] = original - eps
            down = loss_value()
            flat[i] = original
            numeric = (up - down) / (2.0 * eps)
            analytic = grad_flat[i]
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
            worst = max(worst, rel)
    return worst


# -- persistence -----------------------------------------------------------------


def save_loss_history(history: Sequence[float], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["epoch", "mean_loss"])
        for epoch, value in enumerate(history):
            writer.writerow([epoch, repr(float(value))])


def load_loss_history(path: str | Path) -> list[float]:
    with Path(path).open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        next(reader)
        return [float(row[1]) for row in reader]


def save_checkpoint(
    path: str | Path,
    params: ModelParams,
    dims: ModelDims,
    seed: int,
    ablation: str,
    hyperparameters: Mapping | None = None,
) -> None:
    """Versioned JSON header (dims, hyperparameters, seed, ablation, array
    catalog) followed by raw little-endian float64 array bytes in the
    catalog's order. Byte-identical for identical inputs."""
    named = params.named()
    header = {
        "format_version": CHECKPOINT_VERSION,
        "dims": dims.to_dict(),
        "seed": seed,
        "ablation": ablation,
        "hyperparameters": dict(hyperparameters or {}),
        "arrays": [{"name": name, "shape": list(t.data.shape)} for name, t in named],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with Path(path).open("wb") as handle:
        handle.write(struct.pack("<Q", len(blob)))
        handle.write(blob)
        for _, tensor in named:
            handle.write(np.ascontiguousarray(tensor.data, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[ModelParams, dict]:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise ParseError(f"{path}: truncated checkpoint")
    (header_len,) = struct.unpack("<Q", raw[:8])
    try:
        header = json.loads(raw[8:8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: bad checkpoint header: {exc}") from exc
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise ParseError(f"{path}: unsupported checkpoint version {header.get('format_version')}")
    dims = ModelDims(**header["dims"])
    params = build_model_params(dims, lambda shape, fi, fo: Tensor(np.zeros(shape)))
    named = params.named()
    catalog = header["arrays"]
    if [c["name"] for c in catalog] != [name for name, _ in named]:
        raise ParseError(f"{path}: checkpoint array catalog does not match model layout")
    offset = 8 + header_len
    for entry, (name, tensor) in zip(catalog, named):
        shape = tuple(entry["shape"])
        if shape != tensor.data.shape:
            raise ParseError(f"{path}: array {name} has shape {shape}, expected {tensor.data.shape}")
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        chunk = raw[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise ParseError(f"{path}: truncated array data for {name}")
        tensor.data = np.frombuffer(chunk, dtype="<f8").reshape(shape).copy()
        offset += nbytes
    if offset != len(raw):
        raise ParseError(f"{path}: trailing bytes after declared arrays")
    return params, header
