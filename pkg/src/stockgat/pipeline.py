"""Stage orchestration over on-disk artifacts.

Stages communicate only through files under the configured output directory
(prices.csv, graphs/*.json, checkpoint.bin, scores.csv, ledger.json, ...),
so any stage can be re-run in isolation from its persisted inputs. Every
stage records its inputs' hashes in manifest.json along with the resolved
config, its hash, and the seed.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Mapping

import numpy as np

from .backtest import (
    accuracy,
    compute_metrics,
    load_ledger,
    next_open_returns,
    report,
    run_backtest,
    save_ledger,
    universe_benchmark,
)
from .config import PipelineConfig
from .errors import CoverageError, ParseError
from .graphs import TemporalHeteroGraph, build_temporal_graph, load_snapshot, save_snapshot
from .market_data import (
    PriceSeries,
    build_feature_window,
    common_days,
    gen_planted_market,
    gen_synthetic_market,
    load_price_csv,
    save_price_csv,
)
from .model import (
    DayLabels,
    PredictionScores,
    bce_loss_tensor,
    forward_day,
    forward_day_tensor,
    label_day,
)
from .training import Adam, load_checkpoint, save_checkpoint, save_loss_history, train

STAGES = ("gen-data", "build-graphs", "train", "predict", "backtest", "report", "run-all")


@dataclass(frozen=True)
class RunPaths:
    out_dir: Path

    @property
    def prices(self) -> Path:
        return self.out_dir / "prices.csv"

    @property
    def graphs_dir(self) -> Path:
        return self.out_dir / "graphs"

    @property
    def checkpoint(self) -> Path:
        return self.out_dir / "checkpoint.bin"

    @property
    def loss_history(self) -> Path:
        return self.out_dir / "loss_history.csv"

    @property
    def scores(self) -> Path:
        return self.out_dir / "scores.csv"

    @property
    def attention_trace(self) -> Path:
        return self.out_dir / "attention_trace.csv"

    @property
    def betas(self) -> Path:
        return self.out_dir / "betas.csv"

    @property
    def ledger(self) -> Path:
        return self.out_dir / "ledger.json"

    @property
    def metrics(self) -> Path:
        return self.out_dir / "metrics.json"

    @property
    def manifest(self) -> Path:
        return self.out_dir / "manifest.json"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _update_manifest(cfg: PipelineConfig, paths: RunPaths, stage: str,
                     inputs: list[Path], artifacts: list[Path]) -> None:
    manifest = {"config": cfg.resolved(), "config_hash": cfg.config_hash(), "seed": cfg.seed, "stages": {}}
    if paths.manifest.exists():
        try:
            existing = json.loads(paths.manifest.read_text(encoding="utf-8"))
            if existing.get("config_hash") == manifest["config_hash"]:
                manifest["stages"] = existing.get("stages", {})
        except json.JSONDecodeError:
            pass
    def rel(p: Path) -> str:
        return p.relative_to(paths.out_dir).as_posix() if p.is_relative_to(paths.out_dir) else str(p)

    manifest["stages"][stage] = {
        "inputs": {rel(p): _sha256(p) for p in inputs},
        "artifacts": [rel(p) for p in artifacts],
    }
    paths.manifest.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _result(cfg: PipelineConfig, stage: str, artifacts: list[Path], detail: dict | None = None) -> dict:
    return {
        "stage": stage,
        "out_dir": cfg.out_dir,
        "seed": cfg.seed,
        "config_hash": cfg.config_hash(),
        "artifacts": sorted(str(p) for p in artifacts),
        "detail": detail or {},
    }


# -- shared plumbing ---------------------------------------------------------------


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise CoverageError(f"missing {path.name}; run the {producer} stage first")
    return path


def _load_market(paths: RunPaths) -> dict[str, PriceSeries]:
    return load_price_csv(_require(paths.prices, "gen-data"))


def day_structure(prices: Mapping[str, PriceSeries], cfg: PipelineConfig) -> dict[str, list[date]]:
    """Chronological split of the modelable days.

    A day is modelable when it has a full lookback window behind it and the
    two following trading days (entry and exit) ahead of it, so labels and
    backtest fills always exist.
    """
    calendar = common_days(prices)
    model_days = [d for i, d in enumerate(calendar) if i >= cfg.lookback and i <= len(calendar) - 3]
    if not model_days:
        raise CoverageError(
            f"no modelable days: calendar has {len(calendar)} days, lookback {cfg.lookback}"
        )
    n = len(model_days)
    n_train = int(n * cfg.train_frac)
    n_val = int(n * cfg.val_frac)
    if n_train < 1 or n_train + n_val >= n:
        raise CoverageError(f"split leaves an empty train or test segment over {n} days")
    return {
        "calendar": calendar,
        "model": model_days,
        "train": model_days[:n_train],
        "val": model_days[n_train:n_train + n_val],
        "test": model_days[n_train + n_val:],
    }


def _windows(prices, days, lookback):
    return {d: build_feature_window(prices, d, lookback) for d in days}


def _labels(prices, days, k) -> dict[date, DayLabels]:
    return {d: label_day(d, next_open_returns(prices, d), k) for d in days}


def _load_graph(paths: RunPaths, cfg: PipelineConfig) -> TemporalHeteroGraph:
    graph_dir = _require(paths.graphs_dir, "build-graphs")
    files = sorted(graph_dir.glob("*.json"))
    if not files:
        raise CoverageError("graphs directory is empty; run the build-graphs stage first")
    snapshots = tuple(load_snapshot(f) for f in files)
    return TemporalHeteroGraph(snapshots=snapshots, hop_bound=cfg.hop_bound, time_bound=cfg.time_bound)


# -- stages ------------------------------------------------------------------------


def stage_gen_data(cfg: PipelineConfig) -> dict:
    paths = RunPaths(Path(cfg.out_dir))
    paths.out_dir.mkdir(parents=True, exist_ok=True)
    if cfg.data_source == "synthetic":
        market = gen_synthetic_market(
            cfg.n_stocks,
            cfg.n_days,
            [(c.members, c.correlation) for c in cfg.clusters],
            seed=cfg.seed,
            lookback=cfg.lookback,
        )
        inputs: list[Path] = []
    elif cfg.data_source == "planted":
        market = gen_planted_market(
            cfg.planted_clusters, cfg.planted_followers, cfg.n_days, seed=cfg.seed
        )
        inputs = []
    else:
        source = Path(cfg.csv_path)
        if not source.exists():
            raise CoverageError(f"csv_path does not exist: {source}")
        market = load_price_csv(source)
        inputs = [source]
    save_price_csv(market, paths.prices)
    _update_manifest(cfg, paths, "gen-data", inputs, [paths.prices])
    return _result(cfg, "gen-data", [paths.prices], {"symbols": len(market)})


def stage_build_graphs(cfg: PipelineConfig) -> dict:
    paths = RunPaths(Path(cfg.out_dir))
    prices = _load_market(paths)
    days = day_structure(prices, cfg)["model"]
    graph = build_temporal_graph(
        prices, days, cfg.lookback, cfg.tau, hop_bound=cfg.hop_bound, time_bound=cfg.time_bound
    )
    paths.graphs_dir.mkdir(parents=True, exist_ok=True)
    for stale in paths.graphs_dir.glob("*.json"):
        stale.unlink()
    artifacts = []
    for snapshot in graph.snapshots:
        target = paths.graphs_dir / f"{snapshot.as_of.isoformat()}.json"
        save_snapshot(snapshot, target)
        artifacts.append(target)
    _update_manifest(cfg, paths, "build-graphs", [paths.prices], artifacts)
    edges = sum(len(s.pos_edges) + len(s.neg_edges) for s in graph.snapshots)
    return _result(cfg, "build-graphs", artifacts, {"days": len(days), "edges": edges})


def stage_train(cfg: PipelineConfig) -> dict:
    paths = RunPaths(Path(cfg.out_dir))
    prices = _load_market(paths)
    graph = _load_graph(paths, cfg)
    split = day_structure(prices, cfg)
    train_days = split["train"]
    missing = [d for d in train_days if d not in graph.days]
    if missing:
        raise CoverageError(f"graphs missing for train days {missing[:3]}...; re-run build-graphs")
    windows = _windows(prices, train_days, cfg.lookback)
    labels = _labels(prices, train_days, cfg.k)
    result = train(train_days, graph, windows, labels, cfg.train_config(), cfg.model_dims())
    save_checkpoint(
        paths.checkpoint,
        result.params,
        cfg.model_dims(),
        seed=cfg.seed,
        ablation=cfg.ablation,
        hyperparameters={
            "epochs": cfg.epochs,
            "batch_days": cfg.batch_days,
            "learning_rate": cfg.learning_rate,
            "k": cfg.k,
            "tau": cfg.tau,
            "lookback": cfg.lookback,
        },
    )
    save_loss_history(result.loss_history, paths.loss_history)
    inputs = [paths.prices] + sorted(paths.graphs_dir.glob("*.json"))
    _update_manifest(cfg, paths, "train", inputs, [paths.checkpoint, paths.loss_history])
    return _result(
        cfg, "train", [paths.checkpoint, paths.loss_history],
        {"train_days": len(train_days), "first_epoch_loss": result.loss_history[0],
         "last_epoch_loss": result.loss_history[-1]},
    )


def _rolling_update(params, optimizer, graph, windows, labels, day_pool, cfg) -> None:
    """One warm-start Adam step on the most recent labeled days (rolling mode)."""
    recent = day_pool[-cfg.batch_days:]
    if not recent:
        return
    params.zero_grads()
    for day in recent:
        scores, _ = forward_day_tensor(
            windows[day], graph.snapshot_for(day), params, cfg.model_dims(), cfg.ablation
        )
        bce_loss_tensor(scores, windows[day].symbols, labels[day]).backward()
    optimizer.step()


def stage_predict(cfg: PipelineConfig) -> dict:
    paths = RunPaths(Path(cfg.out_dir))
    prices = _load_market(paths)
    graph = _load_graph(paths, cfg)
    params, header = load_checkpoint(_require(paths.checkpoint, "train"))
    if header["dims"] != cfg.model_dims().to_dict():
        raise ParseError("checkpoint dims do not match the current config")
    split = day_structure(prices, cfg)
    test_days = split["test"]
    windows = _windows(prices, test_days, cfg.lookback)
    dims = cfg.model_dims()

    rolling_pool: list[date] = []
    rolling_windows: dict[date, object] = {}
    rolling_labels: dict[date, DayLabels] = {}
    optimizer = Adam(params.tensors(), lr=cfg.learning_rate) if cfg.rolling_retrain else None

    predictions: list[PredictionScores] = []
    calendar = split["calendar"]
    position = {d: i for i, d in enumerate(calendar)}
    for day in test_days:
        if cfg.rolling_retrain and optimizer is not None:
            # Fine-tune on labeled days whose labels are known strictly
            # before `day` (a day's label needs the two following opens).
            known = [d for d in split["model"] if position[d] + 2 <= position[day]]
            for d in known:
                if d not in rolling_windows:
                    rolling_windows[d] = build_feature_window(prices, d, cfg.lookback)
                    rolling_labels[d] = label_day(d, next_open_returns(prices, d), cfg.k)
            rolling_pool = known
            _rolling_update(params, optimizer, graph, rolling_windows, rolling_labels, rolling_pool, cfg)
        predictions.append(forward_day(day, graph, windows[day], params, dims, cfg.ablation))

    with paths.scores.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["day", "symbol", "score"])
        for p in predictions:
            for symbol, score in zip(p.symbols, p.scores):
                writer.writerow([p.day.isoformat(), symbol, repr(float(score))])
    with paths.attention_trace.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["day", "relation", "head", "u", "v", "alpha"])
        for p in predictions:
            for row in p.attention:
                writer.writerow(
                    [row.day.isoformat(), row.relation, row.head, row.u, row.v, repr(row.alpha)]
                )
    with paths.betas.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["day", "beta_self", "beta_pos", "beta_neg"])
        for p in predictions:
            writer.writerow([p.day.isoformat()] + [repr(b) for b in p.betas])

    artifacts = [paths.scores, paths.attention_trace, paths.betas]
    inputs = [paths.prices, paths.checkpoint] + sorted(paths.graphs_dir.glob("*.json"))
    _update_manifest(cfg, paths, "predict", inputs, artifacts)
    return _result(cfg, "predict", artifacts, {"scored_days": len(test_days)})


def load_scores_csv(path: str | Path) -> dict[date, dict[str, float]]:
    out: dict[date, dict[str, float]] = {}
    with Path(path).open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header != ["day", "symbol", "score"]:
            raise ParseError(f"{path}: expected header day,symbol,score")
        for row in reader:
            out.setdefault(date.fromisoformat(row[0]), {})[row[1]] = float(row[2])
    return out


def stage_backtest(cfg: PipelineConfig) -> dict:
    paths = RunPaths(Path(cfg.out_dir))
    prices = _load_market(paths)
    scores = load_scores_csv(_require(paths.scores, "predict"))
    ledger = run_backtest(scores, prices, cfg.backtest_k, cfg.daily_capital)
    days = sorted(scores)
    labels = _labels(prices, days, cfg.k)
    acc = accuracy(scores, labels)
    benchmark = universe_benchmark(prices, days)
    metrics = compute_metrics(ledger, benchmark, acc=acc)
    save_ledger(ledger, benchmark, paths.ledger)
    paths.metrics.write_text(
        json.dumps(metrics.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    artifacts = [paths.ledger, paths.metrics]
    _update_manifest(cfg, paths, "backtest", [paths.prices, paths.scores], artifacts)
    return _result(cfg, "backtest", artifacts, {"days": len(days), "metrics": metrics.to_dict()})


def stage_report(cfg: PipelineConfig) -> dict:
    paths = RunPaths(Path(cfg.out_dir))
    ledger, benchmark = load_ledger(_require(paths.ledger, "backtest"))
    metrics_doc = json.loads(_require(paths.metrics, "backtest").read_text(encoding="utf-8"))
    from .backtest import MetricsReport

    metrics = MetricsReport(
        acc=metrics_doc["acc"],
        arr=metrics_doc["arr"],
        av=metrics_doc["av"],
        mdd=metrics_doc["mdd"],
        asr=metrics_doc["asr"],
        cr=metrics_doc["cr"],
        ir=metrics_doc["ir"],
        flags=tuple(metrics_doc.get("flags", [])),
    )
    written = report(ledger, metrics, paths.out_dir, benchmark_returns=benchmark)
    _update_manifest(cfg, paths, "report", [paths.ledger, paths.metrics], written)
    return _result(cfg, "report", written, {})


_STAGE_FUNCS = {
    "gen-data": stage_gen_data,
    "build-graphs": stage_build_graphs,
    "train": stage_train,
    "predict": stage_predict,
    "backtest": stage_backtest,
    "report": stage_report,
}


def run_stage(stage: str, cfg: PipelineConfig) -> dict:
    if stage == "run-all":
        return run_all(cfg)
    if stage not in _STAGE_FUNCS:
        raise CoverageError(f"unknown stage {stage!r}")
    return _STAGE_FUNCS[stage](cfg)


def run_all(cfg: PipelineConfig) -> dict:
    artifacts: list[str] = []
    detail: dict = {}
    for stage in ("gen-data", "build-graphs", "train", "predict", "backtest", "report"):
        result = _STAGE_FUNCS[stage](cfg)
        artifacts.extend(result["artifacts"])
        if result["detail"]:
            detail[stage] = result["detail"]
    return {
        "stage": "run-all",
        "out_dir": cfg.out_dir,
        "seed": cfg.seed,
        "config_hash": cfg.config_hash(),
        "artifacts": sorted(set(artifacts)),
        "detail": detail,
    }
