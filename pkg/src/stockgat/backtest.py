"""Daily buy-hold-sell protocol and the seven-metric evaluation suite.

A day scored at the close selects the top-k stocks, fills at the next open
with equal capital per slot, and exits at the following open unless the
stock is re-selected (then it is held, with the open-to-open return still
accruing). Ledger records are dated by their entry day, so nothing in a
record depends on prices after its exit day.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import AlignmentError, CoverageError, ValidationError
from .market_data import PriceSeries, common_days
from .model import DayLabels, PredictionScores

TRADING_DAYS_PER_YEAR = 252

ScoreTable = Mapping[date, Mapping[str, float]]


def scores_by_day(predictions: Iterable[PredictionScores]) -> dict[date, dict[str, float]]:
    return {p.day: p.score_map() for p in predictions}


@dataclass(frozen=True)
class LedgerRecord:
    """One scored day's position batch."""

    scored_day: date
    entry_day: date
    exit_day: date
    selected: tuple[str, ...]  # rank order (best score first)
    buys: tuple[str, ...]  # entered at entry_day open
    holds: tuple[str, ...]  # carried over from the previous selection
    fills: dict[str, float]  # entry opens for every selected symbol
    exits: dict[str, float]  # exit opens
    slot_returns: dict[str, float]
    daily_return: float
    spend: float


@dataclass(frozen=True)
class BacktestLedger:
    records: tuple[LedgerRecord, ...]
    k: int
    daily_capital: float

    @property
    def daily_returns(self) -> np.ndarray:
        return np.array([r.daily_return for r in self.records])

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.daily_returns)

    @property
    def entry_days(self) -> tuple[date, ...]:
        return tuple(r.entry_day for r in self.records)


def _open_price(series: Mapping[str, PriceSeries], symbol: str, day: date) -> float:
    s = series.get(symbol)
    pos = s.index_of(day) if s is not None else None
    if pos is None:
        raise CoverageError(f"no open price for {symbol} on {day}")
    return s.bars[pos].open


def run_backtest(
    scores: ScoreTable,
    prices: Mapping[str, PriceSeries],
    k: int,
    daily_capital: float,
) -> BacktestLedger:
    """Deterministic replay of the daily protocol over the scored days.

    Top-k ties break by ascending symbol. The daily return is the mean
    open-to-open return over that day's selected slots (0 with no slots);
    costs and liquidity limits are ignored by construction.
    """
    if k < 0:
        raise ValidationError("k must be >= 0")
    calendar = common_days(prices)
    index = {d: i for i, d in enumerate(calendar)}
    records: list[LedgerRecord] = []
    previous: set[str] = set()
    for day in sorted(scores):
        if day not in index:
            raise CoverageError(f"scored day {day} not in the trading calendar")
        pos = index[day]
        if pos + 2 >= len(calendar):
            raise CoverageError(f"no entry/exit days after scored day {day}")
        entry_day = calendar[pos + 1]
        exit_day = calendar[pos + 2]
        day_scores = scores[day]
        ranked = sorted(day_scores, key=lambda s: (-day_scores[s], s))
        selected = tuple(ranked[:k])
        fills = {s: _open_price(prices, s, entry_day) for s in selected}
        exits = {s: _open_price(prices, s, exit_day) for s in selected}
        slot_returns = {s: exits[s] / fills[s] - 1.0 for s in selected}
        daily_return = float(np.mean(list(slot_returns.values()))) if selected else 0.0
        holds = tuple(s for s in selected if s in previous)
        buys = tuple(s for s in selected if s not in previous)
        records.append(
            LedgerRecord(
                scored_day=day,
                entry_day=entry_day,
                exit_day=exit_day,
                selected=selected,
                buys=buys,
                holds=holds,
                fills=fills,
                exits=exits,
                slot_returns=slot_returns,
                daily_return=daily_return,
                spend=daily_capital if selected else 0.0,
            )
        )
        previous = set(selected)
    return BacktestLedger(records=tuple(records), k=k, daily_capital=daily_capital)


def next_open_returns(prices: Mapping[str, PriceSeries], day: date) -> dict[str, float]:
    """Tradable return for day's score: open(t+1) -> open(t+2), per symbol."""
    calendar = common_days(prices)
    index = {d: i for i, d in enumerate(calendar)}
    if day not in index or index[day] + 2 >= len(calendar):
        raise CoverageError(f"no entry/exit days after {day}")
    entry_day = calendar[index[day] + 1]
    exit_day = calendar[index[day] + 2]
    out: dict[str, float] = {}
    for symbol in prices:
        out[symbol] = _open_price(prices, symbol, exit_day) / _open_price(prices, symbol, entry_day) - 1.0
    return out


def universe_benchmark(prices: Mapping[str, PriceSeries], days: Iterable[date]) -> np.ndarray:
    """Equal-weighted open-to-open universe return per scored day."""
    return np.array([float(np.mean(list(next_open_returns(prices, d).values()))) for d in sorted(days)])


# -- evaluation -------------------------------------------------------------------


def accuracy(scores: ScoreTable, labels: Mapping[date, DayLabels]) -> float:
    """Mean over days of the labeled-node hit rate at the 0.5 threshold."""
    if not scores:
        raise CoverageError("no scored days")
    per_day: list[float] = []
    for day in sorted(scores):
        if day not in labels:
            raise CoverageError(f"no labels for scored day {day}")
        day_scores = scores[day]
        day_labels = labels[day].labels
        missing = sorted(set(day_labels) - set(day_scores))
        if missing:
            raise CoverageError(f"{day}: no score for labeled nodes {missing}")
        hits = [
            1.0 if (day_scores[s] >= 0.5) == (y == 1) else 0.0
            for s, y in day_labels.items()
        ]
        per_day.append(float(np.mean(hits)))
    return float(np.mean(per_day))


def max_drawdown(cumulative: np.ndarray) -> float:
    """Most negative gap between the additive cumulative curve and its
    running maximum (linear scan)."""
    running_max = np.maximum.accumulate(cumulative)
    return float(np.min(cumulative - running_max))


def annualized_sharpe(arr: float, av: float) -> float:
    return arr / av if av > 0 else 0.0


def calmar(arr: float, mdd: float) -> float:
    return arr / abs(mdd) if mdd < 0 else 0.0


@dataclass(frozen=True)
class MetricsReport:
    acc: float | None
    arr: float
    av: float
    mdd: float
    asr: float
    cr: float
    ir: float
    flags: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "acc": self.acc,
            "arr": self.arr,
            "av": self.av,
            "mdd": self.mdd,
            "asr": self.asr,
            "cr": self.cr,
            "ir": self.ir,
            "flags": list(self.flags),
        }


def compute_metrics(
    ledger: BacktestLedger,
    benchmark_returns: np.ndarray | list[float],
    acc: float | None = None,
) -> MetricsReport:
    """ARR/AV/MDD on the additive daily-return curve plus the three ratio
    metrics; degenerate denominators yield 0 with an explanatory flag."""
    if not ledger.records:
        raise ValidationError("ledger is empty")
    benchmark = np.asarray(benchmark_returns, dtype=np.float64)
    returns = ledger.daily_returns
    if benchmark.shape != returns.shape:
        raise AlignmentError(
            f"benchmark has {benchmark.size} days, ledger has {returns.size}"
        )
    n = returns.size
    arr = float(returns.sum() * (TRADING_DAYS_PER_YEAR / n))
    av = float(returns.std(ddof=0) * np.sqrt(TRADING_DAYS_PER_YEAR))
    mdd = max_drawdown(ledger.cumulative)
    flags: list[str] = []
    if av > 0:
        asr = annualized_sharpe(arr, av)
    else:
        asr, flags = 0.0, flags + ["zero_volatility"]
    if mdd < 0:
        cr = calmar(arr, mdd)
    else:
        cr, flags = 0.0, flags + ["zero_drawdown"]
    excess = returns - benchmark
    excess_std = float(excess.std(ddof=0))
    if excess_std > 0:
        ir = float(excess.mean() / excess_std * np.sqrt(TRADING_DAYS_PER_YEAR))
    else:
        ir, flags = 0.0, flags + ["zero_excess_stdev"]
    return MetricsReport(acc=acc, arr=arr, av=av, mdd=mdd, asr=asr, cr=cr, ir=ir, flags=tuple(flags))


# -- persistence ------------------------------------------------------------------


def save_ledger(ledger: BacktestLedger, benchmark_returns: np.ndarray, path: str | Path) -> None:
    doc = {
        "k": ledger.k,
        "daily_capital": ledger.daily_capital,
        "benchmark_returns": [float(x) for x in benchmark_returns],
        "records": [
            {
                "scored_day": r.scored_day.isoformat(),
                "entry_day": r.entry_day.isoformat(),
                "exit_day": r.exit_day.isoformat(),
                "selected": list(r.selected),
                "buys": list(r.buys),
                "holds": list(r.holds),
                "fills": r.fills,
                "exits": r.exits,
                "slot_returns": r.slot_returns,
                "daily_return": r.daily_return,
                "spend": r.spend,
            }
            for r in ledger.records
        ],
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=0) + "\n", encoding="utf-8")


def load_ledger(path: str | Path) -> tuple[BacktestLedger, np.ndarray]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    records = tuple(
        LedgerRecord(
            scored_day=date.fromisoformat(r["scored_day"]),
            entry_day=date.fromisoformat(r["entry_day"]),
            exit_day=date.fromisoformat(r["exit_day"]),
            selected=tuple(r["selected"]),
            buys=tuple(r["buys"]),
            holds=tuple(r["holds"]),
            fills={k: float(v) for k, v in r["fills"].items()},
            exits={k: float(v) for k, v in r["exits"].items()},
            slot_returns={k: float(v) for k, v in r["slot_returns"].items()},
            daily_return=float(r["daily_return"]),
            spend=float(r["spend"]),
        )
        for r in doc["records"]
    )
    ledger = BacktestLedger(records=records, k=int(doc["k"]), daily_capital=float(doc["daily_capital"]))
    return ledger, np.asarray(doc["benchmark_returns"], dtype=np.float64)


def report(
    ledger: BacktestLedger,
    metrics: MetricsReport,
    out_dir: str | Path,
    benchmark_returns: np.ndarray | list[float] | None = None,
) -> list[Path]:
    """Write metrics.json, daily_returns.csv, and cumulative.csv; floats use
    repr so reading the CSVs reproduces the series exactly."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    benchmark = (
        np.zeros(len(ledger.records))
        if benchmark_returns is None
        else np.asarray(benchmark_returns, dtype=np.float64)
    )
    if benchmark.shape != ledger.daily_returns.shape:
        raise AlignmentError("benchmark length does not match ledger")

    metrics_path = out / "metrics.json"
    metrics_path.write_text(json.dumps(metrics.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8")

    returns_path = out / "daily_returns.csv"
    with returns_path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["day", "daily_return"])
        for record in ledger.records:
            writer.writerow([record.entry_day.isoformat(), repr(record.daily_return)])

    cumulative_path = out / "cumulative.csv"
    strategy_cum = ledger.cumulative
    benchmark_cum = np.cumsum(benchmark)
    with cumulative_path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["day", "strategy_cum", "benchmark_cum"])
        for record, s, b in zip(ledger.records, strategy_cum, benchmark_cum):
            writer.writerow([record.entry_day.isoformat(), repr(float(s)), repr(float(b))])

    return [metrics_path, returns_path, cumulative_path]
