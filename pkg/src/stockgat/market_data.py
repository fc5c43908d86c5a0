"""Price ingestion, synthetic market generation, and model input windows.

A market is a mapping symbol -> PriceSeries. Feature windows are n x T x 6
tensors of day-over-day ratios (open, high, low, close, volume, turnover),
which keeps every channel scale-free across stocks.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, CoverageError, DuplicateError, ParseError, ValidationError

CSV_HEADER = ("date", "symbol", "open", "high", "low", "close", "volume", "turnover")
FEATURE_CHANNELS = ("open", "high", "low", "close", "volume", "turnover")
N_FEATURES = len(FEATURE_CHANNELS)

# Synthetic market shock scales (log space, per day).
_CLOSE_VOL = 0.02
_GAP_VOL = 0.004
_RANGE_VOL = 0.004
_VOLUME_VOL = 0.30
_TURNOVER_JITTER = 0.02
_BASE_VOLUME = 1.0e6


@dataclass(frozen=True, slots=True)
class PriceBar:
    date: date
    open: float
    high: float
    low: float
    close: float
    volume: float
    turnover: float

    def __post_init__(self):
        if not (self.open > 0 and self.high > 0 and self.low > 0 and self.close > 0):
            raise ValidationError(f"non-positive price in bar dated {self.date}")
        if self.low > min(self.open, self.close) + 1e-12:
            raise ValidationError(f"low above open/close in bar dated {self.date}")
        if self.high < max(self.open, self.close) - 1e-12:
            raise ValidationError(f"high below open/close in bar dated {self.date}")
        if self.volume < 0 or self.turnover < 0:
            raise ValidationError(f"negative volume/turnover in bar dated {self.date}")


@dataclass(frozen=True, slots=True)
class PriceSeries:
    symbol: str
    bars: tuple[PriceBar, ...]

    def __post_init__(self):
        dates = [b.date for b in self.bars]
        for prev, nxt in zip(dates, dates[1:]):
            if nxt == prev:
                raise DuplicateError(f"duplicate date {nxt} for symbol {self.symbol}")
            if nxt < prev:
                raise ValidationError(f"dates not increasing for symbol {self.symbol}")

    @property
    def dates(self) -> tuple[date, ...]:
        return tuple(b.date for b in self.bars)

    def index_of(self, day: date) -> int | None:
        for i, b in enumerate(self.bars):
            if b.date == day:
                return i
        return None


@dataclass(frozen=True, slots=True)
class FeatureWindow:
    """Model input for one evaluation day: data[i, p, c] is feature channel c
    of symbol i at window position p (oldest first)."""

    as_of: date
    symbols: tuple[str, ...]
    data: np.ndarray  # (n, T, N_FEATURES)

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[0] != len(self.symbols):
            raise ValidationError("feature tensor shape does not match symbol list")
        if self.data.shape[2] != N_FEATURES:
            raise ValidationError(f"feature tensor must have {N_FEATURES} channels")
        if not np.all(np.isfinite(self.data)):
            raise ValidationError(f"non-finite feature values at {self.as_of}")

    @property
    def lookback(self) -> int:
        return self.data.shape[1]


# -- CSV ingestion -------------------------------------------------------------


def load_price_csv(path: str | Path) -> dict[str, PriceSeries]:
    """Parse the canonical price CSV into one PriceSeries per symbol.

    Rows may arrive in any order; output bars are sorted by date and the
    returned dict is keyed by ascending symbol.
    """
    path = Path(path)
    per_symbol: dict[str, dict[date, PriceBar]] = {}
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise ParseError(f"{path}: expected header {','.join(CSV_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(CSV_HEADER):
                raise ParseError(f"{path}:{lineno}: expected {len(CSV_HEADER)} fields, got {len(row)}")
            try:
                day = date.fromisoformat(row[0].strip())
                symbol = row[1].strip()
                values = [float(v) for v in row[2:]]
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
            if not symbol:
                raise ParseError(f"{path}:{lineno}: empty symbol")
            try:
                bar = PriceBar(day, *values)
            except ValidationError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from exc
            bucket = per_symbol.setdefault(symbol, {})
            if day in bucket:
                raise DuplicateError(f"{path}:{lineno}: duplicate (date, symbol) = ({day}, {symbol})")
            bucket[day] = bar
    return {
        symbol: PriceSeries(symbol, tuple(bars[d] for d in sorted(bars)))
        for symbol, bars in sorted(per_symbol.items())
    }


def save_price_csv(series: Mapping[str, PriceSeries], path: str | Path) -> None:
    """Write the canonical CSV; floats use repr so a reload is lossless."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(CSV_HEADER)
        for symbol in series:
            for bar in series[symbol].bars:
                writer.writerow(
                    [
                        bar.date.isoformat(),
                        symbol,
                        repr(bar.open),
                        repr(bar.high),
                        repr(bar.low),
                        repr(bar.close),
                        repr(bar.volume),
                        repr(bar.turnover),
                    ]
                )


def common_days(series: Mapping[str, PriceSeries]) -> list[date]:
    """Trading days present in every series, ascending."""
    its = iter(series.values())
    first = next(its, None)
    if first is None:
        return []
    days = set(first.dates)
    for s in its:
        days &= set(s.dates)
    return sorted(days)


# -- synthetic markets ---------------------------------------------------------


def _equicorrelated_cholesky(m: int, rho: float) -> np.ndarray:
    corr = np.full((m, m), rho)
    np.fill_diagonal(corr, 1.0)
    return np.linalg.cholesky(corr)


def _validate_clusters(symbols: Sequence[str], cluster_spec) -> list[tuple[list[int], float]]:
    index = {s: i for i, s in enumerate(symbols)}
    seen: set[str] = set()
    resolved = []
    for members, rho in cluster_spec:
        members = list(members)
        if not (-1.0 <= rho <= 1.0):
            raise ConfigError(f"cluster correlation {rho} outside [-1, 1]")
        unknown = [m for m in members if m not in index]
        if unknown:
            raise ConfigError(f"cluster members not in universe: {unknown}")
        overlap = seen.intersection(members)
        if overlap:
            raise ConfigError(f"overlapping cluster member-sets: {sorted(overlap)}")
        seen.update(members)
        m = len(members)
        if m >= 2 and rho < -1.0 / (m - 1) - 1e-12:
            raise ConfigError(
                f"target correlation {rho} infeasible for {m} members; "
                f"equicorrelation requires >= {-1.0 / (m - 1):.4f}"
            )
        resolved.append(([index[s] for s in members], rho))
    return resolved


def _correlate_in_place(shocks: np.ndarray, clusters: list[tuple[list[int], float]]) -> None:
    """Apply per-cluster equicorrelation to i.i.d. N(0,1) draws.

    shocks has shape (..., n_stocks); columns outside clusters are untouched.
    """
    for idx, rho in clusters:
        if len(idx) < 2 or rho == 0.0:
            continue
        chol = _equicorrelated_cholesky(len(idx), rho)
        shocks[..., idx] = shocks[..., idx] @ chol.T


def _bars_from_shocks(
    closes_ret: np.ndarray,
    gaps: np.ndarray,
    hi_shocks: np.ndarray,
    lo_shocks: np.ndarray,
    vol_shocks: np.ndarray,
    to_shocks: np.ndarray,
    base_prices: np.ndarray,
    start: date,
) -> list[list[PriceBar]]:
    n_days, n_stocks = closes_ret.shape
    closes = base_prices[None, :] * np.exp(np.cumsum(closes_ret, axis=0))
    prev_close = np.vstack([base_prices[None, :], closes[:-1]])
    opens = prev_close * np.exp(_GAP_VOL * gaps)
    highs = np.maximum(opens, closes) * (1.0 + _RANGE_VOL * np.abs(hi_shocks))
    lows = np.minimum(opens, closes) * (1.0 - _RANGE_VOL * np.abs(lo_shocks))
    volumes = _BASE_VOLUME * np.exp(_VOLUME_VOL * vol_shocks)
    turnovers = volumes * closes * np.exp(_TURNOVER_JITTER * to_shocks)

    all_bars: list[list[PriceBar]] = []
    for j in range(n_stocks):
        bars = [
            PriceBar(
                start + timedelta(days=t),
                float(opens[t, j]),
                float(highs[t, j]),
                float(lows[t, j]),
                float(closes[t, j]),
                float(volumes[t, j]),
                float(turnovers[t, j]),
            )
            for t in range(n_days)
        ]
        all_bars.append(bars)
    return all_bars


def gen_synthetic_market(
    n_stocks: int,
    n_days: int,
    cluster_spec: Iterable[tuple[Iterable[str], float]] = (),
    seed: int = 0,
    start: date = date(2020, 1, 2),
    lookback: int = 20,
) -> dict[str, PriceSeries]:
    """Seeded geometric-random-walk market with planted cluster correlation.

    Every signal channel (close returns, open gaps, ranges, volume, turnover
    jitter) of a cluster's members shares one equicorrelated draw at the
    target level, so realized correlations land near the target both on log
    returns and on the six-channel feature mean used for graph edges.
    Deterministic for a fixed seed.
    """
    if n_stocks < 1:
        raise ConfigError("n_stocks must be >= 1")
    if n_days < 2 * lookback:
        raise ConfigError(f"n_days must be >= 2 * lookback = {2 * lookback}")
    symbols = [f"S{i:03d}" for i in range(n_stocks)]
    clusters = _validate_clusters(symbols, list(cluster_spec))

    rng = np.random.default_rng(seed)
    base_prices = 100.0 * np.exp(rng.normal(0.0, 0.2, size=n_stocks))
    shocks = rng.standard_normal((6, n_days, n_stocks))
    _correlate_in_place(shocks, clusters)

    all_bars = _bars_from_shocks(
        _CLOSE_VOL * shocks[0],
        shocks[1],
        shocks[2],
        shocks[3],
        shocks[4],
        shocks[5],
        base_prices,
        start,
    )
    return {s: PriceSeries(s, tuple(all_bars[j])) for j, s in enumerate(symbols)}


def gen_planted_market(
    n_clusters: int,
    followers_per_cluster: int,
    n_days: int,
    seed: int = 0,
    start: date = date(2020, 1, 2),
    momentum: float = 0.95,
    follower_noise: float = 0.1,
    aux_correlation: float = 0.9,
    return_scale: float = 0.05,
) -> dict[str, PriceSeries]:
    """Market where each cluster leader's day-t return determines its
    followers' day-(t+1) ranking.

    Cluster j's leader ("L<j>") trades an AR(1) driver with the given
    momentum coefficient; followers ("C<j>F<i>") track the leader's return
    with small idiosyncratic noise. Tomorrow's cluster return is therefore
    momentum times the leader's return today, so cross-sectional extremes
    are predictable from current leader moves while tight same-day tracking
    keeps leader-follower correlations (and graph edges) near 1. Auxiliary
    channels are cluster-correlated too so six-channel-mean edges clear tau.
    """
    if n_clusters < 1 or followers_per_cluster < 1:
        raise ConfigError("need at least one cluster and one follower")
    if not 0.0 <= momentum < 1.0:
        raise ConfigError(f"momentum must be in [0, 1), got {momentum}")
    symbols: list[str] = []
    groups: list[list[int]] = []
    for j in range(n_clusters):
        group = [len(symbols)]
        symbols.append(f"L{j}")
        for i in range(followers_per_cluster):
            group.append(len(symbols))
            symbols.append(f"C{j}F{i}")
        groups.append(group)
    n_stocks = len(symbols)

    rng = np.random.default_rng(seed)
    base_prices = 100.0 * np.exp(rng.normal(0.0, 0.2, size=n_stocks))
    innovations = rng.standard_normal((n_days, n_clusters))
    noise = rng.standard_normal((n_days, n_stocks))
    aux = rng.standard_normal((5, n_days, n_stocks))
    aux_clusters = [(group, aux_correlation) for group in groups]
    _correlate_in_place(aux, aux_clusters)

    # Unit-variance AR(1) factor per cluster: g_t = phi * g_{t-1} + sqrt(1-phi^2) * eta_t.
    factors = np.zeros((n_days, n_clusters))
    factors[0] = innovations[0]
    for t in range(1, n_days):
        factors[t] = momentum * factors[t - 1] + np.sqrt(1.0 - momentum**2) * innovations[t]

    rets = np.zeros((n_days, n_stocks))
    for j, group in enumerate(groups):
        rets[:, group[0]] = factors[:, j]
        for idx in group[1:]:
            rets[:, idx] = factors[:, j] + follower_noise * noise[:, idx]
    rets *= return_scale

    all_bars = _bars_from_shocks(
        rets, aux[0], aux[1], aux[2], aux[3], aux[4], base_prices, start
    )
    return {s: PriceSeries(s, tuple(all_bars[j])) for j, s in enumerate(symbols)}


# -- feature windows -------------------------------------------------------------


def _ratio(numer: float, denom: float) -> float:
    return numer / denom - 1.0 if denom != 0 else 0.0


def build_feature_window(
    series: Mapping[str, PriceSeries], as_of: date, lookback: int
) -> FeatureWindow:
    """Assemble the n x T x 6 ratio tensor for the window ending at as_of.

    Needs lookback + 1 bars per symbol (one extra bar supplies the ratio
    bases for the oldest position). Symbol order follows the mapping order.
    """
    if lookback < 1:
        raise ConfigError("lookback must be >= 1")
    symbols = tuple(series)
    short: list[str] = []
    data = np.zeros((len(symbols), lookback, N_FEATURES))
    for i, symbol in enumerate(symbols):
        s = series[symbol]
        pos = s.index_of(as_of)
        if pos is None or pos < lookback:
            short.append(symbol)
            continue
        for p in range(lookback):
            bar = s.bars[pos - lookback + 1 + p]
            prev = s.bars[pos - lookback + p]
            data[i, p, 0] = bar.open / prev.close - 1.0
            data[i, p, 1] = bar.high / prev.close - 1.0
            data[i, p, 2] = bar.low / prev.close - 1.0
            data[i, p, 3] = bar.close / prev.close - 1.0
            data[i, p, 4] = _ratio(bar.volume, prev.volume)
            data[i, p, 5] = _ratio(bar.turnover, prev.turnover)
    if short:
        raise CoverageError(
            f"insufficient history through {as_of} (need {lookback + 1} bars) for: {', '.join(short)}"
        )
    return FeatureWindow(as_of=as_of, symbols=symbols, data=data)
