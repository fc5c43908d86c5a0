"""Rolling-correlation relation graphs over the stock universe.

Each trading day gets a snapshot: stock pairs whose six-channel mean Pearson
correlation over the trailing feature window exceeds tau become positive
edges, pairs below -tau become negative edges. Snapshots stack into a
temporal graph that answers hop/time-bounded neighborhood queries.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import ConfigError, DimensionError, GraphLookupError
from .market_data import FeatureWindow, PriceSeries, build_feature_window

Relation = str  # "pos" | "neg"
RELATIONS = ("pos", "neg")


def pairwise_correlation(window_a: np.ndarray, window_b: np.ndarray) -> float:
    """Mean over channels of the Pearson correlation between two T x C windows.

    Channels with zero variance on either side contribute 0 rather than NaN.
    """
    a = np.asarray(window_a, dtype=np.float64)
    b = np.asarray(window_b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"window shapes differ: {a.shape} vs {b.shape}")
    if a.ndim != 2 or a.shape[0] < 2 or a.shape[1] < 1:
        raise DimensionError(f"expected T x C with T >= 2, C >= 1, got {a.shape}")
    total = 0.0
    for c in range(a.shape[1]):
        x = a[:, c]
        y = b[:, c]
        xd = x - x.mean()
        yd = y - y.mean()
        denom_sq = float((xd * xd).sum()) * float((yd * yd).sum())
        if denom_sq <= 0.0:
            continue
        total += float((xd * yd).sum()) / np.sqrt(denom_sq)
    value = total / a.shape[1]
    return float(min(1.0, max(-1.0, value)))


@dataclass(frozen=True)
class CorrelationMatrix:
    as_of: date
    symbols: tuple[str, ...]
    values: np.ndarray  # (n, n)

    def __post_init__(self):
        n = len(self.symbols)
        if self.values.shape != (n, n):
            raise DimensionError("correlation matrix shape does not match symbols")
        if not np.array_equal(self.values, self.values.T):
            raise DimensionError("correlation matrix must be symmetric")
        if not np.allclose(np.diag(self.values), 1.0):
            raise DimensionError("correlation matrix diagonal must be 1")
        if self.values.min() < -1.0 or self.values.max() > 1.0:
            raise DimensionError("correlation entries must lie in [-1, 1]")


def correlation_matrix(window: FeatureWindow) -> CorrelationMatrix:
    """All-pairs channel-mean Pearson correlation for one feature window."""
    n = len(window.symbols)
    values = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            r = pairwise_correlation(window.data[i], window.data[j])
            values[i, j] = r
            values[j, i] = r
    return CorrelationMatrix(as_of=window.as_of, symbols=window.symbols, values=values)


@dataclass(frozen=True)
class RelationSnapshot:
    """One day's relation graph; edges keyed by (i, j) symbol pairs with i < j."""

    as_of: date
    symbols: tuple[str, ...]
    pos_edges: dict[tuple[str, str], float]
    neg_edges: dict[tuple[str, str], float]

    def __post_init__(self):
        position = {s: i for i, s in enumerate(self.symbols)}
        for name, edges, positive in (("pos", self.pos_edges, True), ("neg", self.neg_edges, False)):
            for (u, v), w in edges.items():
                if u == v:
                    raise DimensionError(f"self-pair ({u}, {v}) in {name} edges")
                if u not in position or v not in position:
                    raise DimensionError(f"edge ({u}, {v}) references unknown symbol")
                if position[u] >= position[v]:
                    raise DimensionError(
                        f"edge keys must follow symbol-list order, got ({u}, {v})"
                    )
                if positive and w <= 0 or not positive and w >= 0:
                    raise DimensionError(f"{name} edge ({u}, {v}) has wrong-signed weight {w}")
        if set(self.pos_edges) & set(self.neg_edges):
            raise DimensionError("pos and neg edge sets must be disjoint")

    def edges(self, relation: Relation) -> dict[tuple[str, str], float]:
        if relation == "pos":
            return self.pos_edges
        if relation == "neg":
            return self.neg_edges
        raise GraphLookupError(f"unknown relation {relation!r}")

    def neighbors(self, symbol: str, relation: Relation) -> set[str]:
        out: set[str] = set()
        for u, v in self.edges(relation):
            if u == symbol:
                out.add(v)
            elif v == symbol:
                out.add(u)
        return out

    def adjacency_mask(self, relation: Relation) -> np.ndarray:
        """Boolean (n, n) matrix; entry [v, u] is True iff {u, v} is an edge."""
        index = {s: i for i, s in enumerate(self.symbols)}
        mask = np.zeros((len(self.symbols), len(self.symbols)), dtype=bool)
        for u, v in self.edges(relation):
            mask[index[u], index[v]] = True
            mask[index[v], index[u]] = True
        return mask


def build_relation_snapshot(window: FeatureWindow, tau: float) -> RelationSnapshot:
    """Threshold the correlation matrix into pos/neg edges (strict inequality)."""
    if not 0.0 < tau < 1.0:
        raise ConfigError(f"tau {tau} out of range (0, 1)")
    if len(window.symbols) < 2:
        raise ConfigError("need at least 2 symbols to build a relation snapshot")
    corr = correlation_matrix(window)
    pos: dict[tuple[str, str], float] = {}
    neg: dict[tuple[str, str], float] = {}
    n = len(window.symbols)
    for i in range(n):
        for j in range(i + 1, n):
            r = float(corr.values[i, j])
            key = (window.symbols[i], window.symbols[j])
            if r > tau:
                pos[key] = r
            elif r < -tau:
                neg[key] = r
    return RelationSnapshot(as_of=window.as_of, symbols=window.symbols, pos_edges=pos, neg_edges=neg)


@dataclass(frozen=True)
class TemporalHeteroGraph:
    snapshots: tuple[RelationSnapshot, ...]
    hop_bound: int  # max shortest-path distance for neighborhood queries
    time_bound: int  # max snapshot-position distance, in trading days

    def __post_init__(self):
        if self.hop_bound < 1:
            raise ConfigError("hop_bound must be >= 1")
        if self.time_bound < 0:
            raise ConfigError("time_bound must be >= 0")
        days = [s.as_of for s in self.snapshots]
        if any(b <= a for a, b in zip(days, days[1:])):
            raise ConfigError("snapshot dates must be strictly increasing")

    @property
    def days(self) -> tuple[date, ...]:
        return tuple(s.as_of for s in self.snapshots)

    def snapshot_for(self, day: date) -> RelationSnapshot:
        for s in self.snapshots:
            if s.as_of == day:
                return s
        raise GraphLookupError(f"no snapshot for day {day}")


def build_temporal_graph(
    series: Mapping[str, PriceSeries],
    days: Iterable[date],
    lookback: int,
    tau: float,
    hop_bound: int = 1,
    time_bound: int = 0,
) -> TemporalHeteroGraph:
    """One snapshot per requested day, each from that day's trailing window."""
    ordered = sorted(set(days))
    snapshots = tuple(
        build_relation_snapshot(build_feature_window(series, day, lookback), tau)
        for day in ordered
    )
    return TemporalHeteroGraph(snapshots=snapshots, hop_bound=hop_bound, time_bound=time_bound)


def _bfs_within(snapshot: RelationSnapshot, start: str, relation: Relation, max_hops: int) -> dict[str, int]:
    adjacency: dict[str, set[str]] = {}
    for u, v in snapshot.edges(relation):
        adjacency.setdefault(u, set()).add(v)
        adjacency.setdefault(v, set()).add(u)
    dist = {start: 0}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        if dist[node] >= max_hops:
            continue
        for nxt in adjacency.get(node, ()):
            if nxt not in dist:
                dist[nxt] = dist[node] + 1
                queue.append(nxt)
    return dist


def neighborhood(
    graph: TemporalHeteroGraph, symbol: str, day: date, relation: Relation
) -> set[tuple[str, date]]:
    """Temporal nodes within hop_bound hops (relation-r edges) and time_bound
    trading days of (symbol, day); the query symbol itself is excluded.

    The time bound counts snapshot positions, so weekend gaps in real
    calendars do not silently drop adjacent trading days.
    """
    days = graph.days
    if day not in days:
        raise GraphLookupError(f"no snapshot for day {day}")
    center = days.index(day)
    out: set[tuple[str, date]] = set()
    for offset, snap in enumerate(graph.snapshots):
        if abs(offset - center) > graph.time_bound:
            continue
        if symbol not in snap.symbols:
            raise GraphLookupError(f"unknown symbol {symbol} on {snap.as_of}")
        dist = _bfs_within(snap, symbol, relation, graph.hop_bound)
        for node, d in dist.items():
            if 1 <= d <= graph.hop_bound:
                out.add((node, snap.as_of))
    return out


# -- persistence ----------------------------------------------------------------


def snapshot_to_json(snapshot: RelationSnapshot) -> dict:
    index = {s: i for i, s in enumerate(snapshot.symbols)}
    return {
        "as_of": snapshot.as_of.isoformat(),
        "symbols": list(snapshot.symbols),
        "pos": [[index[u], index[v], w] for (u, v), w in sorted(snapshot.pos_edges.items())],
        "neg": [[index[u], index[v], w] for (u, v), w in sorted(snapshot.neg_edges.items())],
    }


def snapshot_from_json(doc: Mapping) -> RelationSnapshot:
    symbols = tuple(doc["symbols"])
    def decode(rows):
        return {(symbols[i], symbols[j]): float(w) for i, j, w in rows}
    return RelationSnapshot(
        as_of=date.fromisoformat(doc["as_of"]),
        symbols=symbols,
        pos_edges=decode(doc["pos"]),
        neg_edges=decode(doc["neg"]),
    )


def save_snapshot(snapshot: RelationSnapshot, path: str | Path) -> None:
    Path(path).write_text(json.dumps(snapshot_to_json(snapshot), indent=0, sort_keys=True) + "\n", encoding="utf-8")


def load_snapshot(path: str | Path) -> RelationSnapshot:
    return snapshot_from_json(json.loads(Path(path).read_text(encoding="utf-8")))
