"""Correlation graphs: Pearson oracle equivalence, thresholding, neighborhoods."""

from collections import deque
from datetime import date, timedelta

import numpy as np
import pytest

from stockgat.errors import ConfigError, DimensionError, GraphLookupError
from stockgat.graphs import (
    RelationSnapshot,
    TemporalHeteroGraph,
    build_relation_snapshot,
    build_temporal_graph,
    correlation_matrix,
    load_snapshot,
    neighborhood,
    pairwise_correlation,
    save_snapshot,
    snapshot_from_json,
    snapshot_to_json,
)
from stockgat.market_data import FeatureWindow, build_feature_window, common_days

from conftest import hand_snapshot

DAY = date(2021, 6, 1)


def two_pass_pearson(x, y):
    """Textbook two-pass correlation: means first, then moments."""
    mx = sum(x) / len(x)
    my = sum(y) / len(y)
    cov = sum((a - mx) * (b - my) for a, b in zip(x, y))
    vx = sum((a - mx) ** 2 for a in x)
    vy = sum((b - my) ** 2 for b in y)
    if vx == 0 or vy == 0:
        return 0.0
    return cov / (vx * vy) ** 0.5


def channel_mean_oracle(wa, wb):
    return float(np.mean([two_pass_pearson(wa[:, c], wb[:, c]) for c in range(wa.shape[1])]))


def planted_window(symbols, loadings, length=12, seed=0):
    """FeatureWindow whose pairwise channel-mean correlations are exactly
    loadings[i] * loadings[j]: every channel is loading * e + sqrt(1-l^2) * f_i
    with e, f_i exactly orthonormal and centered."""
    rng = np.random.default_rng(seed)

    def centered_unit(v):
        v = v - v.mean()
        return v / np.linalg.norm(v)

    e = centered_unit(rng.standard_normal(length))
    data = np.zeros((len(symbols), length, 6))
    for i, loading in enumerate(loadings):
        f = rng.standard_normal(length)
        f = f - f.mean()
        f = f - (f @ e) * e
        f = f / np.linalg.norm(f)
        row = loading * e + np.sqrt(max(0.0, 1 - loading**2)) * f
        data[i] = np.tile(row[:, None], (1, 6))
    return FeatureWindow(as_of=DAY, symbols=tuple(symbols), data=data)


# -- pairwise correlation --------------------------------------------------------


def test_self_correlation_is_one(seeded_rng):
    w = seeded_rng.standard_normal((10, 3))
    assert pairwise_correlation(w, w) == 1.0


def test_sign_flip_gives_minus_one(seeded_rng):
    w = seeded_rng.standard_normal((10, 3))
    w -= w.mean(axis=0)
    assert pairwise_correlation(w, -w) == pytest.approx(-1.0, abs=1e-12)


def test_matches_two_pass_oracle(seeded_rng):
    a = seeded_rng.standard_normal((20, 4))
    b = seeded_rng.standard_normal((20, 4))
    assert pairwise_correlation(a, b) == pytest.approx(channel_mean_oracle(a, b), abs=1e-12)


def test_shape_mismatch_rejected(seeded_rng):
    with pytest.raises(DimensionError):
        pairwise_correlation(seeded_rng.standard_normal((5, 2)), seeded_rng.standard_normal((6, 2)))
    with pytest.raises(DimensionError):
        pairwise_correlation(np.zeros((1, 2)), np.zeros((1, 2)))


def test_symmetry_exact(seeded_rng):
    for _ in range(20):
        a = seeded_rng.standard_normal((8, 5))
        b = seeded_rng.standard_normal((8, 5))
        assert pairwise_correlation(a, b) == pairwise_correlation(b, a)


def test_scale_invariance(seeded_rng):
    a = seeded_rng.standard_normal((12, 4))
    b = seeded_rng.standard_normal((12, 4))
    base = pairwise_correlation(a, b)
    a2, b2 = a.copy(), b.copy()
    a2[:, 2] *= 1735.5
    b2[:, 2] *= 1735.5
    assert pairwise_correlation(a2, b2) == pytest.approx(base, abs=1e-12)


def test_zero_variance_channel_contributes_zero(seeded_rng):
    a = seeded_rng.standard_normal((10, 2))
    b = seeded_rng.standard_normal((10, 2))
    a[:, 1] = 3.0  # constant channel on one side
    with_const = pairwise_correlation(a, b)
    only_live = two_pass_pearson(a[:, 0], b[:, 0])
    assert with_const == pytest.approx(only_live / 2, abs=1e-12)


# -- snapshots --------------------------------------------------------------------


def test_positive_edge_above_threshold():
    window = planted_window(["A", "B"], [1.0, 0.7])
    snap = build_relation_snapshot(window, tau=0.6)
    assert set(snap.pos_edges) == {("A", "B")}
    assert snap.pos_edges[("A", "B")] == pytest.approx(0.7, abs=1e-9)
    assert not snap.neg_edges


def test_negative_edge_below_minus_threshold():
    window = planted_window(["A", "B"], [1.0, -0.61])
    snap = build_relation_snapshot(window, tau=0.6)
    assert set(snap.neg_edges) == {("A", "B")}
    assert snap.neg_edges[("A", "B")] == pytest.approx(-0.61, abs=1e-9)
    assert not snap.pos_edges


def test_boundary_equality_gives_no_edge():
    window = planted_window(["A", "B"], [1.0, 0.8])
    realized = correlation_matrix(window).values[0, 1]
    snap = build_relation_snapshot(window, tau=float(realized))
    assert not snap.pos_edges and not snap.neg_edges


def test_tau_out_of_range_rejected(tiny_window):
    for tau in (0.0, 1.0, -0.2, 1.5):
        with pytest.raises(ConfigError):
            build_relation_snapshot(tiny_window, tau)


def test_edge_sets_disjoint_and_monotone_in_tau(tiny_market, tiny_days):
    for day in tiny_days[20:30]:
        window = build_feature_window(tiny_market, day, 10)
        loose = build_relation_snapshot(window, 0.3)
        tight = build_relation_snapshot(window, 0.7)
        assert not (set(loose.pos_edges) & set(loose.neg_edges))
        assert set(tight.pos_edges) <= set(loose.pos_edges)
        assert set(tight.neg_edges) <= set(loose.neg_edges)


def test_correlation_matrix_properties(tiny_window):
    corr = correlation_matrix(tiny_window)
    assert np.array_equal(corr.values, corr.values.T)
    np.testing.assert_allclose(np.diag(corr.values), 1.0)
    assert corr.values.min() >= -1.0 and corr.values.max() <= 1.0


# -- temporal graph -----------------------------------------------------------------


def test_single_day_graph(tiny_market, tiny_days):
    graph = build_temporal_graph(tiny_market, [tiny_days[30]], 8, 0.6)
    assert len(graph.snapshots) == 1
    assert graph.snapshots[0].as_of == tiny_days[30]


def test_planted_cluster_edge_every_snapshot(tiny_market, tiny_days):
    days = tiny_days[25:45]
    graph = build_temporal_graph(tiny_market, days, 12, 0.6)
    for snap in graph.snapshots:
        window = build_feature_window(tiny_market, snap.as_of, 12)
        i = {s: q for q, s in enumerate(window.symbols)}
        oracle = channel_mean_oracle(window.data[i["S000"]], window.data[i["S001"]])
        assert oracle > 0.6
        assert ("S000", "S001") in snap.pos_edges
        assert snap.pos_edges[("S000", "S001")] == pytest.approx(oracle, abs=1e-12)


def test_graph_determinism(tiny_market, tiny_days):
    days = tiny_days[28:33]
    a = build_temporal_graph(tiny_market, days, 8, 0.5)
    b = build_temporal_graph(tiny_market, days, 8, 0.5)
    assert a.snapshots == b.snapshots


def test_day_order_does_not_matter(tiny_market, tiny_days):
    days = tiny_days[28:33]
    a = build_temporal_graph(tiny_market, days, 8, 0.5)
    b = build_temporal_graph(tiny_market, days[::-1], 8, 0.5)
    assert a.snapshots == b.snapshots


def test_insufficient_history_raises(tiny_market, tiny_days):
    from stockgat.errors import CoverageError

    with pytest.raises(CoverageError):
        build_temporal_graph(tiny_market, [tiny_days[2]], 8, 0.5)


# -- neighborhood -------------------------------------------------------------------


def bfs_oracle(snapshot, start, relation, max_hops):
    adjacency = {}
    for u, v in snapshot.edges(relation):
        adjacency.setdefault(u, set()).add(v)
        adjacency.setdefault(v, set()).add(u)
    dist = {start: 0}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        for nxt in adjacency.get(node, ()):
            if nxt not in dist:
                dist[nxt] = dist[node] + 1
                queue.append(nxt)
    return {n for n, d in dist.items() if 1 <= d <= max_hops}


def test_isolated_node_empty(five_node_snapshot):
    symbols = list(five_node_snapshot.symbols) + ["ISO"]
    snap = RelationSnapshot(
        as_of=five_node_snapshot.as_of,
        symbols=tuple(symbols),
        pos_edges=five_node_snapshot.pos_edges,
        neg_edges=five_node_snapshot.neg_edges,
    )
    graph = TemporalHeteroGraph((snap,), hop_bound=2, time_bound=0)
    assert neighborhood(graph, "ISO", snap.as_of, "pos") == set()


def test_star_graph_direct_adjacency():
    symbols = ["HUB", "A", "B", "C"]
    snap = hand_snapshot(symbols, [(0, 1, 0.9), (0, 2, 0.8), (0, 3, 0.7)], [])
    graph = TemporalHeteroGraph((snap,), hop_bound=1, time_bound=0)
    got = neighborhood(graph, "HUB", snap.as_of, "pos")
    assert got == {("A", snap.as_of), ("B", snap.as_of), ("C", snap.as_of)}
    assert neighborhood(graph, "A", snap.as_of, "pos") == {("HUB", snap.as_of)}


def test_random_snapshot_matches_bfs_oracle(seeded_rng):
    symbols = [f"N{i}" for i in range(10)]
    for trial in range(10):
        pos, neg = {}, {}
        for i in range(10):
            for j in range(i + 1, 10):
                u = seeded_rng.uniform()
                if u < 0.15:
                    pos[(symbols[i], symbols[j])] = 0.8
                elif u < 0.25:
                    neg[(symbols[i], symbols[j])] = -0.8
        snap = RelationSnapshot(as_of=DAY, symbols=tuple(symbols), pos_edges=pos, neg_edges=neg)
        graph = TemporalHeteroGraph((snap,), hop_bound=2, time_bound=0)
        for relation in ("pos", "neg"):
            for start in symbols:
                expected = {(n, DAY) for n in bfs_oracle(snap, start, relation, 2)}
                assert neighborhood(graph, start, DAY, relation) == expected


def test_hop_one_time_zero_equals_adjacency(five_node_snapshot):
    graph = TemporalHeteroGraph((five_node_snapshot,), hop_bound=1, time_bound=0)
    for s in five_node_snapshot.symbols:
        got = {u for u, _ in neighborhood(graph, s, five_node_snapshot.as_of, "pos")}
        assert got == five_node_snapshot.neighbors(s, "pos")


def test_time_bound_spans_adjacent_snapshots():
    symbols = ["A", "B", "C"]
    snap0 = hand_snapshot(symbols, [(0, 1, 0.9)], [], as_of=DAY)
    snap1 = hand_snapshot(symbols, [(0, 2, 0.9)], [], as_of=DAY + timedelta(days=1))
    snap2 = hand_snapshot(symbols, [(1, 2, 0.9)], [], as_of=DAY + timedelta(days=2))
    graph = TemporalHeteroGraph((snap0, snap1, snap2), hop_bound=1, time_bound=1)
    got = neighborhood(graph, "A", snap1.as_of, "pos")
    # All three snapshots are within one step of the center; A only has edges
    # in the first two.
    assert got == {("B", snap0.as_of), ("C", snap1.as_of)}


def test_query_symbol_excluded_on_all_days():
    symbols = ["A", "B"]
    snap0 = hand_snapshot(symbols, [(0, 1, 0.9)], [], as_of=DAY)
    snap1 = hand_snapshot(symbols, [(0, 1, 0.9)], [], as_of=DAY + timedelta(days=1))
    graph = TemporalHeteroGraph((snap0, snap1), hop_bound=2, time_bound=1)
    got = neighborhood(graph, "A", DAY, "pos")
    assert got == {("B", snap0.as_of), ("B", snap1.as_of)}


def test_unknown_symbol_or_day_raise(five_node_snapshot):
    graph = TemporalHeteroGraph((five_node_snapshot,), hop_bound=1, time_bound=0)
    with pytest.raises(GraphLookupError):
        neighborhood(graph, "NOPE", five_node_snapshot.as_of, "pos")
    with pytest.raises(GraphLookupError):
        neighborhood(graph, "N0", DAY + timedelta(days=99), "pos")


# -- persistence --------------------------------------------------------------------


def test_json_round_trip(five_node_snapshot, tmp_path):
    path = tmp_path / "snap.json"
    save_snapshot(five_node_snapshot, path)
    loaded = load_snapshot(path)
    assert loaded == five_node_snapshot  # dates, indices, and weights all exact


def test_json_weights_lossless(tiny_window):
    snap = build_relation_snapshot(tiny_window, 0.4)
    doc = snapshot_to_json(snap)
    back = snapshot_from_json(doc)
    for key, w in snap.pos_edges.items():
        assert back.pos_edges[key] == w
    assert back.as_of == snap.as_of
    assert back.symbols == snap.symbols
