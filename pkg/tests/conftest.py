"""Shared fixtures: small seeded markets, windows, snapshots, and model dims."""

from datetime import date

import numpy as np
import pytest

from stockgat.graphs import RelationSnapshot, build_temporal_graph
from stockgat.market_data import build_feature_window, common_days, gen_synthetic_market
from stockgat.model import ModelDims, init_model_params


@pytest.fixture(scope="session")
def tiny_market():
    """6 stocks, one strong positive cluster, 60 days."""
    return gen_synthetic_market(
        6, 60, [(["S000", "S001", "S002"], 0.9)], seed=7
    )


@pytest.fixture(scope="session")
def tiny_days(tiny_market):
    return common_days(tiny_market)


@pytest.fixture(scope="session")
def tiny_window(tiny_market, tiny_days):
    return build_feature_window(tiny_market, tiny_days[30], 8)


@pytest.fixture(scope="session")
def tiny_graph(tiny_market, tiny_days):
    return build_temporal_graph(tiny_market, tiny_days[30:34], 8, 0.5)


@pytest.fixture
def tiny_dims():
    return ModelDims(
        lookback=8, d_in=6, d_enc=6, d_hidden=6, d_v=6, h_enc=2,
        d_att=6, h_tga=2, d_q=4,
    )


@pytest.fixture
def tiny_params(tiny_dims):
    return init_model_params(tiny_dims, seed=5)


def numeric_grad(fn, x, eps=1e-6):
    """Central differences of the scalar-valued fn() at array x (in place)."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = fn()
        flat[i] = orig - eps
        down = fn()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * eps)
    return grad


def hand_snapshot(symbols, pos, neg, as_of=date(2020, 3, 1)):
    """Snapshot from explicit (i, j, w) index triples."""
    return RelationSnapshot(
        as_of=as_of,
        symbols=tuple(symbols),
        pos_edges={(symbols[i], symbols[j]): w for i, j, w in pos},
        neg_edges={(symbols[i], symbols[j]): w for i, j, w in neg},
    )


@pytest.fixture
def five_node_snapshot():
    symbols = [f"N{i}" for i in range(5)]
    pos = [(0, 1, 0.8), (0, 2, 0.7), (1, 2, 0.9), (2, 3, 0.65)]
    neg = [(0, 4, -0.75), (3, 4, -0.62)]
    return hand_snapshot(symbols, pos, neg)


@pytest.fixture
def seeded_rng():
    return np.random.default_rng(123)
