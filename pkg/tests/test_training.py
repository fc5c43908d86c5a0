"""Training loop: determinism, optimization, gradient verification, and the
checkpoint format."""

from datetime import date

import numpy as np
import pytest

from stockgat.autodiff import Tensor
from stockgat.errors import CoverageError, DivergenceError, ParseError
from stockgat.graphs import build_temporal_graph
from stockgat.market_data import build_feature_window, common_days, gen_planted_market
from stockgat.model import ModelDims, bce_loss_tensor, forward_day_tensor, init_model_params, label_day
from stockgat.backtest import next_open_returns
from stockgat.training import (
    Adam,
    TrainConfig,
    gradient_check,
    load_checkpoint,
    load_loss_history,
    save_checkpoint,
    save_loss_history,
    train,
)

from conftest import hand_snapshot


def training_setup(n_days=70, lookback=6, k=3, seed=11):
    market = gen_planted_market(2, 4, n_days, seed=seed)
    days = common_days(market)
    model_days = [d for i, d in enumerate(days) if i >= lookback and i <= len(days) - 3]
    graph = build_temporal_graph(market, model_days, lookback, 0.6)
    windows = {d: build_feature_window(market, d, lookback) for d in model_days}
    labels = {d: label_day(d, next_open_returns(market, d), k=k) for d in model_days}
    dims = ModelDims(lookback=lookback, d_in=8, d_enc=8, d_hidden=8, d_v=8, h_enc=2, d_att=8, h_tga=2, d_q=8)
    return market, model_days, graph, windows, labels, dims


def grad_check_setup(seed=3):
    """n=8, T=4 hand-wired instance with both relations populated."""
    rng = np.random.default_rng(seed)
    symbols = [f"S{i}" for i in range(8)]
    snap = hand_snapshot(
        symbols,
        pos=[(0, 1, 0.8), (1, 2, 0.7), (3, 4, 0.9), (5, 6, 0.75), (0, 7, 0.65)],
        neg=[(0, 3, -0.7), (2, 5, -0.8), (6, 7, -0.66)],
    )
    from stockgat.market_data import FeatureWindow

    window = FeatureWindow(as_of=snap.as_of, symbols=tuple(symbols), data=rng.standard_normal((8, 4, 6)) * 0.3)
    dims = ModelDims(lookback=4, d_in=6, d_enc=6, d_hidden=6, d_v=6, h_enc=2, d_att=6, h_tga=2, d_q=4)
    returns = {s: float(rng.standard_normal()) for s in symbols}
    labels = label_day(snap.as_of, returns, k=3)
    return snap, window, labels, dims


# -- adam ---------------------------------------------------------------------------


def test_adam_single_step_closed_form():
    p = Tensor(np.array([[1.0]]))
    p.grad = np.array([[0.4]])
    opt = Adam([p], lr=0.1)
    opt.step()
    expected = 1.0 - 0.1 * 0.4 / (np.sqrt(0.4**2) + 1e-8)
    assert p.data[0, 0] == pytest.approx(expected, abs=1e-12)


def test_adam_zero_lr_freezes_params():
    p = Tensor(np.array([[2.0]]))
    p.grad = np.array([[5.0]])
    opt = Adam([p], lr=0.0)
    for _ in range(3):
        opt.step()
    assert p.data[0, 0] == 2.0


def test_adam_missing_grad_treated_as_zero():
    p = Tensor(np.array([[2.0]]))
    opt = Adam([p], lr=0.1)
    opt.step()
    assert p.data[0, 0] == 2.0


# -- train loop ---------------------------------------------------------------------


def test_same_seed_identical_histories():
    market, days, graph, windows, labels, dims = training_setup()
    cfg = TrainConfig(epochs=3, batch_days=4, learning_rate=1e-3, seed=9, k=3)
    a = train(days[:20], graph, windows, labels, cfg, dims)
    b = train(days[:20], graph, windows, labels, cfg, dims)
    assert a.loss_history == b.loss_history
    for (_, ta), (_, tb) in zip(a.params.named(), b.params.named()):
        np.testing.assert_array_equal(ta.data, tb.data)


def test_different_seed_differs():
    market, days, graph, windows, labels, dims = training_setup()
    a = train(days[:12], graph, windows, labels, TrainConfig(epochs=2, batch_days=4, learning_rate=1e-3, seed=1, k=3), dims)
    b = train(days[:12], graph, windows, labels, TrainConfig(epochs=2, batch_days=4, learning_rate=1e-3, seed=2, k=3), dims)
    assert a.loss_history != b.loss_history


def test_zero_learning_rate_constant_history():
    market, days, graph, windows, labels, dims = training_setup()
    cfg = TrainConfig(epochs=4, batch_days=4, learning_rate=0.0, seed=9, k=3)
    result = train(days[:16], graph, windows, labels, cfg, dims)
    assert len(set(result.loss_history)) == 1


def test_planted_signal_loss_decreases():
    market, days, graph, windows, labels, dims = training_setup()
    cfg = TrainConfig(epochs=8, batch_days=4, learning_rate=3e-3, seed=9, k=3)
    result = train(days, graph, windows, labels, cfg, dims)
    assert result.loss_history[-1] < result.loss_history[0]


def test_divergence_raises_naming_epoch():
    market, days, graph, windows, labels, dims = training_setup()
    params = init_model_params(dims, 0)
    params.w_cls.data[0, 0] = np.nan
    cfg = TrainConfig(epochs=2, batch_days=4, learning_rate=1e-3, seed=9, k=3)
    with pytest.raises(DivergenceError, match="epoch 0"):
        train(days[:8], graph, windows, labels, cfg, dims, params=params)


def test_empty_day_list_rejected():
    market, days, graph, windows, labels, dims = training_setup()
    cfg = TrainConfig(epochs=1, batch_days=2, learning_rate=1e-3, seed=9, k=3)
    with pytest.raises(CoverageError):
        train([], graph, windows, labels, cfg, dims)


def test_missing_window_rejected():
    market, days, graph, windows, labels, dims = training_setup()
    cfg = TrainConfig(epochs=1, batch_days=2, learning_rate=1e-3, seed=9, k=3)
    with pytest.raises(CoverageError):
        train([date(1999, 1, 1)], graph, windows, labels, cfg, dims)


# -- gradient verification -------------------------------------------------------------


def test_gradient_check_all_ablations_under_threshold():
    snap, window, labels, dims = grad_check_setup()
    for ablation in ("full", "noenc", "notemp", "nohete"):
        params = init_model_params(dims, seed=7)
        err = gradient_check(params, window, snap, labels, dims, ablation=ablation)
        assert err < 1e-4, f"{ablation}: {err}"


def test_gradient_check_stable_under_eps_doubling():
    snap, window, labels, dims = grad_check_setup()
    params = init_model_params(dims, seed=7)
    err = gradient_check(params, window, snap, labels, dims, eps=2e-5)
    assert err < 1e-3


def test_classifier_bias_gradient_closed_form():
    snap, window, labels, dims = grad_check_setup()
    params = init_model_params(dims, seed=7)
    params.zero_grads()
    scores, _ = forward_day_tensor(window, snap, params, dims, "full")
    bce_loss_tensor(scores, window.symbols, labels).backward()
    score_map = dict(zip(window.symbols, scores.data))
    expected = sum(score_map[s] - y for s, y in labels.labels.items())
    assert params.b_cls.grad[0] == pytest.approx(expected, abs=1e-10)


def test_zero_classifier_symmetric_labels_zero_bias_gradient():
    snap, window, labels, dims = grad_check_setup()
    params = init_model_params(dims, seed=7)
    params.w_cls.data[:] = 0.0
    params.b_cls.data[:] = 0.0
    params.zero_grads()
    scores, _ = forward_day_tensor(window, snap, params, dims, "full")
    bce_loss_tensor(scores, window.symbols, labels).backward()
    # all scores 0.5, k ones and k zeros -> sum(p - y) = 0
    assert params.b_cls.grad[0] == pytest.approx(0.0, abs=1e-12)


# -- checkpoints -----------------------------------------------------------------------


def test_checkpoint_round_trip_exact(tmp_path):
    _, _, _, dims = grad_check_setup()
    params = init_model_params(dims, seed=19)
    path = tmp_path / "model.bin"
    save_checkpoint(path, params, dims, seed=19, ablation="full", hyperparameters={"learning_rate": 3e-4})
    loaded, header = load_checkpoint(path)
    assert header["seed"] == 19
    assert header["ablation"] == "full"
    assert header["dims"] == dims.to_dict()
    assert header["hyperparameters"]["learning_rate"] == 3e-4
    for (na, ta), (nb, tb) in zip(params.named(), loaded.named()):
        assert na == nb
        np.testing.assert_array_equal(ta.data, tb.data)


def test_checkpoint_bytes_deterministic(tmp_path):
    _, _, _, dims = grad_check_setup()
    params = init_model_params(dims, seed=19)
    p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
    save_checkpoint(p1, params, dims, seed=19, ablation="full")
    save_checkpoint(p2, params, dims, seed=19, ablation="full")
    assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_truncation_detected(tmp_path):
    _, _, _, dims = grad_check_setup()
    params = init_model_params(dims, seed=19)
    path = tmp_path / "model.bin"
    save_checkpoint(path, params, dims, seed=19, ablation="full")
    path.write_bytes(path.read_bytes()[:-16])
    with pytest.raises(ParseError, match="truncated"):
        load_checkpoint(path)


def test_checkpoint_garbage_rejected(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"\x00" * 4)
    with pytest.raises(ParseError):
        load_checkpoint(path)


def test_loss_history_round_trip(tmp_path):
    history = [2.772589, 1.5, 0.25000000001]
    path = tmp_path / "loss.csv"
    save_loss_history(history, path)
    assert load_loss_history(path) == history
