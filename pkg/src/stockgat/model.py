"""End-to-end movement model: encoder -> relation attention -> fusion ->
sigmoid classifier, plus day labeling and the cross-entropy objective."""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import EncoderParams, encode_history_tensor
from .errors import CoverageError, DimensionError, GraphLookupError
from .fusion import HgaParams, hga_forward, self_projection
from .graph_attention import RelationTgaParams, TgaParams, flatten_embeddings, relation_messages
from .graphs import TemporalHeteroGraph
from .market_data import FeatureWindow, N_FEATURES

ABLATIONS = ("full", "noenc", "notemp", "nohete")
SCORE_CLAMP = 1e-7


@dataclass(frozen=True)
class ModelDims:
    """Every width the model needs; defaults follow the reference setup."""

    lookback: int = 20
    d_feat: int = N_FEATURES
    d_in: int = 128
    d_enc: int = 128
    d_hidden: int = 512
    d_v: int = 128
    h_enc: int = 8
    d_att: int = 256
    h_tga: int = 4
    d_q: int = 256
    leaky_slope: float = 0.2
    residual_norm: bool = False

    @property
    def flat_width(self) -> int:
        return self.lookback * self.d_enc

    def to_dict(self) -> dict:
        return {
            "lookback": self.lookback,
            "d_feat": self.d_feat,
            "d_in": self.d_in,
            "d_enc": self.d_enc,
            "d_hidden": self.d_hidden,
            "d_v": self.d_v,
            "h_enc": self.h_enc,
            "d_att": self.d_att,
            "h_tga": self.h_tga,
            "d_q": self.d_q,
            "leaky_slope": self.leaky_slope,
            "residual_norm": self.residual_norm,
        }


@dataclass
class ModelParams:
    encoder: EncoderParams
    tga: TgaParams
    hga: HgaParams
    w_cls: Tensor  # (d_att, 1)
    b_cls: Tensor  # (1,)

    def named(self) -> list[tuple[str, Tensor]]:
        """Canonical parameter order; checkpoints and Adam state follow it."""
        return (
            self.encoder.named()
            + self.tga.named()
            + self.hga.named()
            + [("classifier.w", self.w_cls), ("classifier.b", self.b_cls)]
        )

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self.named()]

    def zero_grads(self) -> None:
        for t in self.tensors():
            t.grad = None

    def check_finite(self) -> None:
        for name, t in self.named():
            if not np.all(np.isfinite(t.data)):
                raise DimensionError(f"parameter {name} contains non-finite values")


def build_model_params(dims: ModelDims, draw) -> ModelParams:
    """Assemble the parameter tree; draw(shape, fan_in, fan_out) supplies each
    weight matrix (bias vectors are always zeros). Matrices are requested in
    the canonical named() order."""
    d = dims
    w_in = draw((d.d_feat, d.d_in), d.d_feat, d.d_in)
    b_in = Tensor(np.zeros(d.d_in))
    w_q, w_k, w_v = [], [], []
    for _ in range(d.h_enc):
        w_q.append(draw((d.d_in, d.d_hidden), d.d_in, d.d_hidden))
        w_k.append(draw((d.d_in, d.d_hidden), d.d_in, d.d_hidden))
        w_v.append(draw((d.d_in, d.d_v), d.d_in, d.d_v))
    w_o = draw((d.h_enc * d.d_v, d.d_enc), d.h_enc * d.d_v, d.d_enc)
    encoder = EncoderParams(w_in=w_in, b_in=b_in, w_q=w_q, w_k=w_k, w_v=w_v, w_o=w_o)

    width = d.flat_width
    relations = []
    for _ in range(2):
        a_heads = [draw((2 * width, 1), 2 * width, 1) for _ in range(d.h_tga)]
        w_o_r = draw((d.h_tga * width, d.d_att), d.h_tga * width, d.d_att)
        relations.append(RelationTgaParams(a_heads=a_heads, w_o=w_o_r))
    tga = TgaParams(pos=relations[0], neg=relations[1], leaky_slope=d.leaky_slope)

    hga = HgaParams(
        w_self=draw((width, d.d_att), width, d.d_att),
        b_self=Tensor(np.zeros(d.d_att)),
        w=draw((d.d_att, d.d_q), d.d_att, d.d_q),
        b=Tensor(np.zeros(d.d_q)),
        q=draw((d.d_q, 1), d.d_q, 1),
    )
    w_cls = draw((d.d_att, 1), d.d_att, 1)
    b_cls = Tensor(np.zeros(1))
    return ModelParams(encoder=encoder, tga=tga, hga=hga, w_cls=w_cls, b_cls=b_cls)


def init_model_params(dims: ModelDims, seed: int) -> ModelParams:
    """Glorot-uniform matrices, zero bias vectors; draw order matches the
    canonical named() order so a seed pins every weight."""
    rng = np.random.default_rng(seed)

    def draw(shape, fan_in, fan_out):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return Tensor(rng.uniform(-bound, bound, size=shape))

    return build_model_params(dims, draw)


# -- labeling --------------------------------------------------------------------


@dataclass(frozen=True)
class DayLabels:
    """Exactly k movement winners (1) and k losers (0) for one trading day."""

    day: date
    labels: dict[str, int]
    k: int

    def __post_init__(self):
        ones = sum(1 for v in self.labels.values() if v == 1)
        zeros = sum(1 for v in self.labels.values() if v == 0)
        if ones != self.k or zeros != self.k:
            raise CoverageError(
                f"{self.day}: expected {self.k} ones and zeros, got {ones}/{zeros}"
            )


def label_day(day: date, next_day_returns: Mapping[str, float], k: int) -> DayLabels:
    """Label the top-k returns 1 and the bottom-k 0; ties break by ascending
    symbol. Bottom picks are drawn from the symbols left after the top picks."""
    if k < 1:
        raise CoverageError("k must be >= 1")
    if len(next_day_returns) < 2 * k:
        raise CoverageError(
            f"{day}: need at least {2 * k} symbols with returns, got {len(next_day_returns)}"
        )
    by_top = sorted(next_day_returns, key=lambda s: (-next_day_returns[s], s))
    top = by_top[:k]
    rest = set(next_day_returns) - set(top)
    by_bottom = sorted(rest, key=lambda s: (next_day_returns[s], s))
    bottom = by_bottom[:k]
    labels = {s: 1 for s in top}
    labels.update({s: 0 for s in bottom})
    return DayLabels(day=day, labels=labels, k=k)


# -- forward pass ----------------------------------------------------------------


@dataclass(frozen=True)
class AttentionTraceRow:
    day: date
    relation: str
    head: int
    u: str  # message source
    v: str  # message destination
    alpha: float


@dataclass(frozen=True)
class PredictionScores:
    day: date
    symbols: tuple[str, ...]
    scores: np.ndarray  # (n,), each strictly inside (0, 1)
    betas: tuple[float, float, float]
    attention: tuple[AttentionTraceRow, ...] = field(default=())

    def score_map(self) -> dict[str, float]:
        return {s: float(v) for s, v in zip(self.symbols, self.scores)}


def forward_day_tensor(
    window: FeatureWindow,
    snapshot,
    params: ModelParams,
    dims: ModelDims,
    ablation: str = "full",
) -> tuple[Tensor, dict]:
    """Differentiable score vector for one day plus inspection tensors."""
    if ablation not in ABLATIONS:
        raise DimensionError(f"unknown ablation {ablation!r}")
    if tuple(snapshot.symbols) != tuple(window.symbols):
        raise DimensionError("snapshot symbols do not align with feature window symbols")

    encoded, enc_attention = encode_history_tensor(
        Tensor(window.data),
        params.encoder,
        skip_attention=(ablation == "noenc"),
        residual_norm=dims.residual_norm and ablation != "noenc",
    )
    h_flat = flatten_embeddings(encoded)
    h_pos, h_neg, messages = relation_messages(
        h_flat, snapshot, params.tga, uniform_attention=(ablation == "notemp")
    )
    h_self = self_projection(h_flat, params.hga)
    fused, betas = hga_forward(
        h_self, h_pos, h_neg, params.hga, uniform_betas=(ablation == "nohete")
    )
    logits = ad.matmul(fused, params.w_cls) + params.b_cls
    scores = ad.reshape(ad.sigmoid(logits), (len(window.symbols),))
    aux = {
        "betas": betas,
        "messages": messages,
        "encoder_attention": enc_attention,
        "fused": fused,
    }
    return scores, aux


def _trace_rows(day, symbols, messages) -> tuple[AttentionTraceRow, ...]:
    rows: list[AttentionTraceRow] = []
    for relation, mats in (("pos", messages.pos_attention), ("neg", messages.neg_attention)):
        for head, alpha in enumerate(mats):
            dst, src = np.nonzero(alpha)
            for v_i, u_i in zip(dst, src):
                rows.append(
                    AttentionTraceRow(
                        day=day,
                        relation=relation,
                        head=head,
                        u=symbols[u_i],
                        v=symbols[v_i],
                        alpha=float(alpha[v_i, u_i]),
                    )
                )
    return tuple(rows)


def forward_day(
    day: date,
    graph: TemporalHeteroGraph,
    window: FeatureWindow,
    params: ModelParams,
    dims: ModelDims,
    ablation: str = "full",
) -> PredictionScores:
    """Score every stock for one day; also extracts attention weights."""
    if window.as_of != day:
        raise GraphLookupError(f"feature window is for {window.as_of}, not {day}")
    snapshot = graph.snapshot_for(day)
    scores, aux = forward_day_tensor(window, snapshot, params, dims, ablation)
    betas = tuple(float(b) for b in aux["betas"].data)
    return PredictionScores(
        day=day,
        symbols=tuple(window.symbols),
        scores=scores.data.copy(),
        betas=betas,  # type: ignore[arg-type]
        attention=_trace_rows(day, window.symbols, aux["messages"]),
    )


# -- objective -------------------------------------------------------------------


def bce_loss_tensor(scores: Tensor, symbols: tuple[str, ...], labels: DayLabels) -> Tensor:
    """Summed binary cross-entropy over the labeled nodes, scores clamped to
    [1e-7, 1 - 1e-7]; labeled nodes are visited in symbol-position order."""
    index = {s: i for i, s in enumerate(symbols)}
    missing = [s for s in labels.labels if s not in index]
    if missing:
        raise CoverageError(f"{labels.day}: no score for labeled nodes {sorted(missing)}")
    ordered = sorted(labels.labels, key=index.__getitem__)
    idx = [index[s] for s in ordered]
    y = np.array([float(labels.labels[s]) for s in ordered])
    p = ad.clip(ad.take_rows(ad.reshape(scores, (len(symbols), 1)), idx), SCORE_CLAMP, 1.0 - SCORE_CLAMP)
    y_col = Tensor(y.reshape(-1, 1))
    per_node = y_col * ad.tlog(p) + (1.0 - y_col) * ad.tlog(1.0 - p)
    return -ad.tsum(per_node)


def bce_loss(scores: PredictionScores | Mapping[str, float], labels: DayLabels) -> float:
    """Plain-float view of the objective for reporting and oracle checks."""
    score_map = scores.score_map() if isinstance(scores, PredictionScores) else dict(scores)
    missing = [s for s in labels.labels if s not in score_map]
    if missing:
        raise CoverageError(f"{labels.day}: no score for labeled nodes {sorted(missing)}")
    total = 0.0
    for symbol in sorted(labels.labels):
        p = min(max(score_map[symbol], SCORE_CLAMP), 1.0 - SCORE_CLAMP)
        y = labels.labels[symbol]
        total -= y * np.log(p) + (1 - y) * np.log(1.0 - p)
    return float(total)
