"""Per-stock sequence encoder: affine input projection, sinusoidal positional
encoding, and single-block multi-head self-attention over the T window
positions. No feed-forward sublayer; an optional parameter-free
residual+norm wrapper exists for experiments (off by default)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError, ValidationError
from .market_data import FeatureWindow


def positional_encoding(length: int, d_in: int) -> np.ndarray:
    """(T, d_in) matrix; row for position p (1-based) holds interleaved
    sin/cos of p / 10000^(2i/d_in)."""
    if d_in % 2 != 0:
        raise DimensionError(f"d_in must be even to pair sin/cos columns, got {d_in}")
    if length < 1:
        raise DimensionError("length must be >= 1")
    positions = np.arange(1, length + 1, dtype=np.float64)[:, None]
    i = np.arange(d_in // 2, dtype=np.float64)[None, :]
    angle = positions / np.power(10000.0, 2.0 * i / d_in)
    pe = np.zeros((length, d_in))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


@dataclass
class EncoderParams:
    """Learnable weights of the sequence encoder; one (w_q, w_k, w_v) triple
    per attention head."""

    w_in: Tensor  # (d_feat, d_in)
    b_in: Tensor  # (d_in,)
    w_q: list[Tensor]  # h_enc x (d_in, d_hidden)
    w_k: list[Tensor]  # h_enc x (d_in, d_hidden)
    w_v: list[Tensor]  # h_enc x (d_in, d_v)
    w_o: Tensor  # (h_enc * d_v, d_enc)

    @property
    def d_feat(self) -> int:
        return self.w_in.shape[0]

    @property
    def d_in(self) -> int:
        return self.w_in.shape[1]

    @property
    def d_enc(self) -> int:
        return self.w_o.shape[1]

    def named(self, prefix: str = "encoder") -> list[tuple[str, Tensor]]:
        out = [(f"{prefix}.w_in", self.w_in), (f"{prefix}.b_in", self.b_in)]
        for i, (q, k, v) in enumerate(zip(self.w_q, self.w_k, self.w_v)):
            out += [(f"{prefix}.head{i}.w_q", q), (f"{prefix}.head{i}.w_k", k), (f"{prefix}.head{i}.w_v", v)]
        out.append((f"{prefix}.w_o", self.w_o))
        return out


@dataclass(frozen=True)
class EncodedSequence:
    """Encoder output tensor, n x T x d_enc."""

    values: np.ndarray

    def __post_init__(self):
        if self.values.ndim != 3:
            raise DimensionError("encoded sequence must be n x T x d_enc")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("encoded sequence contains non-finite values")


def _layer_norm(z: Tensor, eps: float = 1e-5) -> Tensor:
    d = z.shape[-1]
    mu = ad.tsum(z, axis=-1, keepdims=True) * (1.0 / d)
    centered = z - mu
    var = ad.tsum(centered * centered, axis=-1, keepdims=True) * (1.0 / d)
    return centered / ad.tsqrt(var + eps)


def encode_history_tensor(
    x: Tensor,
    params: EncoderParams,
    *,
    skip_attention: bool = False,
    residual_norm: bool = False,
) -> tuple[Tensor, list[Tensor]]:
    """Differentiable encoder pass.

    Returns (output, per-head attention tensors); attention rows are softmax
    over the T key positions of each stock independently. With
    skip_attention the affine+positional projection is returned directly
    (the no-encoder ablation), which requires d_enc == d_in.
    """
    if x.ndim != 3:
        raise DimensionError(f"expected n x T x d_feat input, got shape {x.shape}")
    n, length, d_feat = x.shape
    if d_feat != params.d_feat:
        raise DimensionError(f"input has {d_feat} channels, params expect {params.d_feat}")
    if not np.all(np.isfinite(x.data)):
        raise ValidationError("encoder input contains non-finite values")

    pe = Tensor(positional_encoding(length, params.d_in))
    h = ad.matmul(x, params.w_in) + params.b_in + pe

    if skip_attention:
        if params.d_enc != params.d_in:
            raise DimensionError("no-encoder ablation requires d_enc == d_in")
        return h, []

    scale = 1.0 / np.sqrt(params.d_in)
    heads: list[Tensor] = []
    attentions: list[Tensor] = []
    for w_q, w_k, w_v in zip(params.w_q, params.w_k, params.w_v):
        q = ad.matmul(h, w_q)
        k = ad.matmul(h, w_k)
        v = ad.matmul(h, w_v)
        scores = ad.matmul(q, ad.swap_last_axes(k)) * scale
        att = ad.softmax(scores, axis=-1)
        attentions.append(att)
        heads.append(ad.matmul(att, v))
    out = ad.matmul(ad.concat(heads, axis=-1), params.w_o)
    if residual_norm:
        if params.d_enc != params.d_in:
            raise DimensionError("residual+norm block requires d_enc == d_in")
        out = _layer_norm(out + h)
    return out, attentions


def encode_history(
    window: FeatureWindow,
    params: EncoderParams,
    *,
    skip_attention: bool = False,
    residual_norm: bool = False,
) -> EncodedSequence:
    out, _ = encode_history_tensor(
        Tensor(window.data), params, skip_attention=skip_attention, residual_norm=residual_norm
    )
    return EncodedSequence(values=out.data)
