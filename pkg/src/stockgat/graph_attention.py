"""Relation-graph attention over flattened temporal embeddings.

Each head scores an edge (u -> v) by a learned vector applied to the
concatenated flattened embeddings [h_u || h_v], normalizes with a
LeakyReLU-softmax over v's neighbors, aggregates neighbor embeddings, and
runs the heads through an ELU before a shared output projection. Nodes with
no neighbors in a relation emit the zero vector so the fusion layer can
down-weight that relation gracefully.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError
from .graphs import Relation, RelationSnapshot


@dataclass
class RelationTgaParams:
    """One relation's attention heads: per-head edge-score vectors stored as
    (2*T*d_enc, 1) columns, plus the (h_tga*T*d_enc, d_att) output projection."""

    a_heads: list[Tensor]
    w_o: Tensor

    def named(self, prefix: str) -> list[tuple[str, Tensor]]:
        out = [(f"{prefix}.a{i}", a) for i, a in enumerate(self.a_heads)]
        out.append((f"{prefix}.w_o", self.w_o))
        return out


@dataclass
class TgaParams:
    pos: RelationTgaParams
    neg: RelationTgaParams
    leaky_slope: float = 0.2

    def relation(self, relation: Relation) -> RelationTgaParams:
        if relation == "pos":
            return self.pos
        if relation == "neg":
            return self.neg
        raise DimensionError(f"unknown relation {relation!r}")

    def named(self, prefix: str = "tga") -> list[tuple[str, Tensor]]:
        return self.pos.named(f"{prefix}.pos") + self.neg.named(f"{prefix}.neg")


@dataclass(frozen=True)
class RelationMessages:
    """Numpy view of both relations' aggregated messages plus the per-edge
    attention weights that produced them (head-major, (n, n) each, entry
    [v, u] = weight of u's message to v)."""

    h_pos: np.ndarray
    h_neg: np.ndarray
    pos_attention: tuple[np.ndarray, ...]
    neg_attention: tuple[np.ndarray, ...]


def flatten_embeddings(encoded: Tensor) -> Tensor:
    """(n, T, d_enc) -> (n, T*d_enc); each row keeps time order, oldest first."""
    if encoded.ndim != 3:
        raise DimensionError(f"expected n x T x d_enc, got shape {encoded.shape}")
    n, length, d_enc = encoded.shape
    return ad.reshape(encoded, (n, length * d_enc))


def unflatten_embeddings(flat: np.ndarray, length: int) -> np.ndarray:
    n, width = flat.shape
    if width % length != 0:
        raise DimensionError(f"width {width} not divisible by T={length}")
    return flat.reshape(n, length, width // length)


def tga_forward(
    h_flat: Tensor,
    snapshot: RelationSnapshot,
    relation: Relation,
    params: RelationTgaParams,
    *,
    leaky_slope: float = 0.2,
    uniform_attention: bool = False,
) -> tuple[Tensor, list[Tensor]]:
    """One relation's message pass.

    Returns (n x d_att output, per-head attention tensors). With
    uniform_attention each neighbor gets weight 1/|N(v)| and the learned
    score vectors are bypassed (the no-temporal-attention ablation).
    """
    n, width = h_flat.shape
    if len(snapshot.symbols) != n:
        raise DimensionError(
            f"snapshot has {len(snapshot.symbols)} symbols but embeddings have {n} rows"
        )
    mask = snapshot.adjacency_mask(relation)

    heads: list[Tensor] = []
    attentions: list[Tensor] = []
    for a in params.a_heads:
        if a.shape != (2 * width, 1):
            raise DimensionError(f"attention vector shape {a.shape} != ({2 * width}, 1)")
        if uniform_attention:
            counts = mask.sum(axis=1, keepdims=True)
            alpha = ad.Tensor(np.where(counts > 0, mask / np.maximum(counts, 1), 0.0))
        else:
            a_src = ad.narrow(a, 0, width, axis=0)
            a_dst = ad.narrow(a, width, 2 * width, axis=0)
            src_scores = ad.matmul(h_flat, a_src)  # (n, 1): contribution of h_u
            dst_scores = ad.matmul(h_flat, a_dst)  # (n, 1): contribution of h_v
            logits = dst_scores + ad.reshape(src_scores, (1, n))  # [v, u]
            alpha = ad.masked_softmax(ad.leaky_relu(logits, leaky_slope), mask, axis=-1)
        attentions.append(alpha)
        heads.append(ad.elu(ad.matmul(alpha, h_flat)))
    out = ad.matmul(ad.concat(heads, axis=-1), params.w_o)
    return out, attentions


def relation_messages(
    h_flat: Tensor,
    snapshot: RelationSnapshot,
    params: TgaParams,
    *,
    uniform_attention: bool = False,
) -> tuple[Tensor, Tensor, RelationMessages]:
    """Run both relations and bundle a numpy view for inspection/export."""
    h_pos, att_pos = tga_forward(
        h_flat, snapshot, "pos", params.pos,
        leaky_slope=params.leaky_slope, uniform_attention=uniform_attention,
    )
    h_neg, att_neg = tga_forward(
        h_flat, snapshot, "neg", params.neg,
        leaky_slope=params.leaky_slope, uniform_attention=uniform_attention,
    )
    view = RelationMessages(
        h_pos=h_pos.data,
        h_neg=h_neg.data,
        pos_attention=tuple(a.data for a in att_pos),
        neg_attention=tuple(a.data for a in att_neg),
    )
    return h_pos, h_neg, view
