"""Fusing the three message sources (self, pos, neg) into final embeddings.

A shared tanh transform and attention vector score each source; scores are
averaged over all nodes, softmaxed into a 3-simplex weight triple, and the
sources are mixed as a convex combination.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError


@dataclass
class HgaParams:
    """Self-channel projection plus the shared source-scoring transform
    (w, b, q are used identically for all three sources)."""

    w_self: Tensor  # (T*d_enc, d_att)
    b_self: Tensor  # (d_att,)
    w: Tensor  # (d_att, d_q)
    b: Tensor  # (d_q,)
    q: Tensor  # (d_q, 1)

    def named(self, prefix: str = "hga") -> list[tuple[str, Tensor]]:
        return [
            (f"{prefix}.w_self", self.w_self),
            (f"{prefix}.b_self", self.b_self),
            (f"{prefix}.w", self.w),
            (f"{prefix}.b", self.b),
            (f"{prefix}.q", self.q),
        ]


@dataclass(frozen=True)
class FusedEmbedding:
    """Final node embeddings with the source weights that produced them."""

    values: np.ndarray  # (n, d_att)
    betas: tuple[float, float, float]  # (self, pos, neg), sums to 1

    def __post_init__(self):
        if abs(sum(self.betas) - 1.0) > 1e-9 or min(self.betas) < 0:
            raise DimensionError(f"betas must be a simplex triple, got {self.betas}")


def self_projection(h_flat: Tensor, params: HgaParams) -> Tensor:
    if h_flat.ndim != 2 or h_flat.shape[1] != params.w_self.shape[0]:
        raise DimensionError(
            f"flattened embeddings {h_flat.shape} do not match w_self {params.w_self.shape}"
        )
    return ad.matmul(h_flat, params.w_self) + params.b_self


def hga_forward(
    h_self: Tensor,
    h_pos: Tensor,
    h_neg: Tensor,
    params: HgaParams,
    *,
    uniform_betas: bool = False,
) -> tuple[Tensor, Tensor]:
    """Mix the three sources; returns (n x d_att embedding, beta triple).

    With uniform_betas the scoring path is bypassed and the output is the
    plain mean of the sources (the no-heterogeneous-attention ablation).
    """
    if not (h_self.shape == h_pos.shape == h_neg.shape):
        raise DimensionError(
            f"source shapes differ: {h_self.shape}, {h_pos.shape}, {h_neg.shape}"
        )
    if h_self.ndim != 2 or h_self.shape[1] != params.w.shape[0]:
        raise DimensionError(f"sources {h_self.shape} do not match scoring transform {params.w.shape}")

    sources = (h_self, h_pos, h_neg)
    if uniform_betas:
        betas = Tensor(np.full(3, 1.0 / 3.0))
    else:
        scores = [
            ad.tmean(ad.matmul(ad.tanh(ad.matmul(h, params.w) + params.b), params.q))
            for h in sources
        ]
        betas = ad.softmax(ad.concat([ad.reshape(s, (1,)) for s in scores], axis=0), axis=-1)
    mixed = None
    for i, h in enumerate(sources):
        term = ad.narrow(betas, i, i + 1, axis=0) * h
        mixed = term if mixed is None else mixed + term
    return mixed, betas
