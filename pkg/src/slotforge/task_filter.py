"""Language-conditioned slot relevance scoring and top-k retention.

Bidirectional cross-attention mixes the slot and language streams, a single
transformer layer contextualizes the slots, and a sigmoid head produces one
relevance score per slot. The k best-scoring slots survive; gradients flow
only through the gathered rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import (CrossAttentionBlockParams, ParamGroup, SelfAttentionBlockParams,
                 cross_attention_block, param, self_attention_block, zeros_param)
from .tensor import Tensor


@dataclass
class RelevanceScores:
    scores: np.ndarray       # per-slot values in (0,1)
    selected: list[int]      # ascending original indices of the k best


def top_k_filter(slots: Tensor, scores: np.ndarray, k: int) -> tuple[Tensor, list[int]]:
    """Rows of the k largest scores, ascending original order, ties to the
    lower index. Selection depends only on the score ordering, so any
    strictly increasing transform picks the same rows."""
    n = slots.shape[0]
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if scores.shape[0] != n:
        raise T.ShapeError(f"top_k_filter: {scores.shape[0]} scores for {n} slots")
    if not (1 <= k <= n):
        raise ValueError(f"top_k_filter: k={k} out of range [1, {n}]")
    order = sorted(range(n), key=lambda i: (-scores[i], i))
    selected = sorted(order[:k])
    return T.gather_rows(slots, selected), selected


class TaskFilter:
    def __init__(self, rng: np.random.Generator, width: int = 64, heads: int = 4):
        self.width = width
        self.slots_to_lang = CrossAttentionBlockParams.create(rng, width, heads)
        self.lang_to_slots = CrossAttentionBlockParams.create(rng, width, heads)
        self.trans = SelfAttentionBlockParams.create(rng, width, heads)
        self.head_w = param(rng, width, 1)
        self.head_b = zeros_param(1)

    def params(self) -> ParamGroup:
        g = ParamGroup("filter")
        self.slots_to_lang.register(g, "bca_slots")
        self.lang_to_slots.register(g, "bca_lang")
        self.trans.register(g, "trans")
        g.add("head_w", self.head_w)
        g.add("head_b", self.head_b)
        return g

    def bca(self, slots: Tensor, lang: Tensor) -> tuple[Tensor, Tensor]:
        """Both streams attend to the (pre-update) other stream."""
        slots_out = cross_attention_block(slots, lang, self.slots_to_lang)
        lang_out = cross_attention_block(lang, slots, self.lang_to_slots)
        return slots_out, lang_out

    def score_slots(self, slots_bca: Tensor) -> Tensor:
        """Transformer layer over the slot stream, then per-slot sigmoid head."""
        h = self_attention_block(slots_bca, self.trans)
        return T.sigmoid(T.linear(h, self.head_w, self.head_b))

    def __call__(self, slots: Tensor, lang: Tensor, k: int,
                 enabled: bool = True) -> tuple[Tensor, RelevanceScores, Tensor]:
        """Score every slot; keep the top k (all of them when disabled).

        Returns (kept slot rows, scores + selection, score column tensor for
        the relevance loss)."""
        slots_bca, _ = self.bca(slots, lang)
        pi = self.score_slots(slots_bca)
        keep = k if enabled else slots.shape[0]
        kept, selected = top_k_filter(slots, pi.data, keep)
        return kept, RelevanceScores(pi.data.reshape(-1).copy(), selected), pi
