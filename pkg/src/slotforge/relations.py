"""Relation tokens: learned queries conditioned on patches, then on slots.

The queries are a frame-independent parameter. Conditioning order is fixed:
visual context first, filtered object slots second. Attention over a context
is permutation-invariant in its rows, so reordering slots or patches leaves
the relation tokens unchanged.
"""

from __future__ import annotations

import numpy as np

from .frontend import DenseTokens
from .nn import (CrossAttentionBlockParams, ParamGroup, attention_weights,
                 cross_attention_block, param)
from .tensor import ShapeError, Tensor


class RelationEncoder:
    def __init__(self, rng: np.random.Generator, width: int = 64,
                 num_relations: int = 16, heads: int = 4):
        self.width = width
        self.num_relations = num_relations
        self.queries = param(rng, num_relations, width)
        self.visual_cab = CrossAttentionBlockParams.create(rng, width, heads)
        self.slot_cab = CrossAttentionBlockParams.create(rng, width, heads)

    def params(self) -> ParamGroup:
        g = ParamGroup("relations")
        g.add("queries", self.queries)
        self.visual_cab.register(g, "visual_cab")
        self.slot_cab.register(g, "slot_cab")
        return g

    def __call__(self, dense: DenseTokens, slots: Tensor) -> Tensor:
        if slots.shape[0] == 0:
            raise ShapeError("relation encoding requires a non-empty slot set")
        if slots.shape[1] != self.width or dense.tokens.shape[1] != self.width:
            raise ShapeError(
                f"width mismatch: queries {self.width}, tokens {dense.tokens.shape[1]}, "
                f"slots {slots.shape[1]}")
        visual = cross_attention_block(self.queries, dense.tokens, self.visual_cab)
        return cross_attention_block(visual, slots, self.slot_cab)

    def slot_attention_summary(self, dense: DenseTokens, slots: Tensor) -> np.ndarray:
        """Head-averaged attention of relation tokens over slots (reporting)."""
        visual = cross_attention_block(self.queries, dense.tokens, self.visual_cab)
        from .nn import norm
        return attention_weights(norm(visual, self.slot_cab.norm_q),
                                 norm(slots, self.slot_cab.norm_ctx),
                                 self.slot_cab.attn)
