"""Recurrent and attention building blocks shared across the encoders.

All blocks are plain containers of named parameter Tensors plus pure forward
functions. Residual branches are pre-normalized, so zeroing a branch's output
projection makes the whole block an exact identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


def param(rng: np.random.Generator, *shape: int, scale: float | None = None) -> Tensor:
    """Glorot-uniform parameter; pass scale to override the implied range."""
    if scale is None:
        fan_in = shape[0] if shape else 1
        fan_out = shape[-1] if shape else 1
        scale = float(np.sqrt(6.0 / (fan_in + fan_out)))
    return Tensor(rng.uniform(-scale, scale, size=shape), requires_grad=True)


def zeros_param(*shape: int) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def ones_param(*shape: int) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


class ParamGroup:
    """Named parameter registry; names become checkpoint record keys."""

    def __init__(self, prefix: str = ""):
        self.prefix = prefix
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, t: Tensor) -> Tensor:
        key = f"{self.prefix}.{name}" if self.prefix else name
        if key in self._params:
            raise ValueError(f"duplicate parameter name {key}")
        self._params[key] = t
        return t

    def merge(self, other: "ParamGroup") -> None:
        for k, v in other._params.items():
            if k in self._params:
                raise ValueError(f"duplicate parameter name {k}")
            self._params[k] = v

    def items(self):
        return self._params.items()

    def names(self):
        return self._params.keys()

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        missing = sorted(set(self._params) - set(state))
        if missing:
            raise KeyError(f"checkpoint missing parameters: {missing}")
        for k, v in self._params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != v.data.shape:
                raise ShapeError(
                    f"parameter {k}: checkpoint shape {arr.shape} != model shape {v.data.shape}"
                )
            v.data = np.ascontiguousarray(arr)
            v.grad = None


@dataclass
class GRUParams:
    """Gate weights for a row-wise GRU cell: x-weights, state-weights, bias."""

    w_update: Tensor
    u_update: Tensor
    b_update: Tensor
    w_reset: Tensor
    u_reset: Tensor
    b_reset: Tensor
    w_cand: Tensor
    u_cand: Tensor
    b_cand: Tensor

    @staticmethod
    def create(rng: np.random.Generator, d: int) -> "GRUParams":
        return GRUParams(
            w_update=param(rng, d, d), u_update=param(rng, d, d), b_update=zeros_param(d),
            w_reset=param(rng, d, d), u_reset=param(rng, d, d), b_reset=zeros_param(d),
            w_cand=param(rng, d, d), u_cand=param(rng, d, d), b_cand=zeros_param(d),
        )

    def register(self, group: ParamGroup, prefix: str) -> None:
        for name in ("w_update", "u_update", "b_update", "w_reset", "u_reset",
                     "b_reset", "w_cand", "u_cand", "b_cand"):
            group.add(f"{prefix}.{name}", getattr(self, name))


def gru_cell(inputs: Tensor, states: Tensor, p: GRUParams) -> Tensor:
    """One GRU step applied to each row independently.

    The update gate multiplies the previous state, so a saturated gate
    (large positive bias) passes the state through unchanged.
    """
    if inputs.shape != states.shape:
        raise ShapeError(f"gru_cell: inputs {inputs.shape} != states {states.shape}")
    z = T.sigmoid(T.linear(inputs, p.w_update) + T.linear(states, p.u_update) + p.b_update)
    r = T.sigmoid(T.linear(inputs, p.w_reset) + T.linear(states, p.u_reset) + p.b_reset)
    cand = T.tanh(T.linear(inputs, p.w_cand) + T.linear(T.mul(r, states), p.u_cand) + p.b_cand)
    return T.add(T.mul(z, states), T.mul(T.sub(1.0, z), cand))


@dataclass
class MhaParams:
    heads: int
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor

    @staticmethod
    def create(rng: np.random.Generator, d: int, heads: int) -> "MhaParams":
        if d % heads:
            raise ValueError(f"width {d} not divisible by {heads} heads")
        return MhaParams(heads=heads, wq=param(rng, d, d), wk=param(rng, d, d),
                         wv=param(rng, d, d), wo=param(rng, d, d))

    def register(self, group: ParamGroup, prefix: str) -> None:
        for name in ("wq", "wk", "wv", "wo"):
            group.add(f"{prefix}.{name}", getattr(self, name))


def multi_head_attention(queries: Tensor, context: Tensor, p: MhaParams) -> Tensor:
    """Scaled dot-product cross-attention; rows of `queries` attend to `context`."""
    d = queries.shape[1]
    if context.shape[1] != d:
        raise ShapeError(f"attention: query width {d} != context width {context.shape[1]}")
    dh = d // p.heads
    q = T.matmul(queries, p.wq)
    k = T.matmul(context, p.wk)
    v = T.matmul(context, p.wv)
    outs = []
    for h in range(p.heads):
        qh = T.slice_cols(q, h * dh, (h + 1) * dh)
        kh = T.slice_cols(k, h * dh, (h + 1) * dh)
        vh = T.slice_cols(v, h * dh, (h + 1) * dh)
        logits = T.mul(T.matmul(qh, T.transpose(kh)), 1.0 / np.sqrt(dh))
        outs.append(T.matmul(T.softmax(logits, axis=1), vh))
    return T.matmul(T.concat(outs, axis=1), p.wo)


def attention_weights(queries: Tensor, context: Tensor, p: MhaParams) -> np.ndarray:
    """Head-averaged attention matrix (queries x context), for reports only."""
    d = queries.shape[1]
    dh = d // p.heads
    with T.no_grad():
        q = T.matmul(queries, p.wq)
        k = T.matmul(context, p.wk)
        acc = np.zeros((queries.shape[0], context.shape[0]))
        for h in range(p.heads):
            qh = T.slice_cols(q, h * dh, (h + 1) * dh)
            kh = T.slice_cols(k, h * dh, (h + 1) * dh)
            logits = T.mul(T.matmul(qh, T.transpose(kh)), 1.0 / np.sqrt(dh))
            acc += T.softmax(logits, axis=1).data
    return acc / p.heads


@dataclass
class FeedForwardParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @staticmethod
    def create(rng: np.random.Generator, d: int, expansion: int = 4) -> "FeedForwardParams":
        return FeedForwardParams(w1=param(rng, d, d * expansion), b1=zeros_param(d * expansion),
                                 w2=param(rng, d * expansion, d), b2=zeros_param(d))

    def register(self, group: ParamGroup, prefix: str) -> None:
        for name in ("w1", "b1", "w2", "b2"):
            group.add(f"{prefix}.{name}", getattr(self, name))


def feed_forward(x: Tensor, p: FeedForwardParams) -> Tensor:
    return T.linear(T.relu(T.linear(x, p.w1, p.b1)), p.w2, p.b2)


@dataclass
class NormParams:
    gain: Tensor
    bias: Tensor

    @staticmethod
    def create(d: int) -> "NormParams":
        return NormParams(gain=ones_param(d), bias=zeros_param(d))

    def register(self, group: ParamGroup, prefix: str) -> None:
        group.add(f"{prefix}.gain", self.gain)
        group.add(f"{prefix}.bias", self.bias)


def norm(x: Tensor, p: NormParams) -> Tensor:
    return T.layer_norm(x, p.gain, p.bias)


@dataclass
class CrossAttentionBlockParams:
    """Pre-norm cross-attention + feed-forward block ("CAB")."""

    attn: MhaParams
    ff: FeedForwardParams
    norm_q: NormParams
    norm_ctx: NormParams
    norm_ff: NormParams

    @staticmethod
    def create(rng: np.random.Generator, d: int, heads: int,
               expansion: int = 4) -> "CrossAttentionBlockParams":
        return CrossAttentionBlockParams(
            attn=MhaParams.create(rng, d, heads),
            ff=FeedForwardParams.create(rng, d, expansion),
            norm_q=NormParams.create(d),
            norm_ctx=NormParams.create(d),
            norm_ff=NormParams.create(d),
        )

    def register(self, group: ParamGroup, prefix: str) -> None:
        self.attn.register(group, f"{prefix}.attn")
        self.ff.register(group, f"{prefix}.ff")
        self.norm_q.register(group, f"{prefix}.norm_q")
        self.norm_ctx.register(group, f"{prefix}.norm_ctx")
        self.norm_ff.register(group, f"{prefix}.norm_ff")


def cross_attention_block(queries: Tensor, context: Tensor,
                          p: CrossAttentionBlockParams) -> Tensor:
    x = T.add(queries, multi_head_attention(norm(queries, p.norm_q),
                                            norm(context, p.norm_ctx), p.attn))
    return T.add(x, feed_forward(norm(x, p.norm_ff), p.ff))


@dataclass
class SelfAttentionBlockParams:
    """Pre-norm self-attention + feed-forward transformer layer."""

    attn: MhaParams
    ff: FeedForwardParams
    norm_attn: NormParams
    norm_ff: NormParams

    @staticmethod
    def create(rng: np.random.Generator, d: int, heads: int,
               expansion: int = 4) -> "SelfAttentionBlockParams":
        return SelfAttentionBlockParams(
            attn=MhaParams.create(rng, d, heads),
            ff=FeedForwardParams.create(rng, d, expansion),
            norm_attn=NormParams.create(d),
            norm_ff=NormParams.create(d),
        )

    def register(self, group: ParamGroup, prefix: str) -> None:
        self.attn.register(group, f"{prefix}.attn")
        self.ff.register(group, f"{prefix}.ff")
        self.norm_attn.register(group, f"{prefix}.norm_attn")
        self.norm_ff.register(group, f"{prefix}.norm_ff")


def self_attention_block(x: Tensor, p: SelfAttentionBlockParams) -> Tensor:
    h = norm(x, p.norm_attn)
    x = T.add(x, multi_head_attention(h, h, p.attn))
    return T.add(x, feed_forward(norm(x, p.norm_ff), p.ff))


@dataclass
class MlpParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @staticmethod
    def create(rng: np.random.Generator, d_in: int, d_hidden: int, d_out: int) -> "MlpParams":
        return MlpParams(w1=param(rng, d_in, d_hidden), b1=zeros_param(d_hidden),
                         w2=param(rng, d_hidden, d_out), b2=zeros_param(d_out))

    def register(self, group: ParamGroup, prefix: str) -> None:
        for name in ("w1", "b1", "w2", "b2"):
            group.add(f"{prefix}.{name}", getattr(self, name))


def mlp(x: Tensor, p: MlpParams) -> Tensor:
    return T.linear(T.relu(T.linear(x, p.w1, p.b1)), p.w2, p.b2)
