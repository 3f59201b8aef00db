"""Attention layers and the transformer block with flow insertions.

The block follows the standard two-residual composition
    out = LN(h + SA(h)),   SA(h) = FFN(LN(h + MH(h)))
and the flow-augmented variant adds a turn-axis flow branch into the outer
residual sum of the last block. Self-attention always stays within a turn;
the flow branch is the only cross-turn path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .flow import FlowVariantKind, flow_variant_forward, flow_forward
from .recurrent import GruParams, glorot
from .tensor import DimensionError, Rng, Tensor, UsageError


@dataclass
class TransformerBlockParams:
    W_q: Tensor  # [d x d], heads split along columns
    W_k: Tensor
    W_v: Tensor
    W_o: Tensor  # [d x d]
    W_ff1: Tensor  # [d x d_ff]
    b_ff1: Tensor
    W_ff2: Tensor  # [d_ff x d]
    b_ff2: Tensor
    ln1_gamma: Tensor
    ln1_beta: Tensor
    ln2_gamma: Tensor
    ln2_beta: Tensor
    n_heads: int

    @property
    def d(self):
        return self.W_q.shape[0]

    def tensors(self):
        return [self.W_q, self.W_k, self.W_v, self.W_o, self.W_ff1, self.b_ff1,
                self.W_ff2, self.b_ff2, self.ln1_gamma, self.ln1_beta,
                self.ln2_gamma, self.ln2_beta]


@dataclass
class FlowBranchParams:
    """A flow layer plus the linear projection back to block width."""
    gru: GruParams
    W_proj: Tensor  # [h_flow x d]
    kind: FlowVariantKind

    def tensors(self):
        return self.gru.tensors() + [self.W_proj]


def init_transformer_block(rng: Rng, d, d_ff, n_heads) -> TransformerBlockParams:
    if d % n_heads != 0:
        raise DimensionError(f"width {d} not divisible by {n_heads} heads")
    return TransformerBlockParams(
        W_q=glorot(rng, d, d), W_k=glorot(rng, d, d), W_v=glorot(rng, d, d),
        W_o=glorot(rng, d, d),
        W_ff1=glorot(rng, d, d_ff), b_ff1=T.zeros(d_ff, requires_grad=True),
        W_ff2=glorot(rng, d_ff, d), b_ff2=T.zeros(d, requires_grad=True),
        ln1_gamma=Tensor(np.ones(d), requires_grad=True), ln1_beta=T.zeros(d, requires_grad=True),
        ln2_gamma=Tensor(np.ones(d), requires_grad=True), ln2_beta=T.zeros(d, requires_grad=True),
        n_heads=n_heads,
    )


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(q k^T / sqrt(d)) v for 2-d q [a x d], k/v [b x d]."""
    d = q.shape[-1]
    scores = T.scale(q @ T.transpose(k, (1, 0)), 1.0 / np.sqrt(d))
    return T.softmax(scores, axis=-1) @ v


def word_attention(question: Tensor, context: Tensor) -> Tensor:
    """Fuse question info into each context word: [m x d] -> [m x 2d].

    Each context word attends over the n question words; the attended
    summary is concatenated onto the word's own representation.
    """
    if question.shape[0] == 0:
        raise UsageError("word_attention needs a non-empty question")
    if question.shape[-1] != context.shape[-1]:
        raise DimensionError(
            f"question width {question.shape[-1]} != context width {context.shape[-1]}")
    summary = scaled_dot_attention(context, question, question)
    return T.concat([context, summary], axis=-1)


def self_attention_context(context: Tensor, W_q: Tensor, W_k: Tensor, W_v: Tensor) -> Tensor:
    """Single-head scaled dot-product self-attention over [m x d]."""
    if context.shape[0] == 0:
        raise UsageError("self-attention over an empty context")
    return scaled_dot_attention(context @ W_q, context @ W_k, context @ W_v)


def multi_head_attention(h: Tensor, params: TransformerBlockParams) -> Tensor:
    m, d = h.shape
    nh = params.n_heads
    dh = d // nh
    q = h @ params.W_q
    k = h @ params.W_k
    v = h @ params.W_v
    heads = []
    for i in range(nh):
        qi = T.select(T.reshape(q, (m, nh, dh)), i, axis=1)
        ki = T.select(T.reshape(k, (m, nh, dh)), i, axis=1)
        vi = T.select(T.reshape(v, (m, nh, dh)), i, axis=1)
        heads.append(scaled_dot_attention(qi, ki, vi))
    return T.concat(heads, axis=-1) @ params.W_o


def _sa_sublayer(h: Tensor, params: TransformerBlockParams) -> Tensor:
    inner = T.layer_norm(h + multi_head_attention(h, params),
                         params.ln1_gamma, params.ln1_beta)
    return T.relu(inner @ params.W_ff1 + params.b_ff1) @ params.W_ff2 + params.b_ff2


def transformer_block(h: Tensor, params: TransformerBlockParams) -> Tensor:
    """[m x d] -> [m x d]; LN(h + FFN(LN(h + MH(h))))."""
    return T.layer_norm(h + _sa_sublayer(h, params), params.ln2_gamma, params.ln2_beta)


def transformer_block_inflow(h_grid: Tensor, params: TransformerBlockParams,
                             flow: FlowBranchParams) -> Tensor:
    """Last-block variant with the flow branch in the outer residual.

    h_grid is [t x m x d]; per turn k the output is
    LN(h_k + SA(h_k) + proj(flow(h_grid)_k)), where the flow branch runs
    across turns on the whole grid.
    """
    t, m, d = h_grid.shape
    if flow.W_proj.shape[1] != d:
        raise DimensionError(
            f"flow projection width {flow.W_proj.shape[1]} != block width {d}")
    flow_out = flow_variant_forward(h_grid, flow.gru, flow.kind)
    outs = []
    for k in range(t):
        hk = T.select(h_grid, k, axis=0)
        fk = T.select(flow_out, k, axis=0) @ flow.W_proj
        outs.append(T.layer_norm(hk + _sa_sublayer(hk, params) + fk,
                                 params.ln2_gamma, params.ln2_beta))
    return T.stack(outs, axis=0)


@dataclass
class SpanHeadParams:
    W: Tensor  # [in_width x 2]
    b: Tensor  # [2]

    def tensors(self):
        return [self.W, self.b]


def exflow_predict(h_grid: Tensor, flow: FlowBranchParams, head: SpanHeadParams):
    """Span head over [h_L ; flow(h_L)]: per turn, start/end distributions.

    Returns (p_start, p_end), each [t x m], rows summing to 1.
    """
    t, m, d = h_grid.shape
    flow_out = flow_variant_forward(h_grid, flow.gru, flow.kind)
    feats = T.concat([h_grid, flow_out], axis=-1)
    if head.W.shape[0] != feats.shape[-1]:
        raise DimensionError(
            f"span head input width {head.W.shape[0]} != features {feats.shape[-1]}")
    logits = T.reshape(feats, (t * m, feats.shape[-1])) @ head.W + head.b
    logits = T.reshape(logits, (t, m, 2))
    p_start = T.softmax(T.select(logits, 0, axis=2), axis=-1)
    p_end = T.softmax(T.select(logits, 1, axis=2), axis=-1)
    return p_start, p_end
