"""Flow layers over the turn axis.

A flow layer sees a [t x m x d] grid of per-turn context representations,
treats each context word as its own length-t sequence, and runs a
unidirectional GRU along the turns. The delta-style layers additionally feed
the step a history signal built from the previous hidden states; all
pre-dialogue hidden states are zero, so turn 1 always sees a zero signal.
"""

from __future__ import annotations

from enum import Enum

from . import tensor as T
from .recurrent import GruParams, gru_cell
from .tensor import DimensionError, Tensor


class FlowVariantKind(Enum):
    DELTA = "delta"
    SKIP_DELTA = "skipdelta"
    DOUBLE_DELTA = "doubledelta"
    HADAMARD = "hadamard"


def variant_extra_width(kind: FlowVariantKind, h: int) -> int:
    """Width the history signal adds to the GRU input."""
    return 2 * h if kind is FlowVariantKind.DOUBLE_DELTA else h


def turn_major(reps: Tensor) -> Tensor:
    """[t x m x d] -> [m x t x d]; exact transpose of the first two axes."""
    return T.transpose(reps, (1, 0, 2))


def word_major(reps: Tensor) -> Tensor:
    """Inverse of turn_major."""
    return T.transpose(reps, (1, 0, 2))


def flow_forward(reps: Tensor, params: GruParams) -> Tensor:
    """Plain flow: per word, GRU over turns from zero state. [t x m x d] -> [t x m x h]."""
    t, m, d = reps.shape
    if params.d_in != d:
        raise DimensionError(f"flow input width {d} != GRU d_in {params.d_in}")
    h = T.zeros((m, params.h))
    outs = []
    for k in range(t):
        # all m words advance one turn in a single batched cell call
        h = gru_cell(T.select(reps, k, axis=0), h, params)
        outs.append(h)
    return T.stack(outs, axis=0)


def flowdelta_forward(reps: Tensor, params: GruParams) -> Tensor:
    """Flow with the information-gain signal: step input [c_k ; h_{k-1} - h_{k-2}]."""
    return flow_variant_forward(reps, params, FlowVariantKind.DELTA)


def flow_variant_forward(reps: Tensor, params: GruParams, kind: FlowVariantKind) -> Tensor:
    """Delta-family flow layer. [t x m x d] -> [t x m x h].

    The history signal per variant (all out-of-range states are zero):
      delta        h_{k-1} - h_{k-2}
      skipdelta    h_{k-1} - h_{k-3}
      doubledelta  [h_{k-1} - h_{k-2} ; h_{k-2} - h_{k-3}]
      hadamard     h_{k-1} * h_{k-2}
    """
    t, m, d = reps.shape
    hw = params.h
    expected = d + variant_extra_width(kind, hw)
    if params.d_in != expected:
        raise DimensionError(
            f"{kind.value} flow needs GRU d_in {expected} (d={d}, h={hw}), got {params.d_in}")
    zero = T.zeros((m, hw))
    h1 = zero  # h_{k-1}
    h2 = zero  # h_{k-2}
    h3 = zero  # h_{k-3}
    outs = []
    for k in range(t):
        if kind is FlowVariantKind.DELTA:
            signal = h1 - h2
        elif kind is FlowVariantKind.SKIP_DELTA:
            signal = h1 - h3
        elif kind is FlowVariantKind.DOUBLE_DELTA:
            signal = T.concat([h1 - h2, h2 - h3], axis=-1)
        else:
            signal = h1 * h2
        x = T.concat([T.select(reps, k, axis=0), signal], axis=-1)
        h_next = gru_cell(x, h1, params)
        h3, h2, h1 = h2, h1, h_next
        outs.append(h_next)
    return T.stack(outs, axis=0)
