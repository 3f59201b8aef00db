"""GRU cell and sequence runners.

One recurrence family is used everywhere: the turn-axis flow recurrence and
the word-axis bidirectional encoder are both built from the same cell.
Convention: z = sigma(x Wz + h Uz + bz), r = sigma(x Wr + h Ur + br),
n = tanh(x Wn + r * (h Un) + bn), h' = (1 - z) * n + z * h.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from . import tensor as T
from .tensor import DimensionError, Rng, Tensor, UsageError


@dataclass
class GruParams:
    W_z: Tensor
    W_r: Tensor
    W_n: Tensor
    U_z: Tensor
    U_r: Tensor
    U_n: Tensor
    b_z: Tensor
    b_r: Tensor
    b_n: Tensor

    @property
    def d_in(self):
        return self.W_z.shape[0]

    @property
    def h(self):
        return self.W_z.shape[1]

    def tensors(self):
        return [getattr(self, f.name) for f in fields(self)]


def glorot(rng: Rng, fan_in, fan_out):
    a = (6.0 / (fan_in + fan_out)) ** 0.5
    return Tensor(rng.uniform(-a, a, (fan_in, fan_out)), requires_grad=True)


def init_gru(rng: Rng, d_in, h) -> GruParams:
    return GruParams(
        W_z=glorot(rng, d_in, h), W_r=glorot(rng, d_in, h), W_n=glorot(rng, d_in, h),
        U_z=glorot(rng, h, h), U_r=glorot(rng, h, h), U_n=glorot(rng, h, h),
        b_z=T.zeros(h, requires_grad=True),
        b_r=T.zeros(h, requires_grad=True),
        b_n=T.zeros(h, requires_grad=True),
    )


def gru_cell(x: Tensor, h_prev: Tensor, params: GruParams) -> Tensor:
    """One GRU step over a [batch x d_in] input."""
    if x.shape[-1] != params.d_in:
        raise DimensionError(f"gru_cell input width {x.shape[-1]} != params d_in {params.d_in}")
    if h_prev.shape[-1] != params.h:
        raise DimensionError(f"gru_cell state width {h_prev.shape[-1]} != params h {params.h}")
    z = T.sigmoid(x @ params.W_z + h_prev @ params.U_z + params.b_z)
    r = T.sigmoid(x @ params.W_r + h_prev @ params.U_r + params.b_r)
    n = T.tanh(x @ params.W_n + r * (h_prev @ params.U_n) + params.b_n)
    one_minus_z = T.scale(z, -1.0) + Tensor(1.0)
    return one_minus_z * n + z * h_prev


def gru_sequence(xs, h0: Tensor, params: GruParams):
    """Run the cell left-to-right over a list of [batch x d_in] steps.

    Returns the list of hidden states, one per step.
    """
    if len(xs) == 0:
        raise UsageError("gru_sequence needs at least one step")
    hs = []
    h = h0
    for x in xs:
        h = gru_cell(x, h, params)
        hs.append(h)
    return hs


def bigru_encode(xs, params_fwd: GruParams, params_bwd: GruParams):
    """Bidirectional encoding: per-step concat of forward and backward passes."""
    batch = xs[0].shape[0]
    h0f = T.zeros((batch, params_fwd.h))
    h0b = T.zeros((batch, params_bwd.h))
    fwd = gru_sequence(xs, h0f, params_fwd)
    bwd = gru_sequence(list(reversed(xs)), h0b, params_bwd)
    bwd = list(reversed(bwd))
    return [T.concat([f, b], axis=-1) for f, b in zip(fwd, bwd)]
