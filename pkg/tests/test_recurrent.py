import numpy as np
import pytest

from flowdelta import tensor as T
from flowdelta.recurrent import (GruParams, bigru_encode, gru_cell,
                                 gru_sequence, init_gru)
from flowdelta.tensor import DimensionError, Rng, Tensor, UsageError, grad_check


def zero_gru(d_in, h):
    z = lambda *s: T.zeros(s)
    return GruParams(W_z=z(d_in, h), W_r=z(d_in, h), W_n=z(d_in, h),
                     U_z=z(h, h), U_r=z(h, h), U_n=z(h, h),
                     b_z=z(h), b_r=z(h), b_n=z(h))


def gru_cell_scalar_oracle(x, h_prev, p):
    """Per-element loop computation of the gated update."""
    batch, h = h_prev.shape
    out = np.zeros((batch, h))
    for b in range(batch):
        for j in range(h):
            z = r = n_pre = 0.0
            for k in range(x.shape[1]):
                z += x[b, k] * p.W_z.data[k, j]
                r += x[b, k] * p.W_r.data[k, j]
                n_pre += x[b, k] * p.W_n.data[k, j]
            zu = ru = nu = 0.0
            for k in range(h):
                zu += h_prev[b, k] * p.U_z.data[k, j]
                ru += h_prev[b, k] * p.U_r.data[k, j]
                nu += h_prev[b, k] * p.U_n.data[k, j]
            zg = 1 / (1 + np.exp(-(z + zu + p.b_z.data[j])))
            rg = 1 / (1 + np.exp(-(r + ru + p.b_r.data[j])))
            ng = np.tanh(n_pre + rg * nu + p.b_n.data[j])
            out[b, j] = (1 - zg) * ng + zg * h_prev[b, j]
    return out


class TestGruCell:
    def test_all_zero(self):
        p = zero_gru(2, 3)
        out = gru_cell(T.zeros((1, 2)), T.zeros((1, 3)), p)
        assert np.array_equal(out.data, np.zeros((1, 3)))

    def test_zero_params_halve_state(self):
        p = zero_gru(2, 3)
        v = np.array([[0.4, -0.8, 1.2]])
        out = gru_cell(T.zeros((1, 2)), Tensor(v), p)
        assert np.allclose(out.data, v / 2, atol=1e-15)

    def test_matches_scalar_oracle(self):
        rng = Rng(11)
        p = init_gru(rng, 4, 3)
        x = rng.normal((2, 4))
        h0 = rng.normal((2, 3))
        got = gru_cell(Tensor(x), Tensor(h0), p).data
        want = gru_cell_scalar_oracle(x, h0, p)
        assert np.max(np.abs(got - want)) < 1e-12

    def test_shape_mismatch(self):
        p = zero_gru(2, 3)
        with pytest.raises(DimensionError):
            gru_cell(T.zeros((1, 5)), T.zeros((1, 3)), p)

    def test_convex_combination_bound(self):
        # if n and h_prev lie in [-1, 1], so does the update
        rng = Rng(21)
        p = init_gru(rng, 2, 4)
        h0 = np.clip(rng.normal((3, 4)), -1, 1)
        out = gru_cell(Tensor(rng.normal((3, 2))), Tensor(h0), p).data
        assert (np.abs(out) <= 1.0).all()


class TestGruSequence:
    def test_single_step_equals_cell(self):
        rng = Rng(4)
        p = init_gru(rng, 3, 2)
        x = Tensor(rng.normal((2, 3)))
        h0 = Tensor(rng.normal((2, 2)))
        hs = gru_sequence([x], h0, p)
        assert np.array_equal(hs[0].data, gru_cell(x, h0, p).data)

    def test_zero_params_repeated_halving(self):
        p = zero_gru(2, 3)
        v = np.array([[1.0, -2.0, 0.5]])
        hs = gru_sequence([T.zeros((1, 2))] * 4, Tensor(v), p)
        for k, h in enumerate(hs):
            assert np.allclose(h.data, v / 2 ** (k + 1), atol=1e-15)

    def test_empty_sequence_rejected(self):
        with pytest.raises(UsageError):
            gru_sequence([], T.zeros((1, 2)), zero_gru(2, 2))

    def test_matches_chained_cells_bitwise(self):
        rng = Rng(8)
        p = init_gru(rng, 3, 4)
        xs = [Tensor(rng.normal((2, 3))) for _ in range(4)]
        h0 = Tensor(rng.normal((2, 4)))
        hs = gru_sequence(xs, h0, p)
        h = h0
        for k, x in enumerate(xs):
            h = gru_cell(x, h, p)
            assert np.array_equal(hs[k].data, h.data)

    def test_gradient(self):
        rng = Rng(31)
        p = init_gru(rng, 3, 5)
        xs = [Tensor(rng.normal((1, 3)), requires_grad=True) for _ in range(5)]

        def f():
            return T.tsum(T.stack(gru_sequence(xs, T.zeros((1, 5)), p)))

        assert grad_check(f, p.tensors() + xs) < 1e-4


class TestBigru:
    def test_single_step_concat(self):
        rng = Rng(6)
        pf, pb = init_gru(rng, 3, 2), init_gru(rng, 3, 2)
        x = Tensor(rng.normal((2, 3)))
        out = bigru_encode([x], pf, pb)
        want = np.concatenate([gru_cell(x, T.zeros((2, 2)), pf).data,
                               gru_cell(x, T.zeros((2, 2)), pb).data], axis=-1)
        assert np.array_equal(out[0].data, want)

    def test_palindrome_symmetry_with_tied_params(self):
        rng = Rng(7)
        p = init_gru(rng, 3, 2)
        a, b = Tensor(rng.normal((1, 3))), Tensor(rng.normal((1, 3)))
        out = bigru_encode([a, b, a], p, p)
        h = 2
        for k in range(3):
            fwd_k = out[k].data[:, :h]
            bwd_mirror = out[2 - k].data[:, h:]
            assert np.array_equal(fwd_k, bwd_mirror)

    def test_matches_two_pass_oracle(self):
        rng = Rng(9)
        pf, pb = init_gru(rng, 2, 3), init_gru(rng, 2, 3)
        xs = [Tensor(rng.normal((2, 2))) for _ in range(3)]
        out = bigru_encode(xs, pf, pb)
        fwd = gru_sequence(xs, T.zeros((2, 3)), pf)
        bwd = list(reversed(gru_sequence(list(reversed(xs)), T.zeros((2, 3)), pb)))
        for k in range(3):
            assert np.array_equal(out[k].data,
                                  np.concatenate([fwd[k].data, bwd[k].data], axis=-1))


class TestDeterminism:
    def test_identical_seed_identical_params(self):
        a = init_gru(Rng(55), 4, 4)
        b = init_gru(Rng(55), 4, 4)
        for ta, tb in zip(a.tensors(), b.tensors()):
            assert np.array_equal(ta.data, tb.data)
