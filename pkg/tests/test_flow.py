import numpy as np
import pytest

from flowdelta import tensor as T
from flowdelta.flow import (FlowVariantKind, flow_forward, flowdelta_forward,
                            flow_variant_forward, turn_major,
                            variant_extra_width, word_major)
from flowdelta.recurrent import gru_cell, gru_sequence, init_gru
from flowdelta.tensor import DimensionError, Rng, Tensor, grad_check

ALL_KINDS = list(FlowVariantKind)


def flow_per_word_oracle(reps, params):
    """Per-word loop: each word's turn sequence through its own GRU run."""
    t, m, d = reps.shape
    cols = []
    for j in range(m):
        xs = [Tensor(reps[k, j:j + 1, :]) for k in range(t)]
        hs = gru_sequence(xs, T.zeros((1, params.h)), params)
        cols.append(np.stack([h.data[0] for h in hs]))
    return np.stack(cols, axis=1)  # [t x m x h]


def variant_two_register_oracle(reps, params, kind):
    """Reference keeping (h_{k-1}, h_{k-2}, h_{k-3}) explicitly, per word."""
    t, m, d = reps.shape
    hw = params.h
    out = np.zeros((t, m, hw))
    for j in range(m):
        h1 = h2 = h3 = np.zeros((1, hw))
        for k in range(t):
            if kind is FlowVariantKind.DELTA:
                sig = h1 - h2
            elif kind is FlowVariantKind.SKIP_DELTA:
                sig = h1 - h3
            elif kind is FlowVariantKind.DOUBLE_DELTA:
                sig = np.concatenate([h1 - h2, h2 - h3], axis=-1)
            else:
                sig = h1 * h2
            x = np.concatenate([reps[k, j:j + 1, :], sig], axis=-1)
            h_next = gru_cell(Tensor(x), Tensor(h1), params).data
            h3, h2, h1 = h2, h1, h_next
            out[k, j] = h_next[0]
    return out


class TestTurnMajor:
    def test_degenerate_axes_unchanged(self):
        rng = Rng(1)
        for shape in [(1, 4, 2), (3, 1, 2)]:
            x = Tensor(rng.normal(shape))
            assert np.array_equal(turn_major(x).data.reshape(-1), x.data.reshape(-1))

    def test_round_trip_bitwise(self):
        rng = Rng(2)
        x = Tensor(rng.normal((3, 4, 2)))
        assert np.array_equal(word_major(turn_major(x)).data, x.data)

    def test_indexing_exhaustive(self):
        rng = Rng(3)
        x = Tensor(rng.normal((2, 3, 2)))
        out = turn_major(x)
        for k in range(2):
            for j in range(3):
                assert np.array_equal(out.data[j, k], x.data[k, j])


class TestFlowForward:
    def test_single_turn_equals_cell(self):
        rng = Rng(4)
        params = init_gru(rng, 3, 2)
        reps = rng.normal((1, 4, 3))
        out = flow_forward(Tensor(reps), params)
        want = gru_cell(Tensor(reps[0]), T.zeros((4, 2)), params)
        assert np.array_equal(out.data[0], want.data)

    def test_word_permutation_equivariance(self):
        rng = Rng(5)
        params = init_gru(rng, 3, 2)
        reps = rng.normal((3, 5, 3))
        perm = [4, 2, 0, 1, 3]
        out = flow_forward(Tensor(reps), params).data
        out_perm = flow_forward(Tensor(reps[:, perm, :]), params).data
        assert np.array_equal(out_perm, out[:, perm, :])

    def test_matches_per_word_oracle_bitwise(self):
        rng = Rng(6)
        params = init_gru(rng, 4, 3)
        reps = rng.normal((3, 2, 4))
        got = flow_forward(Tensor(reps), params).data
        assert np.array_equal(got, flow_per_word_oracle(reps, params))

    def test_width_mismatch(self):
        params = init_gru(Rng(1), 5, 3)
        with pytest.raises(DimensionError):
            flow_forward(T.zeros((2, 2, 4)), params)


class TestFlowDelta:
    def test_first_turn_delta_is_zero(self):
        rng = Rng(7)
        d, h = 3, 2
        params = init_gru(rng, d + h, h)
        reps = rng.normal((1, 4, d))
        out = flowdelta_forward(Tensor(reps), params)
        padded = np.concatenate([reps[0], np.zeros((4, h))], axis=-1)
        want = gru_cell(Tensor(padded), T.zeros((4, h)), params)
        assert np.array_equal(out.data[0], want.data)

    def test_t1_reduces_to_flow_on_padded_input(self):
        rng = Rng(8)
        d, h = 4, 3
        params = init_gru(rng, d + h, h)
        reps = rng.normal((1, 3, d))
        padded = np.concatenate([reps, np.zeros((1, 3, h))], axis=-1)
        a = flowdelta_forward(Tensor(reps), params).data
        b = flow_forward(Tensor(padded), params).data
        assert np.array_equal(a, b)

    def test_matches_two_register_oracle_bitwise(self):
        rng = Rng(9)
        d, h = 3, 2
        params = init_gru(rng, d + h, h)
        reps = rng.normal((4, 3, d))
        got = flowdelta_forward(Tensor(reps), params).data
        want = variant_two_register_oracle(reps, params, FlowVariantKind.DELTA)
        assert np.array_equal(got, want)


class TestVariants:
    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_matches_register_oracle_bitwise(self, kind):
        for case in range(10):
            rng = Rng(100 + case)
            d, h = 3, 2
            params = init_gru(rng, d + variant_extra_width(kind, h), h)
            reps = rng.normal((4, 3, d))
            got = flow_variant_forward(Tensor(reps), params, kind).data
            assert np.array_equal(got, variant_two_register_oracle(reps, params, kind))

    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_t1_reduces_to_padded_flow(self, kind):
        rng = Rng(10)
        d, h = 3, 2
        extra = variant_extra_width(kind, h)
        params = init_gru(rng, d + extra, h)
        reps = rng.normal((1, 4, d))
        padded = np.concatenate([reps, np.zeros((1, 4, extra))], axis=-1)
        a = flow_variant_forward(Tensor(reps), params, kind).data
        b = flow_forward(Tensor(padded), params).data
        assert np.array_equal(a, b)

    def test_skipdelta_boundary_uses_zero_history(self):
        rng = Rng(11)
        d, h = 2, 2
        params = init_gru(rng, d + h, h)
        reps = rng.normal((2, 1, d))
        out = flow_variant_forward(Tensor(reps), params, FlowVariantKind.SKIP_DELTA).data
        # at k=2 the signal is h_1 - h_{-1} = h_1
        h1 = out[0]
        x = np.concatenate([reps[1], h1], axis=-1)
        want = gru_cell(Tensor(x), Tensor(h1), params).data
        assert np.array_equal(out[1], want)

    def test_hadamard_boundary_zero(self):
        rng = Rng(12)
        d, h = 3, 2
        params = init_gru(rng, d + h, h)
        reps = rng.normal((1, 2, d))
        out = flow_variant_forward(Tensor(reps), params, FlowVariantKind.HADAMARD)
        padded = np.concatenate([reps[0], np.zeros((2, h))], axis=-1)
        want = gru_cell(Tensor(padded), T.zeros((2, h)), params)
        assert np.array_equal(out.data[0], want.data)

    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_width_mismatch(self, kind):
        params = init_gru(Rng(1), 3, 2)  # too narrow for any variant with d=3
        with pytest.raises(DimensionError):
            flow_variant_forward(T.zeros((2, 2, 3)), params, kind)


class TestProperties:
    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_turn_causality(self, kind):
        rng = Rng(13)
        d, h = 3, 2
        params = init_gru(rng, d + variant_extra_width(kind, h), h)
        reps = rng.normal((4, 3, d))
        base = flow_variant_forward(Tensor(reps), params, kind).data
        perturbed = reps.copy()
        perturbed[2] += 1.0  # hit turn k=2; turns 0..1 must not move
        out = flow_variant_forward(Tensor(perturbed), params, kind).data
        assert np.array_equal(out[:2], base[:2])
        assert not np.array_equal(out[2:], base[2:])

    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_word_permutation_equivariance(self, kind):
        rng = Rng(14)
        d, h = 3, 2
        params = init_gru(rng, d + variant_extra_width(kind, h), h)
        reps = rng.normal((3, 4, d))
        perm = [3, 0, 2, 1]
        out = flow_variant_forward(Tensor(reps), params, kind).data
        out_perm = flow_variant_forward(Tensor(reps[:, perm, :]), params, kind).data
        assert np.array_equal(out_perm, out[:, perm, :])

    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_gradient(self, kind):
        rng = Rng(15)
        d, h = 4, 3
        params = init_gru(rng, d + variant_extra_width(kind, h), h)
        reps = Tensor(rng.normal((3, 2, d)), requires_grad=True)

        def f():
            return T.tsum(flow_variant_forward(reps, params, kind))

        assert grad_check(f, params.tensors() + [reps]) < 1e-4
