"""Op-level contracts: hand examples, finite-difference oracles, invariants."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mdasr import numerics as nx
from helpers import check_grad, finite_diff_grad, rel_err

F64 = np.float64


def randn(rng, *shape, dtype=F64):
    return rng.standard_normal(shape).astype(dtype)


class TestMatmul:
    def test_identity(self):
        rng = np.random.default_rng(0)
        b = nx.tensor(randn(rng, 3, 4))
        eye = nx.tensor(np.eye(3))
        out = nx.matmul(eye, b)
        np.testing.assert_array_equal(out.data, b.data)

    def test_hand_computed(self):
        a = nx.tensor([[1.0, 2.0]])
        b = nx.tensor([[3.0], [4.0]])
        assert nx.matmul(a, b).data[0, 0] == 11.0

    def test_against_triple_loop(self):
        rng = np.random.default_rng(1)
        a = randn(rng, 4, 5)
        b = randn(rng, 5, 3)
        want = np.zeros((4, 3))
        for i in range(4):
            for j in range(3):
                for k in range(5):
                    want[i, j] += a[i, k] * b[k, j]
        got = nx.matmul(nx.tensor(a), nx.tensor(b)).data
        assert np.abs(got - want).max() < 1e-6

    def test_shape_mismatch(self):
        with pytest.raises(nx.NumericsError):
            nx.matmul(nx.tensor(np.zeros((2, 3))), nx.tensor(np.zeros((4, 2))))

    def test_gradients_both_operands(self):
        rng = np.random.default_rng(2)
        a = nx.tensor(randn(rng, 3, 4), requires_grad=True)
        b = nx.tensor(randn(rng, 4, 2), requires_grad=True)
        assert check_grad(lambda: nx.tsum(nx.matmul(a, b)), a) < 1e-6
        assert check_grad(lambda: nx.tsum(nx.matmul(a, b)), b) < 1e-6


class TestSoftmax:
    def test_uniform(self):
        out = nx.softmax(nx.tensor([0.0, 0.0, 0.0]))
        np.testing.assert_allclose(out.data, [1 / 3] * 3, atol=1e-7)

    def test_stability(self):
        out = nx.softmax(nx.tensor([1000.0, 0.0])).data
        assert np.isfinite(out).all()
        assert out[0] > 0.999 and out[1] < 1e-6

    def test_sums_and_ordering(self):
        rng = np.random.default_rng(3)
        x = randn(rng, 10)
        out = nx.softmax(nx.tensor(x)).data
        assert abs(out.sum() - 1.0) < 1e-6
        assert (np.argsort(out) == np.argsort(x)).all()

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(min_value=-1e4, max_value=1e4), min_size=1, max_size=16))
    def test_rows_sum_to_one_property(self, xs):
        out = nx.softmax(nx.tensor(np.array(xs, dtype=F64))).data
        assert abs(out.sum() - 1.0) <= 1e-6

    def test_gradient(self):
        rng = np.random.default_rng(4)
        x = nx.tensor(randn(rng, 2, 5), requires_grad=True)
        w = randn(rng, 2, 5)

        def loss():
            return nx.tsum(nx.mul(nx.softmax(x), nx.tensor(w)))

        assert check_grad(loss, x) < 1e-4


class TestLayerNorm:
    def test_constant_row_is_zero(self):
        g = nx.tensor(np.ones(4))
        b = nx.tensor(np.zeros(4))
        out = nx.layer_norm(nx.tensor([[2.0, 2.0, 2.0, 2.0]]), g, b)
        np.testing.assert_allclose(out.data, 0.0, atol=1e-6)

    def test_already_normalized(self):
        g = nx.tensor(np.ones(2))
        b = nx.tensor(np.zeros(2))
        out = nx.layer_norm(nx.tensor([[1.0, -1.0]]), g, b)
        np.testing.assert_allclose(out.data, [[1.0, -1.0]], atol=1e-4)

    def test_gradient_64bit(self):
        rng = np.random.default_rng(5)
        x = nx.tensor(randn(rng, 3, 6), requires_grad=True)
        g = nx.tensor(randn(rng, 6), requires_grad=True)
        b = nx.tensor(randn(rng, 6), requires_grad=True)
        w = randn(rng, 3, 6)

        def loss():
            return nx.tsum(nx.mul(nx.layer_norm(x, g, b), nx.tensor(w)))

        assert check_grad(loss, x) < 1e-4
        assert check_grad(loss, g) < 1e-4
        assert check_grad(loss, b) < 1e-4


class TestAttention:
    def test_single_position_returns_v(self):
        rng = np.random.default_rng(6)
        q = nx.tensor(randn(rng, 1, 8))
        k = nx.tensor(randn(rng, 1, 8))
        v = nx.tensor(randn(rng, 1, 8))
        out = nx.attention(q, k, v)
        np.testing.assert_allclose(out.data, v.data, atol=1e-7)

    def test_one_hot_limit(self):
        d = 4
        k = np.eye(d) * 50.0  # orthogonal keys at large scale
        q = np.zeros((1, d))
        q[0, 0] = 50.0  # aligned with k_0
        rng = np.random.default_rng(7)
        v = randn(rng, d, d)
        out = nx.attention(nx.tensor(q), nx.tensor(k), nx.tensor(v)).data
        np.testing.assert_allclose(out[0], v[0], atol=1e-5)

    def test_causal_mask_blocks_future(self):
        rng = np.random.default_rng(8)
        T, d = 5, 8
        q, k, v = randn(rng, T, d), randn(rng, T, d), randn(rng, T, d)
        mask = nx.causal_mask(T, dtype=F64)
        base = nx.attention(nx.tensor(q), nx.tensor(k), nx.tensor(v), mask).data
        k2, v2 = k.copy(), v.copy()
        k2[3:] += rng.standard_normal(k2[3:].shape)
        v2[3:] += rng.standard_normal(v2[3:].shape)
        pert = nx.attention(nx.tensor(q), nx.tensor(k2), nx.tensor(v2), mask).data
        np.testing.assert_array_equal(base[:3], pert[:3])

    def test_all_masked_row_errors(self):
        mask = np.full((2, 2), -np.inf)
        t = nx.tensor(np.ones((2, 2)))
        with pytest.raises(nx.NumericsError):
            nx.attention(t, t, t, mask)

    def test_gradient(self):
        rng = np.random.default_rng(9)
        q = nx.tensor(randn(rng, 4, 6), requires_grad=True)
        k = nx.tensor(randn(rng, 4, 6), requires_grad=True)
        v = nx.tensor(randn(rng, 4, 6), requires_grad=True)
        w = randn(rng, 4, 6)

        def loss():
            return nx.tsum(nx.mul(nx.attention(q, k, v), nx.tensor(w)))

        for p in (q, k, v):
            assert check_grad(loss, p) < 1e-4


class TestCrossEntropyMasked:
    def test_confident_correct_is_near_zero(self):
        logits = np.full((3, 5), -100.0)
        logits[np.arange(3), [1, 2, 3]] = 100.0
        loss = nx.cross_entropy_masked(nx.tensor(logits), np.array([1, 2, 3]), np.ones(3, bool))
        assert loss.item() < 1e-6

    def test_uniform_logits_equal_log_v(self):
        V = 7
        loss = nx.cross_entropy_masked(
            nx.tensor(np.zeros((1, V))), np.array([3]), np.ones(1, bool)
        )
        assert abs(loss.item() - np.log(V)) < 1e-6

    def test_empty_selection_is_zero(self):
        logits = nx.tensor(np.random.default_rng(0).standard_normal((3, 4)), requires_grad=True)
        loss = nx.cross_entropy_masked(logits, np.zeros(3, np.int64), np.zeros(3, bool))
        assert loss.item() == 0.0
        nx.backward(loss)
        np.testing.assert_array_equal(logits.grad, 0.0)

    def test_gradient_only_on_selected_rows(self):
        rng = np.random.default_rng(10)
        logits = nx.tensor(randn(rng, 4, 5), requires_grad=True)
        sel = np.array([True, False, True, False])
        loss = nx.cross_entropy_masked(logits, np.array([0, 1, 2, 3]), sel, weight=2.0)
        nx.backward(loss)
        assert np.abs(logits.grad[sel]).max() > 0
        np.testing.assert_array_equal(logits.grad[~sel], 0.0)

    def test_gradient_finite_difference(self):
        rng = np.random.default_rng(11)
        logits = nx.tensor(randn(rng, 3, 5), requires_grad=True)
        targets = np.array([4, 0, 2])
        sel = np.array([True, True, False])

        def loss():
            return nx.cross_entropy_masked(logits, targets, sel, weight=1.7)

        assert check_grad(loss, logits) < 1e-4


class TestBackward:
    def test_sum_gives_ones(self):
        p = nx.tensor(np.arange(6, dtype=F64).reshape(2, 3), requires_grad=True)
        nx.backward(nx.tsum(p))
        np.testing.assert_array_equal(p.grad, np.ones((2, 3)))

    def test_sum_of_squares_gives_2p(self):
        p = nx.tensor(np.arange(4, dtype=F64), requires_grad=True)
        nx.backward(nx.tsum(nx.mul(p, p)))
        np.testing.assert_allclose(p.grad, 2 * p.data)

    def test_detached_graph_errors(self):
        with pytest.raises(nx.GraphError):
            nx.backward(nx.tensor(1.0))

    def test_nonscalar_errors(self):
        p = nx.tensor(np.ones(3), requires_grad=True)
        with pytest.raises(nx.NumericsError):
            nx.backward(nx.add(p, p))

    def test_reused_node_accumulates(self):
        p = nx.tensor(np.array(3.0), requires_grad=True)
        q = nx.add(p, p)  # dq/dp = 2
        nx.backward(nx.mul(q, q))  # d(q^2)/dp = 2q*2 = 24
        assert float(p.grad) == pytest.approx(24.0)


class TestConvAndSlices:
    def test_conv_out_len(self):
        assert nx.conv1d_out_len(25) == 12
        assert nx.conv1d_out_len(3) == 1

    def test_conv_gradients(self):
        rng = np.random.default_rng(12)
        x = nx.tensor(randn(rng, 7, 3), requires_grad=True)
        w = nx.tensor(randn(rng, 9, 4), requires_grad=True)
        b = nx.tensor(randn(rng, 4), requires_grad=True)
        wt = randn(rng, 3, 4)

        def loss():
            return nx.tsum(nx.mul(nx.conv1d_strided(x, w, b), nx.tensor(wt)))

        for p in (x, w, b):
            assert check_grad(loss, p) < 1e-4

    def test_embed_gradient_scatters(self):
        table = nx.tensor(np.zeros((4, 3)), requires_grad=True)
        ids = np.array([1, 1, 3])
        nx.backward(nx.tsum(nx.embed(table, ids)))
        np.testing.assert_array_equal(table.grad[1], 2.0)
        np.testing.assert_array_equal(table.grad[3], 1.0)
        np.testing.assert_array_equal(table.grad[0], 0.0)

    def test_slice_concat_roundtrip_grads(self):
        rng = np.random.default_rng(13)
        x = nx.tensor(randn(rng, 4, 6), requires_grad=True)
        w = randn(rng, 4, 6)

        def loss():
            parts = [nx.slice_cols(x, 0, 2), nx.slice_cols(x, 2, 6)]
            return nx.tsum(nx.mul(nx.concat_cols(parts), nx.tensor(w)))

        assert check_grad(loss, x) < 1e-6


class TestAdam:
    def test_zero_grad_no_decay_is_identity(self):
        store = nx.ParamStore()
        p = store.add("w", np.ones(3, dtype=np.float32))
        p.grad = np.zeros(3, dtype=np.float32)
        nx.adam_step(store, lr=0.1, weight_decay=0.0)
        np.testing.assert_array_equal(p.data, np.ones(3))
        assert store.step_count == 1

    def test_first_step_moves_by_lr(self):
        store = nx.ParamStore()
        p = store.add("w", np.array([0.0], dtype=np.float64))
        p.grad = np.array([1.0])
        nx.adam_step(store, lr=0.05, weight_decay=0.0)
        # bias-corrected first step of Adam is -lr * g/|g| (up to eps)
        assert p.data[0] == pytest.approx(-0.05, rel=1e-4)

    def test_converges_on_quadratic(self):
        store = nx.ParamStore()
        p = store.add("x", np.array([1.0], dtype=np.float64))
        for _ in range(100):
            p.grad = 2.0 * p.data  # d/dx x^2
            nx.adam_step(store, lr=0.1, weight_decay=0.0)
        assert abs(p.data[0]) < 0.1
        assert store.step_count == 100

    def test_missing_gradient_names_parameter(self):
        store = nx.ParamStore()
        store.add("w.weird", np.ones(2, dtype=np.float32))
        with pytest.raises(nx.NumericsError, match="w.weird"):
            nx.adam_step(store, lr=0.1)


class TestDeterminism:
    def test_ops_bit_identical(self):
        rng = np.random.default_rng(14)
        x = randn(rng, 6, 8)
        a = nx.softmax(nx.tensor(x)).data
        b = nx.softmax(nx.tensor(x)).data
        np.testing.assert_array_equal(a, b)

    def test_finite_check_flags_nan(self, debug_checks):
        with np.errstate(invalid="ignore"):
            with pytest.raises(nx.NumericsError):
                nx.mul(nx.tensor(np.array([np.inf])), nx.tensor(np.array([0.0])))
