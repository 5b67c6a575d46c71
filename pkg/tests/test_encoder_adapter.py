"""Encoder/adapter contracts: shapes, length formula, equivariance, gradients."""

import numpy as np
import pytest

from mdasr import numerics as nx
from mdasr.encoder import (
    ADAPTER_KERNEL,
    ADAPTER_STRIDE,
    adapt,
    adapted_len,
    encode,
    init_adapter_params,
    init_encoder_params,
)
from helpers import check_grad

D_AC, D_ENC, D_MODEL = 6, 8, 10


def make_store(seed=0, f64=True):
    rng = np.random.default_rng(seed)
    store = nx.ParamStore()
    init_encoder_params(store, D_AC, D_ENC, rng)
    init_adapter_params(store, D_ENC, D_MODEL, rng)
    if f64:
        for t in store.params.values():
            t.data = t.data.astype(np.float64) * 5  # move off tiny init for better FD signal
    return store


class TestEncode:
    def test_preserves_frame_count(self):
        store = make_store()
        x = np.random.default_rng(1).standard_normal((9, D_AC))
        assert encode(store, x).shape == (9, D_ENC)

    def test_position_wise_purity(self):
        store = make_store()
        row = np.random.default_rng(2).standard_normal(D_AC)
        x = np.tile(row, (5, 1))
        out = encode(store, x).data
        for r in out[1:]:
            np.testing.assert_array_equal(r, out[0])

    def test_too_short_errors(self):
        store = make_store()
        with pytest.raises(ValueError, match="too short"):
            encode(store, np.zeros((2, D_AC)))

    def test_gradient_through_encoder(self):
        store = make_store(3)
        x = np.random.default_rng(3).standard_normal((5, D_AC))
        w = np.random.default_rng(4).standard_normal((5, D_ENC))

        def loss():
            return nx.tsum(nx.mul(encode(store, x), nx.tensor(w)))

        for name in ("enc.win", "enc.w1", "enc.b2"):
            assert check_grad(loss, store[name]) < 1e-3


class TestAdapt:
    def test_halving_25_to_12(self):
        assert adapted_len(25) == 12  # 25 Hz -> 12.5 Hz analog

    def test_boundary_t3(self):
        assert adapted_len(3) == 1
        store = make_store()
        enc = nx.tensor(np.random.default_rng(5).standard_normal((3, D_ENC)))
        assert adapt(store, enc).shape == (1, D_MODEL)

    def test_length_formula_all_t(self):
        store = make_store()
        for T in range(3, 40):
            enc = nx.tensor(np.random.default_rng(T).standard_normal((T, D_ENC)))
            want = (T - ADAPTER_KERNEL) // ADAPTER_STRIDE + 1
            assert adapt(store, enc).shape[0] == want

    def test_identity_kernel_reproduces_strided_subsample(self):
        store = make_store(6)
        # center tap = identity, other taps zero, no conv bias
        w = np.zeros((ADAPTER_KERNEL * D_ENC, D_ENC))
        w[D_ENC : 2 * D_ENC] = np.eye(D_ENC)
        store["adapt.conv_w"].data = w
        store["adapt.conv_b"].data = np.zeros(D_ENC)
        x = np.random.default_rng(7).standard_normal((11, D_ENC))
        got = adapt(store, nx.tensor(x)).data
        centers = x[1 :: ADAPTER_STRIDE][: adapted_len(11)]  # center of each window
        h = nx.gelu(nx.tensor(centers))
        h = nx.gelu(nx.add(nx.matmul(h, store["adapt.w1"]), store["adapt.b1"]))
        want = nx.add(nx.matmul(h, store["adapt.w2"]), store["adapt.b2"]).data
        np.testing.assert_allclose(got, want, atol=1e-10)

    def test_shift_equivariance_by_stride(self):
        store = make_store(8)
        x = np.random.default_rng(9).standard_normal((13, D_ENC))
        full = adapt(store, nx.tensor(x)).data
        shifted = adapt(store, nx.tensor(x[ADAPTER_STRIDE:])).data
        np.testing.assert_allclose(full[1 : 1 + shifted.shape[0]], shifted, atol=1e-12)

    def test_too_short_errors(self):
        store = make_store()
        with pytest.raises(ValueError, match="too short"):
            adapt(store, nx.tensor(np.zeros((2, D_ENC))))
