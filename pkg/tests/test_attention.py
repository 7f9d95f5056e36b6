import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ldnlm import attention
from ldnlm.attention import attention_linear, attention_softmax, kernel_attention_quadratic, multihead, phi
from ldnlm.errors import ContractError, ShapeError

from _oracles import kernel_attention_dense, softmax_attention_loops


def _qkv(seed, n, dk, dv=None, dtype=np.float32):
    rng = np.random.default_rng(seed)
    return tuple(rng.standard_normal(s).astype(dtype) for s in ((n, dk), (n, dk), (n, dv or dk)))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 256), st.integers(1, 32), st.integers(0, 2**31 - 1))
def test_linear_matches_dense_oracle_f32(n, dk, seed):
    q, k, v = _qkv(seed, n, dk)
    out = attention_linear(q, k, v)
    assert out.dtype == np.float32
    ref = kernel_attention_dense(q, k, v)
    np.testing.assert_allclose(out, ref, rtol=1e-5, atol=1e-5 * np.abs(ref).max())


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 128), st.integers(1, 16), st.integers(0, 2**31 - 1))
def test_linear_matches_dense_oracle_f64(n, dk, seed):
    q, k, v = _qkv(seed, n, dk, dtype=np.float64)
    ref = kernel_attention_dense(q, k, v)
    np.testing.assert_allclose(attention_linear(q, k, v), ref, rtol=1e-10, atol=1e-10 * np.abs(ref).max())


def test_both_backends_agree(attn_kernels):
    lin, soft = attn_kernels
    q, k, v = _qkv(3, 40, 6, 5, np.float64)
    np.testing.assert_allclose(attention_linear(q, k, v, kernel=lin), kernel_attention_dense(q, k, v), rtol=1e-12)
    np.testing.assert_allclose(attention_softmax(q, k, v, kernel=soft),
                               softmax_attention_loops(q, k, v, 1 / math.sqrt(6)), rtol=1e-12)


def test_quadratic_helper_equals_linear():
    q, k, v = _qkv(4, 30, 4, dtype=np.float64)
    np.testing.assert_allclose(kernel_attention_quadratic(q, k, v), attention_linear(q, k, v), rtol=1e-12)


def test_single_token_returns_value():
    q, k, v = _qkv(5, 1, 3)
    np.testing.assert_allclose(attention_linear(q, k, v), v, rtol=1e-6)
    np.testing.assert_allclose(attention_softmax(q, k, v), v, rtol=1e-6)


def test_softmax_weights_positive_and_normalized(rng):
    # attending over an identity value matrix exposes the weight rows
    n = 20
    q, k = rng.standard_normal((n, 4)), rng.standard_normal((n, 4))
    for fn in (attention_linear, attention_softmax):
        w = fn(q, k, np.eye(n))
        assert np.all(w >= 0)
        np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-5)


def test_phi_positive():
    x = np.linspace(-50, 50, 101)
    assert np.all(phi(x) > 0)


@pytest.mark.parametrize("n", [1, 7, 100])
def test_flop_formulas(attn_kernels, n):
    lin, soft = attn_kernels
    dk, dv = 3, 5
    q, k, v = _qkv(0, n, dk, dv, np.float64)
    _, fl = attention_linear(q, k, v, return_flops=True, kernel=lin)
    assert fl == n * (2 * dk + 2 * dk * dv) + n * (3 * dk + 2 * dk * dv + dv)
    _, fs = attention_softmax(q, k, v, return_flops=True, kernel=soft)
    assert fs == n * (n * (2 * dk + 1) + n * (3 + 2 * dv) + dv)


def test_flop_growth_is_linear_vs_quadratic():
    counts = {}
    for n in (1024, 2048, 4096):
        q, k, v = _qkv(1, n, 8)
        counts[n] = (attention_linear(q, k, v, return_flops=True)[1],
                     attention_softmax(q, k, v, return_flops=True)[1])
    c_lin = counts[1024][0] / 1024
    c_sm = counts[1024][1] / 1024**2
    for n, (fl, fs) in counts.items():
        assert fl <= c_lin * n * 1.0001
        assert fs >= c_sm * n * n / 2


@pytest.mark.slow
def test_linear_wall_time_scales_roughly_linearly():
    q, k, v = _qkv(2, 8192, 8)
    attention_linear(q[:10], k[:10], v[:10])

    def best(m):
        ts = []
        for _ in range(5):
            t = time.perf_counter()
            attention_linear(q[:m], k[:m], v[:m])
            ts.append(time.perf_counter() - t)
        return min(ts)

    assert best(8192) / best(4096) < 3.0


def test_multihead_concatenates_heads(rng):
    q, k, v = (rng.standard_normal((10, 6)) for _ in range(3))
    out = multihead(q, k, v, 3, "softmax")
    for h in range(3):
        s = slice(2 * h, 2 * h + 2)
        np.testing.assert_allclose(out[:, s], attention_softmax(q[:, s], k[:, s], v[:, s]))
    with pytest.raises(ShapeError):
        multihead(q, k, v, 4, "linear")
    with pytest.raises(ContractError):
        multihead(q, k, v, 2, "cosine")


def test_shape_and_empty_errors():
    with pytest.raises(ShapeError):
        attention_linear(np.ones((3, 2)), np.ones((3, 3)), np.ones((3, 1)))
    with pytest.raises(ContractError):
        attention_softmax(np.ones((0, 2)), np.ones((0, 2)), np.ones((0, 2)))


def test_softmax_numpy_path_blocks_rows():
    n = attention._SOFTMAX_BLOCK * 2 + 3
    q, k, v = _qkv(9, n, 4, dtype=np.float64)
    a, _ = attention._softmax_numpy(q, k, v, 0.5)
    b, _ = attention._softmax_numba(q, k, v, 0.5)
    np.testing.assert_allclose(a, b, rtol=1e-12)
