import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mavsr import tensor as T
from mavsr.errors import ShapeMismatch
from mavsr.tensor import Tensor, backward, grad_check


def rand(*shape, seed=0):
    return np.random.default_rng(seed).standard_normal(shape)


# ---------------------------------------------------------------------------
# Forward oracles


def test_matmul_matches_loop_oracle():
    a, b = rand(3, 4, seed=1), rand(4, 5, seed=2)
    got = T.matmul(Tensor(a), Tensor(b)).numpy()
    for i in range(3):
        for j in range(5):
            assert got[i, j] == pytest.approx(sum(a[i, k] * b[k, j] for k in range(4)))


def test_softmax_rows_sum_to_one_and_shift_invariant():
    x = rand(4, 6, seed=3)
    y = T.softmax_lastdim(Tensor(x)).numpy()
    assert np.allclose(y.sum(axis=-1), 1.0)
    y2 = T.softmax_lastdim(Tensor(x + 100.0)).numpy()
    assert np.allclose(y, y2)


def test_gelu_against_closed_form():
    x = np.linspace(-4, 4, 33)
    y = T.gelu(Tensor(x)).numpy()
    from scipy.stats import norm

    assert np.allclose(y, x * norm.cdf(x), atol=1e-12)


def test_silu_matches_definition():
    x = np.linspace(-5, 5, 21)
    y = T.silu(Tensor(x)).numpy()
    assert np.allclose(y, x / (1 + np.exp(-x)))


def test_layernorm_moments():
    x = rand(5, 8, seed=4)
    y = T.layernorm(Tensor(x), Tensor(np.ones(8)), Tensor(np.zeros(8))).numpy()
    assert np.allclose(y.mean(axis=-1), 0.0, atol=1e-7)
    assert np.allclose(y.var(axis=-1), 1.0, atol=1e-4)


def test_dconv3x3_matches_loop_oracle():
    """Depthwise 3x3, zero padding, checked element by element."""
    x = rand(2, 3, 5, 6, seed=5)
    w = rand(2, 3, 3, seed=6)
    b = rand(2, seed=7)
    got = T.dconv3x3(Tensor(x), Tensor(w), Tensor(b)).numpy()
    padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    for c in range(2):
        for f in range(3):
            for y in range(5):
                for xx in range(6):
                    acc = b[c]
                    for ky in range(3):
                        for kx in range(3):
                            acc += w[c, ky, kx] * padded[c, f, y + ky, xx + kx]
                    assert got[c, f, y, xx] == pytest.approx(acc, rel=1e-5, abs=1e-6)


def test_dconv3x3_accepts_3d_input():
    x = rand(2, 4, 4, seed=8)
    w, b = rand(2, 3, 3, seed=9), rand(2, seed=10)
    out3 = T.dconv3x3(Tensor(x), Tensor(w), Tensor(b)).numpy()
    out4 = T.dconv3x3(Tensor(x[:, None]), Tensor(w), Tensor(b)).numpy()
    assert np.array_equal(out3, out4[:, 0])


def test_pconv1x1_is_channel_matmul():
    x = rand(3, 2, 4, 4, seed=11)
    w = rand(5, 3, seed=12)
    b = rand(5, seed=13)
    got = T.pconv1x1(Tensor(x), Tensor(w), Tensor(b)).numpy()
    expect = np.einsum("oc,cfhw->ofhw", w, x) + b[:, None, None, None]
    assert np.allclose(got, expect)


def test_tconv2x2s2_matches_loop_oracle():
    x = rand(2, 1, 4, 6, seed=14)
    w = rand(3, 2, 2, 2, seed=15)
    b = rand(3, seed=16)
    got = T.tconv2x2s2(Tensor(x), Tensor(w), Tensor(b)).numpy()
    assert got.shape == (3, 1, 2, 3)
    for o in range(3):
        for y in range(2):
            for xx in range(3):
                acc = b[o]
                for i in range(2):
                    for a in range(2):
                        for bb in range(2):
                            acc += w[o, i, a, bb] * x[i, 0, 2 * y + a, 2 * xx + bb]
                assert got[o, 0, y, xx] == pytest.approx(acc)


def test_tconv_odd_extent_rejected():
    with pytest.raises(ShapeMismatch):
        T.tconv2x2s2(Tensor(rand(2, 1, 5, 4, seed=0)), Tensor(rand(2, 2, 2, 2, seed=1)), Tensor(rand(2, seed=2)))


def test_maxpool2_matches_block_max():
    x = rand(2, 3, 6, 8, seed=17)
    got = T.maxpool2(Tensor(x)).numpy()
    expect = x.reshape(2, 3, 3, 2, 4, 2).max(axis=(3, 5))
    assert np.array_equal(got, expect)


def test_concat_split_inverse():
    xs = [Tensor(rand(2, i + 1, 3, seed=i)) for i in range(3)]
    cat = T.concat(xs, axis=1)
    parts = T.split(cat, 1, [1, 2, 3])
    for x, p in zip(xs, parts):
        assert np.array_equal(x.numpy(), p.numpy())


# ---------------------------------------------------------------------------
# Autodiff core


def test_backward_accumulates_through_reuse():
    x = Tensor(np.array([2.0, 3.0]), requires_grad=True)
    y = T.sum_all(T.mul(x, x))  # d/dx sum(x^2) = 2x
    backward(y)
    assert np.allclose(x.grad, [4.0, 6.0])


def test_backward_requires_scalar():
    x = Tensor(rand(2, 2), requires_grad=True)
    with pytest.raises(ShapeMismatch):
        backward(T.mul(x, x))


def test_no_grad_without_flag():
    x = Tensor(rand(3, seed=0))
    y = T.sum_all(T.silu(x))
    backward(y)
    assert x.grad is None


def test_operator_sugar():
    a = Tensor(np.array([1.0, 2.0]))
    b = Tensor(np.array([3.0, 4.0]))
    assert np.allclose((a + b).numpy(), [4.0, 6.0])
    assert np.allclose((a * b).numpy(), [3.0, 8.0])


@pytest.mark.parametrize(
    "name, fn, shape",
    [
        ("silu", lambda x: T.sum_all(T.silu(x)), (3, 3)),
        ("gelu", lambda x: T.sum_all(T.gelu(x)), (3, 3)),
        ("layernorm", lambda x: T.sum_all(T.mul(T.layernorm(x, _G4, _B4), _C34)), (3, 4)),
        ("softmax", lambda x: T.sum_all(T.mul(T.softmax_lastdim(x), _C34)), (3, 4)),
        ("maxpool", lambda x: T.sum_all(T.maxpool2(x)), (1, 2, 4, 4)),
    ],
)
def test_gradcheck_spot(name, fn, shape):
    err = grad_check(fn, Tensor(rand(*shape, seed=hash(name) % 1000)))
    assert err < 1e-5, f"{name}: {err}"


_G4 = Tensor(rand(4, seed=100))
_B4 = Tensor(rand(4, seed=101))
_C34 = Tensor(rand(3, 4, seed=102))


# ---------------------------------------------------------------------------
# RoPE


def test_rope_bands_partition():
    for dim in (8, 16, 24, 48, 144):
        bt, bh, bw = T.rope_bands(dim)
        assert bt + bh + bw == dim
        assert bt % 2 == bh % 2 == bw % 2 == 0


def test_rope_bad_dims_rejected():
    with pytest.raises(ShapeMismatch):
        T.rope_bands(7)
    with pytest.raises(ShapeMismatch):
        T.rope_bands(12)  # leaves odd spatial bands


def test_rope_zero_position_is_identity():
    x = rand(4, 16, seed=18)
    out = T.rope_apply(Tensor(x), np.zeros((4, 3), dtype=np.int64)).numpy()
    assert np.allclose(out, x)


def test_rope_preserves_norm():
    x = rand(6, 24, seed=19)
    pos = np.random.default_rng(20).integers(0, 50, size=(6, 3))
    out = T.rope_apply(Tensor(x), pos).numpy()
    assert np.allclose(np.linalg.norm(out, axis=1), np.linalg.norm(x, axis=1))


def test_rope_relative_position_in_dot_products():
    rng = np.random.default_rng(21)
    a, b = rng.standard_normal((1, 16)), rng.standard_normal((1, 16))
    pa, pb = np.array([[3, 1, 2]]), np.array([[7, 1, 2]])

    def dot(p1, p2):
        ra = T.rope_apply(Tensor(a), p1).numpy()
        rb = T.rope_apply(Tensor(b), p2).numpy()
        return float((ra @ rb.T)[0, 0])

    assert dot(pa, pb) == pytest.approx(dot(pa + [[11, 0, 0]], pb + [[11, 0, 0]]), rel=1e-9)


# ---------------------------------------------------------------------------
# Serialization


def test_dump_load_round_trip(tmp_path):
    x = rand(2, 3, 4, seed=22).astype(np.float32)
    p = tmp_path / "t.txt"
    T.dump_tensor(Tensor(x), p)
    y = T.load_tensor(p).numpy()
    assert y.shape == x.shape
    assert np.allclose(y, x, atol=1e-6)


def test_dump_format_is_ascii(tmp_path):
    p = tmp_path / "t.txt"
    T.dump_tensor(Tensor(np.array([[1.5, -2.0]])), p)
    lines = p.read_text().splitlines()
    assert lines[0].split() == ["2", "1", "2"]
    assert float(lines[1]) == 1.5


# ---------------------------------------------------------------------------
# Properties


@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4))
@settings(max_examples=25, deadline=None)
def test_matmul_shapes_property(n, k, m):
    a = Tensor(np.ones((n, k)))
    b = Tensor(np.ones((k, m)))
    out = T.matmul(a, b)
    assert out.shape == (n, m)
    assert np.allclose(out.numpy(), k)


@given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=2, max_size=8))
@settings(max_examples=50, deadline=None)
def test_softmax_is_distribution(vals):
    x = Tensor(np.array([vals]))
    y = T.softmax_lastdim(x).numpy()
    assert y.min() >= 0.0
    assert y.sum() == pytest.approx(1.0)
