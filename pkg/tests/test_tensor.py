import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from svsmu import tensor as T
from svsmu.tensor import NonScalarLoss, Parameter, ShapeMismatch

OP_CASES = [
    ("matmul", [(4, 3), (3, 2)], {}),
    ("matmul", [(2, 4, 3), (2, 3, 5)], {}),
    ("conv1d", [(10, 3), (3, 3, 4), (4,)], {"stride": 2, "padding": 1}),
    ("conv1d", [(7, 2), (5, 2, 3), (3,)], {"stride": 1, "padding": 2}),
    ("transposed_conv1d", [(5, 3), (4, 3, 2), (2,)], {"stride": 2, "padding": 1}),
    ("layer_norm", [(3, 8), (8,), (8,)], {}),
    ("softmax", [(3, 5)], {}),
    ("log_softmax", [(3, 5)], {}),
    ("relu", [(4, 5)], {}),
    ("sigmoid", [(4, 5)], {}),
    ("tanh", [(4, 5)], {}),
    ("add", [(4, 5), (5,)], {}),
    ("mul", [(4, 5), (4, 5)], {}),
    ("mean", [(4, 5)], {}),
    ("abs", [(4, 5)], {}),
    ("embedding_lookup", [(6, 4), (5,)], {}),
    ("scaled_dot_product_attention", [(2, 5, 3), (2, 5, 3), (2, 5, 3)], {}),
    ("scaled_dot_product_attention", [(2, 5, 3), (2, 5, 3), (2, 5, 3)],
     {"bias": np.where(np.abs(np.subtract.outer(np.arange(5), np.arange(5))) <= 1, 0.0, -np.inf)}),
]


@pytest.mark.parametrize("op,shapes,kw", OP_CASES, ids=[c[0] + str(i) for i, c in enumerate(OP_CASES)])
def test_op_gradients_match_central_differences(op, shapes, kw):
    assert T.grad_check(op, shapes, eps=1e-5, seed=3, **kw) < 1e-4


def test_grad_check_rejects_eps_out_of_range():
    with pytest.raises(ValueError):
        T.grad_check("relu", [(3,)], eps=1e-2)


def test_softmax_of_zeros_is_uniform():
    out = T.softmax(T.tensor(np.zeros(3)))
    np.testing.assert_allclose(out.data, np.full(3, 1 / 3), rtol=1e-6)


def test_identity_matmul():
    x = np.random.default_rng(0).normal(size=(3, 7)).astype(np.float32)
    out = T.matmul(T.tensor(np.eye(3, dtype=np.float32)), T.tensor(x))
    np.testing.assert_array_equal(out.data, x)


def _conv_oracle(x, w, b, stride, padding):
    """Plain nested-loop cross-correlation over time."""
    k, cin, cout = w.shape
    xp = np.pad(x, ((padding, padding), (0, 0)))
    n_out = (xp.shape[0] - k) // stride + 1
    out = np.zeros((n_out, cout))
    for t in range(n_out):
        for j in range(k):
            out[t] += xp[t * stride + j] @ w[j]
    return out + b


def _tconv_oracle(x, w, b, stride, padding):
    """Scatter each input frame through the kernel, then crop ``padding`` from both ends."""
    k, cin, cout = w.shape
    full = np.zeros(((x.shape[0] - 1) * stride + k, cout))
    for t in range(x.shape[0]):
        for j in range(k):
            full[t * stride + j] += x[t] @ w[j]
    return full[padding:full.shape[0] - padding] + b


@settings(max_examples=30, deadline=None)
@given(n=st.integers(3, 20), k=st.sampled_from([1, 3, 5]), stride=st.integers(1, 3), seed=st.integers(0, 10**6))
def test_conv1d_matches_sliding_window_oracle(n, k, stride, seed):
    rng = np.random.default_rng(seed)
    pad = k // 2
    x, w, b = rng.normal(size=(n, 2)), rng.normal(size=(k, 2, 3)), rng.normal(size=3)
    with T.precision("float64"):
        out = T.conv1d(T.tensor(x), T.tensor(w), T.tensor(b), stride=stride, padding=pad)
    np.testing.assert_allclose(out.data, _conv_oracle(x, w, b, stride, pad), atol=1e-12)


def test_conv1d_length_ten_stride_two_gives_five():
    with T.precision("float64"):
        out = T.conv1d(T.tensor(np.ones((10, 1))), T.tensor(np.ones((3, 1, 1))), stride=2, padding=1)
    assert out.shape == (5, 1)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 30), seed=st.integers(0, 10**6))
def test_transposed_conv_doubles_length_and_matches_scatter_oracle(n, seed):
    rng = np.random.default_rng(seed)
    x, w, b = rng.normal(size=(n, 2)), rng.normal(size=(4, 2, 3)), rng.normal(size=3)
    with T.precision("float64"):
        out = T.transposed_conv1d(T.tensor(x), T.tensor(w), T.tensor(b), stride=2, padding=1)
    assert out.shape == (2 * n, 3)
    np.testing.assert_allclose(out.data, _tconv_oracle(x, w, b, 2, 1), atol=1e-12)


def test_backward_of_sum_two_w():
    w = Parameter(np.array(3.0), name="w")
    grads = T.backward(T.sum(T.scale(w, 2.0)))
    assert grads["w"] == pytest.approx(2.0)


def test_l1_of_identical_inputs_has_zero_gradient():
    x = Parameter(np.array([1.0, -2.0, 0.0]), name="x")
    grads = T.backward(T.l1_loss(x, x.data.copy()))
    np.testing.assert_array_equal(grads["x"], 0.0)


def test_unreachable_parameter_gets_zero_gradient():
    used = Parameter(np.ones(2), name="used")
    unused = Parameter(np.ones(2), name="unused")
    grads = T.backward(T.sum(used))
    np.testing.assert_array_equal(grads["unused"] if "unused" in grads else np.zeros(2), 0.0)
    assert unused.grad is None or not np.any(unused.grad)


def test_non_scalar_loss_rejected():
    with pytest.raises(NonScalarLoss):
        T.backward(T.add(Parameter(np.ones(3)), 1.0))


def test_shape_mismatch_reports_shapes():
    with pytest.raises(ShapeMismatch) as err:
        T.matmul(T.tensor(np.ones((2, 3))), T.tensor(np.ones((4, 2))))
    assert "3" in str(err.value) and "4" in str(err.value)


def test_forward_is_deterministic():
    rng = np.random.default_rng(0)
    q, k, v = (T.tensor(rng.normal(size=(2, 6, 4)).astype(np.float32)) for _ in range(3))
    a = T.forward("scaled_dot_product_attention", q, k, v)
    b = T.forward("scaled_dot_product_attention", q, k, v)
    assert a.data.tobytes() == b.data.tobytes()


def test_default_dtype_is_float32_and_precision_switches():
    assert T.tensor(np.ones(2)).dtype == np.float32
    with T.precision("float64"):
        assert T.tensor(np.ones(2)).dtype == np.float64
    assert T.default_dtype() == np.float32


def test_getitem_with_repeated_indices_accumulates():
    with T.precision("float64"):
        x = Parameter(np.arange(4.0), name="x")
        grads = T.backward(T.sum(T.getitem(x, np.array([1, 1, 3]))))
    np.testing.assert_array_equal(grads["x"], [0, 2, 0, 1])


def test_composite_gradients_through_layers():
    from svsmu.layers import TransformerBlock
    with T.precision("float64"):
        rng = np.random.default_rng(1)
        blk = TransformerBlock(8, 2, rng)
        for p in blk.parameters():
            p.data = p.data + rng.normal(scale=0.3, size=p.shape)
        x = rng.normal(size=(5, 8))
        r = rng.normal(size=(5, 8))
        err = T.check_gradients(lambda: T.sum(T.mul(blk(T.tensor(x)), r)), blk.parameters(), eps=1e-6)
    assert err < 1e-4
