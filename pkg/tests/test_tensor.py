import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lact import tensor as T
from lact.tensor import ShapeError, Tensor


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def param(rng, *shape, low=-1.0, high=1.0):
    return Tensor(rng.uniform(low, high, size=shape), requires_grad=True)


# ---------------------------------------------------------------------------
# elementwise and reductions
# ---------------------------------------------------------------------------

def test_abs_values():
    np.testing.assert_array_equal(T.elementwise("abs", Tensor([-1.0, 2.0])).data, [1.0, 2.0])


def test_sigmoid_at_zero():
    assert T.elementwise("sigmoid", Tensor([0.0])).data[0] == 0.5


def test_sigmoid_extreme_inputs_stay_finite():
    y = T.sigmoid(Tensor([-800.0, 800.0]))
    np.testing.assert_array_equal(y.data, [0.0, 1.0])


def test_square_derivative_by_hand():
    x = Tensor([3.0], requires_grad=True)
    T.elementwise("mul", x, x).sum().backward()
    assert x.grad[0] == 6.0


def test_abs_subgradient_at_zero_is_zero():
    x = Tensor([0.0, -2.0, 2.0], requires_grad=True)
    T.absolute(x).sum().backward()
    np.testing.assert_array_equal(x.grad, [0.0, -1.0, 1.0])


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4,\)"):
        T.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros(4)))


def test_scalar_broadcast():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    (x * 3.0).sum().backward()
    np.testing.assert_array_equal(x.grad, np.full((2, 2), 3.0))


def test_unknown_elementwise_op():
    with pytest.raises(ValueError):
        T.elementwise("tanh", Tensor([1.0]))


def test_reductions():
    a = Tensor([1.0, 2.0, 3.0])
    assert T.reduce("sum", a).item() == 6.0
    assert T.reduce("mean", a).item() == 2.0


def test_mean_gradient_is_one_over_n():
    x = Tensor(np.arange(4.0), requires_grad=True)
    T.reduce("mean", x).backward()
    np.testing.assert_array_equal(x.grad, np.full(4, 0.25))


def test_empty_reduction_raises():
    with pytest.raises(ShapeError):
        T.reduce_sum(Tensor(np.zeros(0)))


def test_non_finite_data_rejected():
    with pytest.raises(FloatingPointError):
        Tensor([np.nan])


# ---------------------------------------------------------------------------
# tape semantics
# ---------------------------------------------------------------------------

def test_shared_input_accumulates_both_paths():
    # f = x*y + x  =>  df/dx = y + 1, df/dy = x
    x = Tensor([2.0], requires_grad=True)
    y = Tensor([5.0], requires_grad=True)
    f = T.add(T.mul(x, y), x)
    f.sum().backward()
    assert x.grad[0] == 6.0
    assert y.grad[0] == 2.0


def test_diamond_graph_visits_each_node_once():
    x = Tensor([1.5], requires_grad=True)
    h = T.mul(x, 2.0)
    out = T.add(T.mul(h, h), h)  # 4x^2 + 2x -> 8x + 2
    tape = T.Tape.trace(out)
    assert len({id(n) for n in tape.nodes}) == len(tape.nodes)
    out.sum().backward()
    assert x.grad[0] == pytest.approx(14.0)


def test_tape_order_is_topological():
    x = Tensor([1.0], requires_grad=True)
    out = T.sigmoid(T.mul(T.add(x, 1.0), x))
    tape = T.Tape.trace(out)
    pos = {id(n): k for k, n in enumerate(tape.nodes)}
    for node in tape.nodes:
        for parent in node._parents:
            if parent.requires_grad:
                assert pos[id(parent)] < pos[id(node)]


def test_forward_is_bitwise_deterministic(rng):
    x = rng.standard_normal((3, 9, 9))
    k = rng.standard_normal((4, 3, 3, 3))
    a = T.gelu(T.conv2d(Tensor(x), Tensor(k), padding=1)).data
    b = T.gelu(T.conv2d(Tensor(x), Tensor(k), padding=1)).data
    assert a.tobytes() == b.tobytes()


# ---------------------------------------------------------------------------
# conv2d
# ---------------------------------------------------------------------------

def test_conv_full_overlap_sum():
    out = T.conv2d(Tensor(np.ones((1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))))
    np.testing.assert_array_equal(out.data, [[[9.0]]])


def test_conv_identity_kernel(rng):
    x = rng.standard_normal((1, 5, 6))
    k = np.zeros((1, 1, 3, 3))
    k[0, 0, 1, 1] = 1.0
    np.testing.assert_array_equal(T.conv2d(Tensor(x), Tensor(k), padding=1).data, x)


def test_conv_matches_direct_loop(rng):
    x = rng.standard_normal((4, 7, 8))
    k = rng.standard_normal((6, 2, 3, 2))
    out = T.conv2d(Tensor(x), Tensor(k), padding=(1, 0), stride=(2, 1), groups=2).data
    xp = np.pad(x, ((0, 0), (1, 1), (0, 0)))
    ref = np.zeros_like(out)
    for o in range(6):
        g = o // 3
        for i in range(out.shape[1]):
            for j in range(out.shape[2]):
                patch = xp[2 * g:2 * g + 2, 2 * i:2 * i + 3, j:j + 2]
                ref[o, i, j] = np.sum(patch * k[o])
    np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)


def test_conv_nonpositive_output_names_axis():
    with pytest.raises(ShapeError, match="width"):
        T.conv2d(Tensor(np.ones((1, 5, 2))), Tensor(np.ones((1, 1, 3, 3))))


def test_conv_group_mismatch():
    with pytest.raises(ShapeError):
        T.conv2d(Tensor(np.ones((3, 5, 5))), Tensor(np.ones((2, 3, 1, 1))), groups=2)


@pytest.mark.parametrize("groups,stride,padding,batched", [
    (1, 1, 0, False), (1, 2, 1, True), (3, 1, 3, False), (3, 2, 1, True),
])
def test_conv_gradients_match_finite_differences(rng, groups, stride, padding, batched):
    shape = (2, 3, 7, 6) if batched else (3, 7, 6)
    x = param(rng, *shape)
    k = param(rng, 6 if groups == 1 else 3, 3 // groups, 3, 3)
    b = param(rng, k.shape[0])
    w = rng.standard_normal(T.conv2d(x, k, b, padding, stride, groups).shape)
    fn = lambda: T.reduce_sum(T.conv2d(x, k, b, padding, stride, groups) * w)  # noqa: E731
    assert T.gradient_check(fn, [x, k, b], n_samples=20, rng=rng) <= 1e-4


# ---------------------------------------------------------------------------
# resize
# ---------------------------------------------------------------------------

def test_resize_same_size_is_identity(rng):
    x = rng.standard_normal((2, 5, 4))
    np.testing.assert_array_equal(T.resize_bilinear(Tensor(x), 5, 4).data, x)


def test_resize_from_single_pixel_is_constant():
    out = T.resize_bilinear(Tensor([[[0.7]]]), 3, 5).data
    np.testing.assert_allclose(out, np.full((1, 3, 5), 0.7))


def test_resize_row_upsample_by_hand():
    # sample positions (d + 0.5)/2 - 0.5 = -0.25, 0.25, 0.75, 1.25 -> clamp ends
    out = T.resize_bilinear(Tensor([[[0.0, 1.0]]]), 1, 4).data
    np.testing.assert_allclose(out[0, 0], [0.0, 0.25, 0.75, 1.0])


def test_resize_gradient(rng):
    x = param(rng, 2, 4, 5)
    w = rng.standard_normal((2, 9, 7))
    fn = lambda: T.reduce_sum(T.resize_bilinear(x, 9, 7) * w)  # noqa: E731
    assert T.gradient_check(fn, [x], rng=rng) <= 1e-6


def test_resize_rejects_empty_target():
    with pytest.raises(ValueError):
        T.resize_bilinear(Tensor(np.ones((1, 2, 2))), 0, 3)


# ---------------------------------------------------------------------------
# linear operators
# ---------------------------------------------------------------------------

def test_linear_op_scaling_gradient():
    op = T.register_linear_op(lambda v: 2.0 * v, lambda v: 2.0 * v)
    x = Tensor(np.ones(5), requires_grad=True)
    T.reduce_sum(op(x)).backward()
    np.testing.assert_array_equal(x.grad, np.full(5, 2.0))


def test_transpose_dot_product_test_exact():
    err = T.dot_product_test(lambda v: v.T, lambda v: v.T, (3, 4), (4, 3))
    assert err <= 1e-15


def test_dense_matrix_dot_product_test(rng):
    M = rng.standard_normal((7, 5))
    err = T.dot_product_test(lambda v: M @ v, lambda v: M.T @ v, (5,), (7,), trials=10, rng=rng)
    assert err <= 1e-6


def test_dot_product_test_detects_wrong_adjoint(rng):
    M = rng.standard_normal((6, 6))
    assert T.dot_product_test(lambda v: M @ v, lambda v: M @ v, (6,), (6,), rng=rng) > 1e-3


def test_linear_op_backward_uses_adjoint(rng):
    M = rng.standard_normal((4, 3))
    op = T.register_linear_op(lambda v: M @ v, lambda v: M.T @ v)
    x = param(rng, 3)
    w = rng.standard_normal(4)
    fn = lambda: T.reduce_sum(op(x) * w)  # noqa: E731
    assert T.gradient_check(fn, [x], rng=rng) <= 1e-6


# ---------------------------------------------------------------------------
# gradient checks for the remaining differentiable ops
# ---------------------------------------------------------------------------

def _away_from_kinks(rng, *shape):
    v = rng.uniform(0.2, 1.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)
    return Tensor(v, requires_grad=True)


@pytest.mark.parametrize("op", ["abs", "sigmoid", "gelu", "relu", "neg"])
def test_unary_gradients(rng, op):
    x = _away_from_kinks(rng, 5, 6)
    w = rng.standard_normal((5, 6))
    fn = lambda: T.reduce_sum(T.elementwise(op, x) * w)  # noqa: E731
    assert T.gradient_check(fn, [x], rng=rng) <= 1e-3


@pytest.mark.parametrize("op", ["add", "sub", "mul"])
def test_binary_gradients_with_broadcast(rng, op):
    a = param(rng, 3, 4, 5)
    b = param(rng, 3, 1, 1)
    w = rng.standard_normal((3, 4, 5))
    fn = lambda: T.reduce_sum(T.elementwise(op, a, b) * w)  # noqa: E731
    assert T.gradient_check(fn, [a, b], rng=rng) <= 1e-3


def test_layer_norm_gradient(rng):
    x = param(rng, 2, 4, 3, 5)
    g = param(rng, 4)
    b = param(rng, 4)
    w = rng.standard_normal((2, 4, 3, 5))
    fn = lambda: T.reduce_sum(T.layer_norm_channels(x, g, b) * w)  # noqa: E731
    assert T.gradient_check(fn, [x, g, b], rng=rng) <= 1e-3


def test_layer_norm_normalises_channels(rng):
    x = Tensor(rng.standard_normal((6, 4, 4)) * 5 + 3)
    y = T.layer_norm_channels(x, Tensor(np.ones(6)), Tensor(np.zeros(6)), eps=0.0).data
    np.testing.assert_allclose(y.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(y.std(axis=0), 1.0, atol=1e-9)


def test_matmul_reshape_transpose_getitem_gradients(rng):
    a = param(rng, 4, 6)
    b = param(rng, 6, 3)
    fn = lambda: T.reduce_mean(T.transpose(T.reshape(T.matmul(a, b), (2, 6)))[1:, ::2] * 1.7)  # noqa: E731
    assert T.gradient_check(fn, [a, b], rng=rng) <= 1e-6


def test_fancy_index_gradient_accumulates():
    x = Tensor(np.arange(3.0), requires_grad=True)
    T.reduce_sum(x[np.array([0, 0, 2])]).backward()
    np.testing.assert_array_equal(x.grad, [2.0, 0.0, 1.0])


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=1, max_size=8),
       st.floats(-3, 3, allow_nan=False))
def test_sum_of_scaled_input_gradient_is_constant(values, c):
    x = Tensor(values, requires_grad=True)
    T.reduce_sum(T.mul(x, c)).backward()
    np.testing.assert_allclose(x.grad, np.full(len(values), c))
