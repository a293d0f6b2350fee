"""Tests for the tensor engine, convolution ops and gradient checking."""

import numpy as np
import pytest

from oracles import conv2d_loop, transposed_conv2d_loop
from slimvc.errors import ShapeError
from slimvc.gradcheck import grad_check
from slimvc.ops import concat_channels, conv2d, leaky_relu, same_padding, transposed_conv2d
from slimvc.tensor import (
    ComputeGraph,
    Parameter,
    Tensor,
    channel_split,
    leading_slice,
    mean_all,
    mul,
    square,
    sub,
    sum_all,
)


def _random(rng, *shape):
    return rng.standard_normal(shape).astype(np.float32)


def test_conv2d_all_ones():
    """3x3 ones against a 3x3 ones kernel sums to 9."""
    out = conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))))
    assert out.shape == (1, 1, 1, 1)
    assert out.data.item() == 9.0


def test_conv2d_identity_kernel():
    """A 1x1 unit kernel returns its input."""
    x = _random(np.random.default_rng(0), 2, 1, 5, 4)
    out = conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))))
    np.testing.assert_array_equal(out.data, x)


def test_conv2d_matches_nested_loops_on_example():
    """1x2x5x5 input, 3x2x3x3 kernel, stride 2, padding 1."""
    rng = np.random.default_rng(1)
    x, w, b = _random(rng, 1, 2, 5, 5), _random(rng, 3, 2, 3, 3), _random(rng, 3)
    expected, _ = conv2d_loop(x, w, b, stride=2, padding=(1, 1, 1, 1))
    out = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, padding=1)
    np.testing.assert_array_equal(out.data, expected)


def test_convolutions_match_nested_loops_on_random_instances():
    """Bitwise agreement with the scalar references over many small shapes."""
    rng = np.random.default_rng(2)
    for _ in range(100):
        batch, cin, cout = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
        kernel, stride = int(rng.integers(1, 4)), int(rng.integers(1, 3))
        height, width = int(rng.integers(kernel, 7)), int(rng.integers(kernel, 7))
        padding = tuple(int(p) for p in rng.integers(0, 2, size=4))
        x = _random(rng, batch, cin, height, width)
        w = _random(rng, cout, cin, kernel, kernel)
        b = _random(rng, cout)
        expected, _ = conv2d_loop(x, w, b, stride, padding)
        np.testing.assert_array_equal(conv2d(Tensor(x), Tensor(w), Tensor(b), stride, padding).data, expected)

        wt = _random(rng, cin, cout, kernel, kernel)
        crop = min(kernel - 1, 1)
        padding_t = (crop, 0, 0, crop)
        expected, _ = transposed_conv2d_loop(x, wt, b, stride, padding_t)
        out = transposed_conv2d(Tensor(x), Tensor(wt), Tensor(b), stride, padding_t)
        np.testing.assert_array_equal(out.data, expected)


def test_transposed_conv2d_single_scatter():
    """One input pixel scattered by a 2x2 ones kernel at stride 2."""
    out = transposed_conv2d(Tensor(np.ones((1, 1, 1, 1))), Tensor(np.ones((1, 1, 2, 2))), stride=2)
    np.testing.assert_array_equal(out.data, np.ones((1, 1, 2, 2), dtype=np.float32))


def test_transposed_conv2d_inverts_strided_conv_shape():
    """conv (stride 2) then transposed conv (stride 2) restores 8x8."""
    rng = np.random.default_rng(3)
    x = Tensor(_random(rng, 1, 1, 8, 8))
    down = conv2d(x, Tensor(_random(rng, 4, 1, 3, 3)), stride=2,
                  padding=(*same_padding(3, 2, 8), *same_padding(3, 2, 8)))
    assert down.shape == (1, 4, 4, 4)
    up = transposed_conv2d(down, Tensor(_random(rng, 4, 2, 3, 3)), stride=2, padding=(0, 1, 0, 1))
    assert up.shape == (1, 2, 8, 8)


def test_conv2d_rejects_channel_mismatch():
    with pytest.raises(ShapeError, match="input channels 2"):
        conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))


def test_conv2d_rejects_oversized_kernel():
    with pytest.raises(ShapeError, match="kernel height"):
        conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 3, 3))))


def test_leaky_relu_values_and_gradient():
    """Slope 0.01: -1 maps to -0.01, 2 stays 2, gradient at -3 is the slope."""
    out = leaky_relu(Tensor(np.array([-1.0, 2.0], dtype=np.float32)), 0.01)
    np.testing.assert_allclose(out.data, [-0.01, 2.0], rtol=1e-6)

    graph = ComputeGraph()
    p = Parameter("x", np.array([-3.0]))
    grads = graph.backward(sum_all(leaky_relu(graph.parameter(p), 0.01)))
    np.testing.assert_allclose(grads[p], [0.01], rtol=1e-6)

    with pytest.raises(ShapeError):
        leaky_relu(out, 1.5)


def test_concat_channels_layout_and_gradient():
    """a fills the leading channels; gradients split back additively."""
    rng = np.random.default_rng(4)
    a, b = Parameter("a", _random(rng, 1, 2, 3, 3)), Parameter("b", _random(rng, 1, 3, 3, 3))
    weights = _random(rng, 1, 5, 3, 3)
    graph = ComputeGraph()
    joined = concat_channels(graph.parameter(a), graph.parameter(b))
    assert joined.shape == (1, 5, 3, 3)
    np.testing.assert_array_equal(joined.data[:, :2], a.data)

    grads = graph.backward(sum_all(mul(joined, Tensor(weights))))
    np.testing.assert_array_equal(grads[a], weights[:, :2])
    np.testing.assert_array_equal(grads[b], weights[:, 2:])

    x = Tensor(a.data)
    head, _ = channel_split(concat_channels(x, Tensor(np.zeros_like(a.data))), 2)
    np.testing.assert_array_equal(head.data, a.data)

    with pytest.raises(ShapeError):
        concat_channels(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 3, 2))))


def test_backward_linear_and_mean_square():
    """sum(w·x) gives x; mean((x-y)²) gives 2(x-y)/N."""
    rng = np.random.default_rng(5)
    x, y = _random(rng, 2, 3), _random(rng, 2, 3)
    w = Parameter("w", _random(rng, 2, 3))
    graph = ComputeGraph()
    grads = graph.backward(sum_all(mul(graph.parameter(w), Tensor(x))))
    np.testing.assert_array_equal(grads[w], x)

    p = Parameter("x", x)
    graph = ComputeGraph()
    grads = graph.backward(mean_all(square(sub(graph.parameter(p), Tensor(y)))))
    np.testing.assert_allclose(grads[p], 2 * (x - y) / x.size, rtol=1e-5)


def test_backward_zero_for_untouched_leaves_and_rejects_vectors():
    graph = ComputeGraph()
    used, unused = Parameter("used", np.ones(3)), Parameter("unused", np.ones(4))
    t = graph.parameter(used)
    graph.parameter(unused)
    grads = graph.backward(sum_all(t))
    assert set(grads.parameters()) == {used, unused}
    np.testing.assert_array_equal(grads[unused], np.zeros(4))

    with pytest.raises(ShapeError, match="scalar"):
        graph.backward(t)


def test_leading_slice_gradient_is_zero_outside_block():
    graph = ComputeGraph()
    p = Parameter("w", np.ones((4, 3)))
    grads = graph.backward(sum_all(leading_slice(graph.parameter(p), (2, 2))))
    expected = np.zeros((4, 3), dtype=np.float32)
    expected[:2, :2] = 1
    np.testing.assert_array_equal(grads[p], expected)


def test_inference_mode_records_nothing():
    """Ops on graph-less tensors produce graph-less results."""
    out = conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 1, 1))))
    assert out.graph is None and not out.requires_grad


def test_forward_is_deterministic():
    rng = np.random.default_rng(6)
    x, w = Tensor(_random(rng, 2, 4, 9, 9)), Tensor(_random(rng, 5, 4, 5, 5))
    first = conv2d(x, w, stride=2, padding=2).data
    second = conv2d(x, w, stride=2, padding=2).data
    assert first.tobytes() == second.tobytes()


def test_grad_check_linear_map_is_exact():
    rng = np.random.default_rng(7)
    x = _random(rng, 3, 4)
    w = Parameter("w", _random(rng, 3, 4))
    error = grad_check(lambda graph: sum_all(mul(graph.parameter(w), Tensor(x))), [w])
    assert error <= 1e-6


def test_grad_check_convolutions():
    """Gradients of both convolutions w.r.t. input, weight and bias."""
    rng = np.random.default_rng(8)
    x = Parameter("x", 0.5 * _random(rng, 1, 2, 5, 5))
    w = Parameter("w", 0.5 * _random(rng, 3, 2, 3, 3))
    wt = Parameter("wt", 0.5 * _random(rng, 2, 3, 3, 3))
    b = Parameter("b", _random(rng, 3))
    weights = _random(rng, 1, 3, 3, 3)
    weights_t = _random(rng, 1, 3, 10, 10)

    def conv_loss(graph):
        out = conv2d(graph.parameter(x), graph.parameter(w), graph.parameter(b), stride=2, padding=1)
        return sum_all(mul(square(out), Tensor(weights)))

    def deconv_loss(graph):
        out = transposed_conv2d(graph.parameter(x), graph.parameter(wt), graph.parameter(b), stride=2,
                                padding=(0, 1, 0, 1))
        return sum_all(mul(out, Tensor(weights_t)))

    assert grad_check(conv_loss, [x, w, b]) < 1e-3
    assert grad_check(deconv_loss, [x, wt, b]) < 1e-3


def test_grad_check_rejects_nonpositive_epsilon():
    w = Parameter("w", np.ones(2))
    with pytest.raises(ShapeError):
        grad_check(lambda graph: sum_all(graph.parameter(w)), [w], epsilon=0.0)
