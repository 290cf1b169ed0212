import numpy as np
import pytest

import flowsr.autograd as ag
from flowsr.autograd import (
    Parameter,
    Tape,
    Tensor,
    backward,
    bilinear_warp,
    conv2d,
    leaky_relu,
    softplus,
    spatial_mean,
)
from flowsr.flow import FlowField
from flowsr.gradcheck import GradCheckFailure, away_from_kinks, check_gradient

rng = np.random.default_rng(42)


def rnd(*shape):
    return rng.uniform(-1.0, 1.0, shape).astype(np.float32)


# ---------------------------------------------------------------------------
# tensor basics
# ---------------------------------------------------------------------------


def test_tensor_defaults_float32():
    t = Tensor([[1.0, 2.0]])
    assert t.dtype == np.float32
    assert t.shape == (1, 2)


def test_binary_ops_values():
    a, b = Tensor(rnd(2, 3)), Tensor(rnd(2, 3))
    assert np.allclose((a + b).data, a.data + b.data)
    assert np.allclose((a - b).data, a.data - b.data)
    assert np.allclose((a * b).data, a.data * b.data)
    assert np.allclose((-a).data, -a.data)
    assert np.allclose((a * 2.5).data, a.data * 2.5)
    assert np.allclose((2.5 * a).data, a.data * 2.5)


def test_binary_shape_mismatch_rejected():
    a, b = Tensor(rnd(2, 3)), Tensor(rnd(3, 2))
    with pytest.raises(ValueError):
        a + b


def test_reductions():
    a = Tensor(rnd(2, 3))
    assert np.isclose(a.sum().item(), a.data.sum())
    assert np.isclose(a.mean().item(), a.data.mean())


def test_gradients_accumulate_when_tensor_reused():
    x = Tensor(np.array([3.0]), requires_grad=True)
    with Tape() as tape:
        y = x * x  # dy/dx = x + x = 6
        backward(tape, y.sum())
    assert np.allclose(x.grad, [6.0])


def test_detach_blocks_gradient():
    x = Tensor(np.array([3.0]), requires_grad=True)
    with Tape() as tape:
        y = (x * 1.0 + x.detach() * 2.0).sum()
        backward(tape, y)
    assert np.allclose(x.grad, [1.0])  # only the live path contributes


def test_tape_single_use():
    x = Tensor(np.array([1.0]), requires_grad=True)
    with Tape() as tape:
        y = (x * 2.0).sum()
    backward(tape, y)
    with pytest.raises(RuntimeError):
        backward(tape, y)


def test_backward_foreign_loss_rejected():
    x = Tensor(np.array([1.0]), requires_grad=True)
    with Tape():
        y = (x * 2.0).sum()
    with Tape() as other:
        with pytest.raises(ValueError):
            backward(other, y)


def test_parameter_has_eager_grad_buffer():
    p = Parameter(rnd(2, 2))
    assert p.grad is not None and not p.grad.any()
    p.grad += 1.0
    p.zero_grad()
    assert not p.grad.any()


# ---------------------------------------------------------------------------
# conv2d
# ---------------------------------------------------------------------------


def test_conv2d_output_shape():
    x = Tensor(rnd(2, 3, 8, 8))
    w = Tensor(rnd(5, 3, 3, 3))
    b = Tensor(rnd(5))
    assert conv2d(x, w, b, stride=1, zero_pad=1).shape == (2, 5, 8, 8)
    assert conv2d(x, w, b, stride=2, zero_pad=1).shape == (2, 5, 4, 4)
    assert conv2d(x, w, b, stride=1, zero_pad=0).shape == (2, 5, 6, 6)


def test_conv2d_matches_direct_correlation():
    x = Tensor(rnd(1, 2, 5, 5))
    w = Tensor(rnd(3, 2, 3, 3))
    b = Tensor(rnd(3))
    out = conv2d(x, w, b, stride=1, zero_pad=0).data
    want = np.zeros_like(out)
    for o in range(3):
        for i in range(3):
            for j in range(3):
                patch = x.data[0, :, i : i + 3, j : j + 3]
                want[0, o, i, j] = (patch * w.data[o]).sum() + b.data[o]
    assert np.allclose(out, want, atol=1e-5)


def test_conv2d_validation_messages():
    x = Tensor(rnd(1, 3, 5, 5))
    with pytest.raises(ValueError, match="channel"):
        conv2d(x, Tensor(rnd(2, 4, 3, 3)), Tensor(rnd(2)))
    with pytest.raises(ValueError, match="odd"):
        conv2d(x, Tensor(rnd(2, 3, 2, 2)), Tensor(rnd(2)))
    with pytest.raises(ValueError):
        conv2d(Tensor(rnd(3, 5, 5)), Tensor(rnd(2, 3, 3, 3)), Tensor(rnd(2)))


def test_conv2d_gradcheck_all_arguments():
    x = rng.uniform(-1, 1, (1, 2, 5, 5))
    w = rng.uniform(-1, 1, (3, 2, 3, 3))
    b = rng.uniform(-1, 1, (3,))
    fn = lambda a, c, d: conv2d(a, c, d, stride=1, zero_pad=1).mean()
    for wrt in range(3):
        check_gradient(fn, [x, w, b], wrt=wrt, name=f"conv arg {wrt}")


def test_conv2d_fault_hook_breaks_gradcheck():
    x = rng.uniform(-1, 1, (1, 2, 5, 5))
    w = rng.uniform(-1, 1, (2, 2, 3, 3))
    b = rng.uniform(-1, 1, (2,))
    fn = lambda a, c, d: conv2d(a, c, d).mean()
    ag._conv_backward_fault = 1.05
    try:
        with pytest.raises(GradCheckFailure):
            check_gradient(fn, [x, w, b], wrt=0)
    finally:
        ag._conv_backward_fault = 1.0
    check_gradient(fn, [x, w, b], wrt=0)


# ---------------------------------------------------------------------------
# activations and reductions
# ---------------------------------------------------------------------------


def test_leaky_relu_values_and_slope_range():
    x = Tensor(np.array([-2.0, 0.0, 3.0], np.float32))
    out = leaky_relu(x, 0.2).data
    assert np.allclose(out, [-0.4, 0.0, 3.0])
    with pytest.raises(ValueError):
        leaky_relu(x, -0.1)
    with pytest.raises(ValueError):
        leaky_relu(x, 1.5)


def test_softplus_extremes_stay_finite():
    x = Tensor(np.array([-80.0, 0.0, 80.0], np.float32))
    out = softplus(x).data
    assert np.all(np.isfinite(out))
    assert out[0] >= 0.0 and np.isclose(out[1], np.log(2.0)) and np.isclose(out[2], 80.0)


def test_activation_gradchecks():
    x = away_from_kinks(rng.uniform(-1, 1, (1, 1, 4, 4)))
    check_gradient(lambda t: leaky_relu(t, 0.2).mean(), [x], name="leaky_relu")
    check_gradient(lambda t: softplus(t).mean(), [x], name="softplus")
    check_gradient(lambda t: spatial_mean(t).sum(), [x], name="spatial_mean")


def test_spatial_mean_shape_and_value():
    x = Tensor(rnd(2, 3, 4, 5))
    out = spatial_mean(x)
    assert out.shape == (2, 3, 1, 1)
    assert np.allclose(out.data[:, :, 0, 0], x.data.mean(axis=(2, 3)))


# ---------------------------------------------------------------------------
# bilinear warp
# ---------------------------------------------------------------------------


def test_warp_zero_flow_bit_identical():
    src = Tensor(rnd(2, 3, 6, 7))
    out = bilinear_warp(src, [FlowField.zero(6, 7)] * 2)
    assert np.array_equal(out.data, src.data)


def test_warp_integer_shift_exact_in_range():
    src = Tensor(rnd(1, 1, 5, 8))
    flow = FlowField(np.full((5, 8), 2.0, np.float32), np.zeros((5, 8), np.float32))
    out = bilinear_warp(src, [flow]).data
    # out(x) = src(x + 2): exact for x + 2 in range
    assert np.array_equal(out[0, 0, :, :6], src.data[0, 0, :, 2:])


def test_warp_half_pixel_hand_case():
    src = Tensor(np.array([[[[1.0, 3.0, 4.0, 0.0]]]], np.float32))
    flow = FlowField(np.full((1, 4), 0.5, np.float32), np.zeros((1, 4), np.float32))
    out = bilinear_warp(src, [flow]).data[0, 0, 0]
    assert out[0] == 2.0 and out[1] == 3.5 and out[2] == 2.0


def test_warp_clamps_to_border():
    src = Tensor(rnd(1, 1, 4, 4))
    flow = FlowField(np.full((4, 4), 100.0, np.float32), np.zeros((4, 4), np.float32))
    out = bilinear_warp(src, [flow]).data
    assert np.allclose(out[0, 0], src.data[0, 0, :, -1:])


def test_warp_single_flow_broadcasts_over_batch():
    src = Tensor(rnd(3, 1, 4, 4))
    flow = FlowField(rnd(4, 4), rnd(4, 4))
    one = bilinear_warp(src, flow).data
    many = bilinear_warp(src, [flow, flow, flow]).data
    assert np.array_equal(one, many)


def test_warp_flow_count_mismatch_rejected():
    src = Tensor(rnd(2, 1, 4, 4))
    with pytest.raises(ValueError):
        bilinear_warp(src, [FlowField.zero(4, 4)])


def test_warp_gradcheck_source():
    flow = FlowField(rnd(5, 5) * 1.5, rnd(5, 5) * 1.5)
    x = rng.uniform(-1, 1, (1, 2, 5, 5))
    check_gradient(lambda t: bilinear_warp(t, [flow]).mean(), [x], name="warp")


def test_warp_source_gradient_sums_to_output_count():
    # each output pixel distributes unit weight over its (clamped) corners,
    # so the source gradient of sum(out) totals h*w per channel
    src = Tensor(rnd(1, 1, 6, 6), requires_grad=True)
    flow = FlowField(rnd(6, 6), rnd(6, 6))
    with Tape() as tape:
        out = bilinear_warp(src, [flow]).sum()
        backward(tape, out)
    assert np.isclose(src.grad.sum(), 36.0, atol=1e-3)
