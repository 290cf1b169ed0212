"""Scratch smoke test for the autograd core (not part of the test suite)."""
import sys

sys.path.insert(0, "/root/pkg/src")

import numpy as np

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
from flowsr.gradcheck import away_from_kinks, check_gradient
from flowsr.optim import Adam

rng = np.random.default_rng(0)

# --- basic arithmetic and backward ---
a = Parameter(rng.normal(size=(1, 1, 2, 2)).astype(np.float32), "a")
b = Parameter(rng.normal(size=(1, 1, 2, 2)).astype(np.float32), "b")
with Tape() as t:
    loss = ((a * b + a - b) * 2.0).mean()
backward(t, loss)
expect_da = (b.data + 1.0) * 2.0 / 4.0
expect_db = (a.data - 1.0) * 2.0 / 4.0
assert np.allclose(a.grad, expect_da, atol=1e-6), "a grad wrong"
assert np.allclose(b.grad, expect_db, atol=1e-6), "b grad wrong"
print("arith backward ok")

# double backward rejected
try:
    backward(t, loss)
    raise SystemExit("tape reuse not rejected")
except RuntimeError as e:
    assert "consumed" in str(e)
print("tape reuse rejected ok")

# gradient accumulation across two uses
x = Parameter(np.ones((1, 1, 1, 1), np.float32), "x")
with Tape() as t:
    y = (x + x).sum()
backward(t, y)
assert float(x.grad) == 2.0
print("accumulation ok")

# --- conv2d vs loop oracle ---
def conv_oracle(x, w, bias, stride, pad):
    n, c, h, ww = x.shape
    oc, ic, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (ww + 2 * pad - kw) // stride + 1
    out = np.zeros((n, oc, oh, ow), np.float64)
    for ni in range(n):
        for o in range(oc):
            for i in range(oh):
                for j in range(ow):
                    patch = xp[ni, :, i * stride : i * stride + kh, j * stride : j * stride + kw]
                    out[ni, o, i, j] = np.sum(patch.astype(np.float64) * w[o]) + bias[o]
    return out

for stride, pad in [(1, 0), (1, 1), (2, 1), (2, 0)]:
    x = rng.normal(size=(2, 3, 6, 7)).astype(np.float32)
    w = rng.normal(size=(4, 3, 3, 3)).astype(np.float32)
    bias = rng.normal(size=(4,)).astype(np.float32)
    got = conv2d(Tensor(x), Tensor(w), Tensor(bias), stride=stride, zero_pad=pad)
    want = conv_oracle(x, w, bias, stride, pad)
    assert got.shape == want.shape, (got.shape, want.shape)
    assert np.allclose(got.data, want, atol=1e-4), f"conv forward mismatch s={stride} p={pad}"
print("conv forward vs oracle ok")

# conv gradcheck, all three inputs
x = rng.uniform(-1, 1, size=(2, 2, 5, 5)).astype(np.float32)
w = rng.uniform(-1, 1, size=(3, 2, 3, 3)).astype(np.float32)
bias = rng.uniform(-1, 1, size=(3,)).astype(np.float32)
fn = lambda xx, ww, bb: conv2d(xx, ww, bb, stride=2, zero_pad=1).mean()
for wrt in range(3):
    e = check_gradient(fn, [x, w, bias], wrt=wrt, name=f"conv wrt{wrt}")
    print(f"conv gradcheck wrt={wrt} worst rel err {e:.2e}")

# --- leaky_relu ---
x = away_from_kinks(rng.uniform(-1, 1, size=(1, 2, 4, 4)).astype(np.float32))
e = check_gradient(lambda t: leaky_relu(t, 0.2).mean(), [x], name="leaky_relu")
print(f"leaky_relu gradcheck worst rel err {e:.2e}")
v = Tensor(np.array([[[[-2.0, 0.0, 3.0]]]], np.float32))
out = leaky_relu(v, 0.1)
assert np.allclose(out.data, [[[[-0.2, 0.0, 3.0]]]]), out.data

# --- softplus ---
x = rng.uniform(-1, 1, size=(1, 1, 4, 4)).astype(np.float32)
e = check_gradient(lambda t: softplus(t).mean(), [x], name="softplus")
print(f"softplus gradcheck worst rel err {e:.2e}")
big = Tensor(np.array([[[[100.0, -100.0]]]], np.float32))
sp = softplus(big)
assert np.isfinite(sp.data).all() and abs(sp.data[0, 0, 0, 0] - 100.0) < 1e-4

# --- spatial_mean ---
x = rng.uniform(-1, 1, size=(2, 3, 4, 5)).astype(np.float32)
e = check_gradient(lambda t: spatial_mean(t).sum(), [x], name="spatial_mean")
print(f"spatial_mean gradcheck worst rel err {e:.2e}")

# --- bilinear_warp hand case ---
class Field:
    def __init__(self, u, v):
        self.u = np.asarray(u, np.float32)
        self.v = np.asarray(v, np.float32)

row = np.array([[[[0.0, 2.0, 4.0]]]], np.float32)
f = Field(np.full((1, 3), 0.5, np.float32), np.zeros((1, 3), np.float32))
out = bilinear_warp(Tensor(row), f)
assert np.allclose(out.data, [[[[1.0, 3.0, 4.0]]]]), out.data
print("warp half-pixel hand case ok")

# zero flow: bit-identical
src = rng.normal(size=(1, 3, 5, 5)).astype(np.float32)
zf = Field(np.zeros((5, 5), np.float32), np.zeros((5, 5), np.float32))
out = bilinear_warp(Tensor(src), zf)
assert (out.data == src).all(), "zero-flow warp not bit-identical"
print("zero-flow identity ok")

# integer flow moves content exactly
src = np.zeros((1, 1, 1, 4), np.float32)
src[0, 0, 0] = [10.0, 20.0, 30.0, 40.0]
f = Field(np.ones((1, 4), np.float32), np.zeros((1, 4), np.float32))
out = bilinear_warp(Tensor(src), f)
assert np.allclose(out.data[0, 0, 0], [20.0, 30.0, 40.0, 40.0]), out.data

# warp gradcheck (fractional flow, border clamping active)
src = rng.uniform(-1, 1, size=(2, 2, 5, 6)).astype(np.float32)
uu = rng.uniform(-1.5, 1.5, size=(5, 6)).astype(np.float32)
vv = rng.uniform(-1.5, 1.5, size=(5, 6)).astype(np.float32)
fld = Field(uu, vv)
e = check_gradient(lambda t: bilinear_warp(t, fld).mean(), [src], name="bilinear_warp")
print(f"warp gradcheck worst rel err {e:.2e}")

# per-item flows
flds = [Field(uu, vv), Field(-uu, -vv)]
out = bilinear_warp(Tensor(src), flds)
assert out.shape == src.shape

# --- warp grad is a mass-preserving scatter ---
src = rng.normal(size=(1, 1, 4, 4)).astype(np.float32)
fld = Field(np.full((4, 4), 0.3, np.float32), np.full((4, 4), -0.2, np.float32))
with Tape() as t:
    s = Tensor(src, requires_grad=True)
    out = bilinear_warp(s, fld).sum()
backward(t, out)
assert abs(s.grad.sum() - 16.0) < 1e-4, s.grad.sum()
print("warp scatter mass ok")

# --- Adam ---
p = Parameter(np.zeros((1, 1, 1, 2), np.float32), "p")
opt = Adam([p], lr=0.5)
p.grad[...] = np.array([[[[1.0, -3.0]]]], np.float32)
opt.step()
# first step magnitude ~ lr for any nonzero grad
assert np.allclose(np.abs(p.data), 0.5, atol=1e-5), p.data
assert p.data[0, 0, 0, 0] < 0 < p.data[0, 0, 0, 1]
opt.zero_grad()
opt.step()  # zero grad: m decays, tiny drift allowed but v also decays
print("adam ok", p.data.ravel())

# nontrainable params excluded
q = Parameter(np.ones((1,), np.float32).reshape(1, 1, 1, 1), "q", trainable=False)
opt2 = Adam([p, q], lr=0.1)
assert len(opt2.params) == 1

# --- inference records nothing ---
x = Tensor(rng.normal(size=(1, 2, 4, 4)).astype(np.float32))
w = Parameter(rng.normal(size=(2, 2, 3, 3)).astype(np.float32), "w")
bb = Parameter(np.zeros(2, np.float32), "b")
y = conv2d(x, w, bb, zero_pad=1)  # no tape active
assert y._tape is None and not y.requires_grad
print("no-tape inference ok")

# detached tensors block gradient flow
with Tape() as t:
    z = conv2d(x, w, bb, zero_pad=1)
    zz = (z.detach() * 1.0).sum() + (z * 0.0).sum()
backward(t, zz)
assert np.allclose(w.grad, 0.0)
print("detach ok")

print("ALL SMOKE TESTS PASSED")
