"""Scratch checks for the flow module, including the translation oracle."""
import struct
import sys
import time

sys.path.insert(0, "/root/pkg/src")

import numpy as np

from flowsr.flow import (
    FlowField,
    estimate_flow,
    endpoint_error,
    flo_read,
    flo_write,
    weight_map,
)

rng = np.random.default_rng(7)

# --- .flo hand-encoded 20-byte oracle ---
field = FlowField(np.array([[1.0]], np.float32), np.array([[-2.0]], np.float32))
flo_write(field, "/tmp/one.flo")
raw = open("/tmp/one.flo", "rb").read()
expect = struct.pack("<f", 202021.25) + struct.pack("<ii", 1, 1) + struct.pack("<ff", 1.0, -2.0)
assert len(raw) == 20 and raw == expect, raw.hex()
back = flo_read("/tmp/one.flo")
assert back.u[0, 0] == 1.0 and back.v[0, 0] == -2.0
print("flo 20-byte hand case ok")

# round trip with negative/fractional values
u = rng.normal(size=(5, 7)).astype(np.float32)
v = rng.normal(size=(5, 7)).astype(np.float32)
flo_write(FlowField(u, v), "/tmp/rt.flo")
rt = flo_read("/tmp/rt.flo")
assert (rt.u == u).all() and (rt.v == v).all()
print("flo round trip bit-exact ok")

# bad tag
open("/tmp/bad.flo", "wb").write(struct.pack("<f", 0.0) + raw[4:])
try:
    flo_read("/tmp/bad.flo")
    raise SystemExit("bad tag accepted")
except ValueError as e:
    assert str(e) == "not a flow file", e
# truncated
open("/tmp/trunc.flo", "wb").write(raw[:-4])
try:
    flo_read("/tmp/trunc.flo")
    raise SystemExit("truncation accepted")
except ValueError as e:
    assert str(e) == "corrupt flow file", e
print("flo error messages ok")

# --- weight map ---
wm = weight_map(FlowField(np.full((2, 2), 3.0), np.full((2, 2), 4.0)))
assert np.allclose(wm.w, 5.0)
wm = weight_map(FlowField(np.zeros((2, 2)), np.zeros((2, 2))))
assert (wm.w == 0).all()
wm = weight_map(FlowField(np.array([[1.0, 0.0]]), np.array([[0.0, -2.0]])))
assert np.allclose(wm.w, [[1.0, 2.0]])
print("weight map ok")

# --- endpoint error ---
f1 = FlowField(np.full((2, 2), 3.0), np.full((2, 2), 4.0))
assert endpoint_error(f1, f1) == 0.0
z = FlowField.zero(2, 2)
assert abs(endpoint_error(z, f1) - 5.0) < 1e-6
a = FlowField(np.array([[1.0, 3.0]]), np.array([[0.0, 0.0]]))
assert abs(endpoint_error(a, FlowField.zero(1, 2)) - 2.0) < 1e-6
print("endpoint error ok")

# --- estimate_flow trivial posts ---
f = rng.random((32, 32)).astype(np.float32)
out = estimate_flow(f, f, iterations=10)
assert np.abs(out.u).max() == 0.0 and np.abs(out.v).max() == 0.0
const_a = np.full((16, 16), 0.3, np.float32)
const_b = np.full((16, 16), 0.9, np.float32)
out = estimate_flow(const_a, const_b, iterations=37)
assert np.abs(out.u).max() == 0.0 and np.abs(out.v).max() == 0.0
print("trivial flow posts ok")


# --- translation oracle ---
def smooth_texture(h, w, seed, passes=3, k=7):
    g = np.random.default_rng(seed)
    t = g.random((h, w))
    for _ in range(passes):
        p = np.pad(t, k // 2, mode="edge")
        csum = np.cumsum(p, axis=0)
        t = (csum[k:] - csum[:-k])[:, k // 2 : k // 2 + w] / k if False else t
        # separable box blur
        out = np.zeros_like(t)
        pp = np.pad(t, ((k // 2, k // 2), (0, 0)), mode="edge")
        out = sum(pp[i : i + h] for i in range(k)) / k
        pp = np.pad(out, ((0, 0), (k // 2, k // 2)), mode="edge")
        t = sum(pp[:, i : i + w] for i in range(k)) / k
    t -= t.min()
    t /= max(t.max(), 1e-9)
    return t.astype(np.float32)


h = w = 128
tex = smooth_texture(h, w + 8, seed=3)
frame_a = tex[:, 4 : 4 + w]
frame_b = tex[:, 3 : 3 + w]  # content shifted right by 1 -> u = +1

t0 = time.time()
est = estimate_flow(frame_a, frame_b, smoothness=15.0, iterations=200)
dt = time.time() - t0
du = est.u.astype(np.float64) - 1.0
dv = est.v.astype(np.float64)
epe = np.sqrt(du * du + dv * dv)
mh, mw = h // 10, w // 10
interior = epe[mh : h - mh, mw : w - mw]
print(f"translation oracle: interior mean EPE {interior.mean():.4f} px  "
      f"(full {epe.mean():.4f}), {dt:.2f}s / 200 iters")
print(f"  u stats interior: mean {est.u[mh:-mh, mw:-mw].mean():.4f} "
      f"min {est.u[mh:-mh, mw:-mw].min():.4f} max {est.u[mh:-mh, mw:-mw].max():.4f}")

# --- brightness shift invariance ---
est2 = estimate_flow(frame_a + 0.25, frame_b + 0.25, smoothness=15.0, iterations=50)
est1 = estimate_flow(frame_a, frame_b, smoothness=15.0, iterations=50)
assert np.allclose(est1.u, est2.u, atol=1e-4) and np.allclose(est1.v, est2.v, atol=1e-4)
print("brightness shift invariance ok")

# color input accepted
c = np.stack([frame_a, frame_a, frame_a])
est3 = estimate_flow(c, np.stack([frame_b, frame_b, frame_b]), iterations=5)
print("color luma path ok")
