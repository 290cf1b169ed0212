import struct

import numpy as np
import pytest

from flowsr.flow import (
    FlowField,
    WeightMap,
    endpoint_error,
    estimate_flow,
    flo_read,
    flo_write,
    weight_map,
)

rng = np.random.default_rng(3)


def shifted_pair(h=48, w=48, dx=1, dy=0, seed=0):
    """Two crops of one texture whose content moves by (dx, dy)."""
    r = np.random.default_rng(seed)
    t = r.random((h + abs(dy), w + abs(dx))).astype(np.float32)
    for _ in range(3):
        t = (t + np.roll(t, 1, 0) + np.roll(t, 1, 1)) / 3.0
    ox, oy = max(0, dx), max(0, dy)
    a = t[oy : oy + h, ox : ox + w]
    b = t[oy - dy : oy - dy + h, ox - dx : ox - dx + w]
    return a[None], b[None]


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


def test_flowfield_validates_finite_and_shape():
    with pytest.raises(ValueError):
        FlowField(np.full((2, 2), np.nan, np.float32), np.zeros((2, 2), np.float32))
    with pytest.raises(ValueError):
        FlowField(np.zeros((2, 2), np.float32), np.zeros((3, 2), np.float32))
    f = FlowField.zero(4, 6)
    assert f.height == 4 and f.width == 6
    assert not f.u.any() and not f.v.any()


def test_weight_map_values_and_validation():
    f = FlowField(np.full((2, 2), 3.0, np.float32), np.full((2, 2), 4.0, np.float32))
    wm = weight_map(f)
    assert wm.w.dtype == np.float32
    assert np.allclose(wm.w, 5.0)
    with pytest.raises(ValueError):
        WeightMap(np.array([[-1.0, 0.0]], np.float32))
    with pytest.raises(ValueError):
        WeightMap(np.zeros((2, 2, 2), np.float32))


def test_endpoint_error_hand_value():
    a = FlowField(np.ones((2, 2), np.float32), np.zeros((2, 2), np.float32))
    b = FlowField(np.zeros((2, 2), np.float32), np.ones((2, 2), np.float32))
    assert np.isclose(endpoint_error(a, b), np.sqrt(2.0))
    assert endpoint_error(a, a) == 0.0
    with pytest.raises(ValueError):
        endpoint_error(a, FlowField.zero(3, 3))


# ---------------------------------------------------------------------------
# estimation
# ---------------------------------------------------------------------------


def test_static_frames_give_zero_flow():
    frame = rng.random((1, 24, 24)).astype(np.float32)
    field = estimate_flow(frame, frame.copy(), iterations=50)
    assert np.abs(field.u).max() == 0.0 and np.abs(field.v).max() == 0.0


def test_unit_translation_recovered():
    a, b = shifted_pair(dx=1, dy=0)
    field = estimate_flow(a, b, iterations=200)
    interior_u = field.u[8:-8, 8:-8]
    interior_v = field.v[8:-8, 8:-8]
    assert abs(interior_u.mean() - 1.0) < 0.2
    assert abs(interior_v.mean()) < 0.1


def test_vertical_translation_recovered():
    a, b = shifted_pair(dx=0, dy=1, seed=5)
    field = estimate_flow(a, b, iterations=200)
    assert abs(field.v[8:-8, 8:-8].mean() - 1.0) < 0.2
    assert abs(field.u[8:-8, 8:-8].mean()) < 0.1


def test_brightness_shift_invariance_exact_on_quantized_frames():
    # gradients of the objective depend on differences only; a constant
    # offset that is exactly representable cancels bit-for-bit
    a, b = shifted_pair(seed=2)
    a = np.round(a * 256.0) / 256.0
    b = np.round(b * 256.0) / 256.0
    base = estimate_flow(a, b, iterations=40)
    lifted = estimate_flow(a + 0.25, b + 0.25, iterations=40)
    assert np.array_equal(base.u, lifted.u) and np.array_equal(base.v, lifted.v)


def test_brightness_shift_invariance_close_on_generic_frames():
    a, b = shifted_pair(seed=3)
    base = estimate_flow(a, b, iterations=40)
    lifted = estimate_flow(a + 0.21, b + 0.21, iterations=40)
    assert np.abs(base.u - lifted.u).max() < 1e-4
    assert np.abs(base.v - lifted.v).max() < 1e-4


def test_estimate_flow_validates_inputs():
    a = rng.random((1, 8, 8)).astype(np.float32)
    with pytest.raises(ValueError):
        estimate_flow(a, rng.random((1, 9, 8)).astype(np.float32))
    with pytest.raises(ValueError):
        estimate_flow(a, a, iterations=0)
    with pytest.raises(ValueError):
        estimate_flow(a, a, smoothness=0.0)


def test_more_iterations_converge_toward_translation():
    a, b = shifted_pair(seed=4)
    few = estimate_flow(a, b, iterations=10)
    many = estimate_flow(a, b, iterations=200)
    target = 1.0
    err_few = abs(few.u[8:-8, 8:-8].mean() - target)
    err_many = abs(many.u[8:-8, 8:-8].mean() - target)
    assert err_many < err_few


# ---------------------------------------------------------------------------
# .flo files
# ---------------------------------------------------------------------------


def test_flo_round_trip_bit_exact(tmp_path):
    field = FlowField(
        rng.standard_normal((7, 5)).astype(np.float32),
        rng.standard_normal((7, 5)).astype(np.float32),
    )
    path = tmp_path / "field.flo"
    flo_write(field, path)
    again = flo_read(path)
    assert np.array_equal(field.u, again.u) and np.array_equal(field.v, again.v)
    flo_write(again, tmp_path / "second.flo")
    assert path.read_bytes() == (tmp_path / "second.flo").read_bytes()


def test_flo_hand_encoded_file(tmp_path):
    payload = struct.pack("<f", 202021.25) + struct.pack("<ii", 1, 1)
    payload += struct.pack("<ff", 1.0, -2.0)
    assert len(payload) == 20
    path = tmp_path / "hand.flo"
    path.write_bytes(payload)
    field = flo_read(path)
    assert field.u[0, 0] == 1.0 and field.v[0, 0] == -2.0


def test_flo_rejects_wrong_tag(tmp_path):
    path = tmp_path / "bad.flo"
    path.write_bytes(struct.pack("<f", 1234.5) + struct.pack("<ii", 1, 1) + b"\0" * 8)
    with pytest.raises(ValueError, match="not a flow file"):
        flo_read(path)
    path.write_bytes(b"\x01\x02")
    with pytest.raises(ValueError, match="not a flow file"):
        flo_read(path)


def test_flo_rejects_corrupt_payload(tmp_path):
    tag = struct.pack("<f", 202021.25)
    path = tmp_path / "bad.flo"
    path.write_bytes(tag + struct.pack("<i", 3))  # header cut short
    with pytest.raises(ValueError, match="corrupt flow file"):
        flo_read(path)
    path.write_bytes(tag + struct.pack("<ii", 0, 4) + b"\0" * 8)
    with pytest.raises(ValueError, match="corrupt flow file"):
        flo_read(path)
    path.write_bytes(tag + struct.pack("<ii", 2, 2) + b"\0" * 12)  # 32 needed
    with pytest.raises(ValueError, match="corrupt flow file"):
        flo_read(path)
    path.write_bytes(tag + struct.pack("<ii", 2, 2) + b"\0" * 36)  # trailing junk
    with pytest.raises(ValueError, match="corrupt flow file"):
        flo_read(path)


def test_flo_layout_interleaved_row_major(tmp_path):
    u = np.array([[1.0, 2.0]], np.float32)
    v = np.array([[3.0, 4.0]], np.float32)
    path = tmp_path / "layout.flo"
    flo_write(FlowField(u, v), path)
    raw = path.read_bytes()
    floats = struct.unpack("<4f", raw[12:])
    assert floats == (1.0, 3.0, 2.0, 4.0)  # (u, v) pairs in raster order
