"""Optical flow: variational estimation, Middlebury file IO, weight maps.

Flow convention: a field F estimated from (frame_t, frame_t1) satisfies
frame_t(p) ~= frame_t1(p + F(p)), so rightward scene motion has positive u
and the field plugs straight into bilinear_warp to pull frame_t1 back
onto frame_t.
"""

from __future__ import annotations

import struct

import numpy as np

__all__ = [
    "FlowField",
    "WeightMap",
    "estimate_flow",
    "flo_read",
    "flo_write",
    "weight_map",
    "endpoint_error",
]


class FlowField:
    """Per-pixel displacement field; u horizontal, v vertical, in pixels."""

    __slots__ = ("u", "v")

    def __init__(self, u, v):
        self.u = np.asarray(u, dtype=np.float32)
        self.v = np.asarray(v, dtype=np.float32)
        if self.u.ndim != 2 or self.u.shape != self.v.shape:
            raise ValueError(
                f"flow components must be 2-D and matching, got {self.u.shape} vs {self.v.shape}"
            )
        if not (np.isfinite(self.u).all() and np.isfinite(self.v).all()):
            raise ValueError("flow field contains non-finite values")

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def width(self) -> int:
        return self.u.shape[1]

    @classmethod
    def zero(cls, height: int, width: int) -> "FlowField":
        return cls(np.zeros((height, width), np.float32), np.zeros((height, width), np.float32))

    def __repr__(self) -> str:
        return f"FlowField({self.height}x{self.width})"


class WeightMap:
    """Nonnegative per-pixel weights derived from flow magnitude."""

    __slots__ = ("w",)

    def __init__(self, w):
        self.w = np.asarray(w, dtype=np.float32)
        if self.w.ndim != 2:
            raise ValueError(f"weight map must be 2-D, got shape {self.w.shape}")
        if (self.w < 0).any():
            raise ValueError("weight map has negative entries")

    @property
    def height(self) -> int:
        return self.w.shape[0]

    @property
    def width(self) -> int:
        return self.w.shape[1]

    def __repr__(self) -> str:
        return f"WeightMap({self.height}x{self.width})"


# ---------------------------------------------------------------------------
# variational estimation
# ---------------------------------------------------------------------------


def _luma(frame) -> np.ndarray:
    """Collapse a frame to a 2-D brightness plane on a 0..255 scale.

    Accepts (h, w), (c, h, w), or (1, c, h, w) arrays or tensors with values
    in [0, 1]. Color uses ITU-R 601 weights. The 255x scale keeps the default
    smoothness meaningful in 8-bit brightness units.
    """
    a = np.asarray(getattr(frame, "data", frame), dtype=np.float64)
    if a.ndim == 4:
        if a.shape[0] != 1:
            raise ValueError(f"flow estimation takes one frame at a time, got batch {a.shape[0]}")
        a = a[0]
    if a.ndim == 3:
        if a.shape[0] == 1:
            a = a[0]
        elif a.shape[0] == 3:
            a = 0.299 * a[0] + 0.587 * a[1] + 0.114 * a[2]
        else:
            raise ValueError(f"expected 1 or 3 channels, got {a.shape[0]}")
    if a.ndim != 2:
        raise ValueError(f"cannot interpret shape {np.asarray(frame).shape} as a frame")
    return a * 255.0


def _derivatives(a: np.ndarray, b: np.ndarray):
    """Spatial and temporal brightness derivatives over a 2x2x2 cube,
    edge-replicated at the bottom and right borders."""
    ap = np.pad(a, ((0, 1), (0, 1)), mode="edge")
    bp = np.pad(b, ((0, 1), (0, 1)), mode="edge")
    ex = 0.25 * (
        ap[:-1, 1:] - ap[:-1, :-1] + ap[1:, 1:] - ap[1:, :-1]
        + bp[:-1, 1:] - bp[:-1, :-1] + bp[1:, 1:] - bp[1:, :-1]
    )
    ey = 0.25 * (
        ap[1:, :-1] - ap[:-1, :-1] + ap[1:, 1:] - ap[:-1, 1:]
        + bp[1:, :-1] - bp[:-1, :-1] + bp[1:, 1:] - bp[:-1, 1:]
    )
    et = 0.25 * (
        bp[:-1, :-1] - ap[:-1, :-1] + bp[1:, :-1] - ap[1:, :-1]
        + bp[:-1, 1:] - ap[:-1, 1:] + bp[1:, 1:] - ap[1:, 1:]
    )
    return ex, ey, et


def _neighbor_average(x: np.ndarray) -> np.ndarray:
    """Weighted 8-neighborhood mean (1/6 edge, 1/12 corner), edge-padded."""
    p = np.pad(x, 1, mode="edge")
    return (
        (p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:]) / 6.0
        + (p[:-2, :-2] + p[:-2, 2:] + p[2:, :-2] + p[2:, 2:]) / 12.0
    )


def estimate_flow(frame_a, frame_b, smoothness: float = 15.0, iterations: int = 200) -> FlowField:
    """Dense flow from frame_a to frame_b by variational fixed-point iteration.

    Minimizes brightness-constancy error plus ``smoothness``-weighted field
    roughness via the classic coupled update: each step replaces the field by
    its neighborhood average corrected along the local brightness gradient.
    Deterministic; identical frames or spatially constant frames yield an
    exactly zero field.
    """
    if smoothness <= 0:
        raise ValueError(f"smoothness must be positive, got {smoothness}")
    if iterations < 1:
        raise ValueError(f"iterations must be >= 1, got {iterations}")
    a = _luma(frame_a)
    b = _luma(frame_b)
    if a.shape != b.shape:
        raise ValueError(f"frame size mismatch: {a.shape} vs {b.shape}")

    ex, ey, et = _derivatives(a, b)
    den = smoothness * smoothness + ex * ex + ey * ey
    u = np.zeros_like(a)
    v = np.zeros_like(a)
    for _ in range(iterations):
        ua = _neighbor_average(u)
        va = _neighbor_average(v)
        t = (ex * ua + ey * va + et) / den
        u = ua - ex * t
        v = va - ey * t
    return FlowField(u.astype(np.float32), v.astype(np.float32))


# ---------------------------------------------------------------------------
# Middlebury .flo files
# ---------------------------------------------------------------------------

_FLO_TAG = struct.pack("<f", 202021.25)


def flo_write(field: FlowField, path) -> None:
    """Write a field in Middlebury layout: tag, width, height, interleaved
    (u, v) pairs, all 32-bit little-endian, row-major."""
    data = np.empty((field.height, field.width, 2), dtype="<f4")
    data[..., 0] = field.u
    data[..., 1] = field.v
    with open(path, "wb") as fh:
        fh.write(_FLO_TAG)
        fh.write(struct.pack("<ii", field.width, field.height))
        fh.write(data.tobytes())


def flo_read(path) -> FlowField:
    """Read a Middlebury flow file, rejecting wrong tags and short payloads."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[:4] != _FLO_TAG:
        raise ValueError("not a flow file")
    if len(raw) < 12:
        raise ValueError("corrupt flow file")
    width, height = struct.unpack("<ii", raw[4:12])
    if width <= 0 or height <= 0 or len(raw) != 12 + 8 * width * height:
        raise ValueError("corrupt flow file")
    data = np.frombuffer(raw[12:], dtype="<f4").reshape(height, width, 2)
    return FlowField(data[..., 0], data[..., 1])


# ---------------------------------------------------------------------------
# derived quantities
# ---------------------------------------------------------------------------


def weight_map(flow: FlowField) -> WeightMap:
    """Per-pixel motion magnitude sqrt(u^2 + v^2)."""
    u = flow.u.astype(np.float64)
    v = flow.v.astype(np.float64)
    return WeightMap(np.sqrt(u * u + v * v).astype(np.float32))


def endpoint_error(estimate: FlowField, reference: FlowField) -> float:
    """Mean Euclidean distance between corresponding displacement vectors."""
    if (estimate.height, estimate.width) != (reference.height, reference.width):
        raise ValueError(
            f"flow size mismatch: {estimate.height}x{estimate.width} vs "
            f"{reference.height}x{reference.width}"
        )
    du = estimate.u.astype(np.float64) - reference.u
    dv = estimate.v.astype(np.float64) - reference.v
    return float(np.sqrt(du * du + dv * dv).mean())
