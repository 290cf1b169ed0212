"""Networks for the two objectives: a residual refiner for upsampled frames,
a patch discriminator, and a frozen random feature extractor.

All three are plain conv stacks over the autograd core. The refiner is
pre-upsampling: it receives frames already at target resolution and adds a
learned correction, so an untrained (zero final layer) model is the identity.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .autograd import Parameter, Tensor, conv2d, leaky_relu, spatial_mean

__all__ = [
    "SrModel",
    "Discriminator",
    "FeatureExtractor",
    "build_sr_net",
    "build_discriminator",
    "build_feature_extractor",
    "forward_sr",
    "parameter_count",
    "save_checkpoint",
    "load_checkpoint",
]

_LEAK = 0.2


class _ConvLayer:
    __slots__ = ("weight", "bias", "stride", "pad", "act")

    def __init__(self, weight: Parameter, bias: Parameter, stride: int, pad: int, act: bool):
        self.weight = weight
        self.bias = bias
        self.stride = stride
        self.pad = pad
        self.act = act


def _run_stack(layers, x: Tensor) -> Tensor:
    h = x
    for layer in layers:
        h = conv2d(h, layer.weight, layer.bias, stride=layer.stride, zero_pad=layer.pad)
        if layer.act:
            h = leaky_relu(h, _LEAK)
    return h


def _kaiming(rng: np.random.Generator, shape, gain_for_leak: bool) -> np.ndarray:
    fan_in = int(np.prod(shape[1:]))
    gain = np.sqrt(2.0 / (1.0 + _LEAK * _LEAK)) if gain_for_leak else 1.0
    std = gain / np.sqrt(fan_in)
    return (rng.standard_normal(shape) * std).astype(np.float32)


def _conv_layer(
    rng, prefix: str, idx: int, in_c: int, out_c: int, k: int, stride: int, act: bool,
    zero_init: bool = False, trainable: bool = True,
) -> _ConvLayer:
    shape = (out_c, in_c, k, k)
    w = np.zeros(shape, np.float32) if zero_init else _kaiming(rng, shape, gain_for_leak=act)
    layer = _ConvLayer(
        Parameter(w, f"{prefix}{idx}.weight", trainable),
        Parameter(np.zeros(out_c, np.float32), f"{prefix}{idx}.bias", trainable),
        stride,
        k // 2,
        act,
    )
    return layer


class SrModel:
    """Stack of 3x3 convs with a global residual: out = x + stack(x).

    ``depth`` counts conv layers; all but the last are followed by a leaky
    rectifier. The last layer starts at exactly zero, so a fresh model maps
    any input to itself bit-for-bit.
    """

    kind = "sr"
    global_residual = True

    def __init__(self, depth: int, width: int, channels: int, layers: list[_ConvLayer]):
        self.depth = depth
        self.width = width
        self.channels = channels
        self.layers = layers

    @property
    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers for p in (layer.weight, layer.bias)]

    def forward(self, x: Tensor) -> Tensor:
        if x.data.ndim != 4 or x.shape[1] != self.channels:
            raise ValueError(
                f"model expects (n, {self.channels}, h, w) input, got {x.shape}"
            )
        return x + _run_stack(self.layers, x)

    def meta(self) -> dict:
        return {"kind": self.kind, "depth": self.depth, "width": self.width,
                "channels": self.channels}


class Discriminator:
    """Strided conv stack pooled to one realness logit per image."""

    kind = "disc"

    def __init__(self, channels: int, width: int, layers: list[_ConvLayer]):
        self.channels = channels
        self.width = width
        self.layers = layers

    @property
    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers for p in (layer.weight, layer.bias)]

    def forward(self, x: Tensor) -> Tensor:
        if x.data.ndim != 4 or x.shape[1] != self.channels:
            raise ValueError(
                f"discriminator expects (n, {self.channels}, h, w) input, got {x.shape}"
            )
        h = _run_stack(self.layers[:-1], x)
        h = spatial_mean(h)
        last = self.layers[-1]
        return conv2d(h, last.weight, last.bias)  # (n, 1, 1, 1) logits

    def meta(self) -> dict:
        return {"kind": self.kind, "width": self.width, "channels": self.channels}


class FeatureExtractor:
    """Fixed (never-trained) conv stack; its output is the feature map the
    feature loss compares. Random but deterministic for a given seed."""

    kind = "feat"

    def __init__(self, channels: int, width: int, layers: list[_ConvLayer]):
        self.channels = channels
        self.width = width
        self.layers = layers

    @property
    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers for p in (layer.weight, layer.bias)]

    def forward(self, x: Tensor) -> Tensor:
        if x.data.ndim != 4 or x.shape[1] != self.channels:
            raise ValueError(
                f"extractor expects (n, {self.channels}, h, w) input, got {x.shape}"
            )
        return _run_stack(self.layers, x)

    def meta(self) -> dict:
        return {"kind": self.kind, "width": self.width, "channels": self.channels}


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------


def build_sr_net(depth: int = 8, width: int = 32, channels: int = 3, seed: int = 0) -> SrModel:
    """Residual refiner with ``depth`` 3x3 conv layers.

    Parameter count: (width*9*channels + width) for the first layer,
    (depth - 2) * (width*9*width + width) for the hidden ones, and
    (channels*9*width + channels) for the zero-initialized last layer.
    """
    if depth < 2:
        raise ValueError(f"depth must be >= 2, got {depth}")
    if width < 1 or channels < 1:
        raise ValueError(f"width and channels must be positive, got {width}, {channels}")
    rng = np.random.default_rng(seed)
    layers = [_conv_layer(rng, "layer", 0, channels, width, 3, 1, act=True)]
    for i in range(1, depth - 1):
        layers.append(_conv_layer(rng, "layer", i, width, width, 3, 1, act=True))
    layers.append(
        _conv_layer(rng, "layer", depth - 1, width, channels, 3, 1, act=False, zero_init=True)
    )
    return SrModel(depth, width, channels, layers)


def build_discriminator(channels: int = 3, width: int = 16, seed: int = 1) -> Discriminator:
    if width < 1 or channels < 1:
        raise ValueError(f"width and channels must be positive, got {width}, {channels}")
    rng = np.random.default_rng(seed)
    layers = [
        _conv_layer(rng, "disc", 0, channels, width, 3, 2, act=True),
        _conv_layer(rng, "disc", 1, width, 2 * width, 3, 2, act=True),
        _conv_layer(rng, "disc", 2, 2 * width, 1, 1, 1, act=False),
    ]
    return Discriminator(channels, width, layers)


def build_feature_extractor(channels: int = 3, width: int = 16, seed: int = 2) -> FeatureExtractor:
    if width < 1 or channels < 1:
        raise ValueError(f"width and channels must be positive, got {width}, {channels}")
    rng = np.random.default_rng(seed)
    layers = [
        _conv_layer(rng, "feat", 0, channels, width, 3, 1, act=True, trainable=False),
        _conv_layer(rng, "feat", 1, width, width, 3, 1, act=False, trainable=False),
    ]
    return FeatureExtractor(channels, width, layers)


def forward_sr(model: SrModel, upsampled_lr: Tensor) -> Tensor:
    """Refine an already-upsampled frame; shape is preserved."""
    return model.forward(upsampled_lr)


def parameter_count(model) -> int:
    return sum(p.data.size for p in model.parameters)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

_CKPT_MAGIC = b"FSRCKPT1"

_BUILDERS = {
    "sr": lambda m: build_sr_net(m["depth"], m["width"], m["channels"], seed=0),
    "disc": lambda m: build_discriminator(m["channels"], m["width"], seed=0),
    "feat": lambda m: build_feature_extractor(m["channels"], m["width"], seed=0),
}


def save_checkpoint(model, path) -> None:
    """Versioned binary dump: magic, JSON metadata, then one (name, shape,
    raw little-endian float32 payload) record per parameter."""
    meta = json.dumps(model.meta(), sort_keys=True).encode()
    params = model.parameters
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<I", len(meta)))
        fh.write(meta)
        fh.write(struct.pack("<I", len(params)))
        for p in params:
            name = p.name.encode()
            fh.write(struct.pack("<H", len(name)))
            fh.write(name)
            fh.write(struct.pack("<B", p.data.ndim))
            fh.write(struct.pack(f"<{p.data.ndim}I", *p.data.shape))
            fh.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise ValueError("corrupt checkpoint file")
        out = self.raw[self.pos : self.pos + n]
        self.pos += n
        return out


def load_checkpoint(path):
    """Rebuild the stored model; forward outputs match the saved model
    bit-for-bit."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(_CKPT_MAGIC) or raw[: len(_CKPT_MAGIC)] != _CKPT_MAGIC:
        raise ValueError("not a checkpoint file")
    r = _Reader(raw)
    r.take(len(_CKPT_MAGIC))
    (meta_len,) = struct.unpack("<I", r.take(4))
    try:
        meta = json.loads(r.take(meta_len))
        builder = _BUILDERS[meta["kind"]]
    except (ValueError, KeyError):
        raise ValueError("corrupt checkpoint file") from None
    model = builder(meta)
    params = {p.name: p for p in model.parameters}
    (count,) = struct.unpack("<I", r.take(4))
    if count != len(params):
        raise ValueError("corrupt checkpoint file")
    for _ in range(count):
        (name_len,) = struct.unpack("<H", r.take(2))
        name = r.take(name_len).decode()
        (ndim,) = struct.unpack("<B", r.take(1))
        shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim))
        data = np.frombuffer(r.take(4 * int(np.prod(shape))), dtype="<f4").reshape(shape)
        p = params.get(name)
        if p is None or p.data.shape != shape:
            raise ValueError("corrupt checkpoint file")
        p.data = data.astype(np.float32)
    if r.pos != len(raw):
        raise ValueError("corrupt checkpoint file")
    return model
