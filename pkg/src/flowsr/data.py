"""Dataset plumbing: frame IO, bicubic rescaling, motion-ranked patch
extraction, synthetic clip generation, and persisted training manifests.

A manifest run materializes, per consecutive frame pair, the flow field, its
weight map, and the top-scoring aligned patch stacks (HR, upsampled-LR,
weight, flow planes in one blob), each listed with a content hash so a rerun
on unchanged inputs is byte-identical.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .config import RunConfig
from .flow import FlowField, estimate_flow, flo_read, flo_write, weight_map

__all__ = [
    "FrameSequence",
    "PatchRecord",
    "Manifest",
    "load_frame",
    "save_frame",
    "scan_sequences",
    "bicubic_resize",
    "rank_patches",
    "make_synthetic_dataset",
    "build_manifest",
    "load_manifest",
]

_MANIFEST_HEADER = "# frame-patch manifest v1"


# ---------------------------------------------------------------------------
# frame IO
# ---------------------------------------------------------------------------


def load_frame(path) -> np.ndarray:
    """Read an image file to a (c, h, w) float32 array in [0, 1];
    c is 1 for grayscale files and 3 otherwise."""
    with Image.open(path) as img:
        if img.mode == "L":
            arr = np.asarray(img, dtype=np.float32)[None]
        else:
            arr = np.asarray(img.convert("RGB"), dtype=np.float32).transpose(2, 0, 1)
    return arr / 255.0


def save_frame(arr: np.ndarray, path) -> None:
    """Write a (c, h, w) or (h, w) array in [0, 1] as an 8-bit image file."""
    a = np.asarray(arr)
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3 or a.shape[0] not in (1, 3):
        raise ValueError(f"expected (1|3, h, w) or (h, w) image, got shape {np.shape(arr)}")
    u8 = np.clip(np.round(a * 255.0), 0, 255).astype(np.uint8)
    if u8.shape[0] == 1:
        Image.fromarray(u8[0], mode="L").save(path)
    else:
        Image.fromarray(u8.transpose(1, 2, 0), mode="RGB").save(path)


class FrameSequence:
    """An ordered directory of same-sized frames (lexicographic file order).

    Subdirectories (flow/, mask/, ...) hold side data and are not frames.
    """

    def __init__(self, directory):
        self.directory = Path(directory)
        self.names = sorted(
            n for n in os.listdir(self.directory)
            if n.endswith(".png") and (self.directory / n).is_file()
        )
        if not self.names:
            raise ValueError(f"no frames in {self.directory}")
        sizes = {}
        for n in self.names:
            with Image.open(self.directory / n) as img:
                sizes[n] = img.size  # (w, h) without decoding pixels
        first = sizes[self.names[0]]
        for n, size in sizes.items():
            if size != first:
                raise ValueError(
                    f"frame size mismatch in {self.directory / n}: "
                    f"expected {first[0]}x{first[1]}, got {size[0]}x{size[1]}"
                )
        self.width, self.height = first

    @property
    def name(self) -> str:
        return self.directory.name

    @property
    def frame_count(self) -> int:
        return len(self.names)

    def path(self, i: int) -> Path:
        return self.directory / self.names[i]

    def load(self, i: int) -> np.ndarray:
        return load_frame(self.path(i))

    def __repr__(self) -> str:
        return f"FrameSequence({self.name!r}, {self.frame_count}x{self.width}x{self.height})"


def scan_sequences(video_root) -> list[FrameSequence]:
    """All frame sequences under a root: each subdirectory holding frames is
    one sequence; a root that holds frames directly is itself one sequence."""
    root = Path(video_root)
    if not root.is_dir():
        raise ValueError(f"not a directory: {root}")
    if any(n.endswith(".png") for n in os.listdir(root)):
        return [FrameSequence(root)]
    seqs = []
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        if any(n.endswith(".png") for n in os.listdir(sub)):
            seqs.append(FrameSequence(sub))
    if not seqs:
        raise ValueError(f"no frame sequences under {root}")
    return seqs


# ---------------------------------------------------------------------------
# bicubic resampling
# ---------------------------------------------------------------------------


def _cubic_weights(frac: np.ndarray) -> np.ndarray:
    """Cubic-convolution weights (a = -0.5) for taps at floor-relative
    offsets (-1, 0, 1, 2); rows sum to 1 analytically."""
    t = np.stack([1.0 + frac, frac, 1.0 - frac, 2.0 - frac], axis=-1)
    at = np.abs(t)
    near = 1.5 * at**3 - 2.5 * at**2 + 1.0
    far = -0.5 * (at**3 - 5.0 * at**2 + 8.0 * at - 4.0)
    return np.where(at <= 1.0, near, far)


def _resample_axis(x: np.ndarray, out_len: int) -> np.ndarray:
    """Resample the last axis to out_len samples, pixel-center aligned,
    edge-clamped. The base-plus-differences form keeps constants exact."""
    n = x.shape[-1]
    src = (np.arange(out_len, dtype=np.float64) + 0.5) * (n / out_len) - 0.5
    base = np.floor(src).astype(np.intp)
    w = _cubic_weights(src - base)
    idx = np.clip(base[:, None] + np.array([-1, 0, 1, 2]), 0, n - 1)
    xb = x[..., idx[:, 1]]
    out = xb.astype(np.float64, copy=True)
    for j in (0, 2, 3):
        out += w[:, j] * (x[..., idx[:, j]] - xb)
    return out


def bicubic_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable cubic-convolution resize of a (c, h, w) or (h, w) image.

    A constant image stays exactly constant at any output size.
    """
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output size must be >= 1, got {out_h}x{out_w}")
    a = np.asarray(image, dtype=np.float64)
    if a.ndim not in (2, 3):
        raise ValueError(f"expected (c, h, w) or (h, w) image, got shape {a.shape}")
    a = _resample_axis(a, out_w)
    a = _resample_axis(np.swapaxes(a, -1, -2), out_h)
    return np.swapaxes(a, -1, -2).astype(np.float32)


# ---------------------------------------------------------------------------
# motion-ranked patches
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PatchRecord:
    frame: int
    x: int
    y: int
    size: int
    score: float


def _window_sums(plane: np.ndarray, patch: int, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    ii = np.zeros((plane.shape[0] + 1, plane.shape[1] + 1), np.float64)
    np.cumsum(np.cumsum(plane, axis=0), axis=1, out=ii[1:, 1:])
    yg, xg = np.meshgrid(ys, xs, indexing="ij")
    return (
        ii[yg + patch, xg + patch] - ii[yg, xg + patch] - ii[yg + patch, xg] + ii[yg, xg]
    )


def rank_patches(
    frame: np.ndarray,
    weights,
    patch: int,
    top_k: int,
    stride: int,
    min_variance: float = 0.0,
    frame_index: int = 0,
) -> list[PatchRecord]:
    """Top-scoring non-overlapping windows by mean weight inside the window.

    Greedy selection in score order, ties broken by raster order of the
    window origin. Windows whose pixel variance falls below min_variance are
    dropped first (flat, uninformative patches). Returns at most top_k
    records, fewer when non-overlapping candidates run out.
    """
    f = np.asarray(frame, dtype=np.float64)
    if f.ndim == 2:
        f = f[None]
    w = weights.w if hasattr(weights, "w") else np.asarray(weights)
    h, wd = w.shape
    if f.shape[1:] != (h, wd):
        raise ValueError(f"frame {f.shape[1:]} and weight map {(h, wd)} sizes differ")
    if patch > h or patch > wd:
        raise ValueError(f"patch {patch} exceeds frame {h}x{wd}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")

    ys = np.arange(0, h - patch + 1, stride)
    xs = np.arange(0, wd - patch + 1, stride)
    area = float(patch * patch)
    scores = _window_sums(w.astype(np.float64), patch, ys, xs) / area

    csum = sum(_window_sums(f[c], patch, ys, xs) for c in range(f.shape[0]))
    csq = sum(_window_sums(f[c] * f[c], patch, ys, xs) for c in range(f.shape[0]))
    nvals = area * f.shape[0]
    variance = np.maximum(csq / nvals - (csum / nvals) ** 2, 0.0)

    flat_scores = scores.ravel()
    order = np.lexsort((np.arange(flat_scores.size), -flat_scores))
    selected: list[PatchRecord] = []
    for k in order:
        if len(selected) == top_k:
            break
        yi, xi = divmod(int(k), xs.size)
        if variance[yi, xi] < min_variance:
            continue
        y, x = int(ys[yi]), int(xs[xi])
        if any(abs(y - r.y) < patch and abs(x - r.x) < patch for r in selected):
            continue
        selected.append(PatchRecord(frame_index, x, y, patch, float(flat_scores[k])))
    return selected


# ---------------------------------------------------------------------------
# synthetic clips
# ---------------------------------------------------------------------------


def _box1d(a: np.ndarray, k: int, axis: int) -> np.ndarray:
    """Length-k box mean along one axis with edge padding."""
    n = a.shape[axis]
    pad = [(0, 0)] * a.ndim
    pad[axis] = (k // 2, k - 1 - k // 2)
    p = np.pad(a, pad, mode="edge")
    zeros_shape = list(p.shape)
    zeros_shape[axis] = 1
    cs = np.concatenate([np.zeros(zeros_shape, p.dtype), np.cumsum(p, axis=axis)], axis=axis)
    return (
        np.take(cs, range(k, k + n), axis=axis) - np.take(cs, range(0, n), axis=axis)
    ) / k


def _smooth_noise(rng: np.random.Generator, shape, k: int, passes: int) -> np.ndarray:
    """Box-blurred uniform noise stretched back to [0, 1]."""
    t = rng.random(shape)
    for _ in range(passes):
        t = _box1d(_box1d(t, k, axis=-2), k, axis=-1)
    t -= t.min()
    t /= max(float(t.max()), 1e-9)
    return t


def _texture(rng: np.random.Generator, channels: int, h: int, w: int) -> np.ndarray:
    """Textured plane with both smooth structure and fine detail."""
    coarse = _smooth_noise(rng, (channels, h, w), k=7, passes=3)
    fine = _smooth_noise(rng, (channels, h, w), k=3, passes=1)
    return np.clip(0.1 + 0.8 * (0.75 * coarse + 0.25 * fine), 0.0, 1.0)


def _quantize(a: np.ndarray) -> np.ndarray:
    return np.round(np.clip(a, 0.0, 1.0) * 255.0) / 255.0


def make_synthetic_dataset(
    kind: str,
    out_root,
    seed: int = 0,
    count: int = 2,
    frames: int = 24,
    height: int = 128,
    width: int = 128,
    channels: int = 3,
    shift: tuple[int, int] = (1, 0),
    block: int = 24,
    step: int = 2,
) -> Path:
    """Generate seed-deterministic clips with recorded ground truth.

    translating-texture: one texture shifted by integer ``shift`` per frame;
    the true flow is uniformly ``shift`` and is written to <seq>/flow/.
    moving-foreground: a static textured background with a finely textured
    block moving ``step`` px/frame along a bouncing horizontal path; true
    flow goes to <seq>/flow/ and the block mask of every frame (area always
    block**2) to <seq>/mask/.
    """
    if kind not in ("translating-texture", "moving-foreground"):
        raise ValueError(f"unknown dataset kind: {kind!r}")
    if count < 1 or frames < 2:
        raise ValueError(f"need count >= 1 and frames >= 2, got {count}, {frames}")
    if channels not in (1, 3):
        raise ValueError(f"channels must be 1 or 3, got {channels}")
    root = Path(out_root)
    for s in range(count):
        rng = np.random.default_rng([seed, s])
        seq = root / f"seq{s:03d}"
        (seq / "flow").mkdir(parents=True, exist_ok=True)
        if kind == "translating-texture":
            _make_translating(rng, seq, frames, height, width, channels, shift)
        else:
            (seq / "mask").mkdir(parents=True, exist_ok=True)
            _make_foreground(rng, seq, frames, height, width, channels, block, step)
    return root


def _make_translating(rng, seq: Path, frames, h, w, c, shift) -> None:
    dx, dy = int(shift[0]), int(shift[1])
    mx, my = abs(dx) * (frames - 1), abs(dy) * (frames - 1)
    tex = _quantize(_texture(rng, c, h + my, w + mx))
    ox0 = max(0, dx * (frames - 1))
    oy0 = max(0, dy * (frames - 1))
    for i in range(frames):
        ox, oy = ox0 - i * dx, oy0 - i * dy
        save_frame(tex[:, oy : oy + h, ox : ox + w], seq / f"{i:06d}.png")
        if i < frames - 1:
            field = FlowField(np.full((h, w), dx, np.float32), np.full((h, w), dy, np.float32))
            flo_write(field, seq / "flow" / f"{i:06d}.flo")


def _make_foreground(rng, seq: Path, frames, h, w, c, block, step) -> None:
    margin = 4
    if block + 2 * margin + step >= w or block + 2 * margin >= h:
        raise ValueError(f"block {block} does not fit a {h}x{w} frame")
    # fine static background next to a coherently textured mover: a plain
    # pixel loss spends its capacity on the (unrecoverable) background
    # detail, a motion-weighted one on the block
    bg = _quantize(_smooth_noise(rng, (c, h, w), k=3, passes=1) * 0.6 + 0.2)
    fg = _quantize(_texture(rng, c, block, block))
    y0 = (h - block) // 2
    span = w - block - 2 * margin

    def xpos(i: int) -> int:
        raw = (i * step) % (2 * span)
        return margin + (raw if raw <= span else 2 * span - raw)

    for i in range(frames):
        x = xpos(i)
        frame = bg.copy()
        frame[:, y0 : y0 + block, x : x + block] = fg
        save_frame(frame, seq / f"{i:06d}.png")
        mask = np.zeros((h, w), np.float32)
        mask[y0 : y0 + block, x : x + block] = 1.0
        save_frame(mask, seq / "mask" / f"{i:06d}.png")
        if i < frames - 1:
            u = np.zeros((h, w), np.float32)
            u[y0 : y0 + block, x : x + block] = float(xpos(i + 1) - x)
            field = FlowField(u, np.zeros((h, w), np.float32))
            flo_write(field, seq / "flow" / f"{i:06d}.flo")


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _blob_planes(c: int) -> dict:
    return {
        "hr_t": slice(0, c),
        "hr_t1": slice(c, 2 * c),
        "lrup_t": slice(2 * c, 3 * c),
        "lrup_t1": slice(3 * c, 4 * c),
        "weight": 4 * c,
        "flow_u": 4 * c + 1,
        "flow_v": 4 * c + 2,
    }


@dataclass(frozen=True)
class ManifestPatch:
    seq: str
    frame: int
    x: int
    y: int
    size: int
    score: float
    path: str
    digest: str


@dataclass(frozen=True)
class ManifestFlow:
    seq: str
    frame: int
    path: str
    digest: str


class Manifest:
    """Parsed manifest: sequence table, flow files, and patch blob records."""

    def __init__(self, base: Path, channels: int, scale: int, patch: int,
                 sequences: dict, flows: list, records: list):
        self.base = base
        self.channels = channels
        self.scale = scale
        self.patch = patch
        self.sequences = sequences
        self.flows = flows
        self.records = records

    def load_patch(self, rec: ManifestPatch, verify: bool = True) -> dict:
        """Blob planes as named (c or 1, p, p) float32 arrays."""
        path = self.base / rec.path
        if verify and _sha256(path) != rec.digest:
            raise ValueError(f"content hash mismatch for {path}")
        blob = np.load(path)
        out = {}
        for key, sel in _blob_planes(self.channels).items():
            plane = blob[sel]
            out[key] = plane if isinstance(sel, slice) else plane[None]
        return out

    def load_flow(self, entry: ManifestFlow, verify: bool = True) -> FlowField:
        path = self.base / entry.path
        if verify and _sha256(path) != entry.digest:
            raise ValueError(f"content hash mismatch for {path}")
        return flo_read(path)


def build_manifest(video_root, flow_source: str, config: RunConfig, out_dir) -> Path:
    """Materialize training data for every sequence under video_root.

    flow_source "estimate" runs the variational estimator on consecutive HR
    frames; "provided" reads <seq>/flow/NNNNNN.flo written alongside the
    frames. Each consecutive pair contributes one flow file and up to
    config.top_k patch blobs. Output is deterministic for fixed inputs.
    """
    if flow_source not in ("estimate", "provided"):
        raise ValueError(f"flow_source must be 'estimate' or 'provided', got {flow_source!r}")
    sequences = scan_sequences(video_root)
    out = Path(out_dir)
    (out / "flows").mkdir(parents=True, exist_ok=True)
    (out / "blobs").mkdir(parents=True, exist_ok=True)

    lines = [
        _MANIFEST_HEADER,
        f"channels {_seq_channels(sequences[0])}",
        f"scale {config.scale}",
        f"patch_size {config.patch}",
        f"flow_source {flow_source}",
    ]
    channels = _seq_channels(sequences[0])
    for seq in sequences:
        if seq.height % config.scale or seq.width % config.scale:
            raise ValueError(
                f"sequence {seq.name} is {seq.width}x{seq.height}, "
                f"not divisible by scale {config.scale}"
            )
        if _seq_channels(seq) != channels:
            raise ValueError(f"sequence {seq.name} channel count differs from {sequences[0].name}")
        lines.append(
            f"sequence {seq.name} frames={seq.frame_count} "
            f"width={seq.width} height={seq.height}"
        )
        lines.extend(_process_sequence(seq, flow_source, config, out))
    text = "\n".join(lines) + "\n"
    manifest_path = out / "manifest.txt"
    manifest_path.write_text(text, encoding="utf-8")
    return manifest_path


def _seq_channels(seq: FrameSequence) -> int:
    return seq.load(0).shape[0]


def _process_sequence(seq: FrameSequence, flow_source: str, config: RunConfig, out: Path):
    h, w = seq.height, seq.width
    frames = [seq.load(i) for i in range(seq.frame_count)]
    lrup = [
        bicubic_resize(
            bicubic_resize(f, h // config.scale, w // config.scale), h, w
        )
        for f in frames
    ]
    lines = []
    for i in range(seq.frame_count - 1):
        if flow_source == "estimate":
            field = estimate_flow(
                frames[i], frames[i + 1],
                smoothness=config.flow_smoothness, iterations=config.flow_iterations,
            )
        else:
            src = seq.directory / "flow" / f"{i:06d}.flo"
            if not src.is_file():
                raise ValueError(f"missing provided flow file: {src}")
            field = flo_read(src)
            if (field.height, field.width) != (h, w):
                raise ValueError(f"flow size mismatch in {src}")
        rel_flow = f"flows/{seq.name}_{i:06d}.flo"
        flo_write(field, out / rel_flow)
        lines.append(f"flow {seq.name} {i} {rel_flow} {_sha256(out / rel_flow)}")

        wmap = weight_map(field)
        records = rank_patches(
            frames[i], wmap, config.patch, config.top_k, config.stride,
            config.min_variance, frame_index=i,
        )
        for rec in records:
            sl = np.s_[rec.y : rec.y + rec.size, rec.x : rec.x + rec.size]
            blob = np.concatenate([
                frames[i][(slice(None),) + sl],
                frames[i + 1][(slice(None),) + sl],
                lrup[i][(slice(None),) + sl],
                lrup[i + 1][(slice(None),) + sl],
                wmap.w[sl][None],
                field.u[sl][None],
                field.v[sl][None],
            ]).astype(np.float32)
            rel_blob = f"blobs/{seq.name}_{i:06d}_{rec.y:04d}_{rec.x:04d}.npy"
            np.save(out / rel_blob, blob)
            lines.append(
                f"patch {seq.name} {i} {rec.x} {rec.y} {rec.size} "
                f"{rec.score:.8g} {rel_blob} {_sha256(out / rel_blob)}"
            )
    return lines


def load_manifest(path) -> Manifest:
    manifest_path = Path(path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "manifest.txt"
    if not manifest_path.is_file():
        raise ValueError(f"no manifest at {manifest_path}")
    text = manifest_path.read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines or lines[0] != _MANIFEST_HEADER:
        raise ValueError(f"not a manifest file: {manifest_path}")
    header = {"channels": None, "scale": None, "patch_size": None}
    sequences: dict = {}
    flows: list[ManifestFlow] = []
    records: list[ManifestPatch] = []
    for line in lines[1:]:
        if not line.strip():
            continue
        parts = line.split()
        kind = parts[0]
        try:
            if kind == "patch":
                records.append(ManifestPatch(
                    parts[1], int(parts[2]), int(parts[3]), int(parts[4]),
                    int(parts[5]), float(parts[6]), parts[7], parts[8],
                ))
            elif kind == "flow":
                flows.append(ManifestFlow(parts[1], int(parts[2]), parts[3], parts[4]))
            elif kind == "sequence":
                meta = dict(kv.split("=") for kv in parts[2:])
                sequences[parts[1]] = {k: int(v) for k, v in meta.items()}
            elif kind in header:
                header[kind] = int(parts[1])
            elif kind == "flow_source":
                pass
            else:
                raise ValueError
        except (IndexError, ValueError):
            raise ValueError(f"corrupt manifest line: {line!r}") from None
    if any(v is None for v in header.values()):
        raise ValueError(f"manifest missing header fields: {manifest_path}")
    return Manifest(
        manifest_path.parent, header["channels"], header["scale"], header["patch_size"],
        sequences, flows, records,
    )
