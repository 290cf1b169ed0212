"""Quality measurement along both axes the training objectives target:
per-frame fidelity (PSNR, SSIM) and temporal consistency (warp error,
temporal profiles), with CSV reporting.

warp_error shares its arithmetic with the temporal objective's
consistency term, so the two agree on shared inputs by construction.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autograd import Tensor, bilinear_warp
from .config import RunConfig
from .data import FrameSequence, save_frame
from .flow import FlowField, estimate_flow, flo_read
from .sosr import mse

__all__ = [
    "ClipReport",
    "psnr",
    "ssim",
    "temporal_profile",
    "warp_error",
    "evaluate_clip",
    "emit_report",
]


def _image(a) -> np.ndarray:
    arr = np.asarray(getattr(a, "data", a), dtype=np.float64)
    return arr


def psnr(a, b, peak: float = 1.0) -> float:
    """10*log10(peak^2 / MSE), capped at 100 dB when the images match."""
    x, y = _image(a), _image(b)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    if peak <= 0:
        raise ValueError(f"peak must be positive, got {peak}")
    err = float(((x - y) ** 2).mean())
    if err == 0.0:
        return 100.0
    return min(100.0, 10.0 * np.log10(peak * peak / err))


def _luma(a: np.ndarray) -> np.ndarray:
    if a.ndim == 2:
        return a
    if a.ndim == 3 and a.shape[0] == 1:
        return a[0]
    if a.ndim == 3 and a.shape[0] == 3:
        return 0.299 * a[0] + 0.587 * a[1] + 0.114 * a[2]
    raise ValueError(f"expected (h, w) or (1|3, h, w) image, got shape {a.shape}")


def _window_means(x: np.ndarray, k: int) -> np.ndarray:
    ii = np.zeros((x.shape[0] + 1, x.shape[1] + 1), np.float64)
    np.cumsum(np.cumsum(x, axis=0), axis=1, out=ii[1:, 1:])
    return (ii[k:, k:] - ii[:-k, k:] - ii[k:, :-k] + ii[:-k, :-k]) / (k * k)


def ssim(a, b, peak: float = 1.0) -> float:
    """Mean structural similarity over sliding 8x8 uniform windows.

    Stabilizers C1 = (0.01*peak)^2 and C2 = (0.03*peak)^2; color inputs are
    reduced to luma first. Defined for images at least 8 pixels on a side.
    """
    k = 8
    x, y = _luma(_image(a)), _luma(_image(b))
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    if x.shape[0] < k or x.shape[1] < k:
        raise ValueError(f"image {x.shape} smaller than the {k}x{k} window")
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    mu_x = _window_means(x, k)
    mu_y = _window_means(y, k)
    var_x = _window_means(x * x, k) - mu_x * mu_x
    var_y = _window_means(y * y, k) - mu_y * mu_y
    cov = _window_means(x * y, k) - mu_x * mu_y
    score = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / (
        (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    )
    return float(score.mean())


def _frames(clip) -> list[np.ndarray]:
    if isinstance(clip, FrameSequence):
        return [clip.load(i) for i in range(clip.frame_count)]
    return [np.asarray(f, np.float32) for f in clip]


def temporal_profile(clip, row: int) -> np.ndarray:
    """Stack one fixed pixel row from every frame into a (c, T, W) image;
    flicker and drift show up as broken vertical structure."""
    frames = _frames(clip)
    h = frames[0].shape[-2]
    if not 0 <= row < h:
        raise ValueError(f"row {row} out of range for height {h}")
    return np.stack([f[..., row, :] for f in frames], axis=-2)


def warp_error(clip_sr, flows_hr: list[FlowField]):
    """Per consecutive pair, the mean squared difference between frame t and
    frame t+1 warped back along the pair's flow; plus the mean over pairs.

    Same arithmetic as the temporal objective's consistency term.
    """
    frames = _frames(clip_sr)
    if len(flows_hr) != len(frames) - 1:
        raise ValueError(
            f"need {len(frames) - 1} flow fields for {len(frames)} frames, "
            f"got {len(flows_hr)}"
        )
    per_pair = []
    for t, flow in enumerate(flows_hr):
        cur = Tensor(frames[t][None])
        nxt = Tensor(frames[t + 1][None])
        per_pair.append(mse(cur, bilinear_warp(nxt, [flow])).item())
    mean = sum(per_pair) / len(per_pair) if per_pair else 0.0
    return per_pair, mean


# ---------------------------------------------------------------------------
# clip reports
# ---------------------------------------------------------------------------


@dataclass
class ClipReport:
    clip_id: str
    psnr: list[float] = field(default_factory=list)  # one entry per frame
    ssim: list[float] = field(default_factory=list)  # one entry per frame
    warp: list[float] = field(default_factory=list)  # one entry per pair
    mean_warp: float = 0.0
    profile_path: str = ""

    @property
    def frame_count(self) -> int:
        return len(self.psnr)


def _clip_flows(hr_seq: FrameSequence, flow_source: str, config: RunConfig):
    flows = []
    for i in range(hr_seq.frame_count - 1):
        if flow_source == "provided":
            path = hr_seq.directory / "flow" / f"{i:06d}.flo"
            if not path.is_file():
                raise ValueError(f"missing provided flow file: {path}")
            flows.append(flo_read(path))
        else:
            flows.append(estimate_flow(
                hr_seq.load(i), hr_seq.load(i + 1),
                smoothness=config.flow_smoothness, iterations=config.flow_iterations,
            ))
    return flows


def evaluate_clip(
    sr_seq: FrameSequence,
    hr_seq: FrameSequence,
    config: RunConfig,
    flow_source: str = "estimate",
    profile_row: int | None = None,
    profile_dir=None,
) -> ClipReport:
    """Per-frame fidelity of SR against HR plus temporal consistency of the
    SR clip measured along HR-derived flow."""
    if sr_seq.frame_count != hr_seq.frame_count:
        raise ValueError(
            f"clip length mismatch: {sr_seq.name} has {sr_seq.frame_count} frames, "
            f"{hr_seq.name} has {hr_seq.frame_count}"
        )
    report = ClipReport(clip_id=sr_seq.name)
    sr_frames = [sr_seq.load(i) for i in range(sr_seq.frame_count)]
    hr_frames = [hr_seq.load(i) for i in range(hr_seq.frame_count)]
    for s, h in zip(sr_frames, hr_frames):
        report.psnr.append(psnr(s, h, peak=1.0))
        report.ssim.append(ssim(s, h, peak=1.0))
    flows = _clip_flows(hr_seq, flow_source, config)
    report.warp, report.mean_warp = warp_error(sr_frames, flows)
    row = sr_seq.height // 2 if profile_row is None else profile_row
    profile = temporal_profile(sr_frames, row)
    if profile_dir is not None:
        out = Path(profile_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / f"profile_{sr_seq.name}.png"
        save_frame(profile, path)
        report.profile_path = str(path)
    return report


_REPORT_FIELDS = ["clip", "frames", "psnr", "ssim", "warp_error", "profile"]


def emit_report(reports: list[ClipReport], path) -> None:
    """One CSV row per clip (frame-mean PSNR/SSIM, pair-mean warp error)
    plus a final mean row; an empty report set writes an n/a mean row.
    Values carry 6 significant digits and parse back exactly that closely.
    """
    def fmt(x: float) -> str:
        return f"{x:.6g}"

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_REPORT_FIELDS)
        for r in reports:
            writer.writerow([
                r.clip_id,
                r.frame_count,
                fmt(sum(r.psnr) / len(r.psnr)) if r.psnr else "n/a",
                fmt(sum(r.ssim) / len(r.ssim)) if r.ssim else "n/a",
                fmt(r.mean_warp),
                r.profile_path,
            ])
        if reports:
            writer.writerow([
                "mean",
                fmt(sum(r.frame_count for r in reports) / len(reports)),
                fmt(sum(sum(r.psnr) / len(r.psnr) for r in reports) / len(reports)),
                fmt(sum(sum(r.ssim) / len(r.ssim) for r in reports) / len(reports)),
                fmt(sum(r.mean_warp for r in reports) / len(reports)),
                "",
            ])
        else:
            writer.writerow(["mean", "n/a", "n/a", "n/a", "n/a", ""])
