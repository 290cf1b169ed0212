"""Spatial objective: motion-weighted pixel loss plus feature and
adversarial terms, and the alternating trainer that optimizes it.

The pixel term weights each pixel's squared error by that pixel's flow
magnitude, so static regions contribute nothing and moving content
dominates the gradient. Weight maps are used raw (not renormalized per
patch); the data pipeline's motion-ranked cropping keeps all-zero maps
rare.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autograd import Tape, Tensor, backward, softplus
from .config import RunConfig
from .data import Manifest, load_manifest
from .models import (
    build_discriminator,
    build_feature_extractor,
    build_sr_net,
    save_checkpoint,
)
from .optim import Adam

__all__ = [
    "SosrWeights",
    "SosrBatch",
    "mse",
    "wmse",
    "feature_loss",
    "adversarial_losses",
    "sosr_total",
    "train_sosr",
]


@dataclass(frozen=True)
class SosrWeights:
    alpha: float = 1.0  # pixel (weighted MSE) term
    beta: float = 1.0  # feature term
    gamma: float = 0.005  # adversarial term

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError(f"loss weights must be nonnegative, got {self}")


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, np.float32))


def _weight_planes(weights, shape) -> np.ndarray:
    """Normalize weight input to an (n, 1, h, w) float32 array."""
    n, _, h, w = shape
    if hasattr(weights, "w"):
        arr = np.asarray(weights.w, np.float32)[None, None]
        arr = np.broadcast_to(arr, (n, 1, h, w))
    elif isinstance(weights, (list, tuple)):
        arr = np.stack([np.asarray(f.w if hasattr(f, "w") else f, np.float32) for f in weights])
        arr = arr.reshape(n, 1, h, w)
    else:
        arr = np.asarray(weights, np.float32)
        if arr.ndim == 3:
            arr = arr[:, None]
    if arr.shape != (n, 1, h, w):
        raise ValueError(f"weight maps of shape {arr.shape} do not align with images {shape}")
    if (arr < 0).any():
        raise ValueError("weight maps must be nonnegative")
    return arr


@dataclass
class SosrBatch:
    """Aligned training batch: upsampled-LR input, HR target, pixel weights."""

    lr_up: Tensor
    hr: Tensor
    weights: np.ndarray

    def __post_init__(self):
        self.lr_up = _as_tensor(self.lr_up)
        self.hr = _as_tensor(self.hr)
        if self.lr_up.shape != self.hr.shape:
            raise ValueError(
                f"lr_up {self.lr_up.shape} and hr {self.hr.shape} shapes differ"
            )
        self.weights = _weight_planes(self.weights, self.hr.shape)


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared difference over every element."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    d = a - b
    return (d * d).mean()


def wmse(sr: Tensor, hr: Tensor, weights) -> Tensor:
    """Flow-weighted mean squared error.

    Per pixel, the squared error is summed over channels and multiplied by
    the pixel's weight; the total is divided by batch * h * w (pixel count,
    not element count). Zero weights therefore annihilate the loss, and
    d/d(sr) at a pixel is (2/N) * (sr - hr) * weight.
    """
    sr = _as_tensor(sr)
    hr = _as_tensor(hr)
    if sr.shape != hr.shape:
        raise ValueError(f"shape mismatch: sr {sr.shape} vs hr {hr.shape}")
    n, c, h, w = sr.shape
    planes = _weight_planes(weights, sr.shape)
    wfull = Tensor(np.broadcast_to(planes, (n, c, h, w)))
    d = sr - hr
    return (d * d * wfull).sum() * (1.0 / (n * h * w))


def feature_loss(sr: Tensor, hr: Tensor, extractor) -> Tensor:
    """Mean squared difference of extractor features; the target side is
    detached, so gradients reach sr only."""
    return mse(extractor.forward(_as_tensor(sr)), extractor.forward(_as_tensor(hr).detach()))


def adversarial_losses(disc, sr: Tensor, hr: Tensor):
    """Non-saturating logistic losses from one discriminator evaluation.

    generator term: mean softplus(-D(sr)) = mean -log sigmoid(D(sr));
    discriminator term: mean softplus(-D(hr)) + mean softplus(D(sr)).
    The discriminator term back-propagates into sr: pass sr detached when
    using it for a discriminator update.
    """
    logit_sr = disc.forward(_as_tensor(sr))
    logit_hr = disc.forward(_as_tensor(hr).detach())
    g_loss = softplus(-logit_sr).mean()
    d_loss = softplus(-logit_hr).mean() + softplus(logit_sr).mean()
    return g_loss, d_loss


def sosr_total(wmse_term, feat_term, adv_g_term, w: SosrWeights):
    """Weighted sum alpha*pixel + beta*feature + gamma*adversarial.

    Accepts scalars or scalar tensors; a zero weight with a plain-zero term
    degenerates to the corresponding ablation.
    """
    return w.alpha * wmse_term + w.beta * feat_term + w.gamma * adv_g_term


# ---------------------------------------------------------------------------
# trainer
# ---------------------------------------------------------------------------


def _resolve_manifest(dataset) -> Manifest:
    if isinstance(dataset, Manifest):
        return dataset
    return load_manifest(dataset)


def _load_blobs(manifest: Manifest) -> list[dict]:
    return [manifest.load_patch(rec) for rec in manifest.records]


def _stack(blobs: list[dict], idx: np.ndarray, key: str) -> np.ndarray:
    return np.stack([blobs[i][key] for i in idx])


def write_log(rows: list[dict], fields: list[str], path) -> None:
    """CSV log, one row per iteration, stable field order and formatting."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for row in rows:
            writer.writerow([
                row[f] if isinstance(row[f], int) else f"{row[f]:.8g}" for f in fields
            ])


_SOSR_FIELDS = ["iteration", "wmse", "feature", "adv_g", "adv_d", "total"]


def train_sosr(dataset, config: RunConfig, out_dir=None):
    """Alternating spatial-objective training over manifest patches.

    Per iteration: one discriminator step on detached generator output,
    then one generator step on alpha*wmse + beta*feature + gamma*adv.
    A zero beta or gamma skips that term entirely (ablation rows); with
    gamma zero the discriminator is never touched. pixel_loss "mse"
    replaces the weight maps with ones. Deterministic for a fixed seed.
    """
    manifest = _resolve_manifest(dataset)
    if not manifest.records:
        raise ValueError("dataset is empty")
    weights = SosrWeights(config.sosr_pixel, config.sosr_feature, config.sosr_adversarial)
    blobs = _load_blobs(manifest)
    channels = manifest.channels

    model = build_sr_net(config.depth, config.width, channels, seed=config.seed)
    g_opt = Adam(model.parameters, lr=config.lr)
    disc = ext = d_opt = None
    if weights.gamma > 0:
        disc = build_discriminator(channels, width=16, seed=config.seed + 1)
        d_opt = Adam(disc.parameters, lr=config.lr)
    if weights.beta > 0:
        ext = build_feature_extractor(channels, width=16, seed=config.seed + 2)

    rng = np.random.default_rng(config.seed)
    rows: list[dict] = []
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    for it in range(1, config.iterations + 1):
        idx = rng.integers(0, len(blobs), size=config.batch)
        hr = _stack(blobs, idx, "hr_t")
        lr_up = _stack(blobs, idx, "lrup_t")
        if config.pixel_loss == "mse":
            wplanes = np.ones((config.batch, 1) + hr.shape[2:], np.float32)
        else:
            wplanes = _stack(blobs, idx, "weight")
        hr_t = Tensor(hr)
        lr_t = Tensor(lr_up)

        adv_d = 0.0
        if disc is not None:
            sr_detached = model.forward(lr_t).detach()
            with Tape() as tape:
                _, d_loss = adversarial_losses(disc, sr_detached, hr_t)
            d_opt.zero_grad()
            backward(tape, d_loss)
            d_opt.step()
            adv_d = d_loss.item()

        with Tape() as tape:
            sr = model.forward(lr_t)
            pixel = wmse(sr, hr_t, wplanes)
            feat = feature_loss(sr, hr_t, ext) if ext is not None else 0.0
            adv_g = softplus(-disc.forward(sr)).mean() if disc is not None else 0.0
            total = sosr_total(pixel, feat, adv_g, weights)
        g_opt.zero_grad()
        backward(tape, total)
        g_opt.step()

        rows.append({
            "iteration": it,
            "wmse": pixel.item(),
            "feature": feat.item() if ext is not None else 0.0,
            "adv_g": adv_g.item() if disc is not None else 0.0,
            "adv_d": adv_d,
            "total": total.item(),
        })
        if out is not None and config.checkpoint_every and it % config.checkpoint_every == 0:
            save_checkpoint(model, out / f"model_{it:06d}.ckpt")

    if out is not None:
        save_checkpoint(model, out / "model.ckpt")
        write_log(rows, _SOSR_FIELDS, out / "log.csv")
    return model, rows
