"""Temporal objective: siamese reconstruction of consecutive frames with
warp-consistency terms, and its trainer.

One parameter set super-resolves both frames of a pair; frame t+1's output
is warped back to frame t along flow computed from the HR pair, and the
losses couple the two outputs: l_sr for per-frame fidelity, l_warp_sr for
consistency between the outputs, l_warp_hr for anchoring the warped output
to the HR frame. Warp losses include border-clamped pixels (no validity
mask).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autograd import Tape, Tensor, backward, bilinear_warp
from .config import RunConfig
from .data import Manifest
from .flow import FlowField
from .models import build_sr_net, save_checkpoint
from .optim import Adam
from .sosr import _as_tensor, _resolve_manifest, mse, write_log

__all__ = [
    "FramePair",
    "TosrWeights",
    "tosr_losses",
    "tosr_total",
    "train_tosr",
]


@dataclass(frozen=True)
class TosrWeights:
    alpha: float = 1.0  # per-frame reconstruction
    beta: float = 0.8  # consistency between the two outputs
    gamma: float = 0.1  # warped output vs HR frame

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError(f"loss weights must be nonnegative, got {self}")


@dataclass
class FramePair:
    """A batch of consecutive-frame training items.

    The flow maps frame t pixels onto frame t+1 and must come from the HR
    frames (the data pipeline guarantees this), one field per batch item.
    """

    hr_t: Tensor
    hr_t1: Tensor
    lr_up_t: Tensor
    lr_up_t1: Tensor
    flows: list[FlowField]

    def __post_init__(self):
        self.hr_t = _as_tensor(self.hr_t)
        self.hr_t1 = _as_tensor(self.hr_t1)
        self.lr_up_t = _as_tensor(self.lr_up_t)
        self.lr_up_t1 = _as_tensor(self.lr_up_t1)
        shape = self.hr_t.shape
        for name in ("hr_t1", "lr_up_t", "lr_up_t1"):
            if getattr(self, name).shape != shape:
                raise ValueError(
                    f"misaligned pair: hr_t is {shape}, {name} is {getattr(self, name).shape}"
                )
        if isinstance(self.flows, FlowField):
            self.flows = [self.flows] * shape[0]
        self.flows = list(self.flows)
        if len(self.flows) != shape[0]:
            raise ValueError(f"need {shape[0]} flow fields, got {len(self.flows)}")
        n, _, h, w = shape
        for f in self.flows:
            if (f.height, f.width) != (h, w):
                raise ValueError(
                    f"misaligned pair: flow {f.height}x{f.width} vs frames {h}x{w}"
                )


def tosr_losses(model, pair: FramePair):
    """The three loss components from two weight-shared forward passes.

    sr_t and sr_t1 come from the same parameter object; the warped output
    pulls sr_t1 back onto frame t along the pair's flow, so gradients reach
    the model through both frames and through the warp.
    """
    sr_t = model.forward(pair.lr_up_t)
    sr_t1 = model.forward(pair.lr_up_t1)
    warped = bilinear_warp(sr_t1, pair.flows)
    l_sr = mse(sr_t, pair.hr_t) + mse(sr_t1, pair.hr_t1)
    l_warp_sr = mse(sr_t, warped)
    l_warp_hr = mse(pair.hr_t, warped)
    return l_sr, l_warp_sr, l_warp_hr


def tosr_total(l_sr, l_warp_sr, l_warp_hr, w: TosrWeights):
    """Weighted sum alpha*l_sr + beta*l_warp_sr + gamma*l_warp_hr."""
    return w.alpha * l_sr + w.beta * l_warp_sr + w.gamma * l_warp_hr


# ---------------------------------------------------------------------------
# trainer
# ---------------------------------------------------------------------------

_TOSR_FIELDS = ["iteration", "l_sr", "l_warp_sr", "l_warp_hr", "total", "lr"]


def _pair_from_blobs(blobs: list[dict], idx: np.ndarray) -> FramePair:
    def stack(key):
        return np.stack([blobs[i][key] for i in idx])

    flows = [
        FlowField(blobs[i]["flow_u"][0], blobs[i]["flow_v"][0]) for i in idx
    ]
    return FramePair(
        stack("hr_t"), stack("hr_t1"), stack("lrup_t"), stack("lrup_t1"), flows
    )


def train_tosr(dataset, config: RunConfig, out_dir=None):
    """Siamese training over manifest frame pairs.

    One Adam step per iteration on tosr_total; the learning rate is scaled
    by lr_decay_factor after every lr_decay_epochs epochs, where one epoch
    is ceil(records / batch) iterations. Deterministic for a fixed seed.
    """
    manifest: Manifest = _resolve_manifest(dataset)
    if not manifest.records:
        raise ValueError("dataset is empty")
    weights = TosrWeights(config.tosr_sr, config.tosr_warp_sr, config.tosr_warp_hr)
    blobs = [manifest.load_patch(rec) for rec in manifest.records]

    model = build_sr_net(config.depth, config.width, manifest.channels, seed=config.seed)
    opt = Adam(model.parameters, lr=config.lr)
    rng = np.random.default_rng(config.seed)
    iters_per_epoch = max(1, -(-len(blobs) // config.batch))

    rows: list[dict] = []
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    for it in range(1, config.iterations + 1):
        epoch = (it - 1) // iters_per_epoch
        opt.lr = config.lr * config.lr_decay_factor ** (epoch // config.lr_decay_epochs)
        idx = rng.integers(0, len(blobs), size=config.batch)
        pair = _pair_from_blobs(blobs, idx)

        with Tape() as tape:
            l_sr, l_warp_sr, l_warp_hr = tosr_losses(model, pair)
            total = tosr_total(l_sr, l_warp_sr, l_warp_hr, weights)
        opt.zero_grad()
        backward(tape, total)
        opt.step()

        rows.append({
            "iteration": it,
            "l_sr": l_sr.item(),
            "l_warp_sr": l_warp_sr.item(),
            "l_warp_hr": l_warp_hr.item(),
            "total": total.item(),
            "lr": opt.lr,
        })
        if out is not None and config.checkpoint_every and it % config.checkpoint_every == 0:
            save_checkpoint(model, out / f"model_{it:06d}.ckpt")

    if out is not None:
        save_checkpoint(model, out / "model.ckpt")
        write_log(rows, _TOSR_FIELDS, out / "log.csv")
    return model, rows
