"""Empirical tuning for the two directional acceptance claims."""
import sys, time
sys.path.insert(0, "/root/pkg/src")
import numpy as np
from flowsr.autograd import Tensor
from flowsr.config import RunConfig
from flowsr.data import FrameSequence, bicubic_resize, build_manifest, load_frame, make_synthetic_dataset
from flowsr.evaluate import warp_error
from flowsr.flow import flo_read
from flowsr.sosr import train_sosr
from flowsr.tosr import train_tosr

SCALE = 4

def sr_clip(model, seq):
    """Downsample HR frames 4x, bicubic-upsample back, run the model."""
    out = []
    for i in range(seq.frame_count):
        hr = seq.load(i)
        h, w = hr.shape[-2:]
        lr = bicubic_resize(hr, h // SCALE, w // SCALE)
        up = bicubic_resize(lr, h, w)
        out.append(model.forward(Tensor(up[None])).data[0])
    return out

def gt_flows(seq):
    return [flo_read(seq.directory / "flow" / f"{i:06d}.flo")
            for i in range(seq.frame_count - 1)]


def tosr_trial(seed):
    t0 = time.time()
    train_root = f"/tmp/dir_tosr/train{seed}"
    eval_root = f"/tmp/dir_tosr/eval{seed}"
    make_synthetic_dataset("translating-texture", train_root, seed=100 + seed,
                           count=2, frames=8, height=64, width=64, channels=1, shift=(1, 0))
    make_synthetic_dataset("translating-texture", eval_root, seed=900 + seed,
                           count=1, frames=8, height=64, width=64, channels=1, shift=(1, 0))
    cfg = RunConfig(scale=SCALE, channels=1, patch=24, top_k=6, stride=12)
    man = f"/tmp/dir_tosr/man{seed}"
    build_manifest(train_root, "provided", cfg, man)

    base = dict(dataset=man, batch=8, iterations=500, depth=4, width=12,
                seed=seed, lr=1e-3, scale=SCALE, channels=1, patch=24)
    cfg_full = RunConfig(**base)                       # (1, 0.8, 0.1)
    cfg_abl = RunConfig(**base, tosr_warp_sr=0.0, tosr_warp_hr=0.0)
    m_full, _ = train_tosr(man, cfg_full, out_dir=None)
    m_abl, _ = train_tosr(man, cfg_abl, out_dir=None)

    seq = FrameSequence(f"{eval_root}/seq000")
    flows = gt_flows(seq)
    _, we_full = warp_error(sr_clip(m_full, seq), flows)
    _, we_abl = warp_error(sr_clip(m_abl, seq), flows)
    dt = time.time() - t0
    print(f"  seed {seed}: warp_error full={we_full:.6g} ablated={we_abl:.6g} "
          f"{'WIN' if we_full < we_abl else 'LOSS'} ({dt:.0f}s)")
    return we_full < we_abl


def masked_mse(sr, hr, mask):
    m = mask > 0.5
    if not m.any():
        return 0.0
    d = (sr - hr) ** 2
    return float(d[..., m].mean())

def sosr_trial(seed):
    t0 = time.time()
    train_root = f"/tmp/dir_sosr/train{seed}"
    eval_root = f"/tmp/dir_sosr/eval{seed}"
    make_synthetic_dataset("moving-foreground", train_root, seed=100 + seed,
                           count=2, frames=8, height=64, width=64, channels=1,
                           block=24, step=2)
    make_synthetic_dataset("moving-foreground", eval_root, seed=900 + seed,
                           count=1, frames=8, height=64, width=64, channels=1,
                           block=24, step=2)
    cfg = RunConfig(scale=SCALE, channels=1, patch=24, top_k=6, stride=12)
    man = f"/tmp/dir_sosr/man{seed}"
    build_manifest(train_root, "provided", cfg, man)

    base = dict(dataset=man, batch=8, iterations=500, depth=4, width=12,
                seed=seed, lr=1e-3, scale=SCALE, channels=1, patch=24,
                sosr_feature=0.0, sosr_adversarial=0.0)
    m_wmse, _ = train_sosr(man, RunConfig(**base), out_dir=None)
    m_mse, _ = train_sosr(man, RunConfig(**base, pixel_loss="mse"), out_dir=None)

    seq = FrameSequence(f"{eval_root}/seq000")
    masks = [load_frame(seq.directory / "mask" / f"{i:06d}.png")[0]
             for i in range(seq.frame_count)]
    hrs = [seq.load(i) for i in range(seq.frame_count)]
    srw = sr_clip(m_wmse, seq)
    srm = sr_clip(m_mse, seq)
    fg_w = float(np.mean([masked_mse(s, h, m) for s, h, m in zip(srw, hrs, masks)]))
    fg_m = float(np.mean([masked_mse(s, h, m) for s, h, m in zip(srm, hrs, masks)]))
    dt = time.time() - t0
    print(f"  seed {seed}: fg-mse wmse={fg_w:.6g} mse={fg_m:.6g} "
          f"{'WIN' if fg_w < fg_m else 'LOSS'} ({dt:.0f}s)")
    return fg_w < fg_m


if __name__ == "__main__":
    which = sys.argv[1] if len(sys.argv) > 1 else "both"
    t0 = time.time()
    if which in ("tosr", "both"):
        print("ToSR directional (warp consistency on held-out clip):")
        wins = sum(tosr_trial(s) for s in range(5))
        print(f"  -> {wins}/5 wins, {time.time()-t0:.0f}s total")
    t1 = time.time()
    if which in ("sosr", "both"):
        print("SoSR directional (foreground mse on held-out clip):")
        wins = sum(sosr_trial(s) for s in range(5))
        print(f"  -> {wins}/5 wins, {time.time()-t1:.0f}s total")
