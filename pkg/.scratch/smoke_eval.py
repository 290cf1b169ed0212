import sys
sys.path.insert(0, "/root/pkg/src")
import numpy as np
from flowsr.autograd import Tensor
from flowsr.flow import FlowField
from flowsr.evaluate import ClipReport, emit_report, psnr, ssim, temporal_profile, warp_error, evaluate_clip
from flowsr.tosr import FramePair, tosr_losses
from flowsr.sosr import mse
from flowsr.data import FrameSequence, make_synthetic_dataset
from flowsr.config import RunConfig

rng = np.random.default_rng(11)

# psnr: identical -> 100 cap; constant 1/255 offset -> 20*log10(255)
a = rng.random((1, 16, 16)).astype(np.float32)
assert psnr(a, a.copy()) == 100.0
b = (a + 1.0 / 255.0).astype(np.float64)
v = psnr(a.astype(np.float64), b)
assert abs(v - 20 * np.log10(255.0)) < 1e-3, v
print(f"psnr hand case {v:.4f} (want {20*np.log10(255.0):.4f})")
# symmetry and monotone worse with more noise
n1 = a + 0.01 * rng.standard_normal(a.shape).astype(np.float32)
n2 = a + 0.05 * rng.standard_normal(a.shape).astype(np.float32)
assert psnr(a, n1) == psnr(n1, a)
assert psnr(a, n1) > psnr(a, n2)

# ssim: identical -> exactly 1.0; noisy < 1; bounded
assert ssim(a, a.copy()) == 1.0
s_noisy = ssim(a, n2)
assert -1.0 <= s_noisy < 1.0
c3 = rng.random((3, 16, 16)).astype(np.float32)
assert ssim(c3, c3.copy()) == 1.0
for _ in range(20):
    x = rng.random((1, 9, 9)).astype(np.float32)
    y = rng.random((1, 9, 9)).astype(np.float32)
    s = ssim(x, y)
    assert -1.0 - 1e-9 <= s <= 1.0 + 1e-9
# anticorrelated small case pushes negative-ish ssim without leaving bounds
x = np.zeros((1, 8, 8), np.float32); x[0, ::2] = 1.0
y = 1.0 - x
assert -1.0 <= ssim(x, y) < 0.5
print(f"ssim noisy {s_noisy:.4f}, ok")

# temporal_profile: static clip -> zero column variance
static = [np.tile(rng.random((1, 1, 12)).astype(np.float32), (1, 10, 1)) for _ in range(7)]
static = [static[0].copy() for _ in range(7)]
prof = temporal_profile(static, row=4)
assert prof.shape == (1, 7, 12)
assert prof.astype(np.float64).var(axis=1).max() == 0.0
try:
    temporal_profile(static, row=10)
    raise SystemError
except ValueError as e:
    assert "row" in str(e)

# warp_error == l_warp_sr on shared inputs
h = w = 12
f_t = rng.random((1, h, w)).astype(np.float32)
f_t1 = rng.random((1, h, w)).astype(np.float32)
u = (0.5 * rng.standard_normal((h, w))).astype(np.float32)
v_ = (0.5 * rng.standard_normal((h, w))).astype(np.float32)
flow = FlowField(u, v_)
per, mean = warp_error([f_t, f_t1], [flow])
class IdModel:
    def forward(self, x):
        return x if isinstance(x, Tensor) else Tensor(x)
pair = FramePair(hr_t=f_t[None], hr_t1=f_t1[None], lr_up_t=f_t[None], lr_up_t1=f_t1[None], flows=flow)
_, l_warp_sr, _ = tosr_losses(IdModel(), pair)
assert abs(per[0] - l_warp_sr.item()) <= 1e-7, (per[0], l_warp_sr.item())
assert mean == per[0]
print(f"warp_error == l_warp_sr: {per[0]:.6g}")

# counts mismatch
try:
    warp_error([f_t, f_t1], [])
    raise SystemError
except ValueError:
    pass

# evaluate_clip end to end on a synthetic pair of dirs
make_synthetic_dataset("translating-texture", "/tmp/evds", seed=3, count=1, frames=5,
                       height=48, width=48, channels=1, shift=(1, 0))
cfg = RunConfig(channels=1, flow_iterations=50)
seq = FrameSequence("/tmp/evds/seq000")
rep = evaluate_clip(seq, seq, cfg, flow_source="provided", profile_dir="/tmp/evprof")
assert rep.frame_count == 5
assert all(p == 100.0 for p in rep.psnr)
assert all(s == 1.0 for s in rep.ssim)
assert rep.mean_warp < 1e-3  # integer-translation clip warps back almost exactly
assert rep.profile_path.endswith(".png")
print(f"evaluate_clip self vs self: psnr {rep.psnr[0]}, warp {rep.mean_warp:.3g}")

# emit_report round trip
import csv
rep2 = ClipReport(clip_id="other", psnr=[30.0, 31.5], ssim=[0.9, 0.95], warp=[0.001], mean_warp=0.001)
emit_report([rep, rep2], "/tmp/report.csv")
rows = list(csv.reader(open("/tmp/report.csv")))
assert rows[0] == ["clip", "frames", "psnr", "ssim", "warp_error", "profile"]
assert rows[1][0] == "seq000" and rows[2][0] == "other" and rows[3][0] == "mean"
assert abs(float(rows[2][2]) - 30.75) < 1e-4
assert abs(float(rows[3][4]) - (rep.mean_warp + 0.001) / 2) <= 1e-6 * 0.01
emit_report([], "/tmp/report_empty.csv")
rows = list(csv.reader(open("/tmp/report_empty.csv")))
assert rows[1] == ["mean", "n/a", "n/a", "n/a", "n/a", ""]
print("emit_report ok")
print("ALL EVALUATE SMOKE TESTS PASSED")
