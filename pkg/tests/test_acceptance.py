"""Acceptance gate: one test per headline guarantee of the toolkit.

Each test states its claim, checks it at the documented tolerance, and
prints a single PASS line with the measured values (run with -v for the
per-criterion verdicts, add -s to see the measurements). The directional
claims retrain small models and take a few minutes; everything else is
seconds.
"""

import struct
import time

import numpy as np
import pytest

from flowsr.autograd import Tape, Tensor, backward, bilinear_warp
from flowsr.cli import dispatch
from flowsr.config import RunConfig
from flowsr.data import (
    FrameSequence,
    bicubic_resize,
    build_manifest,
    load_frame,
    make_synthetic_dataset,
    save_frame,
)
from flowsr.evaluate import psnr, ssim, temporal_profile, warp_error
from flowsr.flow import FlowField, endpoint_error, estimate_flow, flo_read, flo_write, weight_map
from flowsr.models import build_sr_net
from flowsr.selftest import gradient_suite
from flowsr.sosr import mse, train_sosr, wmse
from flowsr.tosr import FramePair, TosrWeights, tosr_losses, tosr_total, train_tosr


class Identity:
    parameters = []

    def forward(self, x):
        return x * 1.0


def ok(line: str) -> None:
    print(f"PASS {line}")


# ---------------------------------------------------------------------------
# 1. gradient correctness of every differentiable building block
# ---------------------------------------------------------------------------


def test_gradient_suite_accuracy_and_budget():
    t0 = time.monotonic()
    worst = gradient_suite(instances=20, seed=0)
    elapsed = time.monotonic() - t0
    assert elapsed <= 60.0, f"gradient suite took {elapsed:.1f}s, budget 60s"
    peak = max(worst.values())
    assert peak <= 1e-3, f"worst relative error {peak:.3g} exceeds 1e-3"
    assert len(worst) >= 15  # ops and losses are all represented
    ok(
        f"gradient suite: {len(worst)} checks x 20 instances, worst relative "
        f"error {peak:.3g} (<= 1e-3) in {elapsed:.1f}s (<= 60s)"
    )


# ---------------------------------------------------------------------------
# 2. weighted pixel loss identities
# ---------------------------------------------------------------------------


def test_weighted_mse_identities():
    rng = np.random.default_rng(0)
    sr = Tensor(rng.random((2, 1, 6, 6)).astype(np.float32))
    hr = Tensor(rng.random((2, 1, 6, 6)).astype(np.float32))

    zero_w = weight_map(FlowField.zero(6, 6)).w
    got_zero = wmse(sr, hr, np.broadcast_to(zero_w, (2, 1, 6, 6))).item()
    assert got_zero == 0.0, f"zero-motion loss is {got_zero}, not 0"

    unit = FlowField(np.ones((6, 6), np.float32), np.zeros((6, 6), np.float32))
    unit_w = np.broadcast_to(weight_map(unit).w, (2, 1, 6, 6))
    diff = abs(wmse(sr, hr, unit_w).item() - mse(sr, hr).item())
    assert diff <= 1e-6, f"unit-motion loss differs from mse by {diff:.3g}"

    sr2 = Tensor(np.array([[1.0, 0.0], [0.0, 2.0]], np.float32).reshape(1, 1, 2, 2))
    hr2 = Tensor(np.zeros((1, 1, 2, 2), np.float32))
    flow = FlowField(np.full((2, 2), 3.0, np.float32), np.full((2, 2), 4.0, np.float32))
    w2 = weight_map(flow).w[None, None]
    got = wmse(sr2, hr2, w2).item()
    assert abs(got - 6.25) <= 1e-6, f"hand case gave {got}, want 6.25"
    ok(
        "weighted mse identities: zero flow -> 0 exact, unit flow == mse "
        f"(diff {diff:.3g} <= 1e-6), hand case {got} == 6.25 (<= 1e-6)"
    )


# ---------------------------------------------------------------------------
# 3. temporal objective: fixed point and shared-weight gradient
# ---------------------------------------------------------------------------


def test_temporal_fixed_point_and_siamese_gradient():
    rng = np.random.default_rng(1)
    img = rng.random((1, 1, 8, 8)).astype(np.float32)
    pair = FramePair(img, img, img, img, FlowField.zero(8, 8))
    terms = [t.item() for t in tosr_losses(Identity(), pair)]
    assert all(abs(t) <= 1e-7 for t in terms), f"fixed point violated: {terms}"

    model = build_sr_net(depth=2, width=4, channels=1, seed=2)
    x = rng.random((1, 1, 8, 8)).astype(np.float32)
    hr = rng.random((1, 1, 8, 8)).astype(np.float32)

    with Tape() as tape:
        single = mse(model.forward(Tensor(x)), Tensor(hr))
    for p in model.parameters:
        p.grad[...] = 0.0
    backward(tape, single)
    single_grads = [p.grad.copy() for p in model.parameters]

    sym = FramePair(hr, hr, x, x, FlowField.zero(8, 8))
    with Tape() as tape:
        l_sr, l_warp_sr, l_warp_hr = tosr_losses(model, sym)
        total = tosr_total(l_sr, l_warp_sr, l_warp_hr, TosrWeights(1.0, 0.0, 0.0))
    for p in model.parameters:
        p.grad[...] = 0.0
    backward(tape, total)

    worst = max(
        float(np.abs(p.grad - 2.0 * s).max())
        for p, s in zip(model.parameters, single_grads)
    )
    assert worst <= 1e-6, f"siamese gradient is not 2x the single-frame one ({worst:.3g})"
    ok(
        f"temporal objective: static fixed point terms {terms} (<= 1e-7), "
        f"siamese gradient == 2x single-frame within {worst:.3g} (<= 1e-6)"
    )


# ---------------------------------------------------------------------------
# 4. warp operator contract
# ---------------------------------------------------------------------------


def test_warp_contract():
    rng = np.random.default_rng(2)
    src = Tensor(rng.random((2, 3, 5, 7)).astype(np.float32))
    out = bilinear_warp(src, [FlowField.zero(5, 7)] * 2)
    assert np.array_equal(out.data, src.data) and out.data.dtype == src.data.dtype

    shift = FlowField(np.ones((5, 7), np.float32), np.zeros((5, 7), np.float32))
    shifted = bilinear_warp(src, [shift] * 2)
    assert np.array_equal(shifted.data[..., :-1], src.data[..., 1:])

    row = Tensor(np.array([0.0, 2.0, 4.0], np.float32).reshape(1, 1, 1, 3))
    half = FlowField(np.full((1, 3), 0.5, np.float32), np.zeros((1, 3), np.float32))
    got = bilinear_warp(row, [half]).data.ravel()
    assert np.array_equal(got, np.array([1.0, 3.0, 4.0], np.float32)), got
    ok(
        "warp contract: zero flow bit-identical, integer shift exact, "
        f"half-pixel case -> {got.tolist()} == [1, 3, 4] exact"
    )


# ---------------------------------------------------------------------------
# 5. flow file format
# ---------------------------------------------------------------------------


def test_flow_file_round_trip_and_hand_decode(tmp_path):
    rng = np.random.default_rng(3)
    field = FlowField(
        rng.standard_normal((9, 13)).astype(np.float32),
        rng.standard_normal((9, 13)).astype(np.float32),
    )
    path = tmp_path / "field.flo"
    flo_write(field, path)
    back = flo_read(path)
    assert np.array_equal(back.u, field.u) and np.array_equal(back.v, field.v)
    flo_write(back, tmp_path / "again.flo")
    assert path.read_bytes() == (tmp_path / "again.flo").read_bytes()

    hand = struct.pack("<f", 202021.25) + struct.pack("<ii", 1, 1) + struct.pack(
        "<2f", 1.0, -2.0
    )
    assert len(hand) == 20
    (tmp_path / "hand.flo").write_bytes(hand)
    tiny = flo_read(tmp_path / "hand.flo")
    assert (tiny.height, tiny.width) == (1, 1)
    assert float(tiny.u[0, 0]) == 1.0 and float(tiny.v[0, 0]) == -2.0
    ok(
        "flow files: write/read/write round trip bit-exact, hand-encoded "
        "20-byte 1x1 file decodes to (1.0, -2.0)"
    )


# ---------------------------------------------------------------------------
# 6. flow estimator oracle on a known translation
# ---------------------------------------------------------------------------


def test_flow_estimator_translation_oracle(tmp_path):
    make_synthetic_dataset(
        "translating-texture", tmp_path, seed=8, count=1, frames=2,
        height=128, width=128, channels=1, shift=(1, 0),
    )
    seq = FrameSequence(tmp_path / "seq000")
    t0 = time.monotonic()
    field = estimate_flow(seq.load(0), seq.load(1), smoothness=15.0, iterations=200)
    elapsed = time.monotonic() - t0
    assert elapsed <= 30.0, f"flow estimation took {elapsed:.1f}s, budget 30s"

    m = 13  # the interior excludes a 10% band per side, where clamped
    # borders make the translation model wrong
    crop = lambda f: FlowField(f.u[m:-m, m:-m], f.v[m:-m, m:-m])
    truth = FlowField(
        np.ones((128 - 2 * m,) * 2, np.float32), np.zeros((128 - 2 * m,) * 2, np.float32)
    )
    epe = endpoint_error(crop(field), truth)
    assert epe <= 0.3, f"interior endpoint error {epe:.4f}px exceeds 0.3px"
    ok(
        f"flow oracle: interior endpoint error {epe:.4f}px (<= 0.3px) on a "
        f"1px translation at 128x128, 200 iterations in {elapsed:.2f}s (<= 30s)"
    )


# ---------------------------------------------------------------------------
# 7 & 8. directional training claims
# ---------------------------------------------------------------------------

_SCALE = 4


def _sr_clip(model, seq):
    """Downsample HR frames, bicubic-upsample back, run the model."""
    out = []
    for i in range(seq.frame_count):
        hr = seq.load(i)
        h, w = hr.shape[-2:]
        up = bicubic_resize(bicubic_resize(hr, h // _SCALE, w // _SCALE), h, w)
        out.append(model.forward(Tensor(up[None])).data[0])
    return out


def _gt_flows(seq):
    return [
        flo_read(seq.directory / "flow" / f"{i:06d}.flo")
        for i in range(seq.frame_count - 1)
    ]


def _masked_mse(sr, hr, mask):
    m = mask > 0.5
    return float(((sr - hr) ** 2)[..., m].mean()) if m.any() else 0.0


def _prep(base, kind, seed, **synth_kw):
    make_synthetic_dataset(kind, base / "train", seed=100 + seed, count=2,
                           frames=8, height=64, width=64, channels=1, **synth_kw)
    make_synthetic_dataset(kind, base / "eval", seed=900 + seed, count=1,
                           frames=8, height=64, width=64, channels=1, **synth_kw)
    cfg = RunConfig(scale=_SCALE, channels=1, patch=24, top_k=6, stride=12)
    build_manifest(base / "train", "provided", cfg, base / "man")
    return base / "man", FrameSequence(base / "eval" / "seq000")


def _train_base(man, seed, **kw):
    return dict(dataset=str(man), batch=8, iterations=500, depth=4, width=12,
                seed=seed, lr=1e-3, scale=_SCALE, channels=1, patch=24, **kw)


def test_temporal_objective_improves_warp_consistency(tmp_path):
    t0 = time.monotonic()
    outcomes = []
    for seed in range(5):
        man, seq = _prep(tmp_path / f"s{seed}", "translating-texture", seed, shift=(1, 0))
        base = _train_base(man, seed)
        full, _ = train_tosr(man, RunConfig(**base))
        ablated, _ = train_tosr(
            man, RunConfig(**base, tosr_warp_sr=0.0, tosr_warp_hr=0.0)
        )
        flows = _gt_flows(seq)
        _, we_full = warp_error(_sr_clip(full, seq), flows)
        _, we_ablated = warp_error(_sr_clip(ablated, seq), flows)
        outcomes.append((we_full, we_ablated))
    elapsed = time.monotonic() - t0
    wins = sum(full < ablated for full, ablated in outcomes)
    detail = ", ".join(f"{f:.4g}<{a:.4g}" if f < a else f"{f:.4g}>={a:.4g}"
                       for f, a in outcomes)
    assert elapsed <= 600.0, f"temporal directional runs took {elapsed:.0f}s, budget 600s"
    assert wins >= 4, f"warp-consistency training won only {wins}/5 seeds ({detail})"
    ok(
        f"temporal objective: held-out warp error lower with consistency terms "
        f"in {wins}/5 seeds ({detail}) in {elapsed:.0f}s (<= 600s)"
    )


def test_spatial_objective_improves_moving_foreground(tmp_path):
    t0 = time.monotonic()
    outcomes = []
    for seed in range(5):
        man, seq = _prep(tmp_path / f"s{seed}", "moving-foreground", seed,
                         block=24, step=2)
        base = _train_base(man, seed, sosr_feature=0.0, sosr_adversarial=0.0)
        weighted, _ = train_sosr(man, RunConfig(**base))
        plain, _ = train_sosr(man, RunConfig(**base, pixel_loss="mse"))
        masks = [
            load_frame(seq.directory / "mask" / f"{i:06d}.png")[0]
            for i in range(seq.frame_count)
        ]
        hrs = [seq.load(i) for i in range(seq.frame_count)]
        fg = [
            float(np.mean([_masked_mse(s, h, m) for s, h, m in zip(clip, hrs, masks)]))
            for clip in (_sr_clip(weighted, seq), _sr_clip(plain, seq))
        ]
        outcomes.append(tuple(fg))
    elapsed = time.monotonic() - t0
    wins = sum(w < p for w, p in outcomes)
    detail = ", ".join(f"{w:.4g}<{p:.4g}" if w < p else f"{w:.4g}>={p:.4g}"
                       for w, p in outcomes)
    assert elapsed <= 600.0, f"spatial directional runs took {elapsed:.0f}s, budget 600s"
    assert wins >= 4, f"motion-weighted training won only {wins}/5 seeds ({detail})"
    ok(
        f"spatial objective: held-out moving-region mse lower with motion "
        f"weighting in {wins}/5 seeds ({detail}) in {elapsed:.0f}s (<= 600s)"
    )


# ---------------------------------------------------------------------------
# 9. evaluation identities
# ---------------------------------------------------------------------------


def test_evaluation_identities():
    a = np.zeros((1, 8, 8))
    b = np.ones((1, 8, 8))  # squared error 1 everywhere at peak 255
    got = psnr(a, b, peak=255.0)
    assert abs(got - 48.1308) <= 1e-3, f"psnr hand case gave {got}"

    img = np.random.default_rng(4).random((3, 16, 16)).astype(np.float32)
    assert ssim(img, img) == 1.0

    frame = np.random.default_rng(5).random((1, 6, 10)).astype(np.float32)
    prof = temporal_profile([frame] * 7, row=3)
    var = float(prof.astype(np.float64).var(axis=-2).max())
    assert var == 0.0, f"static clip shows column variance {var}"

    rng = np.random.default_rng(6)
    f0, f1 = rng.random((1, 8, 8)).astype(np.float32), rng.random((1, 8, 8)).astype(np.float32)
    flow = FlowField(rng.uniform(-1, 1, (8, 8)).astype(np.float32),
                     rng.uniform(-1, 1, (8, 8)).astype(np.float32))
    per_pair, _ = warp_error([f0, f1], [flow])
    pair = FramePair(f0[None], f1[None], f0[None], f1[None], [flow])
    _, l_warp_sr, _ = tosr_losses(Identity(), pair)
    diff = abs(per_pair[0] - l_warp_sr.item())
    assert diff <= 1e-7, f"warp metric differs from training term by {diff:.3g}"
    ok(
        f"evaluation identities: psnr {got:.4f} == 48.1308 (<= 1e-3), identical "
        f"ssim == 1.0, static profile variance 0.0, warp metric == training "
        f"term (diff {diff:.3g} <= 1e-7)"
    )


# ---------------------------------------------------------------------------
# 10. end-to-end determinism
# ---------------------------------------------------------------------------


def test_pipeline_determinism(tmp_path, monkeypatch):
    video = tmp_path / "video"
    assert dispatch([
        "synth", "--kind", "translating-texture", "--out", str(video),
        "--seed", "3", "--count", "1", "--frames", "4",
        "--height", "32", "--width", "32", "--channels", "1",
    ]) == 0
    lr_dir = tmp_path / "lr"
    seq = FrameSequence(video / "seq000")
    lr_dir.mkdir()
    for i in range(seq.frame_count):
        save_frame(bicubic_resize(seq.load(i), 16, 16), lr_dir / f"{i:06d}.png")

    def run(tag: str) -> dict:
        # each run works in its own directory with relative output paths, so
        # recorded paths (the report's profile column) are comparable too
        base = tmp_path / tag
        base.mkdir()
        monkeypatch.chdir(base)
        assert dispatch([
            "prep", "--video-root", str(video), "--out", "prep",
            "--flow-source", "estimate", "--flow-iterations", "60",
            "--scale", "2", "--channels", "1",
            "--patch", "16", "--top-k", "4", "--stride", "8",
        ]) == 0
        assert dispatch([
            "train-tosr", "--dataset", "prep", "--out", "run", "--seed", "0",
            "--depth", "2", "--width", "8", "--batch", "4",
            "--iterations", "100",
        ]) == 0
        assert dispatch([
            "infer", "--checkpoint", "run/model.ckpt",
            "--input", str(lr_dir), "--out", "sr", "--scale", "2",
        ]) == 0
        assert dispatch([
            "eval", "--sr", "sr", "--hr", str(video / "seq000"), "--out", "eval",
            "--flow-source", "estimate", "--flow-iterations", "60",
        ]) == 0
        files = {"manifest": (base / "prep" / "manifest.txt").read_bytes(),
                 "checkpoint": (base / "run" / "model.ckpt").read_bytes(),
                 "train_log": (base / "run" / "log.csv").read_bytes(),
                 "report": (base / "eval" / "report.csv").read_bytes()}
        for i, png in enumerate(sorted((base / "sr").glob("*.png"))):
            files[f"sr_{i}"] = png.read_bytes()
        return files

    first, second = run("a"), run("b")
    assert sorted(first) == sorted(second)
    mismatched = [name for name in first if first[name] != second[name]]
    assert not mismatched, f"outputs differ between identical runs: {mismatched}"
    ok(
        "determinism: synth -> prep -> train(100 iterations) -> infer -> eval "
        f"twice gives {len(first)} bit-identical artifacts "
        "(manifest, checkpoint, logs, report, frames)"
    )
