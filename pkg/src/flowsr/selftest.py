"""Built-in verification suite, runnable from the command line.

Two layers: finite-difference gradient checks covering every differentiable
op and loss, and closed-form identity checks for the losses and metrics.
Failures name the offending check so a broken op is identified directly.
"""

from __future__ import annotations

import time

import numpy as np

from .autograd import Tensor, bilinear_warp, conv2d, leaky_relu, softplus, spatial_mean
from .flow import FlowField
from .gradcheck import GradCheckFailure, away_from_kinks, check_gradient
from .models import build_discriminator, build_feature_extractor
from .sosr import SosrWeights, adversarial_losses, feature_loss, mse, sosr_total, wmse
from .tosr import FramePair, TosrWeights, tosr_losses, tosr_total

__all__ = ["gradient_suite", "identity_suite", "run_selftest"]


class _Identity:
    def forward(self, x):
        return x if isinstance(x, Tensor) else Tensor(x)


def _gradient_checks(rng: np.random.Generator):
    """Yield (name, fn, inputs, wrt) tuples; each is one gradient instance."""
    n, c, h, w = 1, 2, 6, 6
    img = lambda ch=c: rng.uniform(-1, 1, (n, ch, h, w))

    a, b = img(), img()
    yield "add.lhs", lambda x, y: (x + y).mean(), [a, b], 0
    yield "add.rhs", lambda x, y: (x + y).mean(), [a, b], 1
    yield "sub.lhs", lambda x, y: (x - y).mean(), [a, b], 0
    yield "sub.rhs", lambda x, y: (x - y).mean(), [a, b], 1
    yield "mul.lhs", lambda x, y: (x * y).mean(), [a, b], 0
    yield "mul.rhs", lambda x, y: (x * y).mean(), [a, b], 1
    yield "mul.scalar", lambda x: (x * 0.7).sum(), [img()], 0
    yield "neg", lambda x: (-x).mean(), [img()], 0
    yield "sum", lambda x: x.sum(), [img()], 0
    yield "mean", lambda x: x.mean(), [img()], 0

    kx = img()
    kw = rng.uniform(-1, 1, (3, c, 3, 3))
    kb = rng.uniform(-1, 1, (3,))
    conv = lambda x, wgt, bias: conv2d(x, wgt, bias, stride=1, zero_pad=1).mean()
    yield "conv2d.input", conv, [kx, kw, kb], 0
    yield "conv2d.weight", conv, [kx, kw, kb], 1
    yield "conv2d.bias", conv, [kx, kw, kb], 2
    conv_s2 = lambda x, wgt, bias: conv2d(x, wgt, bias, stride=2, zero_pad=0).mean()
    yield "conv2d.stride2", conv_s2, [kx, kw, kb], 0

    yield "leaky_relu", lambda x: leaky_relu(x, 0.2).mean(), [away_from_kinks(img())], 0
    yield "softplus", lambda x: softplus(x).mean(), [3 * img()], 0
    yield "spatial_mean", lambda x: spatial_mean(x).sum(), [img()], 0

    flow = FlowField(
        rng.uniform(-1.5, 1.5, (h, w)).astype(np.float32),
        rng.uniform(-1.5, 1.5, (h, w)).astype(np.float32),
    )
    yield "bilinear_warp", lambda x: bilinear_warp(x, [flow]).mean(), [img()], 0

    tgt = img()
    yield "loss.mse", lambda x: mse(x, Tensor(tgt, dtype=np.float64)), [img()], 0
    wmap = rng.uniform(0, 2, (n, 1, h, w))
    yield "loss.wmse", lambda x: wmse(x, Tensor(tgt, dtype=np.float64), wmap), [img()], 0


def _loss_gradient_checks(rng: np.random.Generator):
    """Composite losses through small fixed networks; checked wrt the image.

    These pass through leaky_relu layers whose kinks live in pre-activation
    space, out of reach of input-space nudging, so they use a smaller step
    and rely on the suite's bounded resampling when a stencil lands on one.
    """
    ext = build_feature_extractor(channels=1, width=4, seed=17)
    disc = build_discriminator(channels=1, width=4, seed=18)
    h = w = 8
    img = lambda: rng.uniform(0, 1, (1, 1, h, w))

    tgt = img()
    yield "loss.feature", lambda x: feature_loss(x, Tensor(tgt, dtype=np.float64), ext), [img()], 0
    yield "loss.adv_g", lambda x: adversarial_losses(disc, x, x.detach())[0], [img()], 0
    yield "loss.adv_d", lambda x: adversarial_losses(disc, x, Tensor(tgt, dtype=np.float64))[1], [img()], 0

    flow = FlowField(
        rng.uniform(-1.0, 1.0, (h, w)).astype(np.float32),
        rng.uniform(-1.0, 1.0, (h, w)).astype(np.float32),
    )
    model = _Identity()

    def tosr_combined(lr_t, lr_t1):
        pair = FramePair(hr_t=tgt, hr_t1=tgt, lr_up_t=lr_t, lr_up_t1=lr_t1, flows=flow)
        l_sr, l_warp_sr, l_warp_hr = tosr_losses(model, pair)
        return l_sr + 0.8 * l_warp_sr + 0.1 * l_warp_hr

    yield "loss.tosr.frame_t", tosr_combined, [img(), img()], 0
    yield "loss.tosr.frame_t1", tosr_combined, [img(), img()], 1


def _all_checks(rng: np.random.Generator) -> list:
    checks = [(name, fn, inputs, wrt, 1e-3) for name, fn, inputs, wrt in _gradient_checks(rng)]
    checks += [(name, fn, inputs, wrt, 1e-3) for name, fn, inputs, wrt in _loss_gradient_checks(rng)]
    return checks


_RESAMPLE_LIMIT = 5


def gradient_suite(instances: int = 20, seed: int = 0, report=None) -> dict:
    """Run every gradient check ``instances`` times on fresh random draws.

    Returns {check name: worst relative error}. Raises GradCheckFailure
    naming the first failing check. A check whose finite-difference stencil
    straddles an activation kink is redrawn (a broken backward fails every
    draw; a kink hit is specific to one), at most _RESAMPLE_LIMIT times.
    """
    worst: dict = {}
    for k in range(instances):
        count = len(_all_checks(np.random.default_rng([seed, k])))
        for idx in range(count):
            failure = None
            for attempt in range(_RESAMPLE_LIMIT):
                rng = np.random.default_rng([seed, k, attempt])
                name, fn, inputs, wrt, h = _all_checks(rng)[idx]
                try:
                    err = check_gradient(fn, inputs, wrt=wrt, h=h, name=name)
                    break
                except GradCheckFailure as exc:
                    failure = exc
            else:
                raise failure
            worst[name] = max(worst.get(name, 0.0), err)
    if report is not None:
        for name in sorted(worst):
            print(f"ok {name} (worst rel err {worst[name]:.3g})", file=report)
    return worst


class IdentityFailure(AssertionError):
    pass


def _close(name: str, got: float, want: float, tol: float) -> None:
    if not abs(got - want) <= tol:
        raise IdentityFailure(f"{name}: got {got!r}, want {want!r} within {tol}")


def identity_suite(report=None) -> list:
    """Closed-form checks for the losses and metrics; returns check names."""
    from .evaluate import psnr, ssim

    rng = np.random.default_rng(123)
    done = []

    def ok(name):
        done.append(name)
        if report is not None:
            print(f"ok {name}", file=report)

    sr = Tensor(rng.random((1, 1, 4, 4), np.float32).astype(np.float32))
    hr = Tensor(rng.random((1, 1, 4, 4), np.float32).astype(np.float32))
    _close("wmse.zero_weight", wmse(sr, hr, np.zeros((1, 1, 4, 4), np.float32)).item(), 0.0, 0.0)
    ok("wmse.zero_weight")
    _close(
        "wmse.unit_weight_is_mse",
        wmse(sr, hr, np.ones((1, 1, 4, 4), np.float32)).item(),
        mse(sr, hr).item(),
        1e-6,
    )
    ok("wmse.unit_weight_is_mse")
    hand_sr = Tensor(np.full((1, 1, 2, 2), 2.5, np.float32))
    hand_hr = Tensor(np.zeros((1, 1, 2, 2), np.float32))
    hand_w = np.array([[[[1.0, 0.0], [0.0, 3.0]]]], np.float32)
    _close("wmse.hand_6.25", wmse(hand_sr, hand_hr, hand_w).item(), 6.25, 1e-6)
    ok("wmse.hand_6.25")

    frame = rng.random((1, 1, 4, 4)).astype(np.float32)
    static = FramePair(hr_t=frame, hr_t1=frame, lr_up_t=frame, lr_up_t1=frame,
                       flows=FlowField.zero(4, 4))
    l_sr, l_warp_sr, l_warp_hr = tosr_losses(_Identity(), static)
    for name, val in (("l_sr", l_sr), ("l_warp_sr", l_warp_sr), ("l_warp_hr", l_warp_hr)):
        _close(f"tosr.fixed_point.{name}", val.item(), 0.0, 1e-7)
    ok("tosr.fixed_point")

    src = Tensor(rng.random((1, 1, 5, 5)).astype(np.float32))
    out = bilinear_warp(src, [FlowField.zero(5, 5)])
    if not np.array_equal(out.data, src.data):
        raise IdentityFailure("warp.zero_flow: output not bit-identical to source")
    ok("warp.zero_flow")

    row = Tensor(np.array([[[[1.0, 3.0, 4.0, 0.0]]]], np.float32))
    half = FlowField(np.full((1, 4), 0.5, np.float32), np.zeros((1, 4), np.float32))
    got = bilinear_warp(row, [half]).data[0, 0, 0]
    for i, want in enumerate([2.0, 3.5, 2.0]):
        _close(f"warp.half_pixel[{i}]", float(got[i]), want, 0.0)
    ok("warp.half_pixel")

    class _Const:
        def __init__(self, val):
            self.val = val

        def forward(self, x):
            return Tensor(np.full((x.data.shape[0], 1, 1, 1), self.val, np.float32))

    g0, d0 = adversarial_losses(_Const(0.0), sr, hr)
    _close("adv.logit0.generator", g0.item(), float(np.log(2.0)), 1e-6)
    _close("adv.logit0.discriminator", d0.item(), float(2 * np.log(2.0)), 1e-6)
    ok("adv.logit0")

    _close("sosr_total", sosr_total(2.0, 3.0, 100.0, SosrWeights()), 5.5, 1e-12)
    _close("tosr_total", tosr_total(1.0, 0.5, 0.25, TosrWeights()), 1.425, 1e-12)
    ok("weighted_totals")

    a = rng.random((1, 16, 16)).astype(np.float64)
    _close("psnr.identical_cap", psnr(a, a.copy()), 100.0, 0.0)
    _close("psnr.hand_48.13", psnr(a, a + 1.0 / 255.0), 20 * float(np.log10(255.0)), 1e-3)
    _close("ssim.identical", ssim(a, a.copy()), 1.0, 0.0)
    ok("metrics")

    return done


def run_selftest(instances: int = 20, seed: int = 0, report=None) -> int:
    """Gradient suite plus identity suite; 0 when green, 3 on any failure."""
    t0 = time.time()
    try:
        gradient_suite(instances=instances, seed=seed, report=report)
        identity_suite(report=report)
    except (GradCheckFailure, IdentityFailure) as exc:
        if report is not None:
            print(f"selftest failed: {exc}", file=report)
        return 3
    if report is not None:
        print(f"selftest passed in {time.time() - t0:.1f}s", file=report)
    return 0
